"""``ctstreak`` command-line front end.

Every subcommand writes its primary output atomically and drops a
``<output>.manifest.json`` next to it recording the exact argument vector,
resolved parameters, seeds, file digests and run time.  ``ctstreak replay``
re-executes a manifest and, with ``--check``, verifies the digests.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, fileio
from .geometry import FormatError, Image, Sinogram, ingest_image, make_parallel_geometry, random_ellipse_phantom, shepp_logan
from .noise import NoiseConfig, apply_poisson_noise
from .pipeline import (
    FIELD_OF_VIEW,
    DatasetPair,
    Model,
    ModelKind,
    SweepSettings,
    TrainConfig,
    default_geometry,
    evaluate,
    input_report,
    load_checkpoint,
    loss_csv,
    make_dataset,
    metrics_csv,
    noise_sweep,
    save_checkpoint,
    train,
)
from .projector import forward_project, set_num_threads
from .recon import Method, ReconConfig, reconstruct, sirt
from .nn.gru import GRUVariant, Traversal
from .nn.msd import MSDConfig

log = logging.getLogger("ctstreak")

DEFAULT_INTENSITIES = "1000,2500,5000,10000,20000,50000"
MANIFEST_SUFFIX = ".manifest.json"


class UsageError(Exception):
    """Flags that parse but cannot be used together."""


# ---------------------------------------------------------------- flag types


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def nonneg_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {value}")
    return value


def positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (math.isfinite(value) and value > 0):
        raise argparse.ArgumentTypeError(f"expected a positive finite number, got {text}")
    return value


def nonneg_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (math.isfinite(value) and value >= 0):
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return value


def patch_shape(text: str) -> tuple[int, int]:
    """``32`` or ``32x16``."""
    parts = text.lower().split("x")
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected N or HxW, got {text!r}")
    return positive_int(parts[0]), positive_int(parts[1])


def intensity_list(text: str) -> list[float]:
    """Comma-separated photon counts; ``inf`` means noiseless."""
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad intensity list {text!r}") from None
    if not values or any(not v > 0 for v in values):
        raise argparse.ArgumentTypeError("intensities must be positive")
    return sorted(values)


# ---------------------------------------------------------------- manifests


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def manifest_path(output) -> Path:
    return Path(str(output) + MANIFEST_SUFFIX)


def _jsonable(value):
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if hasattr(value, "value"):  # enums
        return value.value
    return str(value)


class Run:
    """Collects what one command did, then writes the manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.start = time.perf_counter()
        self.params: dict = {}
        self.seeds: dict = {}
        self.inputs: list[str] = []
        self.outputs: list[str] = []

    def output(self, path) -> Path:
        path = Path(path)
        self.outputs.append(str(path))
        return path

    def finish(self, primary) -> None:
        skip = {"func", "command"}
        resolved = {k: _jsonable(v) for k, v in sorted(vars(self.args).items()) if k not in skip}
        resolved.update({k: _jsonable(v) for k, v in self.params.items()})
        record = {
            "tool": "ctstreak",
            "version": __version__,
            "command": self.args.command,
            "argv": self.argv,
            "cwd": os.getcwd(),
            "params": resolved,
            "seeds": self.seeds,
            "inputs": [{"path": p, "sha256": sha256_file(p)} for p in self.inputs],
            "outputs": [{"path": p, "sha256": sha256_file(p)} for p in self.outputs],
            "duration_s": round(time.perf_counter() - self.start, 6),
        }
        fileio.atomic_write_text(manifest_path(primary), json.dumps(record, indent=2) + "\n")


# ---------------------------------------------------------------- helpers


def _read_image(path, run: Run) -> Image:
    run.inputs.append(str(path))
    data = fileio.read_ctt(path)
    if data.ndim != 2:
        raise ValueError(f"{path}: expected a 2D image, got shape {data.shape}")
    return Image(data)


def _geometry(size: int, n_angles: int, n_detectors: int | None, fov: float):
    try:
        return make_parallel_geometry(n_angles, n_detectors or size, size, pixel_size=fov / size)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _model_from_flags(args) -> Model:
    try:
        return Model(
            kind=ModelKind(args.model),
            config=MSDConfig(args.layers, args.dilate_range),
            variant=GRUVariant(args.variant),
            patch=args.patch,
            traversal=Traversal(args.traversal),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _check_patch(model: Model, size: int) -> None:
    if model.kind is ModelKind.MSD_GRU and (size % model.patch[0] or size % model.patch[1]):
        raise UsageError(f"image size {size} is not divisible into {model.patch[0]}x{model.patch[1]} patches")


def _load_model(path, run: Run, kind: str | None = None, patch=None) -> tuple[Model, dict]:
    """Read a checkpoint; ``kind``/``patch`` flags must agree with or override it."""
    run.inputs.append(str(path))
    try:
        model, weights, _ = load_checkpoint(path)
    except FormatError:
        raise
    except ValueError as exc:
        raise UsageError(f"{path}: incompatible checkpoint: {exc}") from exc
    if kind is not None and model.kind is not ModelKind(kind):
        raise UsageError(f"{path} holds a {model.kind.value} model, but --model {kind} was given")
    if patch is not None:
        model = Model(model.kind, model.config, model.variant, patch, model.traversal)
    return model, weights


def _noise(args) -> NoiseConfig | None:
    if args.intensity is None:
        return None
    return NoiseConfig(args.intensity, args.noise_seed)


# ---------------------------------------------------------------- commands


def cmd_phantom(args, run: Run) -> Path:
    if args.kind == "shepp-logan":
        if args.size < 16:
            raise UsageError("shepp-logan needs --size >= 16")
        img = shepp_logan(args.size)
    elif args.kind == "ellipses":
        img = random_ellipse_phantom(args.size, args.n, args.seed)
        run.seeds["phantom"] = args.seed
    else:
        if args.input is None:
            raise UsageError("--kind image needs --input PNG")
        run.inputs.append(str(args.input))
        img = ingest_image(args.input, args.size)
    out = run.output(args.output)
    fileio.write_ctt(out, img.data)
    if args.png:
        fileio.write_png(run.output(args.png), img.data)
    return out


def cmd_project(args, run: Run) -> Path:
    img = _read_image(args.input, run)
    if img.height != img.width:
        raise UsageError(f"projection needs a square image, got {img.height}x{img.width}")
    geom = _geometry(img.width, args.angles, args.detectors, args.fov)
    run.params.update(pixel_size=geom.pixel_size, n_detectors=geom.n_detectors)
    sino = forward_project(Image(img.data, geom.pixel_size), geom)
    out = run.output(args.output)
    fileio.write_ctt(out, sino.data)
    return out


def cmd_noise(args, run: Run) -> Path:
    run.inputs.append(str(args.input))
    data = fileio.read_ctt(args.input)
    if data.ndim != 2:
        raise ValueError(f"{args.input}: expected a 2D sinogram, got shape {data.shape}")
    angles = np.arange(data.shape[0]) * (math.pi / data.shape[0])
    sino = apply_poisson_noise(Sinogram(data, angles), NoiseConfig(args.intensity, args.seed))
    run.seeds["noise"] = args.seed
    out = run.output(args.output)
    fileio.write_ctt(out, sino.data)
    return out


def cmd_recon(args, run: Run) -> Path:
    run.inputs.append(str(args.input))
    data = fileio.read_ctt(args.input)
    if data.ndim != 2:
        raise ValueError(f"{args.input}: expected a 2D sinogram, got shape {data.shape}")
    n_angles, n_det = data.shape
    if args.angles is not None and args.angles != n_angles:
        raise UsageError(f"--angles {args.angles} but the sinogram has {n_angles} views")
    size = args.size or n_det
    geom = _geometry(size, n_angles, n_det, args.fov)
    method = Method(args.method)
    iters = args.iters
    if iters is None:
        iters = {Method.SIRT: 100, Method.CGLS: 50, Method.TVMIN: 200}.get(method, 1)
    try:
        config = ReconConfig(method, iters, args.tv_weight)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    run.params.update(iterations=iters, image_size=size, pixel_size=geom.pixel_size)
    rec = reconstruct(Sinogram(data, geom.angles, geom.detector_spacing), geom, config)
    out = run.output(args.output)
    fileio.write_ctt(out, rec.data)
    if args.png:
        fileio.write_png(run.output(args.png), rec.data)
    return out


def _train_config(args, model: Model) -> TrainConfig:
    try:
        return TrainConfig(
            model=model,
            batch_size=args.batch_size,
            epochs=args.epochs,
            split_fraction=args.split,
            seed=args.seed,
            lr=args.lr,
            init_range=args.init_range,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args, run: Run) -> Path:
    initial = None
    if args.resume:
        model, initial = _load_model(args.resume, run, args.model)
    else:
        model = _model_from_flags(args)
    _check_patch(model, args.size)
    config = _train_config(args, model)
    geom = default_geometry(args.size, args.angles)
    noise = _noise(args)
    run.seeds.update(phantoms=f"{args.seed}..{args.seed + args.pairs - 1}", training=args.seed)
    if noise is not None:
        run.seeds["noise"] = f"{noise.seed}..{noise.seed + args.pairs - 1}"
    log.info("building %d training pairs (%dx%d, %d views)", args.pairs, args.size, args.size, args.angles)
    pairs = make_dataset(args.pairs, geom, noise, args.sirt_iters, seed=args.seed, n_ellipses=args.ellipses)
    result = train(config, pairs, initial)
    run.params.update(
        best_epoch=result.best_epoch,
        train_indices=result.train_indices,
        val_indices=result.val_indices,
        first_train_loss=result.history[0][1],
        final_train_loss=result.history[-1][1],
    )
    out = run.output(args.output)
    save_checkpoint(out, model, result.weights, result.adam)
    loss_path = args.loss_csv or Path(args.output).with_suffix(".loss.csv")
    fileio.atomic_write_text(run.output(loss_path), loss_csv(result.history))
    log.info("best epoch %d of %d", result.best_epoch, args.epochs)
    return out


def _eval_pairs(args, run: Run, geom):
    noise = _noise(args)
    if noise is not None:
        run.seeds["noise"] = f"{noise.seed}..{noise.seed + args.pairs - 1}"
    if not args.images:
        run.seeds["phantoms"] = f"{args.seed}..{args.seed + args.pairs - 1}"
        return make_dataset(args.pairs, geom, noise, args.sirt_iters, seed=args.seed, n_ellipses=args.ellipses)
    pairs = []
    for i, path in enumerate(args.images):
        run.inputs.append(str(path))
        target = ingest_image(path, args.size)
        sino = forward_project(target, geom)
        if noise is not None:
            sino = apply_poisson_noise(sino, NoiseConfig(noise.intensity, noise.seed + i))
        pairs.append(DatasetPair(sirt(sino, geom, args.sirt_iters), target, {"source": str(path)}))
    return pairs


def cmd_eval(args, run: Run) -> Path:
    model, weights = _load_model(args.checkpoint, run, args.model, args.patch)
    _check_patch(model, args.size)
    geom = default_geometry(args.size, args.angles)
    pairs = _eval_pairs(args, run, geom)
    if model.kind is ModelKind.MSD_GRU:
        T = (args.size // model.patch[0]) * (args.size // model.patch[1])
        run.params["time_steps"] = T
        log.info("slicing each image into %d patches of %dx%d", T, *model.patch)
    label = "inf" if args.intensity is None else f"{args.intensity:g}"
    baseline = input_report(pairs)
    report, outputs = evaluate(model, weights, pairs)
    out = run.output(args.output)
    fileio.atomic_write_text(out, metrics_csv(baseline.rows(label) + report.rows(label)))
    grid = args.grid or Path(args.output).with_suffix(".png")
    rows = [[p.input.data, o, p.target.data] for p, o in zip(pairs[: args.grid_rows], outputs)]
    fileio.write_png_grid(run.output(grid), rows)
    return out


def cmd_sweep(args, run: Run) -> Path:
    networks = {}
    for label, path in (("SIRT+MSD", args.msd), ("SIRT+MSD-GRU", args.gru)):
        if path is None:
            continue
        model, weights = _load_model(path, run, "msd" if label == "SIRT+MSD" else "msd-gru")
        _check_patch(model, args.size)
        networks[label] = (model, weights)
    geom = default_geometry(args.size, args.angles)
    targets = [random_ellipse_phantom(args.size, args.ellipses, args.phantom_seed + i) for i in range(args.pairs)]
    run.seeds.update(noise=args.seed, phantoms=f"{args.phantom_seed}..{args.phantom_seed + args.pairs - 1}")
    settings = SweepSettings(args.sirt_iters, args.cgls_iters, args.tv_iters, args.tv_weight)
    rows = noise_sweep(networks, geom, args.intensities, targets, args.seed, settings)
    out = run.output(args.output)
    fileio.atomic_write_text(out, metrics_csv(rows))
    return out


def cmd_replay(args) -> int:
    record = json.loads(Path(args.manifest).read_text())
    if record.get("command") == "replay" or not isinstance(record.get("argv"), list):
        raise UsageError(f"{args.manifest} is not a replayable manifest")
    # recorded paths are relative to the original working directory
    here = os.getcwd()
    os.chdir(record.get("cwd", here))
    try:
        code = main(record["argv"])
        if code or not args.check:
            return code
        mismatched = [
            e["path"] for e in record.get("outputs", [])
            if not e["path"].lower().endswith(".png") and sha256_file(e["path"]) != e["sha256"]
        ]
    finally:
        os.chdir(here)
    for path in mismatched:
        print(f"ctstreak: replay mismatch: {path}", file=sys.stderr)
    return 1 if mismatched else 0


# ---------------------------------------------------------------- parser


def _add_output(p, what: str) -> None:
    p.add_argument("-o", "--output", required=True, type=Path, help=f"{what} (written atomically)")


def _add_geometry(p, angles_default: int | None = 20) -> None:
    p.add_argument("--angles", type=positive_int, default=angles_default, help="number of equiangular views over [0, pi)")
    p.add_argument("--fov", type=positive_float, default=FIELD_OF_VIEW, help="field of view width; pixel size is fov/size")


def _add_data(p, seed_default: int, pairs_default: int) -> None:
    p.add_argument("--pairs", type=positive_int, default=pairs_default, help="number of synthetic phantoms")
    p.add_argument("--size", type=positive_int, default=64, help="image side in pixels")
    p.add_argument("--angles", type=positive_int, default=20, help="number of views")
    p.add_argument("--ellipses", type=positive_int, default=8, help="ellipses per phantom")
    p.add_argument("--sirt-iters", type=positive_int, default=100, help="SIRT iterations for the network input")
    p.add_argument("--seed", type=nonneg_int, default=seed_default, help="first phantom seed (phantom i uses seed+i)")
    p.add_argument("--intensity", type=positive_float, default=None, help="photons per detector pixel; omit for noiseless data")
    p.add_argument("--noise-seed", type=nonneg_int, default=0, help="first noise seed (sample i uses seed+i)")


def _add_model(p) -> None:
    p.add_argument("--model", choices=[k.value for k in ModelKind], default="msd", help="network type")
    p.add_argument("--layers", type=positive_int, default=4, help="hidden layers / GRU blocks")
    p.add_argument("--dilate-range", type=positive_int, default=5, help="dilations cycle 1..N")
    p.add_argument("--variant", choices=[v.value for v in GRUVariant], default="standard", help="conv-GRU candidate equation")
    p.add_argument("--patch", type=patch_shape, default=(32, 32), help="MSD-GRU patch size, N or HxW")
    p.add_argument("--traversal", choices=[t.value for t in Traversal], default="raster", help="patch visiting order")


def _add_common(p, defaults: bool) -> None:
    p.add_argument(
        "--threads", type=positive_int, default=None if defaults else argparse.SUPPRESS,
        help="worker threads for projection (default: $CTSTREAK_THREADS, else 1)",
    )
    p.add_argument(
        "-v", "--verbose", action="count", default=0 if defaults else argparse.SUPPRESS,
        help="log progress to stderr (-vv for debug)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctstreak", description="Sparse-view CT reconstruction and learned streak removal.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_common(parser, defaults=True)
    # subcommands accept the same flags; SUPPRESS keeps them from resetting
    # a value given before the subcommand name
    common = argparse.ArgumentParser(add_help=False)
    _add_common(common, defaults=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    _parser = sub.add_parser

    def add_parser(name, **kw):
        return _parser(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("phantom", help="render a phantom image (CTT1)")
    p.add_argument("--kind", choices=["shepp-logan", "ellipses", "image"], default="shepp-logan", help="phantom family")
    p.add_argument("--size", type=positive_int, default=128, help="image side in pixels")
    p.add_argument("--n", type=positive_int, default=8, help="number of ellipses (--kind ellipses)")
    p.add_argument("--seed", type=nonneg_int, default=0, help="random seed (--kind ellipses)")
    p.add_argument("--input", type=Path, default=None, help="PNG to ingest (--kind image)")
    p.add_argument("--png", type=Path, default=None, help="also write a PNG preview here")
    _add_output(p, "phantom CTT1 file")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("project", help="forward-project an image into a sinogram")
    p.add_argument("-i", "--input", required=True, type=Path, help="square CTT1 image")
    _add_geometry(p)
    p.add_argument("--detectors", type=positive_int, default=None, help="detector count (default: image side)")
    _add_output(p, "sinogram CTT1 file")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("noise", help="apply Poisson photon noise to a sinogram")
    p.add_argument("-i", "--input", required=True, type=Path, help="CTT1 sinogram of line integrals")
    p.add_argument("--intensity", type=positive_float, default=1000.0, help="incident photons per detector pixel")
    p.add_argument("--seed", type=nonneg_int, default=0, help="noise seed")
    _add_output(p, "noisy sinogram CTT1 file")
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("recon", help="reconstruct an image from a sinogram")
    p.add_argument("-i", "--input", required=True, type=Path, help="CTT1 sinogram (views x detectors)")
    p.add_argument("--method", choices=[m.value for m in Method], default="sirt", help="reconstruction algorithm")
    p.add_argument("--iters", type=positive_int, default=None, help="iterations (default: sirt 100, cgls 50, tvmin 200)")
    p.add_argument("--lambda", dest="tv_weight", type=nonneg_float, default=0.1, help="TV weight for tvmin")
    p.add_argument("--size", type=positive_int, default=None, help="image side (default: detector count)")
    _add_geometry(p, angles_default=None)
    p.add_argument("--png", type=Path, default=None, help="also write a PNG preview here")
    _add_output(p, "reconstruction CTT1 file")
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("train", help="train a restoration network on synthetic SIRT/phantom pairs")
    _add_model(p)
    _add_data(p, seed_default=1, pairs_default=20)
    p.add_argument("--epochs", type=positive_int, default=50, help="training epochs")
    p.add_argument("--batch-size", type=positive_int, default=1, help="minibatch size")
    p.add_argument("--lr", type=positive_float, default=2e-2, help="Adam learning rate")
    p.add_argument("--split", type=positive_float, default=0.8, help="training fraction; the rest validates")
    p.add_argument("--init-range", type=positive_float, default=0.25, help="weights start uniform in [-r, r]")
    p.add_argument("--resume", type=Path, default=None, help="start from this checkpoint's weights")
    p.add_argument("--loss-csv", type=Path, default=None, help="loss history (default: <output>.loss.csv)")
    _add_output(p, "CTW1 checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint against SIRT on held-out data")
    p.add_argument("--checkpoint", required=True, type=Path, help="CTW1 checkpoint from train")
    p.add_argument("--model", choices=[k.value for k in ModelKind], default=None, help="expected network type")
    p.add_argument("--patch", type=patch_shape, default=None, help="override the MSD-GRU patch size")
    _add_data(p, seed_default=10000, pairs_default=10)
    p.add_argument("--images", type=Path, nargs="+", default=None, help="PNG ground truths instead of phantoms")
    p.add_argument("--grid", type=Path, default=None, help="image grid PNG (default: <output>.png)")
    p.add_argument("--grid-rows", type=positive_int, default=4, help="samples shown in the grid")
    _add_output(p, "metrics CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="metrics of every method across X-ray intensities")
    p.add_argument("--msd", type=Path, default=None, help="MSD checkpoint")
    p.add_argument("--gru", type=Path, default=None, help="MSD-GRU checkpoint")
    p.add_argument("--intensities", type=intensity_list, default=intensity_list(DEFAULT_INTENSITIES),
                   help=f"comma-separated photon counts (default {DEFAULT_INTENSITIES}; 'inf' = noiseless)")
    p.add_argument("--pairs", type=positive_int, default=10, help="test phantoms")
    p.add_argument("--size", type=positive_int, default=64, help="image side in pixels")
    p.add_argument("--angles", type=positive_int, default=20, help="number of views")
    p.add_argument("--ellipses", type=positive_int, default=8, help="ellipses per phantom")
    p.add_argument("--phantom-seed", type=nonneg_int, default=10000, help="first phantom seed")
    p.add_argument("--seed", type=nonneg_int, default=0, help="noise seed (shared across intensities)")
    p.add_argument("--sirt-iters", type=positive_int, default=100, help="SIRT iterations")
    p.add_argument("--cgls-iters", type=positive_int, default=50, help="CGLS iterations")
    p.add_argument("--tv-iters", type=positive_int, default=200, help="TV-min iterations")
    p.add_argument("--lambda", dest="tv_weight", type=nonneg_float, default=0.1, help="TV weight")
    _add_output(p, "sweep CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest", type=Path, help="a .manifest.json file")
    p.add_argument("--check", action="store_true", help="fail unless non-PNG outputs match the recorded digests")
    p.set_defaults(func=None)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(name)s: %(message)s",
    )
    set_num_threads(args.threads)
    try:
        if args.command == "replay":
            return cmd_replay(args)
        run = Run(args, argv)
        primary = args.func(args, run)
        run.finish(primary)
        return 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ctstreak: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"ctstreak: {exc}", file=sys.stderr)
        return 1
    finally:
        set_num_threads(None)


if __name__ == "__main__":
    sys.exit(main())
