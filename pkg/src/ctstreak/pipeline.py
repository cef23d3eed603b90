"""Experiment harness: dataset synthesis, training, evaluation and noise sweeps."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import fileio
from .geometry import Geometry, Image, make_parallel_geometry, random_ellipse_phantom
from .metrics import mse_metric, psnr, ssim
from .noise import NoiseConfig, apply_poisson_noise
from .projector import forward_project
from .recon import Method, ReconConfig, reconstruct, sirt
from .nn.core import AdamState, adam_step, mse_loss
from .nn.gru import (
    GRUVariant,
    Traversal,
    check_msd_gru_weights,
    identity_msd_gru_weights,
    init_msd_gru_weights,
    msd_gru_backward,
    msd_gru_forward,
    slice_patches,
    stitch_patches,
)
from .nn.msd import MSDConfig, check_msd_weights, identity_msd_weights, init_msd_weights, msd_backward, msd_forward

log = logging.getLogger(__name__)

# phantoms are drawn on [-1, 1]^2, so the field of view is 2 length units wide
FIELD_OF_VIEW = 2.0


def default_geometry(size: int, n_angles: int = 20, n_detectors: int | None = None) -> Geometry:
    """Parallel beam over [0, pi) with one detector per pixel row."""
    return make_parallel_geometry(
        n_angles, n_detectors or size, size, pixel_size=FIELD_OF_VIEW / size
    )


@dataclass
class DatasetPair:
    input: Image
    target: Image
    provenance: dict = field(default_factory=dict)


def make_dataset(
    n: int,
    geometry: Geometry,
    noise: NoiseConfig | None = None,
    sirt_iters: int = 100,
    seed: int = 0,
    n_ellipses: int = 8,
) -> list[DatasetPair]:
    """SIRT reconstructions of seeded ellipse phantoms paired with the phantoms.

    Sample ``i`` uses phantom seed ``seed + i`` and, when noisy, noise seed
    ``noise.seed + i``.
    """
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    if geometry.image_width != geometry.image_height:
        raise ValueError("phantom datasets need a square image")
    pairs = []
    for i in range(n):
        target = random_ellipse_phantom(geometry.image_width, n_ellipses, seed + i)
        sino = forward_project(target, geometry)
        prov = {
            "phantom_seed": seed + i,
            "n_ellipses": n_ellipses,
            "n_angles": geometry.n_angles,
            "n_detectors": geometry.n_detectors,
            "pixel_size": geometry.pixel_size,
            "sirt_iters": sirt_iters,
        }
        if noise is not None:
            cfg = NoiseConfig(noise.intensity, noise.seed + i)
            sino = apply_poisson_noise(sino, cfg)
            prov.update(intensity=cfg.intensity, noise_seed=cfg.seed)
        pairs.append(DatasetPair(sirt(sino, geometry, sirt_iters), target, prov))
    return pairs


# ---------------------------------------------------------------- models


class ModelKind(str, Enum):
    MSD = "msd"
    MSD_GRU = "msd-gru"


@dataclass(frozen=True)
class Model:
    """Architecture description shared by training, evaluation and checkpoints."""

    kind: ModelKind = ModelKind.MSD
    config: MSDConfig = MSDConfig(n_layers=4)
    variant: GRUVariant = GRUVariant.STANDARD
    patch: tuple[int, int] = (32, 32)
    traversal: Traversal = Traversal.RASTER

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "variant", GRUVariant(self.variant))
        object.__setattr__(self, "traversal", Traversal(self.traversal))
        object.__setattr__(self, "patch", tuple(int(v) for v in self.patch))

    def init_weights(self, seed=0, lo=-0.25, hi=0.25) -> dict:
        if self.kind is ModelKind.MSD:
            return init_msd_weights(self.config, seed, lo, hi)
        return init_msd_gru_weights(self.config, seed, lo, hi)

    def identity_weights(self) -> dict:
        if self.kind is ModelKind.MSD:
            return identity_msd_weights(self.config)
        return identity_msd_gru_weights(self.config)

    def check(self, weights: dict) -> None:
        if self.kind is ModelKind.MSD:
            check_msd_weights(weights, self.config)
        else:
            check_msd_gru_weights(weights, self.config)

    def _to_seq(self, x: np.ndarray):
        return slice_patches(x, self.patch[0], self.patch[1], self.traversal)

    def predict(self, weights: dict, images: np.ndarray) -> np.ndarray:
        """Apply the network to a ``(N, H, W)`` stack."""
        x = np.asarray(images, dtype=np.float64)[:, None]
        if self.kind is ModelKind.MSD:
            return msd_forward(x, weights, self.config)[:, 0]
        seq = msd_gru_forward(self._to_seq(x), weights, self.config, self.variant)
        return stitch_patches(seq)[:, 0]

    def loss_and_grads(self, weights: dict, inputs: np.ndarray, targets: np.ndarray):
        x = np.asarray(inputs, dtype=np.float64)[:, None]
        t = np.asarray(targets, dtype=np.float64)[:, None]
        if self.kind is ModelKind.MSD:
            out, cache = msd_forward(x, weights, self.config, return_cache=True)
            loss, g = mse_loss(out, t)
            return loss, msd_backward(x, weights, self.config, g, cache)[1]
        seq = self._to_seq(x)
        out, cache = msd_gru_forward(seq.data, weights, self.config, self.variant, return_cache=True)
        loss, g = mse_loss(out, self._to_seq(t).data)
        return loss, msd_gru_backward(seq.data, weights, self.config, self.variant, g, cache)[1]

    def metadata(self) -> dict[str, str]:
        return {
            "model": self.kind.value,
            "layers": str(self.config.n_layers),
            "dilate_range": str(self.config.dilate_range),
            "in_channels": str(self.config.in_channels),
            "variant": self.variant.value,
            "traversal": self.traversal.value,
            "patch": f"{self.patch[0]}x{self.patch[1]}",
        }

    @classmethod
    def from_metadata(cls, meta: dict[str, str]) -> "Model":
        try:
            ph, pw = meta.get("patch", "32x32").split("x")
            return cls(
                kind=ModelKind(meta["model"]),
                config=MSDConfig(int(meta["layers"]), int(meta["dilate_range"]), int(meta.get("in_channels", 1))),
                variant=GRUVariant(meta.get("variant", "standard")),
                patch=(int(ph), int(pw)),
                traversal=Traversal(meta.get("traversal", "raster")),
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"checkpoint metadata is incomplete or invalid: {exc}") from exc


def save_checkpoint(path, model: Model, weights: dict, adam: AdamState | None = None) -> None:
    tensors = dict(weights)
    if adam is not None:
        tensors.update(adam.state_tensors())
    fileio.write_ctw(path, tensors, model.metadata())


def load_checkpoint(path) -> tuple[Model, dict, AdamState]:
    tensors, meta = fileio.read_ctw(path)
    model = Model.from_metadata(meta)
    adam_keys = {k for k in tensors if k == "adam.step" or k.endswith((".adam_m", ".adam_v"))}
    weights = {k: v for k, v in tensors.items() if k not in adam_keys}
    model.check(weights)
    adam = AdamState.from_tensors({k: tensors[k] for k in adam_keys})
    return model, weights, adam


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    """Training protocol; the defaults are the full-scale clinical setting.

    :meth:`desk` gives the small-scale preset used for 64x64 phantom runs,
    where a few hundred updates must do the work of 150 epochs over tens of
    thousands of images.
    """

    model: Model = Model()
    batch_size: int = 5
    epochs: int = 150
    split_fraction: float = 0.8
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    init_range: float = 0.25

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")

    @classmethod
    def desk(cls, model: Model = Model(), **overrides) -> "TrainConfig":
        params = dict(model=model, batch_size=1, epochs=50, lr=2e-2)
        params.update(overrides)
        return cls(**params)


@dataclass
class TrainResult:
    weights: dict
    adam: AdamState
    history: list[tuple[int, float, float]]
    best_epoch: int
    train_indices: list[int]
    val_indices: list[int]


def split_indices(n: int, fraction: float, rng: np.random.Generator) -> tuple[list[int], list[int]]:
    if n == 1:
        return [0], [0]
    perm = rng.permutation(n)
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    return sorted(perm[:n_train].tolist()), sorted(perm[n_train:].tolist())


def _stack(pairs, attr):
    return np.stack([getattr(p, attr).data for p in pairs])


def train(config: TrainConfig, dataset: list[DatasetPair], initial_weights: dict | None = None) -> TrainResult:
    """Minibatch Adam on the MSE loss; keeps the weights with the best validation loss."""
    if not dataset:
        raise ValueError("dataset is empty")
    model = config.model
    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = split_indices(len(dataset), config.split_fraction, rng)
    if initial_weights is None:
        weights = model.init_weights(config.seed, -config.init_range, config.init_range)
    else:
        model.check(initial_weights)
        weights = {k: np.array(v, dtype=np.float64) for k, v in initial_weights.items()}
    inputs, targets = _stack(dataset, "input"), _stack(dataset, "target")
    state = AdamState(config.lr, config.beta1, config.beta2, config.epsilon)

    history = []
    best = (math.inf, 0, copy.deepcopy(weights), copy.deepcopy(state))
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(train_idx)
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = model.loss_and_grads(weights, inputs[batch], targets[batch])
            adam_step(weights, grads, state)
            total += loss * len(batch)
        train_loss = total / len(order)
        val_loss, _ = mse_loss(model.predict(weights, inputs[val_idx]), targets[val_idx])
        history.append((epoch, train_loss, val_loss))
        log.debug("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)
        if val_loss < best[0]:
            best = (val_loss, epoch, copy.deepcopy(weights), copy.deepcopy(state))
    return TrainResult(best[2], best[3], history, best[1], train_idx, val_idx)


# ---------------------------------------------------------------- evaluation


@dataclass
class MetricsReport:
    """Per-sample metric lists for one method; aggregates are derived on demand."""

    method: str
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    mse: list[float] = field(default_factory=list)

    METRICS = ("psnr", "ssim", "mse")

    def add(self, output, target) -> None:
        self.psnr.append(psnr(output, target))
        self.ssim.append(ssim(output, target))
        self.mse.append(mse_metric(output, target))

    def mean(self, metric: str) -> float:
        return float(np.mean(getattr(self, metric)))

    def std(self, metric: str) -> float:
        return float(np.std(getattr(self, metric)))

    @property
    def n(self) -> int:
        return len(self.mse)

    def rows(self, intensity="inf") -> list[dict]:
        return [
            {
                "method": self.method,
                "intensity": intensity,
                "metric": m,
                "mean": self.mean(m),
                "std": self.std(m),
                "n": self.n,
            }
            for m in self.METRICS
        ]


def evaluate(model: Model, weights: dict, pairs: list[DatasetPair], method: str | None = None) -> tuple[MetricsReport, np.ndarray]:
    """Restore every input with the network; returns the report and the outputs."""
    try:
        model.check(weights)
    except ValueError as exc:
        raise ValueError(f"weights incompatible with {model.kind.value}: {exc}") from exc
    outputs = model.predict(weights, _stack(pairs, "input"))
    report = MetricsReport(method or f"SIRT+{model.kind.value.upper()}")
    for out, pair in zip(outputs, pairs):
        report.add(out, pair.target)
    return report, outputs


def input_report(pairs: list[DatasetPair], method: str = "SIRT") -> MetricsReport:
    report = MetricsReport(method)
    for pair in pairs:
        report.add(pair.input, pair.target)
    return report


METRICS_HEADER = ("method", "intensity", "metric", "mean", "std", "n")


def format_float(v: float) -> str:
    return repr(float(v))


def metrics_csv(rows: list[dict]) -> str:
    lines = [",".join(METRICS_HEADER)]
    for r in rows:
        lines.append(
            f"{r['method']},{r['intensity']},{r['metric']},{format_float(r['mean'])},"
            f"{format_float(r['std'])},{r['n']}"
        )
    return "\n".join(lines) + "\n"


def loss_csv(history) -> str:
    lines = ["epoch,train_loss,val_loss"]
    lines += [f"{e},{format_float(t)},{format_float(v)}" for e, t, v in history]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SweepSettings:
    sirt_iters: int = 100
    cgls_iters: int = 50
    tv_iters: int = 200
    tv_weight: float = 0.1


def noise_seed(seed: int, sample: int) -> int:
    """Per-sample noise seed, shared across intensities (common random numbers)."""
    return int(np.random.SeedSequence([seed, sample]).generate_state(1)[0])


def noise_sweep(
    networks: dict[str, tuple[Model, dict]],
    geometry: Geometry,
    intensities,
    targets: list[Image],
    seed: int = 0,
    settings: SweepSettings = SweepSettings(),
) -> list[dict]:
    """Mean metrics of every method at every X-ray intensity.

    ``networks`` maps a method label (e.g. ``"SIRT+MSD"``) to a model and its
    weights; each is applied to the SIRT reconstruction.  An intensity of
    ``math.inf`` means noiseless data.
    """
    intensities = [float(v) for v in intensities]
    if any(not v > 0 for v in intensities):
        raise ValueError("intensities must be positive")
    if intensities != sorted(intensities):
        raise ValueError("intensities must be sorted ascending")
    for label, (model, weights) in networks.items():
        model.check(weights)
    recon_cfgs = {
        "FBP": ReconConfig(Method.FBP),
        "SIRT": ReconConfig(Method.SIRT, settings.sirt_iters),
        "CGLS": ReconConfig(Method.CGLS, settings.cgls_iters),
        "TVMIN": ReconConfig(Method.TVMIN, settings.tv_iters, settings.tv_weight),
    }
    clean = [forward_project(t, geometry) for t in targets]
    rows = []
    for intensity in intensities:
        reports = {name: MetricsReport(name) for name in list(recon_cfgs) + list(networks)}
        sirt_out = []
        for i, (target, sino) in enumerate(zip(targets, clean)):
            if math.isfinite(intensity):
                sino = apply_poisson_noise(sino, NoiseConfig(intensity, noise_seed(seed, i)))
            for name, cfg in recon_cfgs.items():
                rec = reconstruct(sino, geometry, cfg)
                reports[name].add(rec, target)
                if name == "SIRT":
                    sirt_out.append(rec.data)
        for label, (model, weights) in networks.items():
            for out, target in zip(model.predict(weights, np.stack(sirt_out)), targets):
                reports[label].add(out, target)
        label = "inf" if not math.isfinite(intensity) else f"{intensity:g}"
        for rep in reports.values():
            rows.extend(rep.rows(label))
        log.info("intensity %s done", label)
    return rows
