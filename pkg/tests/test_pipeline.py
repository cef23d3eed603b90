import copy
import math

import numpy as np
import pytest

from ctstreak.geometry import disk_phantom, random_ellipse_phantom
from ctstreak.metrics import psnr, ssim
from ctstreak.noise import NoiseConfig
from ctstreak.nn.gru import GRUVariant, Traversal
from ctstreak.nn.msd import MSDConfig
from ctstreak.pipeline import (
    METRICS_HEADER,
    MetricsReport,
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
    split_indices,
    train,
)
from ctstreak.projector import forward_project
from ctstreak.recon import sirt

MSD = Model(ModelKind.MSD, MSDConfig(2, 2))
GRU = Model(ModelKind.MSD_GRU, MSDConfig(2, 2), patch=(8, 8))
FAST = SweepSettings(sirt_iters=20, cgls_iters=10, tv_iters=20)


def total_variation(a):
    return np.abs(np.diff(a, axis=0)).sum() + np.abs(np.diff(a, axis=1)).sum()


@pytest.fixture(scope="module")
def small_set():
    return make_dataset(6, default_geometry(16, 10), sirt_iters=20, seed=3)


class TestDataset:
    def test_deterministic(self):
        g = default_geometry(16, 8)
        a = make_dataset(10, g, NoiseConfig(2000, 5), sirt_iters=10, seed=4)
        b = make_dataset(10, g, NoiseConfig(2000, 5), sirt_iters=10, seed=4)
        for p, q in zip(a, b):
            assert np.array_equal(p.input.data, q.input.data)
            assert np.array_equal(p.target.data, q.target.data)
            assert p.provenance == q.provenance

    def test_provenance_regenerates_pair(self):
        g = default_geometry(16, 8)
        pair = make_dataset(3, g, NoiseConfig(1500, 9), sirt_iters=10, seed=20)[2]
        prov = pair.provenance
        assert prov["phantom_seed"] == 22 and prov["noise_seed"] == 11
        again = make_dataset(
            1,
            default_geometry(16, prov["n_angles"], prov["n_detectors"]),
            NoiseConfig(prov["intensity"], prov["noise_seed"]),
            prov["sirt_iters"],
            prov["phantom_seed"],
            prov["n_ellipses"],
        )[0]
        assert np.array_equal(again.input.data, pair.input.data)

    def test_pair_contents(self):
        g = default_geometry(16, 8)
        pair = make_dataset(1, g, sirt_iters=15, seed=2)[0]
        assert pair.input.data.shape == pair.target.data.shape == (16, 16)
        assert np.array_equal(pair.target.data, random_ellipse_phantom(16, 8, 2).data)
        assert np.array_equal(pair.input.data, sirt(forward_project(pair.target, g), g, 15).data)
        assert math.isfinite(psnr(pair.input, pair.target))
        assert psnr(pair.target, pair.target) == math.inf

    @pytest.mark.parametrize("radius", [12, 20])
    def test_sparse_view_inputs_carry_streaks(self, radius):
        g = default_geometry(64, 20)
        disk = disk_phantom(64, radius)
        rec = sirt(forward_project(disk, g), g, 100)
        assert total_variation(rec.data) >= 1.2 * total_variation(disk.data)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            make_dataset(0, default_geometry(16))
        with pytest.raises(ValueError):
            make_dataset(1, default_geometry(16), NoiseConfig(-1.0, 0))


class TestTrain:
    def test_zero_learning_rate(self, small_set):
        init = MSD.init_weights(seed=1)
        res = train(TrainConfig(MSD, batch_size=2, epochs=4, lr=0.0), small_set, copy.deepcopy(init))
        losses = [t for _, t, _ in res.history]
        vals = [v for _, _, v in res.history]
        # shuffled batches change only the summation order of the epoch mean
        assert losses == pytest.approx([losses[0]] * 4, rel=1e-14, abs=0)
        assert vals == [vals[0]] * 4
        for k in init:
            assert np.array_equal(res.weights[k], init[k])

    @pytest.mark.parametrize("model", [MSD, GRU], ids=["msd", "gru"])
    def test_history_structure(self, small_set, model):
        res = train(TrainConfig.desk(model, epochs=3, batch_size=2), small_set)
        assert [e for e, _, _ in res.history] == [1, 2, 3]
        assert all(math.isfinite(t) and math.isfinite(v) for _, t, v in res.history)
        assert 1 <= res.best_epoch <= 3
        best_val = min(v for _, _, v in res.history)
        assert res.history[res.best_epoch - 1][2] == best_val

    def test_returns_best_validation_weights(self, small_set):
        res = train(TrainConfig.desk(MSD, epochs=5), small_set)
        val_in = np.stack([small_set[i].input.data for i in res.val_indices])
        val_t = np.stack([small_set[i].target.data for i in res.val_indices])
        err = float(np.mean((MSD.predict(res.weights, val_in) - val_t) ** 2))
        assert err == pytest.approx(res.history[res.best_epoch - 1][2], rel=1e-12)

    def test_split_partitions(self):
        rng = np.random.default_rng(0)
        tr, va = split_indices(20, 0.8, rng)
        assert len(tr) == 16 and len(va) == 4
        assert sorted(tr + va) == list(range(20))
        assert split_indices(1, 0.8, rng) == ([0], [0])

    def test_deterministic(self, small_set):
        cfg = TrainConfig.desk(MSD, epochs=2)
        a, b = train(cfg, small_set), train(cfg, small_set)
        assert a.history == b.history
        assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)

    def test_learning_reduces_loss(self, small_set):
        res = train(TrainConfig.desk(MSD, epochs=15), small_set)
        assert res.history[-1][1] < res.history[0][1]

    def test_errors(self, small_set):
        with pytest.raises(ValueError):
            train(TrainConfig(MSD), [])
        with pytest.raises(ValueError):
            train(TrainConfig(MSD), small_set, GRU.init_weights())
        for bad in (dict(batch_size=0), dict(epochs=0), dict(split_fraction=1.0), dict(lr=-1.0)):
            with pytest.raises(ValueError):
                TrainConfig(MSD, **bad)

    def test_desk_preset(self):
        full, desk = TrainConfig(), TrainConfig.desk()
        assert (full.batch_size, full.epochs, full.split_fraction) == (5, 150, 0.8)
        assert (desk.batch_size, desk.epochs) == (1, 50)
        assert TrainConfig.desk(epochs=7).epochs == 7


class TestEvaluate:
    @pytest.mark.parametrize("model", [MSD, GRU], ids=["msd", "gru"])
    def test_identity_network_reports_input(self, small_set, model):
        report, outputs = evaluate(model, model.identity_weights(), small_set)
        base = input_report(small_set)
        assert report.method == ("SIRT+MSD" if model is MSD else "SIRT+MSD-GRU")
        for m in MetricsReport.METRICS:
            assert getattr(report, m) == getattr(base, m)
        assert np.array_equal(outputs, np.stack([p.input.data for p in small_set]))

    def test_aggregates_match_samples(self, small_set):
        report, outputs = evaluate(MSD, MSD.init_weights(seed=2), small_set)
        assert report.n == len(small_set)
        for out, pair, p, s in zip(outputs, small_set, report.psnr, report.ssim):
            assert p == psnr(out, pair.target) and s == ssim(out, pair.target)
        for m in MetricsReport.METRICS:
            values = np.array(getattr(report, m))
            assert abs(report.mean(m) - values.sum() / len(values)) < 1e-12
            assert abs(report.std(m) - math.sqrt(np.mean((values - values.mean()) ** 2))) < 1e-12

    def test_incompatible_weights(self, small_set):
        with pytest.raises(ValueError):
            evaluate(GRU, MSD.init_weights(), small_set)

    def test_patch_must_divide_image(self, small_set):
        bad = Model(ModelKind.MSD_GRU, MSDConfig(2, 2), patch=(5, 5))
        with pytest.raises(ValueError):
            evaluate(bad, bad.identity_weights(), small_set)


class TestFormats:
    def test_metrics_csv(self):
        r = MetricsReport("SIRT", psnr=[20.0, 22.0], ssim=[0.5, 0.7], mse=[0.01, 0.02])
        text = metrics_csv(r.rows("1000"))
        lines = text.split("\n")
        assert lines[0] == ",".join(METRICS_HEADER) == "method,intensity,metric,mean,std,n"
        assert lines[1] == "SIRT,1000,psnr,21.0,1.0,2"
        assert lines[2].startswith("SIRT,1000,ssim,0.6")
        assert text.endswith("\n") and "\r" not in text and len(lines) == 5

    def test_loss_csv(self):
        text = loss_csv([(1, 0.5, 0.25), (2, 0.125, 0.0625)])
        assert text == "epoch,train_loss,val_loss\n1,0.5,0.25\n2,0.125,0.0625\n"

    def test_floats_round_trip(self):
        r = MetricsReport("X", psnr=[1 / 3], ssim=[2 / 3], mse=[0.1])
        row = metrics_csv(r.rows()).split("\n")[1].split(",")
        assert float(row[3]) == 1 / 3


class TestCheckpoint:
    @pytest.mark.parametrize("model", [MSD, Model(ModelKind.MSD_GRU, MSDConfig(3, 2), GRUVariant.ADDITIVE, (16, 8), Traversal.SERPENTINE)])
    def test_round_trip(self, tmp_path, small_set, model):
        res = train(TrainConfig.desk(model, epochs=1), make_dataset(2, default_geometry(16, 6), sirt_iters=5))
        path = tmp_path / "m.ctw"
        save_checkpoint(path, model, res.weights, res.adam)
        got_model, weights, adam = load_checkpoint(path)
        assert got_model == model
        for k, v in res.weights.items():
            assert np.array_equal(weights[k], v)
        assert adam.step_count == res.adam.step_count
        assert set(adam.m) == set(res.adam.m)
        assert all(np.array_equal(adam.v[k], res.adam.v[k]) for k in adam.v)

    def test_without_adam(self, tmp_path):
        save_checkpoint(tmp_path / "m.ctw", MSD, MSD.identity_weights())
        _, _, adam = load_checkpoint(tmp_path / "m.ctw")
        assert adam.step_count == 0 and not adam.m

    def test_metadata_required(self):
        with pytest.raises(ValueError):
            Model.from_metadata({"model": "msd"})
        with pytest.raises(ValueError):
            Model.from_metadata({**MSD.metadata(), "variant": "bogus"})


class TestSweep:
    @pytest.fixture(scope="class")
    @staticmethod
    def targets():
        return [random_ellipse_phantom(16, 6, 100 + i) for i in range(3)]

    def test_structure(self, targets):
        nets = {"SIRT+MSD": (MSD, MSD.identity_weights()), "SIRT+MSD-GRU": (GRU, GRU.identity_weights())}
        rows = noise_sweep(nets, default_geometry(16, 8), [1000, 5e4], targets, settings=FAST)
        assert len(rows) == 6 * 2 * 3
        assert {r["method"] for r in rows} == {"FBP", "SIRT", "CGLS", "TVMIN", "SIRT+MSD", "SIRT+MSD-GRU"}
        assert [r["intensity"] for r in rows[:18]] == ["1000"] * 18
        assert rows[-1]["intensity"] == "50000"
        # identity networks reproduce the SIRT cell
        cell = {(r["method"], r["intensity"], r["metric"]): r["mean"] for r in rows}
        assert cell[("SIRT+MSD", "1000", "psnr")] == cell[("SIRT", "1000", "psnr")]
        assert all(r["n"] == 3 for r in rows)

    def test_deterministic(self, targets):
        g = default_geometry(16, 8)
        assert noise_sweep({}, g, [2000], targets, 4, FAST) == noise_sweep({}, g, [2000], targets, 4, FAST)
        assert noise_sweep({}, g, [2000], targets, 4, FAST) != noise_sweep({}, g, [2000], targets, 5, FAST)

    def test_high_intensity_matches_noiseless(self, targets):
        rows = noise_sweep({}, default_geometry(16, 8), [1e9, math.inf], targets, settings=FAST)
        cell = {(r["method"], r["intensity"], r["metric"]): r["mean"] for r in rows}
        for method in ("FBP", "SIRT", "CGLS", "TVMIN"):
            assert abs(cell[(method, "1e+09", "psnr")] - cell[(method, "inf", "psnr")]) < 0.2

    def test_bad_intensities(self, targets):
        g = default_geometry(16, 8)
        with pytest.raises(ValueError):
            noise_sweep({}, g, [5000, 1000], targets)
        with pytest.raises(ValueError):
            noise_sweep({}, g, [0, 1000], targets)
        with pytest.raises(ValueError):
            noise_sweep({"SIRT+MSD": (MSD, GRU.identity_weights())}, g, [1000], targets)
