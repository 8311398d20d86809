"""Command-line surface: flags, file handoff, determinism, failure modes."""

import filecmp
import json
import os

import numpy as np
import pytest

from fcdlif import io
from fcdlif.cli import main
from fcdlif.data import FrameSchedule
from fcdlif.model import build_desk_baseline
from fcdlif.phantom import FengParams, simulate_detector_trace


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--n", 3, "--seed", 7, "--out-dir", out) == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, sim_dir):
    out = tmp_path_factory.mktemp("trained")
    assert run("train", "--data-dir", sim_dir, "--epochs", 2, "--folds", 3,
               "--seed", 1, "--out-dir", out) == 0
    return out


class TestSimulate:
    def test_outputs_and_manifest(self, sim_dir):
        names = sorted(os.listdir(sim_dir))
        assert "manifest.json" in names
        assert sum(n.endswith(".fdlf") for n in names) == 3
        assert sum(n.endswith("_aif.csv") for n in names) == 3
        manifest = json.loads((sim_dir / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["args"]["seed"] == 7
        assert manifest["args"]["out_dir"] == "."

    def test_identical_seeds_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("simulate", "--n", 2, "--seed", 3, "--out-dir", a) == 0
        assert run("simulate", "--n", 2, "--seed", 3, "--out-dir", b) == 0
        for name in sorted(os.listdir(a)):
            assert filecmp.cmp(a / name, b / name, shallow=False), name

    def test_different_seeds_differ(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run("simulate", "--n", 1, "--seed", 1, "--out-dir", a)
        run("simulate", "--n", 1, "--seed", 2, "--out-dir", b)
        assert not filecmp.cmp(a / "phantom_000.fdlf", b / "phantom_000.fdlf",
                               shallow=False)


class TestTrainPredict:
    def test_train_writes_weights_history_manifest(self, trained_dir):
        names = set(os.listdir(trained_dir))
        assert {"weights.fdlw", "history.csv", "manifest.json"} <= names

    def test_train_is_deterministic(self, tmp_path, sim_dir):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("train", "--data-dir", sim_dir, "--epochs", 1,
                       "--folds", 3, "--seed", 5, "--out-dir", out) == 0
        assert filecmp.cmp(a / "weights.fdlw", b / "weights.fdlw",
                           shallow=False)
        assert filecmp.cmp(a / "history.csv", b / "history.csv", shallow=False)

    def test_predict_roundtrip_and_determinism(self, tmp_path, sim_dir,
                                               trained_dir):
        out_a = tmp_path / "pred_a.csv"
        out_b = tmp_path / "pred_b.csv"
        image = sim_dir / "phantom_000.fdlf"
        weights = trained_dir / "weights.fdlw"
        assert run("predict", "--weights", weights, "--image", image,
                   "--out", out_a) == 0
        assert run("predict", "--weights", weights, "--image", image,
                   "--out", out_b) == 0
        assert filecmp.cmp(out_a, out_b, shallow=False)
        assert len(io.load_curve(out_a)) == 42

    def test_predict_succeeds_on_truncated_image_with_fcdlif(self, tmp_path,
                                                             sim_dir,
                                                             trained_dir):
        image = io.load_image(sim_dir / "phantom_000.fdlf")
        truncated = image.truncated()
        trunc_path = tmp_path / "trunc.fdlf"
        io.save_image(trunc_path, truncated)
        out = tmp_path / "pred.csv"
        assert run("predict", "--weights", trained_dir / "weights.fdlw",
                   "--image", trunc_path, "--out", out) == 0
        assert len(io.load_curve(out)) == 32

    def test_predict_fails_on_truncated_image_with_baseline(self, tmp_path,
                                                            sim_dir, capsys):
        baseline = build_desk_baseline(seed=0)
        weights_path = tmp_path / "baseline.fdlw"
        io.save_weights(weights_path, baseline)
        image = io.load_image(sim_dir / "phantom_000.fdlf")
        trunc_path = tmp_path / "trunc.fdlf"
        io.save_image(trunc_path, image.truncated())
        code = run("predict", "--weights", weights_path, "--image", trunc_path,
                   "--out", tmp_path / "nope.csv")
        assert code == 1
        assert "FixedLengthError" in capsys.readouterr().err


class TestEvaluate:
    def test_perfect_prediction_degenerates_gracefully(self, tmp_path, sim_dir):
        preds = tmp_path / "preds"
        truths = tmp_path / "truths"
        preds.mkdir(), truths.mkdir()
        for name in os.listdir(sim_dir):
            if name.endswith("_aif.csv"):
                for target in (preds, truths):
                    (target / name).write_bytes((sim_dir / name).read_bytes())
        out = tmp_path / "eval"
        assert run("evaluate", "--pred-dir", preds, "--truth-dir", truths,
                   "--out-dir", out) == 0
        rows = (out / "metrics.csv").read_text().strip().splitlines()
        header = rows[0].split(",")
        pooled = dict(zip(header, rows[-1].split(",")))
        assert pooled["sample"] == "all"
        assert float(pooled["mse"]) == 0.0
        assert float(pooled["a"]) == 1.0
        assert float(pooled["p"]) == 1.0

    def test_patlak_scatter_emitted(self, tmp_path, sim_dir, trained_dir):
        preds = tmp_path / "preds"
        preds.mkdir()
        image = sim_dir / "phantom_000.fdlf"
        assert run("predict", "--weights", trained_dir / "weights.fdlw",
                   "--image", image, "--out", preds / "phantom_000_aif.csv") == 0
        out = tmp_path / "eval"
        assert run("evaluate", "--pred-dir", preds, "--truth-dir", sim_dir,
                   "--patlak", "--image-dir", sim_dir, "--ki-voxels", 50,
                   "--seed", 3, "--out-dir", out) == 0
        scatter = (out / "ki_scatter.csv").read_text().strip().splitlines()
        assert scatter[0] == "sample,voxel,ki_aif,ki_dlif"
        assert len(scatter) == 51


class TestRobustnessCli:
    @pytest.mark.parametrize("mode", ["shift", "truncate"])
    def test_interior_deviation_zero(self, tmp_path, sim_dir, trained_dir,
                                     mode):
        out = tmp_path / mode
        assert run("robustness", "--weights", trained_dir / "weights.fdlw",
                   "--image", sim_dir / "phantom_000.fdlf", "--mode", mode,
                   "--out-dir", out) == 0
        rows = (out / "report.csv").read_text().strip().splitlines()[1:]
        interior_devs = [float(r.split(",")[2]) for r in rows
                         if r.split(",")[3] == "1"]
        assert interior_devs and all(d == 0.0 for d in interior_devs)

    def test_baseline_error_recorded(self, tmp_path, sim_dir):
        baseline = build_desk_baseline(seed=0)
        weights_path = tmp_path / "baseline.fdlw"
        io.save_weights(weights_path, baseline)
        out = tmp_path / "rob"
        assert run("robustness", "--weights", weights_path,
                   "--image", sim_dir / "phantom_000.fdlf", "--mode", "shift",
                   "--out-dir", out) == 0
        report = (out / "report.csv").read_text()
        assert report.startswith("error") and "42" in report


class TestCalibrateCli:
    def test_pipeline_outputs(self, tmp_path):
        feng = FengParams.typical()
        trace, samples = simulate_detector_trace(
            feng, true_delay_s=25.1, true_scale=3.7, noise_sd=0.02, seed=1)
        trace_path = tmp_path / "trace.csv"
        samples_path = tmp_path / "samples.csv"
        io.save_trace(trace_path, trace)
        io.save_samples(samples_path, samples)
        out = tmp_path / "cal"
        assert run("calibrate", "--trace", trace_path, "--samples",
                   samples_path, "--delay", 25.1, "--out-dir", out) == 0
        aif = io.load_curve(out / "aif.csv")
        assert len(aif) == 42
        factors = (out / "factors.csv").read_text().splitlines()
        overall = [r for r in factors if r.startswith("overall")][0]
        assert abs(float(overall.split(",")[1]) - 3.7) / 3.7 < 0.02


class TestFeaturesCli:
    def test_embeddings_and_tsne(self, tmp_path, sim_dir, trained_dir):
        out = tmp_path / "features"
        assert run("features", "--weights", trained_dir / "weights.fdlw",
                   "--data-dir", sim_dir, "--tsne", "--perplexity", 12,
                   "--iterations", 120, "--seed", 0, "--out-dir", out) == 0
        emb = (out / "embeddings.csv").read_text().strip().splitlines()
        assert emb[0].startswith("sample,frame,e0")
        assert len(emb) == 1 + 3 * 42
        tsne = (out / "tsne.csv").read_text().strip().splitlines()
        assert tsne[0] == "sample,frame,x,y"
        assert len(tsne) == 1 + 3 * 42


class TestErrors:
    def test_missing_data_dir(self, tmp_path, capsys):
        code = run("train", "--data-dir", tmp_path / "nope", "--out-dir",
                   tmp_path / "out")
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_malformed_weights_file(self, tmp_path, sim_dir, capsys):
        bad = tmp_path / "bad.fdlw"
        bad.write_bytes(b"JUNKJUNKJUNK")
        code = run("predict", "--weights", bad,
                   "--image", sim_dir / "phantom_000.fdlf",
                   "--out", tmp_path / "x.csv")
        assert code == 1
        assert "FileFormatError" in capsys.readouterr().err
