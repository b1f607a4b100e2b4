import dataclasses
import json
import os

import numpy as np
import pytest

from slforce import cli
from slforce import geometry as geo
from slforce import io as sio
from slforce import pattern as pat
from slforce import simulate as sim
from slforce import stereo
from slforce.report import EvalReport, error_metrics

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")
SMOKE = os.path.join(CONFIGS, "smoke.cfg")


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    """One smoke-scene pull with saved PNG pairs, simulated through the CLI."""
    d = tmp_path_factory.mktemp("sim")
    cfg = d / "sim.cfg"
    cfg.write_text(open(SMOKE).read() + "\n[simulate]\nn_pulls = 1\nsave_pairs = true\n")
    assert cli.main(["simulate", "--config", str(cfg), "--seed", "4", "--out", str(d / "data")]) == 0
    return d, cfg


# report arithmetic ---------------------------------------------------------------


def test_metrics_perfect_prediction():
    m = error_metrics([1.0, 2.5], [1.0, 2.5])
    assert m["mae"] == 0.0 and m["rmse"] == 0.0 and m["mse"] == 0.0


def test_metrics_plus_minus_one():
    m = error_metrics([1.0, -1.0], [0.0, 0.0])
    assert (m["mae"], m["rmse"], m["mse"], m["abs_err_sd"], m["sq_err_sd"]) == (1.0, 1.0, 1.0, 0.0, 0.0)


def test_metrics_shape_mismatch():
    with pytest.raises(ValueError):
        error_metrics([1.0], [1.0, 2.0])


def test_report_phase_split():
    rep = EvalReport.build([1, 2, 3, 5], [1, 2, 2, 3], ["k40"] * 4, ["tracting", "tracting", "holding", "holding"])
    assert rep.get("k40")["n"] == 4
    assert rep.get("k40", "tracting")["mae"] == 0.0
    assert rep.get("k40", "holding")["mae"] == 1.5
    csv = rep.to_csv().splitlines()
    assert csv[0] == "material_id,phase,n,mae,abs_err_sd,mse,rmse,sq_err_sd"
    assert len(csv) == 4
    assert "holding" in rep.to_table()


# file formats --------------------------------------------------------------------


def test_pfm_round_trip(tmp_path, rng):
    a = rng.uniform(0, 50, size=(7, 9)).astype(np.float32).astype(float)
    a[2, 3] = np.nan
    sio.write_pfm(tmp_path / "d.pfm", a)
    assert (tmp_path / "d.pfm").read_bytes().startswith(b"Pf\n9 7\n-1.0\n")
    b = sio.read_pfm(tmp_path / "d.pfm")
    assert np.array_equal(np.isnan(a), np.isnan(b))
    assert np.array_equal(a[~np.isnan(a)], b[~np.isnan(b)])


def test_provenance_png_round_trip(tmp_path, rng):
    prov = rng.integers(0, 5, size=(6, 8)).astype(np.uint8)
    sio.write_provenance_png(tmp_path / "p.png", prov)
    assert np.array_equal(sio.read_provenance_png(tmp_path / "p.png"), prov)


def test_png_quantisation(tmp_path):
    img = np.array([[[0.0, 0.5, 1.0]]])
    sio.write_png(tmp_path / "x.png", img)
    assert np.array_equal(sio.read_png(tmp_path / "x.png") * 255, [[[0, 128, 255]]])


def test_pattern_sidecar_round_trip(tmp_path):
    spec = pat.PatternSpec(12, 6, 20, pat.de_bruijn(3, 4), (0.0, 120.0, 240.0))
    sio.write_pattern_sidecar(tmp_path / "p.cfg", spec)
    assert sio.read_pattern_sidecar(tmp_path / "p.cfg") == spec


def test_pattern_sidecar_tampered_sequence(tmp_path):
    spec = pat.PatternSpec(12, 6, 20, pat.de_bruijn(3, 4), (0.0, 120.0, 240.0))
    sio.write_pattern_sidecar(tmp_path / "p.cfg", spec)
    text = (tmp_path / "p.cfg").read_text().replace("sequence = 0", "sequence = 1")
    (tmp_path / "p.cfg").write_text(text)
    with pytest.raises(cli.ConfigError):
        sio.read_pattern_sidecar(tmp_path / "p.cfg")


# subcommands -----------------------------------------------------------------------


def test_gen_pattern(tmp_path, capsys):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("[pattern]\nfringe_count = 10\nfringe_width_px = 4\nheight_px = 6\n")
    code, out, _ = run(capsys, "gen-pattern", "--config", cfg, "--out", tmp_path / "o")
    assert code == 0
    img = sio.read_png(tmp_path / "o" / "pattern.png")
    assert img.shape == (6, 40, 3)
    spec = sio.read_pattern_sidecar(tmp_path / "o" / "pattern.cfg")
    assert np.allclose(img, pat.generate_pattern(spec).pixels, atol=0.5 / 255 + 1e-12)


def test_simulate_outputs(simulated):
    d, _ = simulated
    data = d / "data"
    samples = sim.load_dataset(data)
    assert len(samples) == 150
    assert (data / "scene.cfg").exists() and (data / "pattern.cfg").exists()
    assert (data / "pairs" / "000000_left.png").exists()
    assert (data / "manifest.csv").read_text().splitlines()[0].startswith(
        "sample_id,cloud_path,force_newtons,material_id,t_s,pull_id"
    )


def test_match_and_reconstruct(simulated, tmp_path, capsys):
    d, _ = simulated
    pairs = d / "data" / "pairs"
    code, out, _ = run(
        capsys, "match", pairs / "000075_left.png", pairs / "000075_right.png",
        "--spec", d / "data" / "pattern.cfg",
        "--ref-left", pairs / "000075_ref_left.png", "--ref-right", pairs / "000075_ref_right.png",
        "--d-min", 4, "--d-max", 30, "--radius", 8, "--out", tmp_path / "m",
    )
    assert code == 0
    assert "Verified=" in out or "VERIFIED=" in out.upper()
    disp = sio.read_pfm(tmp_path / "m" / "disparity.pfm")
    prov = sio.read_provenance_png(tmp_path / "m" / "provenance.png")
    assert disp.shape == prov.shape == (48, 64)
    assert np.isfinite(disp).sum() > 0
    assert np.all(np.isfinite(disp) == np.isin(prov, [stereo.VERIFIED, stereo.RELOCATED]))

    code, out, _ = run(
        capsys, "reconstruct", tmp_path / "m" / "disparity.pfm", "--focal", 80, "--baseline", 0.036,
        "--out", tmp_path / "r",
    )
    assert code == 0
    cloud = geo.read_ply(tmp_path / "r" / "cloud.ply")
    assert len(cloud) == np.isfinite(disp).sum()
    # the tube sits about 0.15 m to 0.16 m from the cameras
    assert 0.1 < np.median(cloud.points[:, 2]) < 0.25


def test_train_estimate_eval(simulated, tmp_path, capsys):
    d, cfg = simulated
    data = d / "data"
    code, out, _ = run(capsys, "train", data, "--config", cfg, "--out", tmp_path / "t")
    assert code == 0
    assert out.count("train_mse") == 5
    hist = (tmp_path / "t" / "history.csv").read_text().splitlines()
    assert hist[0] == "epoch,train_mse,val_mse" and len(hist) == 6

    ckpt = tmp_path / "t" / "checkpoint.ifn"
    cloud = next(s for s in sim.load_dataset(data) if len(s.cloud) > 10)
    geo.write_ply(tmp_path / "c.ply", cloud.cloud)
    code, out, _ = run(capsys, "estimate", ckpt, tmp_path / "c.ply")
    assert code == 0 and np.isfinite(float(out))
    code2, out2, _ = run(capsys, "estimate", ckpt, tmp_path / "c.ply")
    assert out2 == out

    code, out, _ = run(capsys, "eval", ckpt, data, "--out", tmp_path / "e")
    assert code == 0
    rows = (tmp_path / "e" / "report.csv").read_text().splitlines()
    assert rows[1].startswith("k40,all,")


def test_pipeline_smoke_deterministic(tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        code, _, _ = run(capsys, "pipeline", "--config", SMOKE, "--seed", 9, "--out", tmp_path / name)
        assert code == 0
        outs.append(tmp_path / name)
    for f in ("report.csv", "summary.json", "resolved.cfg", "k40/checkpoint.ifn", "k40/history.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
    summary = json.loads((outs[0] / "summary.json").read_text())
    assert set(summary) >= {"git_revision", "config_sha256", "runs", "report"}
    assert summary["runs"]["k40"]["train_samples"] == 300


# errors and exit codes ---------------------------------------------------------------


def test_missing_key_named(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[pipeline]\ntest_pulls = 1\n")
    code, _, err = run(capsys, "pipeline", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2
    assert "train_pulls" in err


def test_unknown_key_named(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[pattern]\nfringe_cnt = 3\n")
    code, _, err = run(capsys, "gen-pattern", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2 and "fringe_cnt" in err


def test_bad_value_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[pattern]\nfringe_count = many\n")
    code, _, err = run(capsys, "gen-pattern", "--config", cfg, "--out", tmp_path / "o")
    assert code == 2 and "fringe_count" in err


def test_missing_dataset_is_data_error(tmp_path, capsys):
    ckpt = tmp_path / "x.ifn"
    from slforce import forcenet as fn

    fn.save_checkpoint(ckpt, fn.init_params(fn.NetConfig(n_points=8)))
    code, _, err = run(capsys, "eval", ckpt, tmp_path / "nowhere")
    assert code == 3 and err


def test_degenerate_cloud_is_data_error(tmp_path, capsys):
    from slforce import forcenet as fn

    ckpt = tmp_path / "x.ifn"
    fn.save_checkpoint(ckpt, fn.init_params(fn.NetConfig(n_points=8)))
    geo.write_ply(tmp_path / "one.ply", geo.PointCloud(np.zeros((1, 3))))
    code, _, _ = run(capsys, "estimate", ckpt, tmp_path / "one.ply")
    assert code == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_numeric_error(simulated, tmp_path, capsys):
    d, cfg = simulated
    samples = [dataclasses.replace(s, force_n=1e300) for s in sim.load_dataset(d / "data")]
    sim.write_dataset(tmp_path / "huge", samples)
    code, _, err = run(capsys, "train", tmp_path / "huge", "--config", cfg, "--out", tmp_path / "t")
    assert code == 4 and "epoch 1" in err


def test_seed_must_be_u64(capsys):
    with pytest.raises(SystemExit):
        cli.main(["gen-pattern", "--seed", "-1"])
