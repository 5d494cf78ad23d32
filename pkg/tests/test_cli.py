import json
from pathlib import Path

import numpy as np
import pytest

from olgan.cli import main
from olgan.config import ExperimentConfig
from olgan.io import DatasetBundle, read_csv

TINY = {
    "case": "case1",
    "data": {"n_samples": 60, "n_test": 2},
    "train": {"epochs": 3, "batch_size": 30},
    "inference": {"map_iters": 20, "n_samples": 400, "burn_in": 200, "n_fake": 100, "report_grid": 5},
}

STAGES = ["gen-data", "train", "invert", "spectrum", "metrics", "emit-plots"]


def _config(tmp_path, overrides=None, name="cfg.json"):
    d = json.loads(json.dumps(TINY))
    for k, v in (overrides or {}).items():
        if isinstance(v, dict):
            d.setdefault(k, {}).update(v)
        else:
            d[k] = v
    path = tmp_path / name
    path.write_text(json.dumps(d))
    return path


def _run(args, capsys):
    code = main(args)
    out = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(out[-1])


def _files(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def staged(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("staged")
    cfg = _config(tmp)
    out = tmp / "run"
    codes = [main([s, "--config", str(cfg), "--out", str(out), "--seed", "5"]) for s in STAGES]
    return tmp, cfg, out, codes


def test_stages_succeed(staged):
    assert staged[3] == [0] * len(STAGES)


def test_stage_outputs_are_byte_identical_to_full_run(staged, tmp_path):
    _, cfg, out, _ = staged
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "again"), "--seed", "5"]) == 0
    a, b = _files(out), _files(tmp_path / "again")
    assert a.keys() == b.keys()
    for k in a:
        if k.name != "config.json":
            assert a[k] == b[k], k


def test_posterior_report_schema(staged):
    post = json.loads((staged[2] / "inversion" / "posterior.json").read_text())
    s = post["summary"]
    for key in ("mean", "std", "relative_error", "within_3sigma", "truth"):
        assert len(s[key]) == 3
    assert all(isinstance(b, bool) for b in s["within_3sigma"])
    assert 0.0 <= post["acceptance_rate"] <= 1.0
    assert post["seed"] == 5 and post["config"]["train"]["epochs"] == 3
    assert s["truth"] == [0.4489, 0.734, 0.1111]


def test_plot_series_schema(staged):
    plots = staged[2] / "plots"
    header, spec = read_csv(plots / "spectrum.csv")
    assert header == ["component", "real", "fake"]
    assert spec[:, 1].sum() == pytest.approx(1.0) and spec[:, 2].sum() == pytest.approx(1.0)
    header, scatter = read_csv(plots / "posterior_scatter.csv")
    assert header == ["c1", "c2", "c3", "weight"]
    assert scatter[:, 3].sum() == pytest.approx(1.0)
    header, field = read_csv(plots / "response_field.csv")
    assert header == ["x0", "x1", "mean", "std"] and len(field) == 5 * 5
    header, chain = read_csv(plots / "chain_trace.csv")
    assert header[:4] == ["step", "z0", "z1", "z2"] and len(chain) == 200


def test_data_layout(staged):
    data = DatasetBundle.load(staged[2] / "data")
    assert data.params.shape == (60, 3) and data.responses.shape == (60, 81)
    test = DatasetBundle.load(staged[2] / "data_test")
    np.testing.assert_array_equal(test.params[0], [0.4489, 0.7340, 0.1111])
    assert test.n_samples == 3


def test_misaligned_sensors_reuse_trained_generator(staged, capsys):
    tmp, _, out, _ = staged
    weights = (out / "generator" / "weights.bin").read_bytes()
    cfg = _config(tmp, {"inference": {"sensors": "random", "n_random_sensors": 64}}, "random.json")
    code, msg = _run(["invert", "--config", str(cfg), "--out", str(out), "--seed", "5"], capsys)
    assert code == 0 and msg["status"] == "ok"
    header, obs = read_csv(out / "inversion" / "observation.csv")
    assert len(obs) == 64
    train_coords = DatasetBundle.load(out / "data").coords
    assert np.abs(obs[:, None, :2] - train_coords[None]).max(axis=2).min() > 1e-9
    assert (out / "generator" / "weights.bin").read_bytes() == weights


def test_missing_artifacts_give_json_error(tmp_path, capsys):
    code, msg = _run(["invert", "--out", str(tmp_path / "empty")], capsys)
    assert code != 0
    assert msg["status"] == "error" and msg["type"] == "FileNotFoundError"


def test_bad_config_gives_json_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"case": "case1", "train": {"epoch": 2}}))
    code, msg = _run(["train", "--config", str(bad), "--out", str(tmp_path)], capsys)
    assert code != 0 and msg["status"] == "error" and "epoch" in msg["message"]


def test_default_config_command(capsys):
    assert main(["default-config", "--case", "case3"]) == 0
    cfg = ExperimentConfig.loads(capsys.readouterr().out)
    assert cfg.case == "case3"


def test_external_field_parameter_bundle_runs_unmodified(tmp_path, capsys):
    """A bundle whose parameter is a field on its own coordinates (no built-in solver)."""
    rng = np.random.default_rng(0)
    pc = np.linspace(0, 1, 8)
    coords = rng.uniform(0, 1, (15, 2))
    a = rng.standard_normal((45, 2))
    params = a[:, :1] * np.sin(np.pi * pc) + a[:, 1:] * pc
    responses = a[:, :1] * coords[:, 0] + a[:, 1:] ** 2 * coords[:, 1]
    DatasetBundle(params[:40], responses[:40], coords, {}, pc).save(tmp_path / "ext")
    DatasetBundle(params[40:], responses[40:], coords, {}, pc).save(tmp_path / "ext_test")
    cfg = _config(
        tmp_path,
        {
            "case": "custom",
            "data": {"dataset_dir": str(tmp_path / "ext"), "n_samples": 40},
            "generator": {"latent_dim": 2, "param_kind": "vanilla"},
            "train": {"batch_size": 20},
        },
    )
    code, msg = _run(["run", "--config", str(cfg), "--out", str(tmp_path / "out")], capsys)
    assert code == 0, msg
    post = json.loads((tmp_path / "out" / "inversion" / "posterior.json").read_text())
    assert len(post["summary"]["mean"]) == 8
