import argparse
import configparser
import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from hefedrnn import cli, data, reference
from hefedrnn.approx import clip_reference
from hefedrnn.federation import Federation

SMALL = """
[model]
hidden = 4
[train]
global_iters = 3
batch = 32
ring_log = 10
eval_every = 1
[data]
length = 400
period = 20
parties = 2
"""


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return str(p)


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _train(config, out, *extra):
    return cli.main(["train", "--config", config, "--out", str(out), *extra])


def test_train_writes_outputs(config, tmp_path):
    out = tmp_path / "run"
    assert _train(config, out) == 0
    for name in ("metrics.csv", "ledger.csv", "model.npz", "predictions.csv", "cost.csv", "manifest.ini"):
        assert (out / name).exists()
    metrics = _read(out / "metrics.csv")
    assert [r["iteration"] for r in metrics] == ["1", "2", "3"]
    assert set(metrics[0]) == {"iteration", "split", "mae", "r2"}
    ledger = {(r["scope"], r["counter"]): float(r["value"]) for r in _read(out / "ledger.csv")}
    assert ledger[("total", "bootstraps")] > 0
    m = configparser.ConfigParser(interpolation=None)
    m.read(out / "manifest.ini")
    assert m["manifest"]["command"] == "train" and m["manifest"]["seed"] == "0"
    assert m["train"]["batch"] == "32"


def test_train_is_deterministic(config, tmp_path):
    assert _train(config, tmp_path / "a") == 0
    assert _train(config, tmp_path / "b") == 0
    for name in ("metrics.csv", "ledger.csv", "predictions.csv", "cost.csv", "manifest.ini"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert _train(config, tmp_path / "c", "--seed", "5") == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "c" / "metrics.csv").read_bytes()


def test_flags_override_config(config, tmp_path):
    assert _train(config, tmp_path / "s", "--topology", "star", "--no-quantize", "--exact-activations") == 0
    m = configparser.ConfigParser(interpolation=None)
    m.read(tmp_path / "s" / "manifest.ini")
    assert m["train"]["topology"] == "star" and m["train"]["quantize"] == "no"


def test_inline_comments_in_config(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[model]\narch = gru   ; gated\nhidden = 4  # small\n")
    cp = cli.read_config(str(cfg), argparse.Namespace())
    mc, _ = cli.build_configs(cp)
    assert mc.arch == "gru" and mc.hidden == 4


def test_single_party_matches_centralized_mode(tmp_path):
    cfg = tmp_path / "one.ini"
    cfg.write_text(SMALL.replace("parties = 2", "parties = 1"))
    assert _train(str(cfg), tmp_path / "fed") == 0
    assert _train(str(cfg), tmp_path / "cen", "--mode", "centralized") == 0
    a, b = np.load(tmp_path / "fed" / "model.npz"), np.load(tmp_path / "cen" / "model.npz")
    for k in a.files:
        np.testing.assert_array_equal(a[k], b[k])


def test_exit_codes(config, tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nbatch = many\n")
    assert _train(str(bad), tmp_path / "x") == 2
    bad.write_text("[train]\nbogus = 1\n")
    assert _train(str(bad), tmp_path / "x") == 2
    bad.write_text(SMALL.replace("batch = 32", "batch = 16"))
    assert _train(str(bad), tmp_path / "x") == 2
    bad.write_text(SMALL + "source = files\npaths = " + str(tmp_path / "missing.csv") + "\n")
    assert _train(str(bad), tmp_path / "x") == 4
    assert "data error" in capsys.readouterr().err


def test_predict_oblivious_and_decrypted(config, tmp_path):
    assert _train(config, tmp_path / "m") == 0
    model = str(tmp_path / "m" / "model.npz")
    base = ["predict", "--config", config, "--model", model]
    assert cli.main(base + ["--out", str(tmp_path / "o")]) == 0
    assert cli.main(base + ["--out", str(tmp_path / "d"), "--decrypted"]) == 0
    o = np.array([float(r["prediction"]) for r in _read(tmp_path / "o" / "predictions.csv")])
    d = np.array([float(r["prediction"]) for r in _read(tmp_path / "d" / "predictions.csv")])
    np.testing.assert_allclose(o, d, atol=1e-3)
    summary = {r["key"]: r["value"] for r in _read(tmp_path / "o" / "predict_summary.csv")}
    assert summary["owner"] == "querier" and summary["mode"] == "oblivious"
    assert int(summary["key_switches"]) >= 1


def test_predict_rejects_mismatched_model(config, tmp_path):
    assert _train(config, tmp_path / "m") == 0
    model = str(tmp_path / "m" / "model.npz")
    wider = tmp_path / "wide.ini"
    wider.write_text(SMALL.replace("hidden = 4", "hidden = 5"))
    assert cli.main(["predict", "--config", str(wider), "--model", model, "--out", str(tmp_path / "p")]) == 4
    gru = tmp_path / "gru.ini"
    gru.write_text(SMALL.replace("hidden = 4", "hidden = 4\narch = gru"))
    assert cli.main(["predict", "--config", str(gru), "--model", model, "--out", str(tmp_path / "p")]) == 2
    assert cli.main(["predict", "--config", config, "--model", str(tmp_path / "none.npz"),
                     "--out", str(tmp_path / "p")]) == 4


def test_fit_approx_round_trip(config, tmp_path):
    assert cli.main(["fit-approx", "--function", "soft-clip", "--degree", "7", "--out", str(tmp_path / "f")]) == 0
    rows = _read(tmp_path / "f" / "profile.csv")
    assert len(rows) == 601 and float(rows[0]["x"]) == -60.0
    cfg = tmp_path / "clip.ini"
    cfg.write_text(SMALL.replace("eval_every = 1", f"eval_every = 1\nclip_file = {tmp_path / 'f' / 'poly.csv'}"))
    assert _train(str(cfg), tmp_path / "a") == 0
    assert _train(config, tmp_path / "b") == 0
    a, b = np.load(tmp_path / "a" / "model.npz"), np.load(tmp_path / "b" / "model.npz")
    for k in a.files:
        np.testing.assert_array_equal(a[k], b[k])
    assert cli.main(["fit-approx", "--function", "relu", "--out", str(tmp_path / "g")]) == 2


def test_bench(tmp_path):
    assert cli.main(["bench", "--sizes", "8,16", "--delta", "8", "--count", "4", "--ring-log", "10",
                     "--out", str(tmp_path)]) == 0
    rows = _read(tmp_path / "bench.csv")
    assert [r["scheme"] for r in rows] == ["multi-dim", "row", "per-sample"] * 2
    assert {"rotations", "amortized", "ciphertexts", "rotation_keys", "ring_class"} <= set(rows[0])
    assert rows[0]["ciphertexts"].isdigit()
    assert cli.main(["bench", "--sizes", "x", "--out", str(tmp_path)]) == 2


def test_cost_report_example_configuration(tmp_path, capsys):
    cfg = tmp_path / "ex.ini"
    cfg.write_text("[model]\nbias = no\n")
    assert cli.main(["cost-report", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rec = {(r["group"], r["name"]): float(r["value"]) for r in _read(tmp_path / "cost.csv")}
    assert all(v == 1 for (g, _), v in rec.items() if g == "count")
    assert rec[("bootstrap", "budget")] == 200 * 12
    assert rec[("bootstrap", "per_sample_baseline")] == 200 * 1024
    assert "BS_c" in capsys.readouterr().out


def test_output_is_locale_independent(config, tmp_path):
    env = {**os.environ, "LC_ALL": "de_DE.UTF-8", "LANG": "de_DE.UTF-8"}
    cmd = [sys.executable, "-m", "hefedrnn.cli", "train", "--config", config, "--out", str(tmp_path / "l")]
    subprocess.run(cmd, check=True, env=env, capture_output=True)
    assert _train(config, tmp_path / "c") == 0
    assert (tmp_path / "l" / "metrics.csv").read_bytes() == (tmp_path / "c" / "metrics.csv").read_bytes()


def test_out_from_environment(config, tmp_path, monkeypatch):
    monkeypatch.setenv("HEFEDRNN_OUT", str(tmp_path / "env"))
    assert cli.main(["cost-report", "--config", config]) == 0
    assert (tmp_path / "env" / "cost.csv").exists()


def test_default_sine_run_reaches_r2_plaintext_mirror():
    """The default configuration (length 8000, b=256, h=32, N=10) replayed in
    plaintext with the polynomial activation and clip; the encrypted run
    tracks this mirror to fixed-point precision."""
    cp = cli.read_config(None, argparse.Namespace(seed=0))
    mc, tc = cli.build_configs(cp)
    shards, test, _ = cli.load_dataset(cp, 0)
    f = Federation([s.as_pair() for s in shards], mc, tc, 0)
    r2 = {}
    for name, clip, act in [("approx", f.clip_fn, f.act.plain()),
                            ("exact", lambda g: clip_reference(g, 5.0), reference.TANH)]:
        w = f.reference_run(clip=clip, act=act)
        out = reference.run("elman", w, test.inputs, None, act=act)
        r2[name] = data.metrics(out["preds"], test.targets)["r2"]
    assert r2["approx"] >= 0.9
    assert r2["approx"] == pytest.approx(0.9286, abs=2e-3)
    assert r2["exact"] >= 0.9
