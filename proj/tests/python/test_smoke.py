import json
import os
import struct
import subprocess
from pathlib import Path

import numpy as np
import pytest

import gradconceal as gcx


def test_gcm_stays_within_eps():
    x = np.random.default_rng(0).uniform(-2, 2, size=100_000).astype(np.float32)
    y = gcx.gcm_apply(x, w=1e20, eps=1e-8)
    assert np.max(np.abs(y.astype(np.float64) - x)) <= 1e-8
    m = gcx.gcm_grad_multiplier(x)
    assert np.all(np.abs(m - 1.0) <= 1e12 * (1 + 1e-6))


def test_projection_examples():
    assert gcx.project(np.array([0.5, -0.3], np.float32), "linf", 0.2).tolist() == pytest.approx([0.2, -0.2])
    assert gcx.project(np.array([3, 4], np.float32), "l2", 1.0).tolist() == pytest.approx([0.6, 0.8])
    assert gcx.project(np.array([3, 1], np.float32), "l1", 2.0).tolist() == [2.0, 0.0]
    with pytest.raises(gcx.ConfigError):
        gcx.project(np.zeros(2, np.float32), "l7", 1.0)


def test_attack_and_cascade():
    net = gcx.build_smallcnn([12, 12, 1], seed=1)
    x = np.random.default_rng(1).uniform(0, 1, size=(4, 12, 12, 1)).astype(np.float32)
    labels = net.predict(x)
    concealed = net.with_gcm(placement="all")
    assert concealed.concealed and not net.concealed
    assert concealed.predict(x) == labels
    x_adv, norms, success = gcx.attack(net, x, labels, family="pgd", norm="l2", eps=0.5)
    assert x_adv.shape == x.shape
    assert max(norms) <= 0.5 + 1e-6
    assert len(success) == 4
    assert x_adv.min() >= 0 and x_adv.max() <= 1
    with pytest.raises(gcx.ConfigError):
        gcx.attack(net, x, labels, family="fgsm", norm="l2")


def test_metrics():
    assert gcx.accuracy([True, False, True, True]) == 0.75
    assert gcx.attack_robustness([True, False, True], [True, True, False]) == 0.5
    assert gcx.attack_robustness([False], [True]) is None


def test_sign_map(tmp_path):
    g = np.array([[[-0.5], [0.0]], [[0.2], [-0.1]]], np.float32)
    assert gcx.sign_map(g).ravel().tolist() == [-1, 0, 1, -1]
    (pgm,) = gcx.render_sign_map(g, tmp_path / "map")
    assert pgm.read_bytes().endswith(bytes([0, 128, 255, 0]))
    assert gcx.local_sign_entropy(pgm) > 0


def test_bad_checkpoint(tmp_path):
    bad = tmp_path / "bad.gcmb"
    bad.write_bytes(b"nope" * 8)
    with pytest.raises(gcx.FormatError):
        gcx.load_checkpoint(bad)


def write_raw(path, array):
    array = np.ascontiguousarray(array, dtype="<f4")
    header = b"GCMT" + struct.pack("<I", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    path.write_bytes(header + array.tobytes())


def tiny_config(tmp_path, **train):
    rng = np.random.default_rng(0)
    for split, n in (("train", 48), ("test", 16)):
        labels = np.arange(n) % 2
        x = rng.uniform(0, 0.3, size=(n, 6, 6, 1))
        x[labels == 1, :3] += 0.6
        write_raw(tmp_path / f"{split}_x", x)
        write_raw(tmp_path / f"{split}_y", labels)
    cfg = {
        "dataset": {"format": "raw-tensor", "num_classes": 2,
                    "train_images": "train_x", "train_labels": "train_y",
                    "test_images": "test_x", "test_labels": "test_y"},
        "model": {"arch": "smallcnn", "input_shape": [6, 6, 1], "channels": [2], "num_classes": 2},
        "train": {"lr": 0.1, "epochs": 2, "batch_size": 8, **train},
        "attacks": [{"family": "fgsm", "norm": "linf", "eps": "8/255"}],
        "gcm": {"w": 1e20, "eps": 1e-8},
        "output_dir": "out",
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_run_experiment_binding(tmp_path):
    summary = json.loads(gcx.run_experiment(tiny_config(tmp_path)))
    assert summary["num_samples"] == 16
    assert (tmp_path / "out" / "summary.txt").exists()


cli = os.environ.get("GRADCONCEAL_CLI")
needs_cli = pytest.mark.skipif(not cli, reason="CLI path not provided")


def run_cli(*args):
    return subprocess.run([cli, *map(str, args)], capture_output=True, text=True)


@needs_cli
def test_cli_exit_codes(tmp_path):
    missing = run_cli("eval", "--config", tmp_path / "absent.json")
    assert missing.returncode == 2, missing.stderr

    cfg = tiny_config(tmp_path)
    ok = run_cli("eval", "--config", cfg, "--out", tmp_path / "run", "--gcm", "on")
    assert ok.returncode == 0, ok.stderr
    assert (tmp_path / "run" / "summary.json").exists()

    (tmp_path / "test_x").write_bytes(b"XXXX" + bytes(8))
    corrupt = run_cli("eval", "--config", cfg, "--out", tmp_path / "run2")
    assert corrupt.returncode == 3, corrupt.stderr
    assert "error in stage" in corrupt.stderr

    other = tmp_path / "diverging"
    other.mkdir()
    diverging = run_cli("train", "--config", tiny_config(other, lr=1e30), "--out", other / "run")
    assert diverging.returncode == 4, diverging.stderr
