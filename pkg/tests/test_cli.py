import csv
import json

import numpy as np
import pytest

from callosity.cli import confusion_matrix, main
from callosity.imaging import read_image
from callosity.layers import Network, NetworkSpec, load_network_spec, save_checkpoint, save_network_spec


def toy_data(path, n=120, seed=0, classes=(0, 1)):
    """6x6 images whose class is whether the left half is brighter than the right."""
    r = np.random.default_rng(seed)
    x = r.uniform(0, 0.5, (n, 6, 6))
    y = r.choice(classes, n)
    x[y == 1, :, :3] += 0.5
    x[y == 0, :, 3:] += 0.5
    np.savez(path, images=x, labels=y)
    return x, y


def toy_net(path, loss="cross-entropy"):
    spec = NetworkSpec.from_dict({
        "input_shape": [6, 6, 1], "loss": loss,
        "layers": [{"kind": "conv", "channels": 2, "kernel": 3}, {"kind": "relu"},
                   {"kind": "maxpool", "window": 2}, {"kind": "flatten"}, {"kind": "dense", "units": 2}],
    })
    save_network_spec(spec, path)
    return spec


@pytest.fixture
def toy(tmp_path):
    toy_data(tmp_path / "toy.npz")
    toy_net(tmp_path / "net.json")
    return tmp_path


def train(toy, out, *extra, seed=42):
    return main(["--threads", "1", "--seed", str(seed), "train", "--data", str(toy / "toy.npz"),
                 "--net", str(toy / "net.json"), "--output", str(out), "--lr", "0.01", "--decay-rate", "1.0", "--batch-size", "16",
                 "--dtype", "float64", "--quiet", *extra])


# -- preprocess ------------------------------------------------------------------------

def test_preprocess_empty_directory(tmp_path, capsys):
    (tmp_path / "in").mkdir()
    assert main(["preprocess", str(tmp_path / "in"), str(tmp_path / "out")]) == 0
    assert "processed 0" in capsys.readouterr().out
    assert json.loads((tmp_path / "out" / "run.json").read_text())["results"]["processed"] == 0


def test_preprocess_synthetic_corpus(tmp_path, capsys):
    code = main(["preprocess", str(tmp_path / "in"), str(tmp_path / "out"), "--synthetic", "20",
                 "--out-size", "256"])
    assert code == 0
    res = json.loads((tmp_path / "out" / "run.json").read_text())["results"]
    assert res["processed"] == 20 and res["success"] + res["fallback"] >= 16
    crops = [p for p in (tmp_path / "out").glob("scene_*.png")]
    assert len(crops) >= 16
    assert all(read_image(p).shape == (256, 256, 3) for p in crops)
    side = json.loads((tmp_path / "out" / "scene_0000.json").read_text())
    assert {"status", "threshold", "theta_degrees", "confidence"} <= set(side)


def test_preprocess_strict_fails_on_bad_image(tmp_path):
    (tmp_path / "in").mkdir()
    (tmp_path / "in" / "broken.png").write_bytes(b"garbage")
    assert main(["preprocess", str(tmp_path / "in"), str(tmp_path / "o1")]) == 0
    assert main(["preprocess", str(tmp_path / "in"), str(tmp_path / "o2"), "--strict"]) == 2


# -- train / eval -------------------------------------------------------------------------

def test_zero_steps_checkpoint_equals_init(toy):
    assert train(toy, toy / "run", "--max-steps", "0", seed=5) == 0
    net = Network(load_network_spec(toy / "net.json"), dtype=np.float64, seed=5)
    save_checkpoint(net, toy / "init.ckpt")
    assert (toy / "run" / "model.ckpt").read_bytes() == (toy / "init.ckpt").read_bytes()


def test_same_seed_identical_history(toy):
    for name in ("a", "b"):
        assert train(toy, toy / name, "--max-steps", "40", seed=3) == 0
    assert (toy / "a" / "history.csv").read_bytes() == (toy / "b" / "history.csv").read_bytes()
    assert (toy / "a" / "model.ckpt").read_bytes() == (toy / "b" / "model.ckpt").read_bytes()
    train(toy, toy / "c", "--max-steps", "40", seed=4)
    assert (toy / "a" / "history.csv").read_bytes() != (toy / "c" / "history.csv").read_bytes()


def test_converged_toy_evaluates_high(toy, capsys):
    assert train(toy, toy / "run", "--max-steps", "600") == 0
    assert main(["eval", "--checkpoint", str(toy / "run"), "--data", str(toy / "toy.npz"),
                 "--output", str(toy / "ev"), "--dtype", "float64"]) == 0
    acc = json.loads((toy / "ev" / "run.json").read_text())["results"]["accuracy"]
    assert acc >= 0.99
    rows = list(csv.reader(open(toy / "ev" / "confusion.csv")))
    counts = np.array([[int(v) for v in row[1:]] for row in rows[1:]])
    labels = np.load(toy / "toy.npz")["labels"]
    np.testing.assert_array_equal(counts.sum(axis=1), np.bincount(labels, minlength=2))


def test_one_class_accuracy_is_recall(toy):
    train(toy, toy / "run", "--max-steps", "50")
    x, y = toy_data(toy / "ones.npz", n=40, seed=9, classes=(1,))
    assert main(["eval", "--checkpoint", str(toy / "run" / "model.ckpt"), "--data", str(toy / "ones.npz"),
                 "--output", str(toy / "ev"), "--dtype", "float64"]) == 0
    acc = json.loads((toy / "ev" / "run.json").read_text())["results"]["accuracy"]
    rows = list(csv.reader(open(toy / "ev" / "confusion.csv")))
    cm = np.array([[int(v) for v in row[1:]] for row in rows[1:]])
    assert acc == pytest.approx(cm[1, 1] / cm[1].sum())
    assert cm[0].sum() == 0


def test_confusion_matrix_conservation(rng):
    t, p = rng.integers(0, 4, 200), rng.integers(0, 4, 200)
    cm = confusion_matrix(t, p, 4)
    np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(t, minlength=4))
    assert np.trace(cm) == np.sum(t == p)


def test_replay_reproduces_training(toy):
    train(toy, toy / "run", "--max-steps", "30", seed=11)
    assert main(["--replay", str(toy / "run" / "run.json"), "--replay-out", str(toy / "again")]) == 0
    assert (toy / "run" / "history.csv").read_bytes() == (toy / "again" / "history.csv").read_bytes()
    rec = json.loads((toy / "again" / "run.json").read_text())
    assert rec["seed"] == 11 and rec["command"] == "train"


# -- knn ---------------------------------------------------------------------------------

def test_knn_repeats_zero_variance(toy, capsys):
    code = main(["knn", "--data", str(toy / "toy.npz"), "--output", str(toy / "knn"), "--repeats", "20",
                 "--pca", "5"])
    assert code == 0
    out = capsys.readouterr().out
    assert "runs=20 sigma=0" in out
    lines = (toy / "knn" / "report.tsv").read_text().strip().splitlines()
    assert lines[0].split("\t")[0] == "k" and [l.split("\t")[0] for l in lines[1:]] == ["k=1", "k=3", "k=5"]


# -- saliency / activations ----------------------------------------------------------------

def test_zero_weight_checkpoint_zero_heatmap(toy):
    spec = load_network_spec(toy / "net.json")
    net = Network(spec, seed=0)
    net.set_params({k: np.zeros_like(v) for k, v in net.params.items()})
    (toy / "zero").mkdir()
    save_checkpoint(net, toy / "zero" / "model.ckpt")
    save_network_spec(spec, toy / "zero" / "network.json")
    assert main(["saliency", "--checkpoint", str(toy / "zero"), "--data", str(toy / "toy.npz"),
                 "--index", "3", "--box", "2", "--stride", "2", "--output", str(toy / "sal")]) == 0
    grid = np.loadtxt(toy / "sal" / "saliency_grid.csv", delimiter=",")
    assert grid.shape == (3, 3) and not np.any(grid)


@pytest.mark.parametrize("box,stride,cells", [(2, 1, (6, 6)), (3, 3, (2, 2)), (4, 4, (2, 2)), (1, 5, (2, 2))])
def test_saliency_grid_arithmetic(toy, box, stride, cells):
    train(toy, toy / "run", "--max-steps", "5")
    assert main(["saliency", "--checkpoint", str(toy / "run"), "--data", str(toy / "toy.npz"),
                 "--box", str(box), "--stride", str(stride), "--output", str(toy / "sal")]) == 0
    assert json.loads((toy / "sal" / "run.json").read_text())["results"]["grid"] == list(cells)
    assert (toy / "sal" / "saliency_overlay.png").exists()


def test_activation_channels_match_config(toy):
    train(toy, toy / "run", "--max-steps", "5")
    assert main(["activations", "--checkpoint", str(toy / "run"), "--data", str(toy / "toy.npz"),
                 "--probes", str(toy / "toy.npz"), "--n-probes", "30", "--output", str(toy / "act")]) == 0
    res = json.loads((toy / "act" / "run.json").read_text())["results"]
    assert [(l["kind"], l["depth"]) for l in res["layers"]] == [("conv", 2), ("relu", 2), ("maxpool", 2)]
    assert res["units"] == 2
    assert (toy / "act" / "layer00_conv.pgm").exists() and (toy / "act" / "dead_neurons.csv").exists()


def test_report_summarises_runs(toy, capsys):
    train(toy, toy / "run", "--max-steps", "5")
    assert main(["report", str(toy / "run"), "--output", str(toy / "r.tsv")]) == 0
    header = (toy / "r.tsv").read_text().splitlines()[0].split("\t")
    assert header[:3] == ["run", "command", "seed"] and "final_loss" in header


# -- exit codes ---------------------------------------------------------------------------

def test_exit_codes(toy, capsys):
    assert main(["train", "--data", str(toy / "toy.npz"), "--net", str(toy / "net.json"),
                 "--output", str(toy / "x"), "--lr", "-1"]) == 1
    assert main(["train", "--data", str(toy / "missing.npz"), "--net", str(toy / "net.json"),
                 "--output", str(toy / "x")]) == 2
    assert main(["eval", "--checkpoint", str(toy / "nowhere"), "--data", str(toy / "toy.npz"),
                 "--output", str(toy / "x")]) == 2
    with pytest.raises(SystemExit) as e:
        main(["train", "--bogus"])
    assert e.value.code == 1
    assert main([]) == 1


@pytest.mark.filterwarnings("ignore:invalid value")
def test_non_finite_training_exits_3(toy):
    x, y = toy_data(toy / "bad.npz")
    x[:] = np.inf
    np.savez(toy / "bad.npz", images=x, labels=y)
    assert main(["train", "--data", str(toy / "bad.npz"), "--net", str(toy / "net.json"),
                 "--output", str(toy / "x"), "--max-steps", "3", "--quiet"]) == 3
