import json

import numpy as np
import pytest

from factories import random_ffnn, random_weight_tied
from innreach import cli
from innreach.networks import ImplicitNetwork, load_model, save_model
from innreach.reachability import ComparisonReport
from innreach.training import make_clusters


@pytest.fixture
def models(tmp_path):
    rng = np.random.default_rng(0)
    paths = {}
    f = random_ffnn(rng, max_layers=3, max_width=5)
    while f.r != 2:
        f = random_ffnn(rng, max_layers=3, max_width=5)
    paths["ffnn"] = tmp_path / "ffnn.json"
    save_model(f, paths["ffnn"])
    wt = random_weight_tied(rng, rho=0.8, neg_diag=True)
    paths["wt"] = tmp_path / "wt.json"
    save_model(wt, paths["wt"])
    inn = ImplicitNetwork(1.5 * np.eye(2), np.eye(2), np.zeros(2), np.eye(2), np.zeros(2))
    paths["bad_cert"] = tmp_path / "illposed.json"
    save_model(inn, paths["bad_cert"])
    return paths


def write_config(path, epochs=6, kappa=0.75):
    cfg = {"dataset": {"generator": "clusters", "n_samples": 60, "seed": 0, "noise": 0.5},
           "model": {"hidden_dim": 4, "seed": 0},
           "train": {"epsilon_test": 0.2, "kappa_nom": kappa, "epochs": epochs,
                     "learning_rate": 0.5, "warmup": "scaled", "seed": 0},
           "solver": {"tol": 1e-8}}
    path.write_text(json.dumps(cfg))
    return path


def test_reach_mm_equals_ibp_for_ffnn(models, tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["reach", str(models["ffnn"]), "0.1,-0.3", "--eps", "0.1", "--out", str(a)]) == 0
    assert cli.main(["reach", str(models["ffnn"]), "0.1 -0.3", "--eps", "0.1", "--method", "ibp",
                     "--out", str(b)]) == 0
    ra = np.loadtxt(a, delimiter=",", skiprows=1)
    rb = np.loadtxt(b, delimiter=",", skiprows=1)
    np.testing.assert_allclose(ra, rb, atol=1e-8)
    assert a.read_text().splitlines()[0] == "index,lo,hi,width"


def test_reach_eps_zero_is_forward(models, tmp_path):
    out = tmp_path / "o.csv"
    center = tmp_path / "x.txt"
    center.write_text("0.5\n1.5\n")
    assert cli.main(["reach", str(models["ffnn"]), str(center), "--eps", "0", "--out", str(out)]) == 0
    net = load_model(models["ffnn"])
    rows = np.loadtxt(out, delimiter=",", skiprows=1, ndmin=2)
    from innreach.networks import ffnn_forward
    np.testing.assert_allclose(rows[:, 1], ffnn_forward(net, [0.5, 1.5]), atol=1e-9)
    np.testing.assert_allclose(rows[:, 3], 0, atol=1e-9)


def test_reach_errors(models, tmp_path, capsys):
    bad = tmp_path / "broken.json"
    bad.write_text('{"kind": "inn"')
    out = tmp_path / "never.csv"
    assert cli.main(["reach", str(bad), "0,0", "--eps", "0.1", "--out", str(out)]) == 1
    assert not out.exists()
    assert cli.main(["reach", str(models["ffnn"]), "0,0,0", "--eps", "0.1"]) == 1
    assert cli.main(["reach", str(models["ffnn"]), "0,0", "--eps", "0.1", "--method", "ibp-wt"]) == 1
    assert cli.main(["reach", str(models["bad_cert"]), "0,0", "--eps", "0.1", "--out", str(out)]) == 2
    assert "mu" in capsys.readouterr().err
    assert not out.exists()


def test_certify(tmp_path, capsys):
    model = tmp_path / "m.json"
    assert cli.main(["train", str(write_config(tmp_path / "c.json")), "--out", str(model)]) == 0
    ds = make_clusters(30, 2, seed=5, noise=0.5)
    data = tmp_path / "d.csv"
    cli.write_dataset(data, ds.X, ds.y)
    accs = []
    for eps in ("0", "0.1", "0.3", "1.0"):
        out = tmp_path / f"c{eps}.csv"
        assert cli.main(["certify", str(model), str(data), "--eps", eps, "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "sample,predicted,label,min_margin,certified" and len(lines) == 31
        cert = np.loadtxt(out, delimiter=",", skiprows=1)
        accs.append(cert[:, 4].mean())
        if eps == "0":
            assert accs[0] == np.mean(cert[:, 1] == cert[:, 2])
    assert accs == sorted(accs, reverse=True)
    assert "certified accuracy" in capsys.readouterr().out
    empty = tmp_path / "e.csv"
    empty.write_text("x0,x1,label\n")
    assert cli.main(["certify", str(model), str(empty), "--eps", "0.1"]) == 1
    assert cli.main(["certify", str(model), str(data), "--eps", "0.1", "--label-col", "x0"]) == 1
    assert cli.main(["certify", str(model), str(data), "--eps", "0.1", "--label-col", "nope"]) == 1


def test_certify_label_column_choice(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("y,a,b\n1,0.5,0.25\n0,1.0,-1.0\n")
    X, y = cli.read_dataset(path, "y")
    np.testing.assert_array_equal(y, [1, 0])
    np.testing.assert_array_equal(X, [[0.5, 0.25], [1.0, -1.0]])
    X, y = cli.read_dataset(path, "0")
    np.testing.assert_array_equal(y, [1, 0])


def test_compare_commands(models, capsys):
    assert cli.main(["compare-ffnn", str(models["ffnn"]), "--trials", "4", "--eps", "0.05"]) == 0
    assert cli.main(["compare-weight-tied", str(models["wt"]), "--trials", "4"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 8
    assert cli.main(["compare-ffnn", str(models["wt"])]) == 1
    assert cli.main(["compare-weight-tied", str(models["ffnn"])]) == 1


def test_compare_failure_exit_code(models, monkeypatch, capsys):
    def broken(net, box, cfg):
        return ComparisonReport(False, 1.0, 1e-8)

    monkeypatch.setattr(cli, "compare_ffnn_equal", broken)
    monkeypatch.setattr(cli, "compare_weight_tied_dominance", broken)
    assert cli.main(["compare-ffnn", str(models["ffnn"]), "--trials", "2"]) == 3
    assert cli.main(["compare-weight-tied", str(models["wt"]), "--trials", "2"]) == 3
    assert "FAIL" in capsys.readouterr().out


def test_train_deterministic(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    blobs = []
    for k in range(2):
        m, h = tmp_path / f"m{k}.json", tmp_path / f"h{k}.csv"
        assert cli.main(["train", str(cfg), "--out", str(m), "--history", str(h)]) == 0
        blobs.append((m.read_bytes(), h.read_bytes()))
    assert blobs[0] == blobs[1]
    assert len(blobs[0][1].decode().splitlines()) == 7


def test_train_zero_epochs_and_errors(tmp_path, monkeypatch):
    m = tmp_path / "m.json"
    assert cli.main(["train", str(write_config(tmp_path / "c.json", epochs=0)), "--out", str(m)]) == 0
    assert isinstance(load_model(m), ImplicitNetwork)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"dataset": {}, "train": {"kappa_nom": 2}}))
    assert cli.main(["train", str(bad), "--out", str(m)]) == 1
    bad.write_text(json.dumps({"dataset": {}, "optimizer": {}}))
    assert cli.main(["train", str(bad), "--out", str(m)]) == 1

    from innreach.exceptions import TrainingDiverged

    def diverge(*args, **kwargs):
        raise TrainingDiverged(3, [])

    monkeypatch.setattr(cli, "train", diverge)
    h = tmp_path / "h.csv"
    assert cli.main(["train", str(write_config(tmp_path / "c2.json")), "--out", str(tmp_path / "x.json"),
                     "--history", str(h)]) == 4
    assert h.read_text().startswith("epoch,")


def test_convert(models, tmp_path, capsys):
    out = tmp_path / "inn.json"
    assert cli.main(["convert", str(models["ffnn"]), "--out", str(out)]) == 0
    assert isinstance(load_model(out), ImplicitNetwork)
    assert "spot-check" in capsys.readouterr().out
    assert cli.main(["convert", str(out), "--out", str(tmp_path / "again.json")]) == 1


def test_lipschitz(models, tmp_path):
    out = tmp_path / "l.csv"
    assert cli.main(["lipschitz", str(models["wt"]), "--center", "0" + ",0" * (load_model(models["wt"]).r - 1),
                     "--out", str(out)]) == 0
    rows = dict(line.split(",") for line in out.read_text().splitlines()[1:])
    assert float(rows["width_sampled"]) <= float(rows["width_lipschitz"])
    assert cli.main(["lipschitz", str(models["bad_cert"])]) == 2


def test_module_entry_point(models):
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "innreach", "reach", str(models["ffnn"]), "0,0",
                          "--eps", "0.1"], capture_output=True, text=True)
    assert res.returncode == 0 and "method=mm" in res.stdout
