"""Acceptance gate: one PASS/FAIL line per criterion (shown in the terminal summary)."""

import json
import time

import numpy as np
import pytest

from conftest import record_acceptance
from factories import random_ffnn, random_inn, random_weight_tied
from innreach import cli, linalg
from innreach.certification import lipschitz_upper_bound
from innreach.exceptions import NoCertificate
from innreach.fixed_point import SolverConfig, solve_fixed_point, wellposedness_certificate
from innreach.networks import FeedforwardNetwork, WeightTiedNetwork, ffnn_to_inn, save_model
from innreach.oracle import SamplingPlan, sampled_tight_inclusion
from innreach.reachability import (
    IntervalVector,
    compare_ffnn_equal,
    compare_weight_tied_dominance,
    point_output,
    reach,
    reach_inn,
)
from innreach.training import (
    TrainConfig,
    init_implicit_network,
    loss_gradient,
    make_clusters,
    scaled_warmup,
    train,
)

pytestmark = pytest.mark.acceptance

SOLVER_TOL = 1e-10


def as_implicit(model):
    if isinstance(model, FeedforwardNetwork):
        return ffnn_to_inn(model)
    if isinstance(model, WeightTiedNetwork):
        return model.as_implicit()
    return model


@pytest.fixture(scope="module")
def soundness_suite():
    rng = np.random.default_rng(2024)
    cfg = SolverConfig(tol=SOLVER_TOL)
    worst_violation = 0.0
    worst_ratio_excess = -np.inf
    instances = 0
    start = time.perf_counter()
    while instances < 200:
        net, cert = random_inn(rng)
        instances += 1
        center = rng.standard_normal(net.r)
        radius = rng.uniform(0.01, 0.5, net.r)
        box = IntervalVector(center - radius, center + radius)
        res = reach_inn(net, box, cert, cfg)
        X = rng.uniform(box.lo, box.hi, (1000, net.r))
        nominal = solve_fixed_point(net, X, cert, cfg)
        Y = nominal.z_star @ net.C.T + net.c
        out = res.output
        worst_violation = max(worst_violation, float(np.max(out.lo - Y)), float(np.max(Y - out.hi)))
        d = res.diagnostics
        worst_ratio_excess = max(worst_ratio_excess,
                                 d["contraction_estimate"] - d["contraction_bound"],
                                 nominal.contraction_estimate - cert.contraction_bound(nominal.alpha))
    return instances, worst_violation, worst_ratio_excess, time.perf_counter() - start


def test_soundness_suite(soundness_suite):
    instances, violation, _, elapsed = soundness_suite
    ok = instances >= 200 and violation <= 1e-8 and elapsed < 60
    record_acceptance("soundness", ok,
                      f"{instances} INNs x 1000 samples, worst violation {max(violation, 0):.2e} "
                      f"(tol 1e-8), {elapsed:.1f}s (target < 60s)")
    assert ok


def test_contraction_diagnostics(soundness_suite):
    instances, _, excess, _ = soundness_suite
    ok = excess <= 1e-6
    record_acceptance("contraction diagnostics", ok,
                      f"max(observed ratio - bound) = {excess:.2e} over {instances} instances "
                      f"(nominal and embedded solves, slack 1e-6)")
    assert ok


def test_ffnn_equality():
    rng = np.random.default_rng(7)
    cfg = SolverConfig(tol=SOLVER_TOL)
    failures, worst = 0, 0.0
    for _ in range(100):
        net = random_ffnn(rng, max_layers=4, max_width=10)
        eps = float(rng.choice([0.01, 0.05, 0.1]))
        rep = compare_ffnn_equal(net, IntervalVector.ball(rng.standard_normal(net.r), eps), cfg)
        failures += not rep.passed
        worst = max(worst, rep.discrepancy)
    ok = failures == 0 and worst <= 100 * SOLVER_TOL
    record_acceptance("feedforward equality", ok,
                      f"100 FFNNs, max discrepancy {worst:.2e} (limit {100 * SOLVER_TOL:.0e}), "
                      f"{failures} failures")
    assert ok


def test_weight_tied_dominance():
    rng = np.random.default_rng(11)
    cfg = SolverConfig(tol=SOLVER_TOL)
    failures, worst = 0, 0.0
    for k in range(100):
        net = random_weight_tied(rng, rho=rng.uniform(0.1, 0.9), neg_diag=k % 3 == 0)
        assert linalg.spectral_radius_abs(net.W) <= 0.9 + 1e-9
        rep = compare_weight_tied_dominance(net, IntervalVector.ball(rng.standard_normal(net.r), 0.1), cfg)
        failures += not rep.passed
        worst = max(worst, rep.discrepancy)
    best_gap = 0.0
    for _ in range(10):
        net = random_weight_tied(rng, rho=0.8, neg_diag=True)
        assert np.any(np.diag(net.W) < 0)
        rep = compare_weight_tied_dominance(net, IntervalVector.ball(rng.standard_normal(net.r), 0.2), cfg)
        failures += not rep.passed
        best_gap = max(best_gap, rep.gap)
    ok = failures == 0 and best_gap > 1e-6
    record_acceptance("weight-tied dominance", ok,
                      f"110 nets with rho(|W|) <= 0.9, worst containment violation {worst:.2e} "
                      f"(slack {100 * SOLVER_TOL:.0e}), {failures} failures; "
                      f"largest negative-diagonal gap {best_gap:.3g} (needs > 1e-6)")
    assert ok


def test_lipschitz_and_sandwich():
    rng = np.random.default_rng(13)
    cfg = SolverConfig(tol=SOLVER_TOL)
    lip_bad, sandwich_bad, instances = 0, 0, 0
    while instances < 60:
        kind = instances % 3
        if kind == 0:
            net, cert = random_inn(rng, n=int(rng.integers(1, 11)), r=int(rng.integers(1, 5)))
            model, methods = net, ("mm",)
        elif kind == 1:
            model = random_ffnn(rng, max_layers=3, max_width=4)
            methods = ("mm", "ibp")
        else:
            model = random_weight_tied(rng)
            methods = ("mm", "ibp-wt")
        if model.r > 4:
            continue
        instances += 1
        box = IntervalVector.ball(rng.standard_normal(model.r), rng.uniform(0.05, 0.5))
        plan = SamplingPlan(total_samples=400, seed=instances)
        inner = sampled_tight_inclusion(lambda X: point_output(model, X, cfg), box, plan)
        for m in methods:
            sandwich_bad += not reach(model, box, m, cfg).output.contains_box(inner, atol=1e-8)
        imp = as_implicit(model)
        L = lipschitz_upper_bound(imp, wellposedness_certificate(imp))
        lip_bad += float(inner.width.max()) > L * float(box.width.max()) + 1e-9
    ok = lip_bad == 0 and sandwich_bad == 0
    record_acceptance("lipschitz width bound and sandwich", ok,
                      f"{instances} instances (r <= 4; INN, FFNN and weight-tied), "
                      f"{lip_bad} Lipschitz violations, {sandwich_bad} sandwich violations")
    assert ok


def test_gradient_correctness():
    rng = np.random.default_rng(17)
    tight = SolverConfig(tol=1e-13, max_iter=100000)
    worst, instances = 0.0, 0
    while instances < 20:
        n = int(rng.integers(2, 11))
        net = init_implicit_network(n, int(rng.integers(1, 4)), int(rng.integers(2, 4)), "tanh",
                                    seed=int(rng.integers(1 << 30)), w_scale=0.3)
        try:
            cert = wellposedness_certificate(net)
        except NoCertificate:
            continue
        instances += 1
        X = rng.standard_normal((3, net.r))
        y = rng.integers(0, net.q, 3)
        eps, kappa = rng.uniform(0, 0.2), rng.uniform(0, 1)
        _, gi = loss_gradient(net, X, y, eps, kappa, cert, tight)
        _, gf = loss_gradient(net, X, y, eps, kappa, cert, tight, mode="finite-difference")
        for k in gi:
            rel = np.abs(gi[k] - gf[k]) / np.maximum(np.abs(gf[k]), 1e-7)
            worst = max(worst, float(rel.max(initial=0.0)))
    ok = worst < 1e-4
    record_acceptance("gradient correctness", ok,
                      f"{instances} Tanh INNs (n <= 10), worst elementwise relative error "
                      f"{worst:.2e} vs central differences (limit 1e-4)")
    assert ok


@pytest.fixture(scope="module")
def toy_training():
    start = time.perf_counter()
    wins, pairs, worst_mu, checkpoints = 0, [], -np.inf, 0
    eps_test, epochs = 0.3, 60

    def check(record, net, eta):
        nonlocal worst_mu, checkpoints
        checkpoints += 1
        worst_mu = max(worst_mu, linalg.weighted_matrix_measure(net.W, 1.0 / eta))

    for seed in range(5):
        ds = make_clusters(300, 2, seed=seed, noise=0.5)
        ev = make_clusters(300, 2, seed=100 + seed, noise=0.5)
        net0 = init_implicit_network(8, 2, 2, "relu", seed=seed)
        accs = []
        for kappa in (0.75, 0.0):
            cfg = TrainConfig(epsilon_test=eps_test, kappa_nom=kappa, gamma=0.0, epochs=epochs,
                              learning_rate=0.5, warmup=scaled_warmup(epochs), seed=seed,
                              solver=SolverConfig(tol=1e-8))
            _, history, _ = train(net0, ds.X, ds.y, cfg, ev.X, ev.y, on_epoch=check)
            accs.append(history[-1].certified_accuracy)
        wins += accs[0] > accs[1]
        pairs.append(accs)
    return wins, pairs, worst_mu, checkpoints, time.perf_counter() - start


def test_toy_training_replication(toy_training):
    wins, pairs, _, _, elapsed = toy_training
    ok = wins >= 4 and elapsed < 300
    detail = ", ".join(f"{r:.3f} vs {n:.3f}" for r, n in pairs)
    record_acceptance("robust beats nominal training", ok,
                      f"robust wins {wins}/5 seed pairs on certified accuracy (robust vs nominal: "
                      f"{detail}), {elapsed:.1f}s (target < 300s)")
    assert ok


def test_constraint_maintenance(toy_training):
    _, _, worst_mu, checkpoints, _ = toy_training
    ok = worst_mu <= 0.0 + 1e-10
    record_acceptance("constraint maintenance", ok,
                      f"{checkpoints} post-epoch checkpoints, max weighted measure {worst_mu:.3g} "
                      f"(gamma 0, slack 1e-10)")
    assert ok


def test_cli_determinism(tmp_path):
    rng = np.random.default_rng(19)
    config = {"dataset": {"generator": "clusters", "n_samples": 120, "seed": 3, "noise": 0.5},
              "model": {"hidden_dim": 6, "seed": 3},
              "train": {"epsilon_test": 0.2, "epochs": 12, "learning_rate": 0.5,
                        "warmup": "scaled", "seed": 3}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config))
    ff = tmp_path / "ffnn.json"
    save_model(random_ffnn(rng, max_layers=3, max_width=2), ff)
    ds = make_clusters(40, 2, seed=9, noise=0.5)
    data = tmp_path / "data.csv"
    cli.write_dataset(data, ds.X, ds.y)
    outputs = []
    for run in range(2):
        d = tmp_path / f"run{run}"
        d.mkdir()
        codes = [
            cli.main(["train", str(cfg_path), "--out", str(d / "m.json"), "--history", str(d / "h.csv")]),
            cli.main(["certify", str(d / "m.json"), str(data), "--eps", "0.2", "--out", str(d / "c.csv")]),
            cli.main(["reach", str(d / "m.json"), "0.3,-0.1", "--eps", "0.2", "--out", str(d / "r.csv")]),
            cli.main(["lipschitz", str(d / "m.json"), "--center", "0,0", "--out", str(d / "l.csv")]),
        ]
        assert codes == [0, 0, 0, 0]
        outputs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    same = outputs[0] == outputs[1]
    record_acceptance("CLI determinism", same,
                      f"two seeded runs of train/certify/reach/lipschitz: "
                      f"{'bitwise identical' if same else 'DIFFERENT'} outputs ({', '.join(outputs[0])})")
    assert same
