"""Command line interface.

Exit codes: 0 ok, 1 I/O or schema error, 2 no well-posedness certificate,
3 theorem violation (an implementation bug), 4 training divergence.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from .certification import certify_batch, inclusion_vs_lipschitz, lipschitz_upper_bound
from .exceptions import (
    DimensionError,
    InputBoxInvalid,
    ModelFormatError,
    NoCertificate,
    SpectralRadiusTooLarge,
    TrainingDiverged,
)
from .fixed_point import SolverConfig, wellposedness_certificate
from .networks import (
    FeedforwardNetwork,
    WeightTiedNetwork,
    ffnn_forward,
    ffnn_to_inn,
    load_model,
    save_model,
)
from .reachability import (
    IntervalVector,
    compare_ffnn_equal,
    compare_weight_tied_dominance,
    point_output,
    reach,
)
from .training import (
    TrainConfig,
    init_implicit_network,
    make_dataset,
    scaled_warmup,
    train,
    write_history_csv,
)

log = logging.getLogger("innreach")

EXIT_OK, EXIT_IO, EXIT_NO_CERT, EXIT_VIOLATION, EXIT_DIVERGED = 0, 1, 2, 3, 4


class UsageError(Exception):
    """Bad input file contents or flag combination (exit code 1)."""


def fmt(x):
    """Round-trip float formatting, independent of locale."""
    return repr(float(x))


def _write_csv(path, header, rows):
    # build in memory first so a failure never leaves a partial file
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def _parse_vector(text):
    """Inline ``1.0,2.5`` (commas and/or whitespace) or a path to such a file."""
    if os.path.isfile(text):
        with open(text, encoding="utf-8") as fh:
            text = fh.read()
    parts = text.replace(",", " ").split()
    if not parts:
        raise UsageError("empty input vector")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as err:
        raise UsageError(f"cannot parse input vector: {err}") from None


def read_dataset(path, label_col=None):
    """Read a dataset CSV (header row, feature columns, integer label column).

    ``label_col`` is a column name or an integer index; the default is the
    column named ``label`` when present and the last column otherwise.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise UsageError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not body:
        raise UsageError(f"{path}: dataset has no rows")
    if label_col is None:
        idx = header.index("label") if "label" in header else len(header) - 1
    elif label_col in header:
        idx = header.index(label_col)
    else:
        try:
            idx = int(label_col)
        except ValueError:
            raise UsageError(f"{path}: no column {label_col!r}") from None
        if not -len(header) <= idx < len(header):
            raise UsageError(f"{path}: label column index {idx} out of range")
        idx %= len(header)
    try:
        data = np.array([[float(v) for v in r] for r in body])
    except ValueError as err:
        raise UsageError(f"{path}: non-numeric entry ({err})") from None
    if data.shape[1] != len(header):
        raise UsageError(f"{path}: rows do not match the header width")
    y = data[:, idx]
    if np.any(y != np.round(y)) or np.any(y < 0):
        raise UsageError(f"{path}: labels must be nonnegative integers")
    X = np.delete(data, idx, axis=1)
    return X, y.astype(int)


def write_dataset(path, X, y):
    header = [f"x{i}" for i in range(X.shape[1])] + ["label"]
    _write_csv(path, header, [[fmt(v) for v in row] + [int(lbl)] for row, lbl in zip(X, y)])


# --- subcommands -------------------------------------------------------------------

def cmd_reach(args):
    net = load_model(args.model)
    center = _parse_vector(args.center)
    box = IntervalVector.ball(center, args.eps)
    if args.method == "mm" and isinstance(net, WeightTiedNetwork) and net.depth is not None:
        raise UsageError("method 'mm' describes the infinite-depth limit; drop 'depth' from the model")
    res = reach(net, box, args.method, SolverConfig(tol=args.tol))
    out = res.output
    print(f"method={res.method.value} eps={fmt(args.eps)}")
    print(f"{'index':>5}  {'lo':>22}  {'hi':>22}  {'width':>22}")
    rows = []
    for i, (lo, hi) in enumerate(zip(out.lo, out.hi)):
        print(f"{i:>5}  {lo:>22.15g}  {hi:>22.15g}  {hi - lo:>22.15g}")
        rows.append([i, fmt(lo), fmt(hi), fmt(hi - lo)])
    if args.out:
        _write_csv(args.out, ["index", "lo", "hi", "width"], rows)
    return EXIT_OK


def _implicit_of(net):
    if isinstance(net, FeedforwardNetwork):
        return ffnn_to_inn(net)
    if isinstance(net, WeightTiedNetwork):
        return net.as_implicit()
    return net


def cmd_certify(args):
    net = _implicit_of(load_model(args.model))
    X, y = read_dataset(args.dataset, args.label_col)
    if X.shape[1] != net.r:
        raise UsageError(f"dataset has {X.shape[1]} features, model expects {net.r}")
    if np.any(y >= net.q):
        raise UsageError(f"labels must lie in 0..{net.q - 1}")
    if args.eps < 0:
        raise UsageError("--eps must be nonnegative")
    cert = wellposedness_certificate(net)
    pred, margin, ok = certify_batch(net, X, y, args.eps, cert, SolverConfig(tol=args.tol))
    rows = []
    for k in range(len(y)):
        verdict = "certified" if ok[k] else "not certified"
        print(f"sample {k}: predicted={pred[k]} label={y[k]} min_margin={margin[k]:.6g} {verdict}")
        rows.append([k, int(pred[k]), int(y[k]), fmt(margin[k]), int(ok[k])])
    print(f"certified accuracy at eps={fmt(args.eps)}: {fmt(np.mean(ok))} ({int(ok.sum())}/{len(y)})")
    if args.out:
        _write_csv(args.out, ["sample", "predicted", "label", "min_margin", "certified"], rows)
    return EXIT_OK


def _trial_centers(r, trials, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((trials, r))


def cmd_compare_ffnn(args):
    net = load_model(args.model)
    if not isinstance(net, FeedforwardNetwork):
        raise UsageError("compare-ffnn requires a model of kind 'ffnn'")
    cfg = SolverConfig(tol=args.tol)
    failed = 0
    for t, x in enumerate(_trial_centers(net.r, args.trials, args.seed)):
        rep = compare_ffnn_equal(net, IntervalVector.ball(x, args.eps), cfg)
        failed += not rep.passed
        print(f"trial {t}: discrepancy={rep.discrepancy:.3e} slack={rep.slack:.1e} "
              f"{'PASS' if rep.passed else 'FAIL'}")
    print(f"{args.trials - failed}/{args.trials} trials passed")
    return EXIT_VIOLATION if failed else EXIT_OK


def cmd_compare_weight_tied(args):
    net = load_model(args.model)
    if isinstance(net, FeedforwardNetwork):
        raise UsageError("compare-weight-tied requires a model of kind 'weight_tied' or 'inn'")
    cfg = SolverConfig(tol=args.tol)
    failed = 0
    for t, x in enumerate(_trial_centers(net.r, args.trials, args.seed)):
        rep = compare_weight_tied_dominance(net, IntervalVector.ball(x, args.eps), cfg)
        failed += not rep.passed
        print(f"trial {t}: violation={rep.discrepancy:.3e} gap={rep.gap:.6g} "
              f"{'PASS' if rep.passed else 'FAIL'}")
    print(f"{args.trials - failed}/{args.trials} trials passed")
    return EXIT_VIOLATION if failed else EXIT_OK


CONFIG_SECTIONS = {
    "dataset": {"generator", "n_samples", "n_classes", "seed", "radius", "noise"},
    "eval_dataset": {"generator", "n_samples", "n_classes", "seed", "radius", "noise"},
    "model": {"hidden_dim", "activation", "seed", "w_scale"},
    "train": {"epsilon_test", "kappa_nom", "gamma", "epochs", "learning_rate", "warmup",
              "seed", "gradient_mode", "batch_size"},
    "solver": {"tol", "max_iter"},
}


def load_train_config(path):
    """Parse and validate a training config JSON; see the README for the schema."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise UsageError(f"{path}: invalid JSON ({err})") from None
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: top level must be an object")
    unknown = set(raw) - set(CONFIG_SECTIONS)
    if unknown:
        raise UsageError(f"{path}: unknown sections {sorted(unknown)}")
    for name, allowed in CONFIG_SECTIONS.items():
        section = raw.get(name, {})
        if not isinstance(section, dict):
            raise UsageError(f"{path}: section {name!r} must be an object")
        extra = set(section) - allowed
        if extra:
            raise UsageError(f"{path}: unknown keys in {name!r}: {sorted(extra)}")
    if "dataset" not in raw:
        raise UsageError(f"{path}: missing 'dataset' section")
    tr = dict(raw.get("train", {}))
    epochs = tr.get("epochs", TrainConfig.epochs)
    if tr.get("warmup", "scaled") == "scaled":
        tr["warmup"] = scaled_warmup(epochs)
    try:
        cfg = TrainConfig(solver=SolverConfig(**raw.get("solver", {})), **tr)
    except (TypeError, ValueError) as err:
        raise UsageError(f"{path}: {err}") from None
    return raw, cfg


def _build_dataset(section, path):
    section = dict(section)
    gen = section.pop("generator", "clusters")
    if gen == "moons":
        section.pop("n_classes", None)
        section.pop("radius", None)
    try:
        return make_dataset(gen, **section)
    except (TypeError, ValueError) as err:
        raise UsageError(f"{path}: bad dataset section ({err})") from None


def cmd_train(args):
    raw, cfg = load_train_config(args.config)
    ds = _build_dataset(raw["dataset"], args.config)
    ev = _build_dataset(raw["eval_dataset"], args.config) if "eval_dataset" in raw else ds
    m = dict(raw.get("model", {}))
    q = int(max(ds.y.max(), ev.y.max())) + 1
    try:
        net0 = init_implicit_network(m.get("hidden_dim", 8), ds.X.shape[1], q,
                                     m.get("activation", "relu"), seed=m.get("seed", cfg.seed),
                                     w_scale=m.get("w_scale", 0.2))
    except ValueError as err:
        raise UsageError(f"{args.config}: bad model section ({err})") from None
    try:
        net, history, _ = train(net0, ds.X, ds.y, cfg, ev.X, ev.y)
    except TrainingDiverged as err:
        if args.history:
            write_history_csv(err.history, args.history)
        raise
    save_model(net, args.out)
    if args.history:
        write_history_csv(history, args.history)
    if history:
        last = history[-1]
        print(f"final clean accuracy: {fmt(last.clean_accuracy)}")
        print(f"final certified accuracy at eps={fmt(cfg.epsilon_test)}: {fmt(last.certified_accuracy)}")
    else:
        print("0 epochs: wrote the projected initial model")
    return EXIT_OK


def cmd_convert(args):
    net = load_model(args.model)
    if not isinstance(net, FeedforwardNetwork):
        raise UsageError("convert requires a model of kind 'ffnn'")
    inn = ffnn_to_inn(net)
    X = np.random.default_rng(args.seed).standard_normal((args.checks, net.r))
    diff = float(np.max(np.abs(point_output(inn, X) - ffnn_forward(net, X)), initial=0.0))
    save_model(inn, args.out)
    print(f"wrote inn model with n={inn.n}, r={inn.r}, q={inn.q}")
    print(f"forward spot-check on {args.checks} random inputs: max |difference| = {diff:.3e}")
    return EXIT_OK


def cmd_lipschitz(args):
    net = _implicit_of(load_model(args.model))
    cert = wellposedness_certificate(net)
    L = lipschitz_upper_bound(net, cert)
    print(f"mu={fmt(cert.mu)} global l-inf Lipschitz bound={fmt(L)}")
    rows = [["mu", fmt(cert.mu)], ["lipschitz_bound", fmt(L)]]
    if args.center is not None:
        box = IntervalVector.ball(_parse_vector(args.center), args.eps)
        cmp = inclusion_vs_lipschitz(net, box, cert, SolverConfig(tol=args.tol))
        print(f"max widths: mixed-monotone={cmp.width_mm:.6g} lipschitz={cmp.width_lipschitz:.6g} "
              f"sampled={cmp.width_sampled:.6g} {'PASS' if cmp.passed else 'FAIL'}")
        rows += [["width_mm", fmt(cmp.width_mm)], ["width_lipschitz", fmt(cmp.width_lipschitz)],
                 ["width_sampled", fmt(cmp.width_sampled)]]
        if not cmp.passed:
            return EXIT_VIOLATION
    if args.out:
        _write_csv(args.out, ["quantity", "value"], rows)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="innreach", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def tol_flag(sp, default=1e-10):
        sp.add_argument("--tol", type=float, default=default, help="fixed-point tolerance")

    sp = sub.add_parser("reach", help="output interval box for an l-inf input ball")
    sp.add_argument("model")
    sp.add_argument("center", help="comma separated input vector, or a file holding one")
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--method", choices=["mm", "ibp", "ibp-wt"], default="mm")
    tol_flag(sp)
    sp.add_argument("--out", help="CSV with columns index,lo,hi,width")
    sp.set_defaults(func=cmd_reach)

    sp = sub.add_parser("certify", help="certify every sample of a dataset CSV")
    sp.add_argument("model")
    sp.add_argument("dataset")
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--label-col", default=None, help="label column name or index")
    tol_flag(sp)
    sp.add_argument("--out", help="CSV with columns sample,predicted,label,min_margin,certified")
    sp.set_defaults(func=cmd_certify)

    for name, func, default_eps in (("compare-ffnn", cmd_compare_ffnn, 0.05),
                                    ("compare-weight-tied", cmd_compare_weight_tied, 0.1)):
        sp = sub.add_parser(name, help="check a method comparison on random boxes")
        sp.add_argument("model")
        sp.add_argument("--eps", type=float, default=default_eps)
        sp.add_argument("--trials", type=int, default=10)
        sp.add_argument("--seed", type=int, default=0)
        tol_flag(sp)
        sp.set_defaults(func=func)

    sp = sub.add_parser("train", help="train an implicit network on a toy dataset")
    sp.add_argument("config")
    sp.add_argument("--out", required=True, help="trained model JSON")
    sp.add_argument("--history", help="history CSV")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("convert", help="rewrite a feedforward model as an implicit one")
    sp.add_argument("model")
    sp.add_argument("--out", required=True)
    sp.add_argument("--checks", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("lipschitz", help="global Lipschitz bound, optionally compared on a box")
    sp.add_argument("model")
    sp.add_argument("--center", default=None)
    sp.add_argument("--eps", type=float, default=0.1)
    tol_flag(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_lipschitz)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for flag in ("trials", "checks"):
        if getattr(args, flag, 1) < 1:
            parser.error(f"--{flag} must be at least 1")
    try:
        return args.func(args)
    except NoCertificate as err:
        print(f"error: {err}; condition mu < 1 fails with mu = {err.mu:.6g}", file=sys.stderr)
        return EXIT_NO_CERT
    except SpectralRadiusTooLarge as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NO_CERT
    except TrainingDiverged as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, ModelFormatError, DimensionError, InputBoxInvalid, OSError, TypeError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
