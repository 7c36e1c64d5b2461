"""Robust training of small implicit networks on synthetic data.

The loss mixes nominal cross-entropy with cross-entropy of the negated
margin lower bound (an upper bound on the worst-case loss over the input
ball).  Gradients flow through both the nominal and the embedded fixed
points by the implicit function theorem.  After every gradient step the
weight matrix is projected back onto the matrix-measure constraint for the
current weight vector, which is refreshed at the end of each epoch.
"""

import csv
import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import linalg
from .certification import certified_accuracy, clean_accuracy
from .exceptions import NoCertificate, TrainingDiverged
from .fixed_point import (
    SolverConfig,
    certificate_from_weight,
    solve_embedded_fixed_point,
    solve_fixed_point,
    wellposedness_certificate,
)
from .networks import Activation, ImplicitNetwork

log = logging.getLogger(__name__)

PARAMS = ("W", "U", "b", "C", "c")


@dataclass(frozen=True)
class TrainConfig:
    epsilon_test: float = 0.1
    kappa_nom: float = 0.75
    gamma: float = 0.0
    epochs: int = 40
    learning_rate: float = 0.1
    warmup: tuple = (10, 10)
    seed: int = 0
    gradient_mode: str = "implicit-function"
    batch_size: int = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not self.gamma < 1:
            raise ValueError("gamma must be < 1")
        if not 0 <= self.kappa_nom <= 1:
            raise ValueError("kappa_nom must lie in [0, 1]")
        if self.epsilon_test < 0:
            raise ValueError("epsilon_test must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.gradient_mode not in ("implicit-function", "finite-difference"):
            raise ValueError(f"unknown gradient_mode {self.gradient_mode!r}")
        if len(self.warmup) != 2 or min(self.warmup) < 0:
            raise ValueError("warmup must be (nonrobust_epochs, ramp_epochs) with nonnegative entries")
        object.__setattr__(self, "warmup", tuple(int(v) for v in self.warmup))


def scaled_warmup(epochs):
    """Warm-up proportional to 10 nonrobust plus 10 ramp epochs out of 40."""
    quarter = epochs // 4
    return (quarter, quarter)


def schedule(epoch, cfg):
    """``(eps, kappa)`` for a 1-based epoch index.

    Zero for the nonrobust epochs, then linear so that the last ramp epoch
    reaches ``(epsilon_test, kappa_nom)``, constant afterwards.
    """
    flat, ramp = cfg.warmup
    if epoch <= flat:
        frac = 0.0
    elif ramp == 0 or epoch >= flat + ramp:
        frac = 1.0
    else:
        frac = (epoch - flat) / ramp
    return frac * cfg.epsilon_test, frac * cfg.kappa_nom


# --- datasets ------------------------------------------------------------------

@dataclass
class ToyDataset:
    X: np.ndarray
    y: np.ndarray
    generator: str
    seed: int

    def __len__(self):
        return len(self.y)


def _class_counts(n_samples, n_classes):
    base, extra = divmod(n_samples, n_classes)
    return [base + (k < extra) for k in range(n_classes)]


def make_clusters(n_samples=400, n_classes=2, seed=0, radius=1.0, noise=0.35):
    """Gaussian blobs with centers evenly spaced on a circle."""
    rng = np.random.default_rng(seed)
    X, y = [], []
    for k, count in enumerate(_class_counts(n_samples, n_classes)):
        angle = 2 * np.pi * k / n_classes
        center = radius * np.array([np.cos(angle), np.sin(angle)])
        X.append(center + noise * rng.standard_normal((count, 2)))
        y.append(np.full(count, k))
    return ToyDataset(np.vstack(X), np.concatenate(y), "clusters", seed)


def make_moons(n_samples=400, seed=0, noise=0.1):
    """Two interleaved half circles."""
    rng = np.random.default_rng(seed)
    n0, n1 = _class_counts(n_samples, 2)
    t0 = rng.uniform(0, np.pi, n0)
    t1 = rng.uniform(0, np.pi, n1)
    X0 = np.column_stack([np.cos(t0), np.sin(t0)])
    X1 = np.column_stack([1 - np.cos(t1), 0.5 - np.sin(t1)])
    X = np.vstack([X0, X1]) + noise * rng.standard_normal((n0 + n1, 2))
    y = np.concatenate([np.zeros(n0, int), np.ones(n1, int)])
    return ToyDataset(X, y, "moons", seed)


GENERATORS = {"clusters": make_clusters, "moons": make_moons}


def make_dataset(generator, **kwargs):
    try:
        return GENERATORS[generator](**kwargs)
    except KeyError:
        raise ValueError(f"unknown dataset generator {generator!r}") from None


def init_implicit_network(n, r, q, activation="relu", seed=0, w_scale=0.2):
    """Random implicit network with small ``W`` (well inside the certifiable region)."""
    rng = np.random.default_rng(seed)
    W = w_scale * rng.standard_normal((n, n)) / np.sqrt(n)
    U = rng.standard_normal((n, r)) / np.sqrt(r)
    b = 0.1 * rng.standard_normal(n)
    C = rng.standard_normal((q, n)) / np.sqrt(n)
    c = np.zeros(q)
    return ImplicitNetwork(W, U, b, C, c, Activation(activation))


# --- loss and gradients ---------------------------------------------------------

def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits, y):
    """Per-sample softmax cross-entropy."""
    logits = np.atleast_2d(logits)
    y = np.asarray(y, dtype=int)
    return -_log_softmax(logits)[np.arange(len(y)), y]


def _spec_products(net, y):
    # rows j of T C are C_i - C_j, with i the sample's label
    TC = net.C[y][:, None, :] - net.C[None, :, :]
    Tc = net.c[y][:, None] - net.c[None, :]
    return TC, Tc


def _forward(net, X, y, eps, kappa, cert, cfg):
    out = {}
    nom = solve_fixed_point(net, X, cert, cfg)
    Z = np.atleast_2d(nom.z_star)
    out["Z"] = Z
    out["Y"] = Z @ net.C.T + net.c
    ce_nom = cross_entropy(out["Y"], y)
    loss = (1 - kappa) * ce_nom.mean()
    breakdown = {"nominal": float(ce_nom.mean()), "nominal_terms": ce_nom}
    if kappa > 0:
        emb = solve_embedded_fixed_point(net, X - eps, X + eps, cert, cfg)
        zl, zh = np.atleast_2d(emb.z_lo), np.atleast_2d(emb.z_hi)
        TC, Tc = _spec_products(net, y)
        m = (np.einsum("mqn,mn->mq", linalg.positive_part(TC), zl)
             + np.einsum("mqn,mn->mq", linalg.negative_part(TC), zh) + Tc)
        ce_rob = cross_entropy(-m, y)
        loss = loss + kappa * ce_rob.mean()
        breakdown["robust"] = float(ce_rob.mean())
        breakdown["robust_terms"] = ce_rob
        out.update(zl=zl, zh=zh, TC=TC, margins=m)
    breakdown["total"] = float(loss)
    return float(loss), breakdown, out


def robust_loss(net, X, y, eps, kappa, cert=None, cfg=SolverConfig()):
    """Mixed nominal/robust cross-entropy averaged over the batch.

    Returns ``(loss, breakdown)`` where ``breakdown`` holds the mean nominal
    and robust terms (keys ``nominal``, ``robust``, ``total``) and the
    per-sample arrays ``nominal_terms`` and ``robust_terms``.  The robust
    entries are present only when ``kappa > 0``.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if cert is None:
        cert = wellposedness_certificate(net)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=int))
    loss, breakdown, _ = _forward(net, X, y, eps, kappa, cert, cfg)
    return loss, breakdown


def _softmax_grad(logits, y):
    p = np.exp(_log_softmax(logits))
    p[np.arange(len(y)), y] -= 1.0
    return p


def _implicit_gradient(net, X, y, eps, kappa, cert, cfg):
    m = len(y)
    n = net.n
    loss, _, fw = _forward(net, X, y, eps, kappa, cert, cfg)
    W, U, b, C = net.W, net.U, net.b, net.C
    act = net.activation
    eye = np.eye(n)

    # nominal branch
    Z = fw["Z"]
    g_y = (1 - kappa) * _softmax_grad(fw["Y"], y) / m
    dC = g_y.T @ Z
    dc = g_y.sum(axis=0)
    D = act.derivative(Z @ W.T + X @ U.T + b)
    # (I - D W)^T lam = C^T g_y, per sample
    A = eye[None, :, :] - W.T[None, :, :] * D[:, None, :]
    lam = np.linalg.solve(A, (g_y @ C)[:, :, None])[:, :, 0]
    gP = D * lam
    dW = gP.T @ Z
    dU = gP.T @ X
    db = gP.sum(axis=0)

    if kappa > 0:
        zl, zh, TC = fw["zl"], fw["zh"], fw["TC"]
        x_lo, x_hi = X - eps, X + eps
        g_m = -kappa * _softmax_grad(-fw["margins"], y) / m
        pos = TC >= 0
        G_TC = g_m[:, :, None] * np.where(pos, zl[:, None, :], zh[:, None, :])
        dC -= G_TC.sum(axis=0)
        np.add.at(dC, y, G_TC.sum(axis=1))
        dc -= g_m.sum(axis=0)
        np.add.at(dc, y, g_m.sum(axis=1))
        r_lo = np.einsum("mq,mqn->mn", g_m, np.where(pos, TC, 0.0))
        r_hi = np.einsum("mq,mqn->mn", g_m, np.where(pos, 0.0, TC))

        Wm, Wn = linalg.metzler_part(W), linalg.nonmetzler_part(W)
        Up, Un = linalg.positive_part(U), linalg.negative_part(U)
        D_lo = act.derivative(zl @ Wm.T + zh @ Wn.T + x_lo @ Up.T + x_hi @ Un.T + b)
        D_hi = act.derivative(zh @ Wm.T + zl @ Wn.T + x_hi @ Up.T + x_lo @ Un.T + b)
        G = np.block([[Wm, Wn], [Wn, Wm]])
        Dd = np.hstack([D_lo, D_hi])
        A2 = np.eye(2 * n)[None, :, :] - G.T[None, :, :] * Dd[:, None, :]
        lam2 = np.linalg.solve(A2, np.hstack([r_lo, r_hi])[:, :, None])[:, :, 0]
        g_lo = D_lo * lam2[:, :n]
        g_hi = D_hi * lam2[:, n:]
        dWm = g_lo.T @ zl + g_hi.T @ zh
        dWn = g_lo.T @ zh + g_hi.T @ zl
        dUp = g_lo.T @ x_lo + g_hi.T @ x_hi
        dUn = g_lo.T @ x_hi + g_hi.T @ x_lo
        metz = (W >= 0) | np.eye(n, dtype=bool)
        dW = dW + np.where(metz, dWm, dWn)
        dU = dU + np.where(U >= 0, dUp, dUn)
        db = db + g_lo.sum(axis=0) + g_hi.sum(axis=0)

    return loss, {"W": dW, "U": dU, "b": db, "C": dC, "c": dc}


def _finite_difference_gradient(net, X, y, eps, kappa, cert, cfg, step=1e-5):
    loss, _, _ = _forward(net, X, y, eps, kappa, cert, cfg)
    grads = {}
    for name in PARAMS:
        base = np.array(getattr(net, name))
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            vals = []
            for sign in (1.0, -1.0):
                p = base.copy()
                p[idx] += sign * step
                trial = net.replace(**{name: p})
                trial_cert = certificate_from_weight(p, cert.eta) if name == "W" else cert
                vals.append(_forward(trial, X, y, eps, kappa, trial_cert, cfg)[0])
            g[idx] = (vals[0] - vals[1]) / (2 * step)
        grads[name] = g
    return loss, grads


def loss_gradient(net, X, y, eps, kappa, cert=None, cfg=SolverConfig(), mode="implicit-function"):
    """Loss value and gradient dict keyed by ``W, U, b, C, c``."""
    if cert is None:
        cert = wellposedness_certificate(net)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=int))
    if mode == "implicit-function":
        return _implicit_gradient(net, X, y, eps, kappa, cert, cfg)
    if mode == "finite-difference":
        return _finite_difference_gradient(net, X, y, eps, kappa, cert, cfg)
    raise ValueError(f"unknown gradient mode {mode!r}")


# --- measure constraint -----------------------------------------------------------

def project_measure_constraint(W, eta, gamma):
    """Make every weighted row measure of ``W`` (weight ``1 / eta``) at most ``gamma``.

    Violating rows are scaled down by ``gamma / row_measure`` when
    ``gamma >= 0``; for negative ``gamma`` scaling cannot help, so the
    diagonal entry is lowered by the excess instead.  Satisfying rows are
    returned untouched.
    """
    if not gamma < 1:
        raise ValueError("gamma must be < 1")
    W = np.array(W, dtype=np.float64)
    rows = linalg.weighted_row_measures(W, 1.0 / np.asarray(eta, dtype=np.float64))
    for i in np.flatnonzero(rows > gamma):
        if gamma >= 0:
            W[i, :] *= gamma / rows[i]
        else:
            W[i, i] -= rows[i] - gamma
    return W


# --- training loop ------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    eps: float
    kappa: float
    loss: float
    clean_accuracy: float
    certified_accuracy: float
    mu: float


HISTORY_COLUMNS = ("epoch", "eps", "kappa", "loss", "clean_accuracy", "certified_accuracy", "mu")


def _best_eta(W, candidates):
    best = None
    for eta in candidates:
        if eta is None:
            continue
        mu = linalg.weighted_matrix_measure(W, 1.0 / eta)
        if best is None or mu < best[1]:
            best = (eta, mu)
    return best


def _refresh_eta(W, eta):
    try:
        fresh = wellposedness_certificate(W).eta
    except NoCertificate:
        fresh = None
    eta_new, mu = _best_eta(W, [np.asarray(eta), fresh])
    return np.array(eta_new), mu


def _evaluate(net, eta, X, y, eps_test, cfg):
    cert = certificate_from_weight(net.W, eta)
    return (clean_accuracy(net, X, y, cfg, cert),
            certified_accuracy(net, X, y, eps_test, cert, cfg))


def train(net_init, X, y, cfg=TrainConfig(), X_eval=None, y_eval=None, on_epoch=None):
    """Gradient-descent training under the matrix-measure constraint.

    Returns ``(net, history, eta)``.  Accuracy columns of the history are
    measured on ``(X_eval, y_eval)``, defaulting to the training data.
    ``on_epoch(record, net, eta)`` is called after every epoch.
    Raises TrainingDiverged (with the partial history) on a non-finite loss.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=int)
    if len(y) == 0:
        raise ValueError("empty training set")
    if X_eval is None:
        X_eval, y_eval = X, y
    solver = cfg.solver
    rng = np.random.default_rng(cfg.seed)

    try:
        eta = np.array(wellposedness_certificate(net_init).eta)
    except NoCertificate:
        eta = np.ones(net_init.n)
    net = net_init.replace(W=project_measure_constraint(net_init.W, eta, cfg.gamma))
    eta, mu = _refresh_eta(net.W, eta)

    history = []
    batch = cfg.batch_size or len(y)
    for epoch in range(1, cfg.epochs + 1):
        eps, kappa = schedule(epoch, cfg)
        order = rng.permutation(len(y))
        losses = []
        for start in range(0, len(y), batch):
            idx = order[start:start + batch]
            cert = certificate_from_weight(net.W, eta)
            loss, grads = loss_gradient(net, X[idx], y[idx], eps, kappa, cert, solver,
                                        cfg.gradient_mode)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(epoch, history)
            losses.append(loss * len(idx))
            params = {k: getattr(net, k) - cfg.learning_rate * grads[k] for k in PARAMS}
            params["W"] = project_measure_constraint(params["W"], eta, cfg.gamma)
            net = net.replace(**params)
        eta, mu = _refresh_eta(net.W, eta)
        clean, certified = _evaluate(net, eta, X_eval, y_eval, cfg.epsilon_test, solver)
        record = EpochRecord(epoch, eps, kappa, sum(losses) / len(y), clean, certified, mu)
        history.append(record)
        if on_epoch is not None:
            on_epoch(record, net, eta)
        log.debug("epoch %d: %s", epoch, record)
    return net, history, eta


def write_history_csv(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            d = asdict(rec)
            writer.writerow([repr(d[c]) if isinstance(d[c], float) else d[c] for c in HISTORY_COLUMNS])
