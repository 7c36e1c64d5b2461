"""Robustness certificates for classification via margin lower bounds."""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .fixed_point import SolverConfig, solve_embedded_fixed_point, wellposedness_certificate
from .networks import ImplicitNetwork
from .oracle import SamplingPlan, sampled_tight_inclusion
from .reachability import IntervalVector, point_output, reach_inn


@dataclass
class CertificationReport:
    input: np.ndarray
    epsilon: float
    true_label: int
    margin_lower: np.ndarray
    certified: bool
    output_box: IntervalVector

    @property
    def min_margin(self):
        """Smallest off-label margin bound (``inf`` for single-class models)."""
        others = np.delete(self.margin_lower, self.true_label)
        return float(others.min()) if others.size else float("inf")


def build_specification(q, i):
    """Matrix ``T`` with ``(T v)_j = v_i - v_j``."""
    if not 0 <= i < q:
        raise IndexError(f"class index {i} out of range for {q} classes")
    T = -np.eye(q)
    T[:, i] += 1.0
    T[i, :] = 0.0
    return T


def _margin_bounds(net, X, labels, eps, cert, cfg):
    """Margin lower bounds for rows of ``X``; returns (margins, z_lo, z_hi)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    res = solve_embedded_fixed_point(net, X - eps, X + eps, cert, cfg)
    zl, zh = np.atleast_2d(res.z_lo), np.atleast_2d(res.z_hi)
    # (T C)_j = C_i - C_j for every row j; row i vanishes
    TC = net.C[labels][:, None, :] - net.C[None, :, :]
    Tc = net.c[labels][:, None] - net.c[None, :]
    margins = (np.einsum("mqn,mn->mq", linalg.positive_part(TC), zl)
               + np.einsum("mqn,mn->mq", linalg.negative_part(TC), zh) + Tc)
    margins[np.arange(len(labels)), labels] = 0.0
    return margins, zl, zh


def margin_lower_bound(net, x, i, eps, cert=None, cfg=SolverConfig()):
    """Lower bound on ``f(x')_i - f(x')_j`` over the l-infinity ball of radius ``eps``."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if cert is None:
        cert = wellposedness_certificate(net)
    build_specification(net.q, i)
    m, _, _ = _margin_bounds(net, x, [i], eps, cert, cfg)
    return m[0]


def certify(net, x, i, eps, cert=None, cfg=SolverConfig()):
    if cert is None:
        cert = wellposedness_certificate(net)
    x = np.asarray(x, dtype=np.float64)
    m = margin_lower_bound(net, x, i, eps, cert, cfg)
    box = reach_inn(net, IntervalVector.ball(x, eps), cert, cfg).output
    others = np.delete(m, i)
    return CertificationReport(
        input=x, epsilon=float(eps), true_label=int(i), margin_lower=m,
        certified=bool(others.size == 0 or others.min() > 0), output_box=box,
    )


def certify_batch(net, X, y, eps, cert=None, cfg=SolverConfig()):
    """Vectorized certification; returns (predicted, min_margin, certified) arrays.

    A sample counts as certified only when it is also strictly correctly
    classified at the nominal input (an argmax tie is a miss).
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if cert is None:
        cert = wellposedness_certificate(net)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=int)
    out = point_output(net, X, cfg, cert)
    pred = np.argmax(out, axis=1)
    top = out[np.arange(len(y)), y]
    rest = np.where(np.arange(net.q)[None, :] == y[:, None], -np.inf, out)
    correct = top > rest.max(axis=1)
    m, _, _ = _margin_bounds(net, X, y, eps, cert, cfg)
    m = np.where(np.arange(net.q)[None, :] == y[:, None], np.inf, m)
    min_margin = m.min(axis=1)
    return pred, min_margin, correct & (min_margin > 0)


def certified_accuracy(net, X, y, eps, cert=None, cfg=SolverConfig()):
    """Fraction of samples both strictly correct and certified at radius ``eps``."""
    if len(y) == 0:
        raise ValueError("empty dataset")
    _, _, ok = certify_batch(net, X, y, eps, cert, cfg)
    return float(np.mean(ok))


def clean_accuracy(net, X, y, cfg=SolverConfig(), cert=None):
    """Strict-argmax accuracy at the nominal inputs."""
    out = point_output(net, np.atleast_2d(X), cfg, cert)
    y = np.asarray(y, dtype=int)
    top = out[np.arange(len(y)), y]
    rest = np.where(np.arange(out.shape[1])[None, :] == y[:, None], -np.inf, out)
    return float(np.mean(top > rest.max(axis=1)))


def empirical_robust_accuracy(net, X, y, eps, n_perturbations=100, seed=0, cfg=SolverConfig()):
    """Accuracy under uniform random perturbations in the l-infinity ball.

    A sample counts only if the nominal input and every sampled perturbation
    are strictly correctly classified.
    """
    rng = np.random.default_rng(seed)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=int)
    cert = wellposedness_certificate(net) if isinstance(net, ImplicitNetwork) else None
    ok = np.ones(len(y), dtype=bool)
    offsets = [np.zeros_like(X)] + [rng.uniform(-eps, eps, size=X.shape) for _ in range(n_perturbations)]
    for d in offsets:
        out = point_output(net, X + d, cfg, cert)
        top = out[np.arange(len(y)), y]
        rest = np.where(np.arange(out.shape[1])[None, :] == y[:, None], -np.inf, out)
        ok &= top > rest.max(axis=1)
    return float(np.mean(ok))


def lipschitz_upper_bound(net, cert=None):
    """Global l-infinity Lipschitz bound of the input-output map.

    With ``w = cert.norm_weight`` the hidden fixed point moves by at most
    ``max_i (sum_j |U_ij|) / w_i / (1 - mu)`` per unit input change in the
    ``w``-weighted norm, and ``C`` maps that norm back with gain
    ``max_k sum_i |C_ki| w_i``.
    """
    if cert is None:
        cert = wellposedness_certificate(net)
    w = cert.norm_weight
    c_gain = float((np.abs(net.C) * w[None, :]).sum(axis=1).max(initial=0.0))
    u_gain = float((np.abs(net.U).sum(axis=1) / w).max(initial=0.0))
    return c_gain * u_gain / (1.0 - cert.mu)


@dataclass
class LipschitzComparison:
    width_mm: float
    width_lipschitz: float
    width_sampled: float
    lipschitz_bound: float
    passed: bool
    bound_kind: str = "global"


def inclusion_vs_lipschitz(net, box, cert=None, cfg=SolverConfig(), plan=SamplingPlan(), tol=1e-9):
    """Compare mixed-monotone, Lipschitz-ball and sampled tight output widths.

    Only ``width_sampled <= width_lipschitz + tol`` is asserted; the
    mixed-monotone width may land on either side of the Lipschitz width.
    """
    if cert is None:
        cert = wellposedness_certificate(net)
    L = lipschitz_upper_bound(net, cert)
    mm = reach_inn(net, box, cert, cfg).output
    sampled = sampled_tight_inclusion(lambda X: point_output(net, X, cfg, cert), box, plan)
    w_mm = float(np.max(mm.width, initial=0.0))
    w_s = float(np.max(sampled.width, initial=0.0))
    w_l = L * float(np.max(box.width, initial=0.0))
    return LipschitzComparison(w_mm, w_l, w_s, L, w_s <= w_l + tol)
