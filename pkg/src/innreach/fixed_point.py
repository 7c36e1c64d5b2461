"""Well-posedness certificates and averaged (damped Picard) fixed-point solvers.

A certificate is a weight vector ``eta > 0`` with
``mu = weighted_matrix_measure(W, 1 / eta) < 1``.  Under it the averaged map
``z -> (1 - alpha) z + alpha act(W z + U x + b)`` is a contraction for every
``alpha`` in ``(0, alpha_star]`` in the norm ``weighted_inf_norm(., 1 / eta)``,
with factor at most ``1 - alpha (1 - max(mu, 0))``.  The same holds for the
doubled lower/upper (embedded) map used for interval bounds.
"""

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .exceptions import DimensionError, InputBoxInvalid, MaxIterExceeded, NoCertificate

_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 10000
    alpha: object = "auto"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.alpha != "auto":
            a = float(self.alpha)
            if not 0 < a <= 1:
                raise ValueError("alpha must lie in (0, 1] or be 'auto'")


@dataclass(frozen=True)
class WellposednessCertificate:
    eta: np.ndarray
    mu: float
    alpha_star: float

    @property
    def norm_weight(self):
        """Weight ``w`` such that residuals are measured as ``max |r_i| / w_i``."""
        return 1.0 / self.eta

    def contraction_bound(self, alpha):
        return 1.0 - alpha * (1.0 - max(self.mu, 0.0))

    def resolve_alpha(self, cfg):
        if cfg.alpha == "auto":
            return self.alpha_star
        alpha = float(cfg.alpha)
        if alpha > self.alpha_star * (1 + 1e-12):
            raise ValueError(f"alpha={alpha} exceeds alpha_star={self.alpha_star}")
        return alpha


@dataclass
class FixedPointResult:
    z_star: np.ndarray
    iterations: int
    final_residual: float
    contraction_estimate: float
    alpha: float
    residuals: list = field(default_factory=list, repr=False)


@dataclass
class EmbeddedFixedPointResult:
    z_lo: np.ndarray
    z_hi: np.ndarray
    iterations: int
    final_residual: float
    contraction_estimate: float
    alpha: float
    residuals: list = field(default_factory=list, repr=False)


def alpha_star(W):
    """Largest admissible averaging step ``1 / (1 - min_i min(W_ii, 0))``."""
    d = np.diag(np.asarray(W, dtype=np.float64))
    m = float(min(d.min(), 0.0)) if d.size else 0.0
    return 1.0 / (1.0 - m)


def certificate_from_weight(W, eta):
    """Certificate for a given ``eta``; raises NoCertificate if the measure is >= 1."""
    eta = np.asarray(eta, dtype=np.float64)
    if not np.all(eta > 0) or not np.all(np.isfinite(eta)):
        raise ValueError("eta must be strictly positive and finite")
    eta = eta / eta.max()
    mu = linalg.weighted_matrix_measure(W, 1.0 / eta)
    if not mu < 1:
        raise NoCertificate(mu)
    eta.setflags(write=False)
    return WellposednessCertificate(eta=eta, mu=mu, alpha_star=alpha_star(W))


def _resolvent_weight(M, target):
    """Positive ``v`` with every row measure of ``M`` below ``target``.

    ``v = (target I - M)^{-1} 1`` gives ``(M v)_i = target v_i - 1``, so each
    weighted row sum is ``target - 1 / v_i``.
    """
    n = M.shape[0]
    v = np.linalg.solve(target * np.eye(n) - M, np.ones(n))
    return v


def wellposedness_certificate(net, tol=1e-12, max_iter=100000):
    """Find ``eta`` with ``weighted_matrix_measure(W, 1 / eta) < 1``.

    The minimum of that measure over all weights is the Perron root of the
    Metzler majorant of ``W`` (diagonal ``W_ii``, off-diagonal ``|W_ij|``),
    attained at the reciprocal of its right Perron vector.  When the Perron
    vector is numerically degenerate (reducible or nilpotent majorants) the
    weight comes instead from the resolvent at the midpoint between the
    Perron root and 1, which is strictly positive and keeps the measure
    below that midpoint.
    """
    W = net.W if hasattr(net, "W") else np.asarray(net, dtype=np.float64)
    n = W.shape[0]
    if n == 0:
        return WellposednessCertificate(np.ones(0), 0.0, 1.0)
    M = linalg.metzler_majorant(W)
    shift = max(0.0, -float(np.diag(M).min()))
    v, lam_shifted = linalg.perron_vector_abs(M + shift * np.eye(n), tol=tol, max_iter=max_iter)
    lam = lam_shifted - shift
    if not lam < 1 - 1e-12:
        raise NoCertificate(lam)

    candidates = []
    if v.min() > 1e-8:
        candidates.append(1.0 / v)
    try:
        w = _resolvent_weight(M, lam + 0.5 * (1.0 - lam))
        if np.all(np.isfinite(w)) and w.min() > 0:
            candidates.append(1.0 / w)
    except np.linalg.LinAlgError:
        pass
    best = None
    for eta in candidates:
        eta = eta / eta.max()
        mu = linalg.weighted_matrix_measure(W, 1.0 / eta)
        if mu < 1 and (best is None or mu < best[1] - 1e-12):
            best = (eta, mu)
    if best is None:
        raise NoCertificate(lam)
    eta, mu = best
    eta.setflags(write=False)
    return WellposednessCertificate(eta=eta, mu=mu, alpha_star=alpha_star(W))


def _noise_floor(*arrays):
    scale = 1.0 + max(float(np.max(np.abs(a))) if a.size else 0.0 for a in arrays)
    return 1e8 * _EPS * scale


def _iterate(step, residual_of, state, alpha, cfg):
    """Shared averaged-iteration loop.

    ``step(state)`` returns the raw map value, ``residual_of(state, raw)``
    the weighted residual.  Residual ratios are only recorded while the
    previous residual sits above a rounding floor, so they reflect the
    contraction rather than floating-point noise.
    """
    residuals = []
    ratio = 0.0
    prev = None
    for it in range(cfg.max_iter + 1):
        raw = step(state)
        res = residual_of(state, raw)
        residuals.append(res)
        if prev is not None and prev > _noise_floor(*state):
            ratio = max(ratio, res / prev)
        if res <= cfg.tol:
            return state, it, res, ratio, residuals
        if it == cfg.max_iter:
            break
        state = tuple((1.0 - alpha) * s + alpha * r for s, r in zip(state, raw))
        prev = res
    raise MaxIterExceeded(
        f"fixed-point iteration did not reach tol={cfg.tol:g} in {cfg.max_iter} "
        f"iterations (last residual {residuals[-1]:.3g})"
    )


def solve_fixed_point(net, x, cert, cfg=SolverConfig()):
    """Solve ``z = act(W z + U x + b)`` from ``z = 0``.

    ``x`` may be one input or a batch of rows; the residual is the largest
    weighted residual across the batch.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != net.r:
        raise DimensionError(f"input has dimension {X.shape[1]}, network expects {net.r}")
    alpha = cert.resolve_alpha(cfg)
    inj = X @ net.U.T + net.b
    WT = net.W.T
    act = net.activation
    wt = cert.norm_weight

    def step(state):
        return (act(state[0] @ WT + inj),)

    def residual_of(state, raw):
        return linalg.weighted_inf_norm(state[0] - raw[0], wt)

    (z,), it, res, ratio, hist = _iterate(step, residual_of, (np.zeros_like(inj),), alpha, cfg)
    return FixedPointResult(z[0] if single else z, it, res, ratio, alpha, hist)


def solve_embedded_fixed_point(net, x_lo, x_hi, cert, cfg=SolverConfig()):
    """Lower/upper hidden bounds from the doubled (embedded) fixed point.

    Uses the Metzler split of ``W`` and the sign split of ``U``; both halves
    start at zero and are averaged with the same step.
    """
    x_lo = np.asarray(x_lo, dtype=np.float64)
    x_hi = np.asarray(x_hi, dtype=np.float64)
    if x_lo.shape != x_hi.shape:
        raise InputBoxInvalid("x_lo and x_hi differ in shape")
    if np.any(x_lo > x_hi):
        raise InputBoxInvalid("x_lo must be <= x_hi componentwise")
    single = x_lo.ndim == 1
    Xl, Xh = np.atleast_2d(x_lo), np.atleast_2d(x_hi)
    if Xl.shape[1] != net.r:
        raise DimensionError(f"input has dimension {Xl.shape[1]}, network expects {net.r}")
    alpha = cert.resolve_alpha(cfg)
    Wm = linalg.metzler_part(net.W).T
    Wn = linalg.nonmetzler_part(net.W).T
    Up, Un = linalg.positive_part(net.U).T, linalg.negative_part(net.U).T
    inj_lo = Xl @ Up + Xh @ Un + net.b
    inj_hi = Xh @ Up + Xl @ Un + net.b
    act = net.activation
    wt = cert.norm_weight

    def step(state):
        zl, zh = state
        return (act(zl @ Wm + zh @ Wn + inj_lo), act(zh @ Wm + zl @ Wn + inj_hi))

    def residual_of(state, raw):
        return max(linalg.weighted_inf_norm(state[0] - raw[0], wt),
                   linalg.weighted_inf_norm(state[1] - raw[1], wt))

    z0 = np.zeros_like(inj_lo)
    (zl, zh), it, res, ratio, hist = _iterate(step, residual_of, (z0, z0.copy()), alpha, cfg)
    if single:
        zl, zh = zl[0], zh[0]
    return EmbeddedFixedPointResult(zl, zh, it, res, ratio, alpha, hist)
