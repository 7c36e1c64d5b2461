"""Interval inclusion functions for implicit, feedforward and weight-tied networks."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import linalg
from .exceptions import DimensionError, InputBoxInvalid, MaxIterExceeded, SpectralRadiusTooLarge
from .fixed_point import (
    SolverConfig,
    solve_embedded_fixed_point,
    solve_fixed_point,
    wellposedness_certificate,
)
from .networks import (
    FeedforwardNetwork,
    WeightTiedNetwork,
    ffnn_forward,
    ffnn_to_inn,
    weight_tied_forward,
)


@dataclass(frozen=True)
class IntervalVector:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != hi.shape:
            raise InputBoxInvalid(f"lo has shape {lo.shape}, hi has shape {hi.shape}")
        if np.any(lo > hi):
            raise InputBoxInvalid("interval lower bound exceeds upper bound")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def ball(cls, center, eps):
        """Axis-aligned l-infinity ball ``[center - eps, center + eps]``."""
        if eps < 0:
            raise ValueError("eps must be nonnegative")
        center = np.asarray(center, dtype=np.float64)
        return cls(center - eps, center + eps)

    @property
    def dim(self):
        return self.lo.shape[-1]

    @property
    def width(self):
        return self.hi - self.lo

    def contains(self, points, atol=0.0):
        points = np.asarray(points, dtype=np.float64)
        return bool(np.all(points >= self.lo - atol) and np.all(points <= self.hi + atol))

    def contains_box(self, other, atol=0.0):
        return bool(np.all(other.lo >= self.lo - atol) and np.all(other.hi <= self.hi + atol))


class Method(str, Enum):
    MIXED_MONOTONE = "mm"
    IBP_FFNN = "ibp"
    IBP_WEIGHT_TIED = "ibp-wt"


@dataclass
class InclusionResult:
    output: IntervalVector
    method: Method
    hidden: IntervalVector = None
    diagnostics: dict = field(default_factory=dict)


def _split_output(C, c, z_lo, z_hi):
    Cp, Cn = linalg.positive_part(C), linalg.negative_part(C)
    lo = z_lo @ Cp.T + z_hi @ Cn.T + c
    hi = z_hi @ Cp.T + z_lo @ Cn.T + c
    return lo, hi


def _check_box(box, r):
    if box.dim != r:
        raise DimensionError(f"box has dimension {box.dim}, network expects {r}")


def embedding_map(net, z_lo, z_hi, x_lo, x_hi):
    """Lower half of the embedded map; swap ``(z_hi, z_lo, x_hi, x_lo)`` for the upper half."""
    z_lo, z_hi = np.asarray(z_lo, float), np.asarray(z_hi, float)
    x_lo, x_hi = np.asarray(x_lo, float), np.asarray(x_hi, float)
    if z_lo.shape[-1] != net.n or z_hi.shape[-1] != net.n:
        raise DimensionError(f"hidden bounds must have dimension {net.n}")
    if x_lo.shape[-1] != net.r or x_hi.shape[-1] != net.r:
        raise DimensionError(f"input bounds must have dimension {net.r}")
    pre = (z_lo @ linalg.metzler_part(net.W).T + z_hi @ linalg.nonmetzler_part(net.W).T
           + x_lo @ linalg.positive_part(net.U).T + x_hi @ linalg.negative_part(net.U).T
           + net.b)
    return net.activation(pre)


def reach_inn(net, box, cert=None, cfg=SolverConfig()):
    """Mixed-monotone interval bounds on the output of an implicit network.

    ``box`` may hold a single interval or a batch (rows of ``lo``/``hi``).
    A certificate is computed when none is supplied; NoCertificate
    propagates if the network cannot be certified.
    """
    if isinstance(net, WeightTiedNetwork):
        net = net.as_implicit()
    _check_box(box, net.r)
    if cert is None:
        cert = wellposedness_certificate(net)
    res = solve_embedded_fixed_point(net, box.lo, box.hi, cert, cfg)
    lo, hi = _split_output(net.C, net.c, res.z_lo, res.z_hi)
    return InclusionResult(
        output=IntervalVector(lo, np.maximum(hi, lo)),
        hidden=IntervalVector(res.z_lo, np.maximum(res.z_hi, res.z_lo)),
        method=Method.MIXED_MONOTONE,
        diagnostics={
            "iterations": res.iterations,
            "final_residual": res.final_residual,
            "contraction_estimate": res.contraction_estimate,
            "contraction_bound": cert.contraction_bound(res.alpha),
            "alpha": res.alpha,
            "mu": cert.mu,
        },
    )


def ibp_layer(W, b, act, z_lo, z_hi):
    """Interval image of one layer ``act(W z + b)`` (tight for monotone ``act``)."""
    Wp, Wn = linalg.positive_part(W), linalg.negative_part(W)
    lo = act(z_lo @ Wp.T + z_hi @ Wn.T + b)
    hi = act(z_hi @ Wp.T + z_lo @ Wn.T + b)
    return lo, hi


def reach_ibp_ffnn(net, box):
    """Layer-by-layer interval bound propagation through a feedforward network."""
    _check_box(box, net.r)
    z_lo, z_hi = box.lo, box.hi
    for W, b in net.layers:
        z_lo, z_hi = ibp_layer(W, b, net.activation, z_lo, z_hi)
    lo, hi = _split_output(net.C, net.c, z_lo, z_hi)
    return InclusionResult(
        output=IntervalVector(lo, hi),
        hidden=IntervalVector(z_lo, z_hi),
        method=Method.IBP_FFNN,
        diagnostics={"layers": len(net.layers)},
    )


def reach_ibp_weight_tied(net, box, k=None, tol=1e-10, max_iter=100000):
    """Interval bound propagation through a weight-tied network.

    With ``k`` given (or a finite ``net.depth``) exactly ``k`` interval layers
    are applied.  Otherwise the interval iteration runs to its limit, which
    requires ``rho(|W|) < 1``; convergence is measured in the norm weighted by
    the Perron vector of ``|W|``, where the doubled interval map is a
    contraction with factor ``rho(|W|)``.
    """
    _check_box(box, net.r)
    if k is None and isinstance(net, WeightTiedNetwork):
        k = net.depth
    Wp, Wn = linalg.positive_part(net.W).T, linalg.negative_part(net.W).T
    Up, Un = linalg.positive_part(net.U).T, linalg.negative_part(net.U).T
    inj_lo = box.lo @ Up + box.hi @ Un + net.b
    inj_hi = box.hi @ Up + box.lo @ Un + net.b
    act = net.activation
    z_lo = np.zeros_like(inj_lo)
    z_hi = np.zeros_like(inj_hi)

    def step(zl, zh):
        return act(zl @ Wp + zh @ Wn + inj_lo), act(zh @ Wp + zl @ Wn + inj_hi)

    diagnostics = {}
    if k is not None:
        for _ in range(int(k)):
            z_lo, z_hi = step(z_lo, z_hi)
        diagnostics["iterations"] = int(k)
    else:
        v, rho = linalg.perron_vector_abs(net.W)
        if not rho < 1:
            raise SpectralRadiusTooLarge(rho)
        weight = v if v.min() > 1e-8 else np.ones_like(v)
        gaps = []
        ratio = 0.0
        for it in range(1, max_iter + 1):
            nl, nh = step(z_lo, z_hi)
            gap = max(linalg.weighted_inf_norm(nl - z_lo, weight),
                      linalg.weighted_inf_norm(nh - z_hi, weight))
            floor = 1e8 * np.finfo(float).eps * (1.0 + max(np.abs(nl).max(initial=0), np.abs(nh).max(initial=0)))
            if gaps and gaps[-1] > floor:
                ratio = max(ratio, gap / gaps[-1])
            gaps.append(gap)
            z_lo, z_hi = nl, nh
            if gap <= tol:
                break
        else:
            raise MaxIterExceeded(f"weight-tied interval iteration did not converge in {max_iter} steps")
        diagnostics.update(iterations=it, rho=rho, decay_ratio=ratio,
                           final_gap=gaps[-1], gaps=gaps)
    lo, hi = _split_output(net.C, net.c, z_lo, z_hi)
    return InclusionResult(
        output=IntervalVector(lo, hi),
        hidden=IntervalVector(z_lo, z_hi),
        method=Method.IBP_WEIGHT_TIED,
        diagnostics=diagnostics,
    )


def reach(net, box, method="mm", cfg=SolverConfig(), cert=None):
    """Dispatch to an inclusion method; feedforward nets are converted for ``mm``."""
    method = Method(method)
    if method is Method.MIXED_MONOTONE:
        if isinstance(net, FeedforwardNetwork):
            net = ffnn_to_inn(net)
        return reach_inn(net, box, cert=cert, cfg=cfg)
    if method is Method.IBP_FFNN:
        if not isinstance(net, FeedforwardNetwork):
            raise TypeError("method 'ibp' requires a feedforward network")
        return reach_ibp_ffnn(net, box)
    if isinstance(net, FeedforwardNetwork):
        raise TypeError("method 'ibp-wt' requires a weight-tied or implicit network")
    return reach_ibp_weight_tied(net, box, tol=cfg.tol)


@dataclass
class ComparisonReport:
    passed: bool
    discrepancy: float
    slack: float
    gap: float = 0.0
    first: InclusionResult = None
    second: InclusionResult = None


def compare_ffnn_equal(net, box, cfg=SolverConfig()):
    """Mixed-monotone bounds of the stacked network versus layerwise IBP.

    The two agree exactly in theory, so any discrepancy beyond
    ``100 * cfg.tol`` flags an implementation error.
    """
    mm = reach_inn(ffnn_to_inn(net), box, cfg=cfg)
    ibp = reach_ibp_ffnn(net, box)
    disc = float(max(np.max(np.abs(mm.output.lo - ibp.output.lo), initial=0.0),
                     np.max(np.abs(mm.output.hi - ibp.output.hi), initial=0.0)))
    slack = 100 * cfg.tol
    return ComparisonReport(disc <= slack, disc, slack, 0.0, mm, ibp)


def compare_weight_tied_dominance(net, box, cfg=SolverConfig()):
    """Check the mixed-monotone box lies inside the infinite-depth IBP box.

    ``gap`` is the summed width difference (IBP minus mixed-monotone) and
    ``discrepancy`` the worst containment violation (zero when contained).
    """
    if isinstance(net, WeightTiedNetwork):
        inn = net.as_implicit()
    else:
        inn = net
    rho = linalg.spectral_radius_abs(inn.W)
    if not rho < 1:
        raise SpectralRadiusTooLarge(rho)
    mm = reach_inn(inn, box, cfg=cfg)
    ibp = reach_ibp_weight_tied(inn, box, k=None, tol=cfg.tol)
    violation = float(max(np.max(ibp.output.lo - mm.output.lo, initial=0.0),
                          np.max(mm.output.hi - ibp.output.hi, initial=0.0), 0.0))
    gap = float(np.sum(ibp.output.width - mm.output.width))
    slack = 100 * cfg.tol
    return ComparisonReport(violation <= slack, violation, slack, gap, mm, ibp)


def point_output(net, x, cfg=SolverConfig(), cert=None):
    """Network output at a point (or rows of points) for any network kind."""
    if isinstance(net, FeedforwardNetwork):
        return ffnn_forward(net, x)
    if isinstance(net, WeightTiedNetwork) and net.depth is not None:
        return weight_tied_forward(net, x)
    if isinstance(net, WeightTiedNetwork):
        net = net.as_implicit()
    if cert is None:
        cert = wellposedness_certificate(net)
    z = solve_fixed_point(net, x, cert, cfg).z_star
    return z @ net.C.T + net.c
