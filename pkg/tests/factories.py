"""Random network generators shared by the test modules."""

import numpy as np

from innreach.exceptions import NoCertificate
from innreach.fixed_point import wellposedness_certificate
from innreach.networks import Activation, FeedforwardNetwork, ImplicitNetwork, WeightTiedNetwork

ACTS = (Activation.RELU, Activation.TANH)


def random_inn(rng, n=None, r=None, q=None, act=None, scale=None, neg_diag=None):
    """Random certified implicit network and its certificate."""
    while True:
        nn = n or int(rng.integers(1, 21))
        rr = r or int(rng.integers(1, 9))
        qq = q or int(rng.integers(1, 9))
        s = scale if scale is not None else rng.uniform(0.05, 0.9)
        W = rng.standard_normal((nn, nn)) * s / np.sqrt(nn)
        if neg_diag or (neg_diag is None and rng.random() < 0.3):
            W -= np.diag(rng.uniform(0, 3, nn))
        a = act or ACTS[int(rng.integers(2))]
        net = ImplicitNetwork(W, rng.standard_normal((nn, rr)), rng.standard_normal(nn),
                              rng.standard_normal((qq, nn)), rng.standard_normal(qq), a)
        try:
            return net, wellposedness_certificate(net)
        except NoCertificate:
            continue


def random_ffnn(rng, max_layers=4, max_width=10, act=None):
    r = int(rng.integers(1, max_width + 1))
    widths = [r] + list(rng.integers(1, max_width + 1, size=int(rng.integers(1, max_layers + 1))))
    layers = tuple(
        (rng.standard_normal((widths[i + 1], widths[i])) / np.sqrt(widths[i]),
         0.3 * rng.standard_normal(widths[i + 1]))
        for i in range(len(widths) - 1)
    )
    q = int(rng.integers(1, max_width + 1))
    a = act or ACTS[int(rng.integers(2))]
    return FeedforwardNetwork(layers, rng.standard_normal((q, widths[-1])), rng.standard_normal(q), a)


def random_weight_tied(rng, rho=None, n=None, neg_diag=False, act=None):
    """Weight-tied net of unbounded depth with prescribed rho(|W|)."""
    nn = n or int(rng.integers(2, 9))
    r = int(rng.integers(1, 5))
    W = rng.standard_normal((nn, nn))
    if neg_diag:
        W[np.diag_indices(nn)] = -np.abs(np.diag(W)) - 0.5
    target = rho if rho is not None else rng.uniform(0.2, 0.9)
    W *= target / np.max(np.abs(np.linalg.eigvals(np.abs(W))))
    a = act or ACTS[int(rng.integers(2))]
    return WeightTiedNetwork(W, rng.standard_normal((nn, r)), 0.3 * rng.standard_normal(nn),
                             rng.standard_normal((2, nn)), np.zeros(2), None, a)
