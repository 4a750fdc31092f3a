"""Independent reference computations and the acceptance result registry."""

import numpy as np

from protorect.trainer import ClassifierParams, gradient, loss

RESULTS = {}


def record(number, ok, detail):
    RESULTS[number] = (bool(ok), detail)
    return bool(ok)


def summary_lines():
    return [f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}" for n, (ok, detail) in sorted(RESULTS.items())]


def _with(params, **over):
    fields = dict(A=params.A, W=params.W, tau=params.tau, hyper=params.hyper)
    fields.update(over)
    return ClassifierParams(**fields)


def fd_check(params, X, y, rng, h=1e-4, coords=5):
    """Largest relative error between analytic and central-difference gradients.

    Checks ``coords`` random entries of A and of W, plus tau.
    """
    g = gradient(params, X, y)
    worst = 0.0

    def rel(num, ana):
        return abs(num - ana) / max(abs(num), abs(ana), 1e-8)

    for name in ("A", "W"):
        arr = getattr(params, name)
        for flat in rng.choice(arr.size, coords, replace=False):
            idx = np.unravel_index(flat, arr.shape)
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += h
            minus[idx] -= h
            num = (loss(_with(params, **{name: plus}), X, y) - loss(_with(params, **{name: minus}), X, y)) / (2 * h)
            worst = max(worst, rel(num, getattr(g, name)[idx]))
    num = (loss(_with(params, tau=params.tau + h), X, y) - loss(_with(params, tau=params.tau - h), X, y)) / (2 * h)
    return max(worst, rel(num, g.tau))


def mean_true_cosine(query, truth, protos, shift):
    """Mean cosine between each shifted query and its true class prototype."""
    q = query + shift
    p = protos[truth]
    return float(np.mean(np.sum(q * p, axis=1) / np.linalg.norm(q, axis=1) / np.linalg.norm(p, axis=1)))
