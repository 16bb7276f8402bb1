"""Central finite-difference oracle for the LSTM gradients."""
import numpy as np

from cdrsynth.seqmodel.lstm import init_params, loss_and_grads


def numeric_grads(params, X, Y, M, h=1e-6):
    out = []
    for a in params.arrays():
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            lp = loss_and_grads(params, X, Y, M)[0]
            a[idx] = old - h
            lm = loss_and_grads(params, X, Y, M)[0]
            a[idx] = old
            g[idx] = (lp - lm) / (2 * h)
        out.append(g)
    return out


DENOM_FLOOR = 1e-6  # arrays whose true gradient is ~0 (e.g. sign-cancelling MAE bias)


def max_relative_error(loss, seed=0, n_in=6, hidden=(5, 5), T=3, B=2, mask=None):
    """Worst per-array ``max|num - ana| / max(max|num| + max|ana|, floor)``.

    The floor keeps an exactly-zero gradient, where the difference quotient
    only carries ~1e-10 rounding noise, from reading as a relative error of 1.
    """
    rng = np.random.default_rng(seed)
    K = 4 if loss == "nll" else 1
    p = init_params(n_in, hidden, K, loss, rng, dropout=0.0)
    for a in p.arrays():
        a += rng.normal(0, 0.3, a.shape)
    X = rng.normal(size=(T, B, n_in))
    M = np.ones((T, B), bool) if mask is None else mask
    Y = rng.integers(0, K, (T, B)) if loss == "nll" else rng.normal(size=(T, B))
    _, ana, _ = loss_and_grads(p, X, Y, M)
    num = numeric_grads(p, X, Y, M)
    worst = 0.0
    for n, a in zip(num, ana):
        denom = max(np.abs(n).max() + np.abs(a).max(), DENOM_FLOOR)
        worst = max(worst, float(np.abs(n - a).max() / denom))
    return worst
