"""Independent reference computations used by several test modules."""

from fractions import Fraction

import numpy as np

from fieldlearn.network import MlpSpec, init


def fd_jacobian(f, x, h=1e-5):
    """Central-difference Jacobian of ``f: R^D -> R^K`` at ``x``; shape ``(K, D)``."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for d in range(x.size):
        e = np.zeros_like(x)
        e[d] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def fd_hessian(f, x, h=1e-4):
    """Central-difference Hessians of every output of ``f``; shape ``(K, D, D)``."""
    x = np.asarray(x, dtype=np.float64)
    D = x.size
    f0 = np.atleast_1d(np.asarray(f(x), dtype=np.float64))
    H = np.zeros((f0.size, D, D))
    for i in range(D):
        for j in range(D):
            ei = np.zeros(D)
            ej = np.zeros(D)
            ei[i] = h
            ej[j] = h
            H[:, i, j] = (np.atleast_1d(f(x + ei + ej)) - np.atleast_1d(f(x + ei - ej))
                          - np.atleast_1d(f(x - ei + ej)) + np.atleast_1d(f(x - ei - ej))) / (4 * h * h)
    return H


def fd_param_gradient(loss, theta, h=1e-5):
    theta = np.asarray(theta, dtype=np.float64)
    g = np.zeros(theta.size)
    for i in range(theta.size):
        e = np.zeros(theta.size)
        e[i] = h
        e = e.reshape(theta.shape)
        g[i] = (loss(theta + e) - loss(theta - e)) / (2 * h)
    return g.reshape(theta.shape)


def rel_err(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor))


def random_net(rng, in_dim, out_dim, hidden=None, act="tanh"):
    hidden = hidden or tuple(int(w) for w in rng.integers(2, 6, size=rng.integers(1, 3)))
    spec = MlpSpec((in_dim, *hidden, out_dim), act)
    theta = init(spec, int(rng.integers(1 << 30)))
    theta += 0.3 * rng.standard_normal(theta.size)
    return spec, theta


def rref(rows):
    """Reduced row echelon form over Fractions (textbook Gauss-Jordan)."""
    M = [[Fraction(v) for v in r] for r in rows]
    if not M:
        return M, []
    n = len(M[0])
    pivots = []
    r = 0
    for c in range(n):
        p = next((i for i in range(r, len(M)) if M[i][c] != 0), None)
        if p is None:
            continue
        M[r], M[p] = M[p], M[r]
        pv = M[r][c]
        M[r] = [v / pv for v in M[r]]
        for i in range(len(M)):
            if i != r and M[i][c] != 0:
                f = M[i][c]
                M[i] = [a - f * b for a, b in zip(M[i], M[r])]
        pivots.append(c)
        r += 1
    return M[:r], pivots
