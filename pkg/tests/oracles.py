"""Independent numerical oracles used by the test suite.

Everything here is deliberately written against dense matrices and brute
force, not the package's closed-form eigen route, so agreement is meaningful.
"""

import numpy as np


def taylor_expm(M, terms=45):
    """Scaling-and-squaring truncated Taylor series on a dense matrix."""
    M = np.asarray(M, dtype=np.float64)
    norm = float(np.abs(M).sum(axis=1).max())
    squarings = 0 if norm == 0.0 else max(0, int(np.ceil(np.log2(norm))) + 1)
    A = M / (2.0**squarings)
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms + 1):
        term = term @ A / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def kl_brute(p, q, floor=1e-12):
    """Plain elementwise KL with clamped logs."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return float(np.sum(p * (np.log(np.maximum(p, floor)) - np.log(np.maximum(q, floor)))))


def joint_kernel_row(rows):
    """Kronecker product of per-dimension kernel rows: the joint conditional."""
    out = np.ones(1)
    for row in rows:
        out = np.kron(out, row)
    return out


def reverse_marginal_dense(terminal, dense_Q, schedule, eps_t, steps, ratio_of_t):
    """Reverse-process marginal at eps_t by dense per-step matrix products.

    ``ratio_of_t(t)`` must return the (n, n) matrix of ratios p_t(y)/p_t(x)
    indexed [x, y]. Follows the same uniform grid and clamped Euler
    categoricals as the production sampler, but entirely through dense
    row-vector multiplications.
    """
    n = dense_Q.shape[0]
    T = schedule.horizon
    dt = (T - eps_t) / steps
    dist = np.asarray(terminal, dtype=np.float64).copy()
    for k in range(steps):
        t = T - k * dt
        sigma = schedule.sigma(t)
        ratios = ratio_of_t(t)
        step_kernel = np.empty((n, n))
        for x in range(n):
            off = sigma * dense_Q[:, x] * ratios[x]
            off[x] = 0.0
            row = dt * off
            row[x] = 1.0 - dt * off.sum()
            np.clip(row, 0.0, None, out=row)
            step_kernel[x] = row / row.sum()
        dist = dist @ step_kernel
    return dist


def random_positive_vector(rng, n, floor_scale=0.15):
    """Dirichlet draw mixed with uniform mass so entries stay interior."""
    v = rng.dirichlet(np.ones(n)) * (1.0 - floor_scale) + floor_scale / n
    return v / v.sum()
