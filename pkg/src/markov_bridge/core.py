"""Core types and exact kernels for continuous-time Markov chains on finite
state spaces.

Rate matrices are stored factorized as (permutation, parameter vector a) and
never densified on hot paths: in sorted coordinates the generator is upper
triangular with eigenvalues lambda_j = -(a_j + ... + a_{n-2}) and lambda_{n-1}
= 0 against the all-ones upper-triangular eigenbasis, so exp(beta * Q) has a
closed form assembled in O(n^2). The inverse eigenbasis (+1 diagonal, -1 first
superdiagonal) is applied analytically as an adjacent column difference and is
never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_ATOL = 1e-9
RATIO_FLOOR = 1e-12


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ProbVector:
    """Categorical distribution over n states: nonnegative entries summing to 1."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 1:
            raise ValueError("probs must be a nonempty 1-d vector")
        if np.any(probs < 0.0):
            raise ValueError("probability entries must be nonnegative")
        total = float(probs.sum())
        if abs(total - 1.0) > PROB_ATOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "probs", _frozen(probs, np.float64))

    @property
    def n(self) -> int:
        return int(self.probs.size)


@dataclass(frozen=True)
class ProductDistribution:
    """d independent categorical marginals sharing one state count n."""

    marginals: tuple

    def __post_init__(self):
        marginals = tuple(self.marginals)
        if not marginals:
            raise ValueError("need at least one marginal")
        if not all(isinstance(m, ProbVector) for m in marginals):
            raise TypeError("marginals must be ProbVector instances")
        n = marginals[0].n
        if any(m.n != n for m in marginals):
            raise ValueError("all marginals must share the same state count")
        object.__setattr__(self, "marginals", marginals)

    @property
    def d(self) -> int:
        return len(self.marginals)

    @property
    def n(self) -> int:
        return self.marginals[0].n

    def as_array(self) -> np.ndarray:
        """Stack marginals into a (d, n) array."""
        return np.stack([m.probs for m in self.marginals])

    @classmethod
    def from_array(cls, arr) -> "ProductDistribution":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("expected a (d, n) array")
        return cls(tuple(ProbVector(row) for row in arr))

    @classmethod
    def uniform(cls, n: int, d: int) -> "ProductDistribution":
        return cls.from_array(np.full((d, n), 1.0 / n))


@dataclass(frozen=True)
class FactorizedRateMatrix:
    """Rate matrix stored as a permutation plus n-1 nonnegative parameters.

    ``perm[k]`` is the original state occupying sorted slot k; ``inv_perm`` is
    its inverse. In sorted coordinates the generator H is upper triangular
    with H[i, j] = a[j-1] for j > i and diagonal -sum(a[i:]); the dense matrix
    in original coordinates is H conjugated by the permutation.
    """

    n: int
    perm: np.ndarray
    inv_perm: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        inv_perm = np.asarray(self.inv_perm, dtype=np.int64)
        a = np.asarray(self.a, dtype=np.float64)
        n = int(self.n)
        if perm.shape != (n,) or inv_perm.shape != (n,):
            raise ValueError("perm and inv_perm must have shape (n,)")
        if a.shape != (n - 1,):
            raise ValueError("a must have shape (n-1,)")
        if np.any(a < 0.0):
            raise ValueError("rate parameters must be nonnegative")
        if not np.array_equal(perm[inv_perm], np.arange(n)):
            raise ValueError("inv_perm is not the inverse of perm")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "perm", _frozen(perm, np.int64))
        object.__setattr__(self, "inv_perm", _frozen(inv_perm, np.int64))
        object.__setattr__(self, "a", _frozen(a, np.float64))

    @classmethod
    def from_parts(cls, perm, a) -> "FactorizedRateMatrix":
        """Build from a permutation (sorted slot -> original state) and a."""
        perm = np.asarray(perm, dtype=np.int64)
        inv_perm = np.empty_like(perm)
        inv_perm[perm] = np.arange(perm.size)
        return cls(n=perm.size, perm=perm, inv_perm=inv_perm, a=np.asarray(a, dtype=np.float64))

    @classmethod
    def with_identity_perm(cls, a) -> "FactorizedRateMatrix":
        a = np.asarray(a, dtype=np.float64)
        return cls.from_parts(np.arange(a.size + 1), a)

    @property
    def lambdas(self) -> np.ndarray:
        """Eigenvalues in sorted coordinates: -sum(a[j:]) then a trailing 0."""
        return np.concatenate((-np.cumsum(self.a[::-1])[::-1], [0.0]))

    def replace_a(self, a) -> "FactorizedRateMatrix":
        return FactorizedRateMatrix(n=self.n, perm=self.perm, inv_perm=self.inv_perm, a=a)


@dataclass(frozen=True)
class NoiseSchedule:
    """Scalar rate multiplier sigma(t) with closed-form integral beta(t).

    Only the linear kind is implemented; beta stays exact so distribution
    evolution never needs numerical quadrature.
    """

    kind: str = "linear"
    sigma_min: float = 0.1
    sigma_max: float = 10.0
    horizon: float = 1.0

    def __post_init__(self):
        if self.kind != "linear":
            raise ValueError(f"unsupported schedule kind {self.kind!r}")
        if not (0.0 < self.sigma_min <= self.sigma_max):
            raise ValueError("need 0 < sigma_min <= sigma_max")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")

    def _check_t(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0.0) or np.any(t > self.horizon):
            raise ValueError(f"t={t!r} outside [0, {self.horizon}]")
        return t

    def sigma(self, t):
        """Instantaneous rate multiplier at time t."""
        t = self._check_t(t)
        out = self.sigma_min + (self.sigma_max - self.sigma_min) * t / self.horizon
        return float(out) if out.ndim == 0 else out

    def beta(self, t):
        """Integral of sigma from 0 to t; strictly increasing, beta(0) = 0."""
        t = self._check_t(t)
        out = self.sigma_min * t + (self.sigma_max - self.sigma_min) * t * t / (2.0 * self.horizon)
        return float(out) if out.ndim == 0 else out


def _sorted_kernel(lambdas: np.ndarray, beta: float) -> np.ndarray:
    # exp(beta*H) in sorted coordinates: diagonal e^{beta*lambda_j}, entry
    # (i, j>i) = e^{beta*lambda_j} - e^{beta*lambda_{j-1}} (adjacent column
    # difference = analytic application of the inverse eigenbasis).
    n = lambdas.size
    e = np.exp(beta * lambdas)
    upper = e - np.concatenate(([0.0], e[:-1]))
    return np.triu(np.broadcast_to(upper, (n, n)).copy(), k=1) + np.diag(e)


def transition_kernel(Q: FactorizedRateMatrix, beta: float) -> np.ndarray:
    """Row-stochastic exp(beta * Q) computed through the closed-form spectrum.

    Entries are clamped at zero (the eigen route can leave -1e-15-scale
    negatives from cancellation) and rows renormalized, since downstream code
    divides by kernel entries.
    """
    beta = float(beta)
    if beta < 0.0:
        raise ValueError("beta must be nonnegative")
    Ks = _sorted_kernel(Q.lambdas, beta)
    K = Ks[np.ix_(Q.inv_perm, Q.inv_perm)]
    np.clip(K, 0.0, None, out=K)
    K /= K.sum(axis=1, keepdims=True)
    return K


def kernel_rows(Q: FactorizedRateMatrix, betas, states) -> np.ndarray:
    """Rows exp(beta_b * Q)[state_b, :] for per-element beta values.

    Same arithmetic as :func:`transition_kernel` restricted to one row each,
    vectorized over a batch; this is the hot primitive behind conditional
    sampling and the score-entropy loss.
    """
    betas = np.atleast_1d(np.asarray(betas, dtype=np.float64))
    states = np.atleast_1d(np.asarray(states, dtype=np.int64))
    if betas.size == 1 and states.size > 1:
        betas = np.broadcast_to(betas, states.shape)
    B, n = states.size, Q.n
    e = np.exp(np.outer(betas, Q.lambdas))
    upper = e - np.concatenate([np.zeros((B, 1)), e[:, :-1]], axis=1)
    pos = Q.inv_perm[states]
    cols = np.arange(n)[None, :]
    rows = np.where(cols > pos[:, None], upper, 0.0)
    rows[np.arange(B), pos] = e[np.arange(B), pos]
    rows = rows[:, Q.inv_perm]
    np.clip(rows, 0.0, None, out=rows)
    rows /= rows.sum(axis=1, keepdims=True)
    return rows


def evolve_rows(p: np.ndarray, Q: FactorizedRateMatrix, betas) -> np.ndarray:
    """Marginals p @ exp(beta_b * Q) for a batch of beta values, shape (B, n).

    Uses the telescoped cumulative form c_j e^{beta lambda_j} -
    c_{j-1} e^{beta lambda_{j-1}} with c the cumulative sums of p in sorted
    coordinates, so the whole batch costs O(B n).
    """
    betas = np.atleast_1d(np.asarray(betas, dtype=np.float64))
    p = np.asarray(p, dtype=np.float64)
    c = np.cumsum(p[Q.perm])
    e = np.exp(np.outer(betas, Q.lambdas))
    ce = c[None, :] * e
    rows = ce - np.concatenate([np.zeros((betas.size, 1)), ce[:, :-1]], axis=1)
    rows = rows[:, Q.inv_perm]
    np.clip(rows, 0.0, None, out=rows)
    return rows


def materialize_dense(Q: FactorizedRateMatrix) -> np.ndarray:
    """Dense generator matrix: zero row sums, nonnegative off-diagonals."""
    n = Q.n
    H = np.triu(np.broadcast_to(np.concatenate(([0.0], Q.a)), (n, n)).copy(), k=1)
    H[np.diag_indices(n)] = Q.lambdas
    return H[np.ix_(Q.inv_perm, Q.inv_perm)]


def dense_column(Q: FactorizedRateMatrix, x: int) -> np.ndarray:
    """Column x of the dense generator without building the full matrix."""
    jx = int(Q.inv_perm[x])
    col = np.zeros(Q.n)
    if jx > 0:
        col[:jx] = Q.a[jx - 1]
    col[jx] = Q.lambdas[jx]
    return col[Q.inv_perm]


def evolve(p0, Q: FactorizedRateMatrix, beta: float):
    """Push a distribution through exp(beta * Q); the entry sum is conserved.

    Accepts a ProbVector (returns ProbVector) or a raw vector (returns a raw
    vector, no normalization), so conservation holds for unnormalized inputs.
    """
    raw = p0.probs if isinstance(p0, ProbVector) else np.asarray(p0, dtype=np.float64)
    out = raw @ transition_kernel(Q, beta)
    return ProbVector(out) if isinstance(p0, ProbVector) else out


def reverse_rate_row(Q: FactorizedRateMatrix, sigma_t: float, p_ratio, x: int) -> np.ndarray:
    """Row x of the reversed generator given probability ratios p_t(y)/p_t(x).

    Off-diagonal entry y is sigma_t * Q[y, x] * p_ratio[y]; the diagonal is
    set so the row sums to zero.
    """
    p_ratio = np.asarray(p_ratio, dtype=np.float64)
    if p_ratio.shape != (Q.n,):
        raise ValueError("p_ratio must have one entry per state")
    row = float(sigma_t) * dense_column(Q, x) * p_ratio
    row[x] = 0.0
    if np.any(row < 0.0):
        bad = int(np.argmin(row))
        raise ValueError(
            f"negative reverse rate toward state {bad}: ratio or rate matrix is corrupted"
        )
    row[x] = -row.sum()
    return row


def sample_categorical(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one state per row from a (B, n) array of row distributions."""
    u = rng.random(rows.shape[0])
    cdf = np.cumsum(rows, axis=1)
    idx = (u[:, None] > cdf).sum(axis=1)
    return np.minimum(idx, rows.shape[1] - 1)


def kl_divergence(p, q, floor: float = RATIO_FLOOR) -> float:
    """KL(p || q) in nats with clamped logs; the 0 log 0 terms contribute 0."""
    p = p.probs if isinstance(p, ProbVector) else np.asarray(p, dtype=np.float64)
    q = q.probs if isinstance(q, ProbVector) else np.asarray(q, dtype=np.float64)
    return float(np.sum(p * (np.log(np.maximum(p, floor)) - np.log(np.maximum(q, floor)))))
