"""Backward-stage training: a small network estimates the probability ratios
p_t(y)/p_t(x_t) that assemble the reversed generator.

The training objective is the score-entropy form: for every off-state y the
integrand is rate * (s - r + r (ln r - ln s)) with r the conditional kernel
ratio, a Bregman divergence that is nonnegative and zero only at s = r. Time
is sampled uniformly on (eps_t, T) and weighted by (T - eps_t); the full sum
over y is taken (no y-subsampling) since desk-scale n keeps it cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    RATIO_FLOOR,
    FactorizedRateMatrix,
    NoiseSchedule,
    ProductDistribution,
    evolve_rows,
    kernel_rows,
    materialize_dense,
    sample_categorical,
)
from .errors import DegenerateStateError, DivergenceError

TIME_EMBED_WIDTH = 16
DEFAULT_EPS_T = 1e-3

_FREQS = np.pi * 2.0 ** np.arange(TIME_EMBED_WIDTH // 2)


def time_embedding(t) -> np.ndarray:
    """Sinusoidal embedding of shape (B, 16) on geometric frequencies."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    phases = np.outer(t, _FREQS)
    return np.concatenate([np.sin(phases), np.cos(phases)], axis=1)


class ScoreModel:
    """MLP from (one-hot states per dimension, time embedding) to d*n ratios.

    The output head is exponentiated so every ratio estimate is strictly
    positive, and the final layer starts at zero so a fresh model outputs the
    uniform ratio 1 everywhere.
    """

    def __init__(self, n: int, d: int, hidden=(128, 128), rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.n = int(n)
        self.d = int(d)
        self.hidden = tuple(int(h) for h in hidden)
        sizes = [self.d * self.n + TIME_EMBED_WIDTH, *self.hidden, self.d * self.n]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))
        self.weights[-1][:] = 0.0

    @property
    def num_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def encode(self, xt, t) -> np.ndarray:
        xt = np.atleast_2d(np.asarray(xt, dtype=np.int64))
        B = xt.shape[0]
        onehot = np.zeros((B, self.d * self.n))
        onehot[np.arange(B)[:, None], xt + self.n * np.arange(self.d)[None, :]] = 1.0
        t = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), (B,))
        return np.concatenate([onehot, time_embedding(t)], axis=1)

    def _forward_cached(self, X):
        acts = [X]
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W.T + b)
            acts.append(h)
        out = h @ self.weights[-1].T + self.biases[-1]
        return acts, out

    def forward_batch(self, xt, t) -> np.ndarray:
        """Positive ratio estimates of shape (B, d, n)."""
        _, out = self._forward_cached(self.encode(xt, t))
        return np.exp(out).reshape(-1, self.d, self.n)

    def ratios(self, xt, t) -> np.ndarray:
        return self.forward_batch(xt, t)

    def backward(self, acts, d_out):
        """Gradients for a cached forward pass given d(loss)/d(pre-exp output)."""
        grad_w = [None] * len(self.weights)
        grad_b = [None] * len(self.biases)
        delta = d_out
        for layer in range(len(self.weights) - 1, -1, -1):
            grad_w[layer] = delta.T @ acts[layer]
            grad_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer]) * (1.0 - acts[layer] ** 2)
        return grad_w, grad_b


def score_forward(model: ScoreModel, xt, t: float) -> np.ndarray:
    """Ratio estimates for one state tuple: shape (d, n), strictly positive."""
    return model.forward_batch(np.atleast_2d(np.asarray(xt, dtype=np.int64)), float(t))[0]


@dataclass(frozen=True)
class ScoreBatch:
    """Joint draws (x0, t, xt) with xt sampled per-dimension from the kernel."""

    x0: np.ndarray
    t: np.ndarray
    xt: np.ndarray

    def __post_init__(self):
        x0 = np.atleast_2d(np.asarray(self.x0, dtype=np.int64))
        xt = np.atleast_2d(np.asarray(self.xt, dtype=np.int64))
        t = np.atleast_1d(np.asarray(self.t, dtype=np.float64))
        if x0.shape != xt.shape or t.shape != (x0.shape[0],):
            raise ValueError("x0, xt must be (B, d) and t must be (B,)")
        if x0.shape[0] == 0:
            raise ValueError("batch is empty")
        if np.any(t <= 0.0):
            raise ValueError("t entries must be positive")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "xt", xt)
        object.__setattr__(self, "t", t)

    @property
    def size(self) -> int:
        return self.x0.shape[0]


def sample_xt_batch(x0, Q_per_dim, schedule: NoiseSchedule, t, rng) -> np.ndarray:
    """Per-dimension conditional draws from exp(beta(t_b) * Q_i) rows."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.int64))
    betas = schedule.beta(np.atleast_1d(np.asarray(t, dtype=np.float64)))
    betas = np.broadcast_to(np.atleast_1d(betas), (x0.shape[0],))
    out = np.empty_like(x0)
    for i, Q in enumerate(Q_per_dim):
        rows = kernel_rows(Q, betas, x0[:, i])
        out[:, i] = sample_categorical(rows, rng)
    return out


def sample_xt_given_x0(x0, Q_per_dim, schedule: NoiseSchedule, t: float, rng) -> tuple:
    """One conditional draw of x_t given x_0 at time t."""
    drawn = sample_xt_batch(np.atleast_2d(np.asarray(x0, dtype=np.int64)), Q_per_dim, schedule, float(t), rng)
    return tuple(int(v) for v in drawn[0])


def make_score_batch(x0, Q_per_dim, schedule: NoiseSchedule, rng, eps_t: float = DEFAULT_EPS_T) -> ScoreBatch:
    """Draw times uniformly on (eps_t, T) and the matching xt per sample."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.int64))
    t = rng.uniform(eps_t, schedule.horizon, size=x0.shape[0])
    xt = sample_xt_batch(x0, Q_per_dim, schedule, t, rng)
    return ScoreBatch(x0=x0, t=t, xt=xt)


def _as_ratio_fn(model_or_fn):
    if isinstance(model_or_fn, ScoreModel):
        return model_or_fn.ratios
    return model_or_fn


def oracle_ratio_fn(mu: ProductDistribution, Q_per_dim, schedule: NoiseSchedule):
    """Batch ratio function from the exact posterior mixture over x0.

    Per dimension the optimum is p_t(y) / p_t(x_t) with p_t the evolved
    marginal, so a factorized mu gives it in closed form.
    """

    def ratios(xt, t):
        xt = np.atleast_2d(np.asarray(xt, dtype=np.int64))
        B = xt.shape[0]
        betas = np.broadcast_to(np.atleast_1d(schedule.beta(t)), (B,))
        out = np.empty((B, xt.shape[1], mu.n))
        for i, Q in enumerate(Q_per_dim):
            pt = evolve_rows(mu.marginals[i].probs, Q, betas)
            den = np.take_along_axis(pt, xt[:, i][:, None], axis=1)
            if np.any(den < 1e-300):
                raise DegenerateStateError(f"p_t underflow at dimension {i}")
            out[:, i, :] = pt / den
        return out

    return ratios


def exact_score_oracle(mu: ProductDistribution, Q_per_dim, schedule: NoiseSchedule, xt, t: float) -> np.ndarray:
    """Exact posterior ratios for one state tuple, shape (d, n)."""
    return oracle_ratio_fn(mu, Q_per_dim, schedule)(np.atleast_2d(np.asarray(xt, dtype=np.int64)), float(t))[0]


def _conditional_ratios(batch: ScoreBatch, Q_per_dim, schedule: NoiseSchedule):
    """Kernel ratio targets r and the off-state rate weights, both (B, d, n)."""
    B, d = batch.x0.shape
    n = Q_per_dim[0].n
    betas = schedule.beta(batch.t)
    sigmas = schedule.sigma(batch.t)
    r = np.empty((B, d, n))
    rates = np.empty((B, d, n))
    idx = np.arange(B)
    for i, Q in enumerate(Q_per_dim):
        rows = kernel_rows(Q, betas, batch.x0[:, i])
        den = np.maximum(rows[idx, batch.xt[:, i]], RATIO_FLOOR)
        r[:, i, :] = rows / den[:, None]
        # column xt_b of the dense generator, gathered per sample
        dense_T = materialize_dense(Q).T
        rates[:, i, :] = sigmas[:, None] * dense_T[batch.xt[:, i]]
        rates[idx, i, batch.xt[:, i]] = 0.0
    return r, rates


def _per_sample_values(s, batch: ScoreBatch, Q_per_dim, schedule: NoiseSchedule, eps_t: float):
    r, rates = _conditional_ratios(batch, Q_per_dim, schedule)
    bregman = s - r + r * (np.log(np.maximum(r, RATIO_FLOOR)) - np.log(np.maximum(s, RATIO_FLOOR)))
    # each term is a Bregman divergence, so negatives can only be roundoff
    np.clip(bregman, 0.0, None, out=bregman)
    terms = rates * bregman
    if not np.isfinite(terms).all():
        b, i, y = np.argwhere(~np.isfinite(terms))[0]
        raise DivergenceError(
            f"non-finite score-entropy term at dim {i}, state {y}, t={batch.t[b]:.6g}"
        )
    weight = schedule.horizon - eps_t
    return weight * terms.sum(axis=(1, 2)), r, rates


def score_entropy_loss(model_or_fn, batch: ScoreBatch, Q_per_dim, schedule: NoiseSchedule, eps_t: float = DEFAULT_EPS_T) -> float:
    """Monte Carlo estimate of the score-entropy objective; always >= 0."""
    if batch.size == 0:
        raise ValueError("batch is empty")
    s = _as_ratio_fn(model_or_fn)(batch.xt, batch.t)
    values, _, _ = _per_sample_values(s, batch, Q_per_dim, schedule, eps_t)
    return float(values.mean())


def _loss_and_grad(model: ScoreModel, batch: ScoreBatch, Q_per_dim, schedule: NoiseSchedule, eps_t: float):
    acts, out = model._forward_cached(model.encode(batch.xt, batch.t))
    s = np.exp(out).reshape(batch.size, model.d, model.n)
    values, r, rates = _per_sample_values(s, batch, Q_per_dim, schedule, eps_t)
    # d(term)/d(pre-exp output) = rate * (s - r) via the exp head
    weight = (schedule.horizon - eps_t) / batch.size
    d_out = (weight * rates * (s - r)).reshape(batch.size, model.d * model.n)
    grad_w, grad_b = model.backward(acts, d_out)
    return float(values.mean()), grad_w, grad_b


def score_grad(model: ScoreModel, batch: ScoreBatch, Q_per_dim, schedule: NoiseSchedule, eps_t: float = DEFAULT_EPS_T):
    """Exact reverse-mode gradients of the Monte Carlo loss for a fixed batch.

    Returns (grad_weights, grad_biases) shaped like the model parameters.
    """
    if batch.size == 0:
        raise ValueError("batch is empty")
    _, grad_w, grad_b = _loss_and_grad(model, batch, Q_per_dim, schedule, eps_t)
    return grad_w, grad_b


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam hyperparameters plus the smoothed-loss stop/divergence rules."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    smooth_window: int = 50
    divergence_factor: float = 10.0


def score_learning_loop(
    model: ScoreModel,
    data_iter,
    Q_per_dim,
    schedule: NoiseSchedule,
    max_step: int,
    eps_score: float,
    optimizer_config: OptimizerConfig = OptimizerConfig(),
    eps_t: float = DEFAULT_EPS_T,
) -> ScoreModel:
    """Adam on the score-entropy loss until the step cap or smoothed loss
    drops below eps_score; aborts if the smoothed loss exceeds 10x its start.
    """
    if max_step < 1:
        raise ValueError("max_step must be >= 1")
    cfg = optimizer_config
    m_w = [np.zeros_like(w) for w in model.weights]
    v_w = [np.zeros_like(w) for w in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    history = []
    initial_smoothed = None
    for step in range(max_step):
        batch = next(data_iter)
        loss, grad_w, grad_b = _loss_and_grad(model, batch, Q_per_dim, schedule, eps_t)
        history.append(loss)
        smoothed = float(np.mean(history[-cfg.smooth_window:]))
        if initial_smoothed is None:
            initial_smoothed = max(smoothed, 1e-30)
        if smoothed < eps_score:
            break
        if smoothed > cfg.divergence_factor * initial_smoothed:
            raise DivergenceError(
                "score training diverged",
                diagnostics={"step": step, "smoothed": smoothed, "initial": initial_smoothed},
            )
        tt = step + 1
        scale = cfg.lr * np.sqrt(1.0 - cfg.beta2**tt) / (1.0 - cfg.beta1**tt)
        for layer in range(len(model.weights)):
            m_w[layer] = cfg.beta1 * m_w[layer] + (1.0 - cfg.beta1) * grad_w[layer]
            v_w[layer] = cfg.beta2 * v_w[layer] + (1.0 - cfg.beta2) * grad_w[layer] ** 2
            model.weights[layer] -= scale * m_w[layer] / (np.sqrt(v_w[layer]) + cfg.eps)
            m_b[layer] = cfg.beta1 * m_b[layer] + (1.0 - cfg.beta1) * grad_b[layer]
            v_b[layer] = cfg.beta2 * v_b[layer] + (1.0 - cfg.beta2) * grad_b[layer] ** 2
            model.biases[layer] -= scale * m_b[layer] / (np.sqrt(v_b[layer]) + cfg.eps)
    return model
