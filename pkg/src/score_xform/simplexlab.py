"""Diffusion on the projected simplex through the additive logistic map."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .sde import (
    T_MIN,
    GaussianMixture,
    PathGrid,
    SdeSpec,
    VpSchedule,
    euler_maruyama,
    vp_marginal_score_gaussian_mixture,
)
from .transforms import AdditiveLogistic

DEFAULT_K = 12
CLAMP_MARGIN = 1e-7


def additive_logistic(x):
    x = np.asarray(x, dtype=float)
    return AdditiveLogistic(x.shape[-1]).forward(x)


def additive_logistic_inverse(y):
    y = np.asarray(y, dtype=float)
    return AdditiveLogistic(y.shape[-1]).inverse(y)


def remainder_mass(y):
    return 1.0 - np.sum(np.asarray(y, dtype=float), axis=-1)


def _check_t(t, t_min):
    if np.any(np.asarray(t) < t_min):
        raise DomainError(f"time below the floor t_min={t_min}")


def simplex_reverse_drift(vp: VpSchedule, score_x, y, t, t_min: float = T_MIN):
    """``y_i (k_i - sum_j y_j k_j)`` with ``k_i = fbar_i + beta (2 y_i - 1) / 2``.

    ``fbar = -beta x / 2 - beta s(x, t)`` is the reverse drift in ``x``.
    """
    _check_t(t, t_min)
    y = np.asarray(y, dtype=float)
    x = AdditiveLogistic(y.shape[-1]).inverse(y)
    beta = np.asarray(vp.beta(t), dtype=float)[..., None]
    fbar = -0.5 * beta * x - beta * np.asarray(score_x(x, t), dtype=float)
    kk = fbar + 0.5 * beta * (2.0 * y - 1.0)
    return y * (kk - np.sum(y * kk, axis=-1, keepdims=True))


def simplex_diffusion(vp: VpSchedule, y, t):
    """``g (diag y - y y^T)``."""
    y = np.asarray(y, dtype=float)
    g = np.sqrt(np.asarray(vp.beta(t), dtype=float))[..., None, None]
    outer = y[..., :, None] * y[..., None, :]
    return g * (y[..., :, None] * np.eye(y.shape[-1]) - outer)


def simplex_noise_action(vp: VpSchedule, y, t, xi):
    """``g (diag y - y y^T) xi`` without forming the matrix."""
    y = np.asarray(y, dtype=float)
    g = np.sqrt(np.asarray(vp.beta(t), dtype=float))[..., None]
    return g * (y * xi - y * np.sum(y * xi, axis=-1, keepdims=True))


def simplex_reverse_coeffs(vp: VpSchedule, score_x, y, t, t_min: float = T_MIN):
    """Closed-form reverse drift and diffusion of the VP SDE pushed onto the simplex."""
    AdditiveLogistic(np.shape(y)[-1]).check_image(np.asarray(y, dtype=float))
    return simplex_reverse_drift(vp, score_x, y, t, t_min), simplex_diffusion(vp, y, t)


def scale_drift(drift, w: float):
    return w * np.asarray(drift, dtype=float)


def soften_onehot(class_index: int, k_plus_1: int, epsilon: float):
    """Softened one-hot as a projected-simplex point.

    Class 0 is the implicit remainder slot: every explicit coordinate gets
    ``epsilon``. Class ``c >= 1`` puts ``1 - k epsilon`` at coordinate ``c - 1``.
    """
    if not 0 < epsilon < 1.0 / k_plus_1:
        raise ConfigError(f"epsilon must lie in (0, 1/{k_plus_1}), got {epsilon}")
    if not 0 <= class_index < k_plus_1:
        raise ConfigError(f"class index {class_index} out of range for {k_plus_1} classes")
    k = k_plus_1 - 1
    y = np.full(k, epsilon)
    if class_index > 0:
        y[class_index - 1] = 1.0 - k * epsilon
    return y


def default_frequencies(k_plus_1: int):
    """Synthetic class frequencies: a heavy empty slot, the rest uneven."""
    w = np.ones(k_plus_1)
    w[0] = 0.5 * k_plus_1
    w[1 : min(3, k_plus_1)] = 3.0
    return w / w.sum()


@dataclass
class CategoricalSource:
    """One Gaussian component per class, centered at the inverse-mapped softened one-hot."""

    class_count: int = DEFAULT_K + 1
    epsilon: float = 0.01
    frequencies: np.ndarray | None = None
    component_std: float = 0.1
    mixture: GaussianMixture = field(init=False)

    def __post_init__(self):
        if self.class_count < 2:
            raise ConfigError("need at least two classes")
        if self.component_std <= 0:
            raise ConfigError("component_std must be positive")
        freq = default_frequencies(self.class_count) if self.frequencies is None else self.frequencies
        freq = np.asarray(freq, dtype=float)
        if freq.shape != (self.class_count,) or np.any(freq < 0):
            raise ConfigError("frequencies must be a nonnegative vector with one entry per class")
        self.frequencies = freq / freq.sum()
        means = np.stack([
            additive_logistic_inverse(soften_onehot(c, self.class_count, self.epsilon))
            for c in range(self.class_count)
        ])
        self.mixture = GaussianMixture(self.frequencies, means, np.full(means.shape, self.component_std))

    @property
    def k(self) -> int:
        return self.class_count - 1

    def score(self, vp: VpSchedule):
        return lambda x, t: vp_marginal_score_gaussian_mixture(self.mixture, x, t, vp)


class SimplexClamp:
    """Project states back into the simplex interior, counting how often that happens."""

    def __init__(self, margin: float = CLAMP_MARGIN):
        self.margin = margin
        self.events = 0
        self.touched = None

    def __call__(self, y):
        low = y < self.margin
        total = np.sum(np.where(low, self.margin, y), axis=-1, keepdims=True)
        high = total > 1.0 - self.margin
        bad = np.any(low, axis=-1) | high[..., 0]
        if self.touched is None:
            self.touched = np.zeros(y.shape[0], dtype=bool)
        if np.any(bad):
            self.events += int(bad.sum())
            self.touched |= bad
            y = np.maximum(y, self.margin)
            y = np.where(high, y * (1.0 - self.margin) / total, y)
        return y

    def rate(self, n_samples: int) -> float:
        return 0.0 if self.touched is None else float(self.touched.sum()) / n_samples


def classify(y):
    """Argmax class with the remainder slot as class 0."""
    y = np.asarray(y, dtype=float)
    full = np.concatenate([remainder_mass(y)[..., None], y], axis=-1)
    return np.argmax(full, axis=-1)


@dataclass(frozen=True)
class SimplexRun:
    samples: np.ndarray
    mean_empty_mass: float
    class_histogram: list
    clamp_rate: float
    clamp_events: int

    def stats(self) -> dict:
        return {
            "mean_empty_mass": self.mean_empty_mass,
            "class_histogram": self.class_histogram,
            "clamp_rate": self.clamp_rate,
            "clamp_events": self.clamp_events,
        }


def simplex_reverse_sde(source: CategoricalSource, vp: VpSchedule, w: float = 1.0) -> SdeSpec:
    score = source.score(vp)

    return SdeSpec(
        source.k,
        lambda y, t: scale_drift(simplex_reverse_drift(vp, score, y, t), w),
        lambda y, t: simplex_diffusion(vp, y, t),
        None,
        lambda y, t, xi: simplex_noise_action(vp, y, t, xi),
    )


def run_simplex_sampler(source: CategoricalSource, vp: VpSchedule, w: float = 1.0, n_samples: int = 10_000,
                        steps: int = 500, seed: int = 0, t0: float = 1e-3, t1: float = 1.0,
                        margin: float = CLAMP_MARGIN) -> SimplexRun:
    """Sample the simplex by integrating the ``w``-scaled reverse SDE from ``t1`` down to ``t0``.

    The prior is the standard normal pushed through the additive logistic map.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31,)))
    y_init = additive_logistic(rng.standard_normal((n_samples, source.k)))
    clamp = SimplexClamp(margin)
    y_init = clamp(y_init)
    grid = PathGrid(t0, t1, steps, "reverse")
    y = euler_maruyama(simplex_reverse_sde(source, vp, w), y_init, grid, seed, constraint=clamp)
    hist = np.bincount(classify(y), minlength=source.class_count)
    return SimplexRun(
        samples=y,
        mean_empty_mass=float(np.mean(remainder_mass(y))),
        class_histogram=hist.tolist(),
        clamp_rate=clamp.rate(n_samples),
        clamp_events=clamp.events,
    )
