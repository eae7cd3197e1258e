"""Forward/reverse SDEs, their transformation under a bijection, and an integrator.

All drift/diffusion callables take a batch of states ``(..., n)`` and a time
that is either a scalar or an array matching the batch shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DomainError, NumericalBlowup
from .oracle import fd_matrix_divergence
from .transforms import DiffeoTransform, ScoreField, invert_jacobian, pushforward_score

T_MIN = 1e-5


def _col(v):
    return np.asarray(v, dtype=float)[..., None]


def diffusion_product(G):
    return np.einsum("...ik,...jk->...ij", G, G)


@dataclass
class SdeSpec:
    """``dX = f(X, t) dt + G(X, t) dW``.

    ``ggT_divergence`` is the row-wise divergence of ``G G^T``. When omitted a
    central-difference adapter is installed. ``noise_action(x, t, xi)`` may be
    given to apply a square ``G`` to noise without forming the matrix.
    """

    dim: int
    drift: Callable
    diffusion: Callable
    ggT_divergence: Callable | None = None
    noise_action: Callable | None = None
    analytic_divergence: bool = field(default=True, init=False)

    def __post_init__(self):
        if self.ggT_divergence is None:
            self.analytic_divergence = False
            diffusion = self.diffusion
            self.ggT_divergence = lambda x, t: fd_matrix_divergence(
                lambda z: diffusion_product(diffusion(z, t)), x
            )


@dataclass(frozen=True)
class VpSchedule:
    """Linear noise schedule ``beta(t) = beta_min + t (beta_max - beta_min)``."""

    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if not (self.beta_min > 0 and self.beta_max > 0):
            raise ConfigError("beta_min and beta_max must be positive")

    def beta(self, t):
        return self.beta_min + np.asarray(t, dtype=float) * (self.beta_max - self.beta_min)

    def beta_integral(self, t):
        t = np.asarray(t, dtype=float)
        return self.beta_min * t + 0.5 * t**2 * (self.beta_max - self.beta_min)

    def mean_coeff(self, t):
        """``exp(-B(t) / 2)``, the factor multiplying ``x0`` in the VP conditional mean."""
        return np.exp(-0.5 * self.beta_integral(t))

    @classmethod
    def from_dict(cls, d: dict | None) -> VpSchedule:
        d = dict(d or {})
        unknown = set(d) - {"beta_min", "beta_max"}
        if unknown:
            raise ConfigError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class PathGrid:
    t0: float
    t1: float
    steps: int
    direction: str = "forward"

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not self.t0 < self.t1:
            raise ConfigError("need t0 < t1")
        if self.direction not in ("forward", "reverse"):
            raise ConfigError(f"direction must be forward or reverse, got {self.direction!r}")

    @property
    def dt(self) -> float:
        h = (self.t1 - self.t0) / self.steps
        return h if self.direction == "forward" else -h

    def start_times(self):
        k = np.arange(self.steps)
        h = (self.t1 - self.t0) / self.steps
        if self.direction == "forward":
            return self.t0 + k * h
        return self.t1 - k * h


def _trace_term(H, D):
    """``[Tr(G^T H_i G)]_i`` written as ``sum_jk H_ijk (G G^T)_jk``."""
    return np.einsum("...ijk,...jk->...i", H, D)


def ito_transform(sde: SdeSpec, t: DiffeoTransform) -> SdeSpec:
    """SDE of ``Y = phi(X, t)`` via Ito's lemma, expressed in ``y``.

    The returned divergence of ``G~ G~^T`` is analytic whenever the input's is:
    it equals the Hessian trace term plus ``J div(GG^T)`` plus
    ``J GG^T grad_x log|det J|``.
    """

    def drift(y, time):
        x = t.inverse(y, time)
        J, H = t.jacobian(x, time), t.hessian(x, time)
        D = diffusion_product(sde.diffusion(x, time))
        return (
            t.time_partial(x, time)
            + np.einsum("...ij,...j->...i", J, sde.drift(x, time))
            + 0.5 * _trace_term(H, D)
        )

    def diffusion(y, time):
        x = t.inverse(y, time)
        return t.jacobian(x, time) @ sde.diffusion(x, time)

    def ggT_divergence(y, time):
        x = t.inverse(y, time)
        J, H = t.jacobian(x, time), t.hessian(x, time)
        Jinv = invert_jacobian(J)
        D = diffusion_product(sde.diffusion(x, time))
        gld = np.einsum("...ba,...abk->...k", Jinv, H)
        return (
            _trace_term(H, D)
            + np.einsum("...ij,...j->...i", J, sde.ggT_divergence(x, time))
            + np.einsum("...ij,...jk,...k->...i", J, D, gld)
        )

    out = SdeSpec(sde.dim, drift, diffusion, ggT_divergence if sde.analytic_divergence else None)
    return out


def anderson_reverse(sde: SdeSpec, score) -> SdeSpec:
    """Reverse-time drift ``f - GG^T score - div(GG^T)``; diffusion unchanged.

    The result is meant to be integrated with negative time steps.
    """

    def drift(x, time):
        D = diffusion_product(sde.diffusion(x, time))
        return (
            sde.drift(x, time)
            - np.einsum("...ij,...j->...i", D, score(x, time))
            - sde.ggT_divergence(x, time)
        )

    out = SdeSpec(sde.dim, drift, sde.diffusion, sde.ggT_divergence, sde.noise_action)
    out.analytic_divergence = sde.analytic_divergence
    return out


def negate_drift(sde: SdeSpec) -> SdeSpec:
    """Flip the sign of the drift, converting a reverse-time SDE to forward-time form."""
    out = SdeSpec(sde.dim, lambda x, time: -sde.drift(x, time), sde.diffusion, sde.ggT_divergence,
                  sde.noise_action)
    out.analytic_divergence = sde.analytic_divergence
    return out


def reverse_ito_drift(t: DiffeoTransform, sde: SdeSpec, score_x, y, time):
    """Reverse drift of ``Y = phi(X, t)`` built only from the score of ``X``.

    ``dphi/dt + J_phi fbar - Tr(G^T H_phi G) / 2`` evaluated at ``x = phi^{-1}(y)``.
    """
    x = t.inverse(y, time)
    J, H = t.jacobian(x, time), t.hessian(x, time)
    invert_jacobian(J)
    D = diffusion_product(sde.diffusion(x, time))
    fbar = anderson_reverse(sde, score_x).drift(x, time)
    return t.time_partial(x, time) + np.einsum("...ij,...j->...i", J, fbar) - 0.5 * _trace_term(H, D)


def transformed_reverse_sde(t: DiffeoTransform, sde: SdeSpec, score_x) -> SdeSpec:
    """The Y-space reverse SDE ``(f^, G~)`` packaged for integration."""
    transformed = ito_transform(sde, t)
    out = SdeSpec(
        sde.dim,
        lambda y, time: reverse_ito_drift(t, sde, score_x, y, time),
        transformed.diffusion,
        transformed.ggT_divergence,
    )
    out.analytic_divergence = transformed.analytic_divergence
    return out


def reverse_equivalence_check(t: DiffeoTransform, sde: SdeSpec, score_x, y, time, score_y=None) -> float:
    """Max-norm gap between transform-then-reverse and reverse-then-transform drifts.

    ``score_y`` defaults to the pushforward of ``score_x`` under ``t``.
    """
    if score_y is None:
        score_y = lambda yy, tt: pushforward_score(t, score_x, yy, tt)  # noqa: E731
    path_a = anderson_reverse(ito_transform(sde, t), score_y).drift(y, time)
    path_b = reverse_ito_drift(t, sde, score_x, y, time)
    return float(np.max(np.abs(path_a - path_b)))


def step_noise(seed: int, step: int, shape):
    """Standard normal increments for one integration step.

    Each step has its own Philox stream keyed by ``(seed, step)``; a sample's
    noise is its row of the step block, so any partition of the batch that
    indexes into the same block reproduces the same path.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(step,))
    return np.random.Generator(np.random.Philox(ss)).standard_normal(shape)


def euler_maruyama(sde: SdeSpec, init, grid: PathGrid, seed: int, constraint: Callable | None = None):
    """Integrate ``sde`` over ``grid`` and return the terminal states.

    Reverse grids run from ``t1`` down to ``t0`` with a negative ``dt`` applied
    to the drift. ``constraint`` (optional) is called on the state after every
    step and must return the corrected state.
    """
    x = np.array(init, dtype=float)
    if x.ndim != 2 or x.shape[1] != sde.dim:
        raise ConfigError(f"init must have shape (N, {sde.dim})")
    dt = grid.dt
    sqrt_h = np.sqrt(abs(dt))
    for k, time in enumerate(grid.start_times()):
        if sde.noise_action is not None:
            noise = sde.noise_action(x, time, step_noise(seed, k, x.shape))
        else:
            G = sde.diffusion(x, time)
            noise = np.einsum("...ij,...j->...i", G, step_noise(seed, k, (x.shape[0], G.shape[-1])))
        x = x + sde.drift(x, time) * dt + noise * sqrt_h
        if not np.all(np.isfinite(x)):
            raise NumericalBlowup(k)
        if constraint is not None:
            x = constraint(x)
    return x


# -- VP SDE -------------------------------------------------------------------


def vp_sde(schedule: VpSchedule, dim: int) -> SdeSpec:
    """``dX = -beta(t) X / 2 dt + sqrt(beta(t)) dW``."""
    eye = np.eye(dim)

    def drift(x, t):
        return -0.5 * _col(schedule.beta(t)) * np.asarray(x, dtype=float)

    def diffusion(x, t):
        g = np.sqrt(schedule.beta(t))
        return np.broadcast_to(_col(_col(g)) * eye, np.shape(x)[:-1] + (dim, dim))

    def ggT_divergence(x, t):
        return np.zeros(np.shape(x))

    return SdeSpec(dim, drift, diffusion, ggT_divergence)


def _check_time(t, t_min):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("negative time")
    if np.any(t < t_min):
        raise DomainError(f"time below the floor t_min={t_min}")
    return t


def vp_conditional_moments(schedule: VpSchedule, x0, t):
    """Mean and (isotropic) variance of ``x_t | x_0``."""
    a = schedule.mean_coeff(t)
    return _col(a) * np.asarray(x0, dtype=float), 1.0 - a**2


def vp_conditional_sample(schedule: VpSchedule, x0, t, rng, t_min: float = T_MIN):
    t = _check_time(t, t_min)
    mean, var = vp_conditional_moments(schedule, x0, t)
    return mean + _col(np.sqrt(var)) * rng.standard_normal(np.shape(mean))


def vp_conditional_score(x, x0, t, schedule: VpSchedule | None = None, t_min: float = T_MIN):
    """``grad_x log p_{0t}(x | x0)`` for the VP SDE."""
    schedule = schedule or VpSchedule()
    t = _check_time(t, t_min)
    mean, var = vp_conditional_moments(schedule, x0, t)
    return -(np.asarray(x, dtype=float) - mean) / _col(var)


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of axis-aligned Gaussians: weights ``(M,)``, means and stds ``(M, n)``."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        sd = np.broadcast_to(np.asarray(self.stds, dtype=float), mu.shape).copy()
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("mixture weights must be nonnegative and sum to one")
        if np.any(sd <= 0):
            raise ConfigError("mixture stds must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", sd)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, n: int, rng):
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.means[comp] + self.stds[comp] * rng.standard_normal((n, self.dim))

    def _log_components(self, x, means, var):
        diff = np.asarray(x, dtype=float)[..., None, :] - means
        return (
            np.log(self.weights)
            - 0.5 * np.sum(diff**2 / var, axis=-1)
            - 0.5 * np.sum(np.log(2 * np.pi * var), axis=-1)
        ), diff

    def log_prob(self, x):
        logc, _ = self._log_components(x, self.means, self.stds**2)
        m = logc.max(axis=-1, keepdims=True)
        return (m + np.log(np.exp(logc - m).sum(axis=-1, keepdims=True)))[..., 0]

    def score(self, x):
        return _mixture_score(self, x, self.means, self.stds**2)


def _softmax(logc):
    resp = np.exp(logc - logc.max(axis=-1, keepdims=True))
    return resp / resp.sum(axis=-1, keepdims=True)


def _mixture_score(mix: GaussianMixture, x, means, var):
    x = np.asarray(x, dtype=float)
    if means.ndim == 2 and x.ndim == 2:
        # shared component parameters: expand the quadratic and use matmuls
        prec = 1.0 / var
        mp = means * prec
        logc = (
            np.log(mix.weights)
            - 0.5 * ((x**2) @ prec.T - 2.0 * x @ mp.T + np.sum(means * mp, axis=-1))
            - 0.5 * np.sum(np.log(2 * np.pi * var), axis=-1)
        )
        resp = _softmax(logc)
        return resp @ mp - x * (resp @ prec)
    logc, diff = mix._log_components(x, means, var)
    return -np.einsum("...m,...mi->...i", _softmax(logc), diff / var)


def vp_marginal_score_gaussian_mixture(mixture: GaussianMixture, x, t, schedule: VpSchedule | None = None):
    """Exact VP marginal score when the data distribution is a Gaussian mixture.

    Each component ``N(mu, diag s^2)`` becomes ``N(a mu, diag(a^2 s^2 + 1 - a^2))``
    with ``a = exp(-B(t)/2)``.
    """
    schedule = schedule or VpSchedule()
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("negative time")
    a = schedule.mean_coeff(t)[..., None, None]
    means = a * mixture.means
    var = a**2 * mixture.stds**2 + (1.0 - a**2)
    return _mixture_score(mixture, x, means, var)


def vp_mixture_score_field(mixture: GaussianMixture, schedule: VpSchedule | None = None) -> ScoreField:
    schedule = schedule or VpSchedule()
    return ScoreField(mixture.dim, lambda x, t: vp_marginal_score_gaussian_mixture(mixture, x, t, schedule))
