"""Kernel exponential family with a Gaussian-mixture kernel, fitted in closed form.

The model score is ``s(x) = sum_l alpha_l grad_x k(x, z_l) + grad log q0(x)``,
linear in ``alpha``, so every score-matching objective is a quadratic
``alpha^T G1 alpha / 2 + b^T alpha + c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import ConfigError, SingularSystem
from .scorematch import (
    LossResult,
    ScoreModel,
    SliceDraws,
    SliceSampler,
    _as_data,
    _check_variances,
    default_quadratic_variances,
    gssm_loss,
    gssm_vr_quadratic_loss,
    quadratic_directions,
    sm_loss,
    ssm_loss,
    ssm_vr_loss,
)

LOSSES = ("sm", "ssm", "ssm-vr", "gssm", "gssm-vr")


@dataclass
class KefModel:
    inducing_points: np.ndarray
    rho: np.ndarray = field(default_factory=lambda: np.full(3, 1.0 / 3.0))
    sigma: np.ndarray = field(default_factory=lambda: np.array([0.5, 1.0, 2.0]))
    base_mean: np.ndarray | None = None
    base_var: np.ndarray | None = None
    alpha: np.ndarray | None = None

    def __post_init__(self):
        self.inducing_points = np.atleast_2d(np.asarray(self.inducing_points, dtype=float))
        L, n = self.inducing_points.shape
        self.rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        self.sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if L < 1:
            raise ConfigError("need at least one inducing point")
        if self.rho.shape != self.sigma.shape:
            raise ConfigError("rho and sigma must have the same length")
        if np.any(self.rho < 0) or abs(self.rho.sum() - 1.0) > 1e-12:
            raise ConfigError("mixture weights rho must be nonnegative and sum to one")
        if np.any(self.sigma <= 0):
            raise ConfigError("kernel bandwidths must be positive")
        self.base_mean = np.zeros(n) if self.base_mean is None else np.broadcast_to(
            np.asarray(self.base_mean, dtype=float), (n,)).copy()
        self.base_var = np.ones(n) if self.base_var is None else np.broadcast_to(
            np.asarray(self.base_var, dtype=float), (n,)).copy()
        if np.any(self.base_var <= 0):
            raise ConfigError("base variance must be positive")
        self.alpha = np.zeros(L) if self.alpha is None else np.asarray(self.alpha, dtype=float)
        if self.alpha.shape != (L,):
            raise ConfigError(f"alpha must have shape ({L},)")

    @property
    def dim(self) -> int:
        return self.inducing_points.shape[1]

    @property
    def n_inducing(self) -> int:
        return self.inducing_points.shape[0]

    def base_score(self, x):
        return -(np.asarray(x, dtype=float) - self.base_mean) / self.base_var

    def with_alpha(self, alpha) -> KefModel:
        return KefModel(self.inducing_points, self.rho, self.sigma, self.base_mean, self.base_var, alpha)

    def to_dict(self) -> dict:
        return {
            "inducing_points": self.inducing_points.tolist(),
            "mixture": {"rho": self.rho.tolist(), "sigma": self.sigma.tolist()},
            "base": {"mean": self.base_mean.tolist(), "var": self.base_var.tolist()},
            "alpha": self.alpha.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> KefModel:
        return cls(
            d["inducing_points"], d["mixture"]["rho"], d["mixture"]["sigma"],
            d["base"]["mean"], d["base"]["var"], d["alpha"],
        )


def kernel_derivatives(model: KefModel, x, z=None):
    """Value, gradient and Hessian in ``x`` of the mixture kernel against each ``z_l``.

    Shapes for ``x`` of shape ``(..., n)`` and ``L`` centers: ``(..., L)``,
    ``(..., L, n)``, ``(..., L, n, n)``.
    """
    z = model.inducing_points if z is None else np.atleast_2d(np.asarray(z, dtype=float))
    d = np.asarray(x, dtype=float)[..., None, :] - z
    sq = np.sum(d**2, axis=-1)
    n = z.shape[-1]
    value = np.zeros(sq.shape)
    grad = np.zeros(d.shape)
    hess = np.zeros(d.shape + (n,))
    outer = d[..., :, None] * d[..., None, :]
    eye = np.eye(n)
    for rho, sig in zip(model.rho, model.sigma):
        e = rho * np.exp(-0.5 * sq / sig**2)
        value += e
        grad -= e[..., None] * d / sig**2
        hess += e[..., None, None] * (outer / sig**4 - eye / sig**2)
    return value, grad, hess


def kef_score(model: KefModel, x):
    _, g, _ = kernel_derivatives(model, x)
    return np.einsum("l,...li->...i", model.alpha, g) + model.base_score(x)


def kef_score_jacobian(model: KefModel, x):
    _, _, H = kernel_derivatives(model, x)
    x = np.asarray(x, dtype=float)
    base = np.broadcast_to(-np.diag(1.0 / model.base_var), x.shape[:-1] + (model.dim, model.dim))
    return np.einsum("l,...lij->...ij", model.alpha, H) + base


def kef_score_model(model: KefModel) -> ScoreModel:
    return ScoreModel(eval=lambda x: kef_score(model, x), jacobian=lambda x: kef_score_jacobian(model, x))


@dataclass(frozen=True)
class QuadraticLossForm:
    """``loss(alpha) = alpha^T G1 alpha / 2 + b^T alpha + c``."""

    G1: np.ndarray
    b: np.ndarray
    c: float

    def value(self, alpha) -> float:
        alpha = np.asarray(alpha, dtype=float)
        return float(0.5 * alpha @ self.G1 @ alpha + self.b @ alpha + self.c)

    def gradient(self, alpha, lam: float = 0.0):
        alpha = np.asarray(alpha, dtype=float)
        return self.G1 @ alpha + self.b + lam * alpha

    def symmetry_error(self) -> float:
        return float(np.max(np.abs(self.G1 - self.G1.T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.G1).min())


def _slice_weights(valid):
    """Weights reproducing the per-point-then-global averaging of the direct losses."""
    counts = valid.sum(axis=1)
    keep = counts > 0
    w = np.where(valid, 1.0, 0.0) / np.where(keep, counts, 1)[:, None]
    return w / keep.sum()


def _assemble(G, h, Hk, Jh, Q, M, m, point_w):
    """Collect the quadratic form from per-point averaged pieces.

    Per point the loss is ``s^T Q s / 2 + <J_s, M> + m^T s`` with
    ``s = G alpha + h`` and ``J_s = sum_l alpha_l Hk_l + Jh``.
    """
    QG = np.einsum("nij,njl->nil", Q, G)
    G1 = np.einsum("n,nil,nim->lm", point_w, G, QG)
    b = (
        np.einsum("n,nil,ni->l", point_w, QG, h)
        + np.einsum("n,nlij,nij->l", point_w, Hk, M)
        + np.einsum("n,nil,ni->l", point_w, G, m)
    )
    c = np.sum(point_w * (
        0.5 * np.einsum("ni,nij,nj->n", h, Q, h)
        + np.einsum("nij,nij->n", Jh, M)
        + np.einsum("ni,ni->n", m, h)
    ))
    return QuadraticLossForm(0.5 * (G1 + G1.T), b, float(c))


def assemble_quadratic(model: KefModel, data, loss: str = "sm", sampler: SliceSampler | None = None,
                       seed=0, slices_per_point: int = 1, mode: str = "unnormalized",
                       variances=None, b_dist: str = "gaussian",
                       draws: SliceDraws | None = None, directions=None) -> QuadraticLossForm:
    """Quadratic form in ``alpha`` for ``loss``, using the same slice draws as the direct estimators."""
    if loss not in LOSSES:
        raise ConfigError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    data = _as_data(data)
    N, n = data.shape
    _, g, Hk = kernel_derivatives(model, data)
    G = np.swapaxes(g, -1, -2)  # (N, n, L)
    h = model.base_score(data)
    Jh = np.broadcast_to(-np.diag(1.0 / model.base_var), (N, n, n))
    eye = np.broadcast_to(np.eye(n), (N, n, n))
    zero_m = np.zeros((N, n))
    uniform = np.full(N, 1.0 / N)

    if loss == "sm":
        return _assemble(G, h, Hk, Jh, eye, eye, zero_m, uniform)

    if loss == "gssm-vr":
        if mode != "unnormalized":
            raise ConfigError("the normalized GSSM objective has no variance-reduced form")
        var_diag, var_off, var_b = _check_variances(variances or default_quadratic_variances(n))
        if directions is None:
            directions = quadratic_directions(data, (var_diag, var_off, var_b), slices_per_point,
                                              np.random.default_rng(seed), b_dist)
        xx = np.sum(data**2, axis=-1)
        Q = ((var_diag - 2 * var_off) * data[:, :, None] ** 2 * np.eye(n)
             + var_off * (xx[:, None, None] * np.eye(n) + data[:, :, None] * data[:, None, :])
             + var_b * np.eye(n))
        M = np.einsum("nsi,nsj->nij", directions, directions) / directions.shape[1]
        m = (2 * var_diag + (n - 1) * var_off) * data
        return _assemble(G, h, Hk, Jh, Q, M, m, uniform)

    if sampler is None:
        raise ConfigError(f"loss {loss!r} needs a slice sampler")
    if draws is None:
        if loss in ("ssm", "ssm-vr") and not sampler.is_linear:
            raise ConfigError(f"this loss needs a linear slice sampler, got {sampler.kind!r}")
        draws = sampler.draw(data, slices_per_point, seed)
    valid = draws.valid
    if loss == "gssm" and mode == "normalized":
        draws = draws.normalized()
    elif loss == "gssm" and mode != "unnormalized":
        raise ConfigError(f"unknown GSSM mode {mode!r}")
    w = _slice_weights(valid)
    point_w = w.sum(axis=1)
    safe = np.where(point_w > 0, point_w, 1.0)
    gg = np.einsum("ns,nsi,nsj->nij", w, draws.grad, draws.grad) / safe[:, None, None]
    if loss == "ssm":
        return _assemble(G, h, Hk, Jh, gg, gg, zero_m, point_w)
    if loss == "ssm-vr":
        return _assemble(G, h, Hk, Jh, eye, gg, zero_m, point_w)
    m = zero_m
    if draws.hess is not None:
        g_ = draws.grad
        # s^T H_v g + (g^T s) lap  ==  s^T (H_v g + lap g)
        per_pair = np.einsum("nsij,nsj->nsi", draws.hess, g_) + draws.lap[..., None] * g_
        m = np.einsum("ns,nsi->ni", w, per_pair) / safe[:, None]
    return _assemble(G, h, Hk, Jh, gg, gg, m, point_w)


def direct_loss(model: KefModel, data, loss: str = "sm", sampler: SliceSampler | None = None, seed=0,
                slices_per_point: int = 1, mode: str = "unnormalized", variances=None,
                b_dist: str = "gaussian") -> LossResult:
    """Evaluate ``loss`` on the KEF score through the generic estimators."""
    sm = kef_score_model(model)
    if loss == "sm":
        return sm_loss(sm, data)
    if loss == "ssm":
        return ssm_loss(sm, data, sampler, slices_per_point, seed)
    if loss == "ssm-vr":
        return ssm_vr_loss(sm, data, sampler, slices_per_point, seed)
    if loss == "gssm":
        return gssm_loss(sm, data, sampler, slices_per_point, mode, seed)
    if loss == "gssm-vr":
        return gssm_vr_quadratic_loss(sm, data, variances, slices_per_point, seed, b_dist, mode)
    raise ConfigError(f"unknown loss {loss!r}")


def solve_alpha(form: QuadraticLossForm, lam: float):
    """Minimizer ``-(G1 + lam I)^{-1} b`` via a Cholesky factorization."""
    if lam < 0:
        raise ConfigError("ridge penalty must be nonnegative")
    A = form.G1 + lam * np.eye(form.G1.shape[0])
    try:
        factor = cho_factor(A)
    except LinAlgError as exc:
        raise SingularSystem(f"Cholesky factorization failed at lambda={lam}; increase lambda") from exc
    alpha = -cho_solve(factor, form.b)
    if not np.all(np.isfinite(alpha)):
        raise SingularSystem(f"non-finite solution at lambda={lam}; increase lambda")
    return alpha


@dataclass(frozen=True)
class KefFit:
    model: KefModel
    form: QuadraticLossForm
    loss: float


def default_model(data, n_inducing: int = 20, seed=0, rho=None, sigma=None) -> KefModel:
    """Inducing points subsampled from the data; base ``N(mean, 2 var)``."""
    data = _as_data(data)
    rng = np.random.default_rng(seed)
    L = min(n_inducing, data.shape[0])
    idx = np.sort(rng.choice(data.shape[0], size=L, replace=False))
    kwargs = {}
    if rho is not None:
        kwargs["rho"] = rho
    if sigma is not None:
        kwargs["sigma"] = sigma
    var = np.maximum(data.var(axis=0), 1e-12)
    return KefModel(data[idx], base_mean=data.mean(axis=0), base_var=2.0 * var, **kwargs)


def kef_fit(data, loss: str = "sm", sampler: SliceSampler | None = None, lam: float = 1e-3, seed=0,
            model: KefModel | None = None, **assemble_kwargs) -> KefFit:
    """Assemble the quadratic form for ``loss`` and solve for ``alpha``.

    ``model`` supplies inducing points, kernel mixture and base density; its
    ``alpha`` is ignored. The reported loss is the unregularized objective at
    the solution.
    """
    data = _as_data(data)
    model = model or default_model(data, seed=seed)
    form = assemble_quadratic(model, data, loss, sampler, seed, **assemble_kwargs)
    alpha = solve_alpha(form, lam)
    return KefFit(model.with_alpha(alpha), form, form.value(alpha))


def fisher_divergence(model: KefModel, data, true_score) -> float:
    """``E |s_model(x) - s_true(x)|^2`` over ``data``."""
    data = _as_data(data)
    diff = kef_score(model, data) - np.asarray(true_score(data), dtype=float)
    return float(np.mean(np.sum(diff**2, axis=-1)))
