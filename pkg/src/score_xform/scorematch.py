"""Score matching objectives: SM, SSM, SSM-VR, GSSM, GSSM-VR and weighted DSM.

Every estimator returns a :class:`LossResult` with the Monte Carlo standard
error. Standard errors are computed from per-point averages (slices drawn for
the same point are not independent of the point itself).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DegenerateSlice, EmptyData
from .oracle import DEFAULT_FD, FdConfig, fd_jacobian, mc_mean_stderr
from .sde import T_MIN, VpSchedule, vp_conditional_sample, vp_conditional_score
from .transforms import DiffeoTransform, invert_jacobian

LINEAR_KINDS = ("linear-rademacher", "linear-gaussian")
SLICE_KINDS = LINEAR_KINDS + ("quadratic-goe",)


@dataclass(frozen=True)
class LossResult:
    value: float
    stderr: float
    n_points: int
    n_slices: int = 0
    skipped_degenerate: int = 0
    per_point: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __float__(self):
        return self.value

    def to_dict(self):
        return {
            "value": self.value,
            "stderr": self.stderr,
            "n_points": self.n_points,
            "n_slices": self.n_slices,
            "skipped_degenerate": self.skipped_degenerate,
        }


@dataclass(frozen=True)
class ScoreModel:
    """A batched score ``s(x)`` together with its Jacobian ``J[i, j] = ds_i/dx_j``."""

    eval: Callable
    jacobian: Callable

    def __call__(self, x):
        return self.eval(x)

    @classmethod
    def affine(cls, matrix, offset=None) -> ScoreModel:
        """``s(x) = M x + c``; ``affine(-I, c)`` is the shifted Gaussian family."""
        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        c = np.zeros(M.shape[0]) if offset is None else np.asarray(offset, dtype=float)
        return cls(
            eval=lambda x: np.asarray(x, dtype=float) @ M.T + c,
            jacobian=lambda x: np.broadcast_to(M, np.shape(x)[:-1] + M.shape).copy(),
        )

    @classmethod
    def from_callable(cls, fn: Callable, cfg: FdConfig = DEFAULT_FD) -> ScoreModel:
        return cls(eval=fn, jacobian=lambda x: fd_jacobian(fn, x, cfg))


def _as_data(data):
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if data.shape[0] == 0:
        raise EmptyData("empty data batch")
    return data


def _check_variances(variances):
    v = tuple(float(s) for s in variances)
    if len(v) != 3:
        raise ConfigError("variances must be a triple (diag, offdiag, offset)")
    if any(s < 0 for s in v):
        raise ConfigError(f"variances must be nonnegative, got {v}")
    return v


def default_quadratic_variances(n: int):
    """Slice variances ``(2/sqrt(n), 1/sqrt(n), 1)`` for the quadratic family."""
    return (2.0 / np.sqrt(n), 1.0 / np.sqrt(n), 1.0)


@dataclass(frozen=True)
class SliceSampler:
    """Distribution over slice functions ``v``.

    Linear kinds draw ``v(x) = w^T x`` with Rademacher or standard normal ``w``.
    ``quadratic-goe`` draws ``v(x) = x^T A x / 2 + b^T x`` with symmetric ``A``
    (diagonal variance ``variances[0]``, off-diagonal ``variances[1]``) and
    ``b`` of variance ``variances[2]``, Gaussian or Rademacher-scaled.
    """

    kind: str
    dim: int
    variances: tuple = (0.0, 0.0, 1.0)
    b_dist: str = "gaussian"

    def __post_init__(self):
        if self.kind not in SLICE_KINDS:
            raise ConfigError(f"unknown slice kind {self.kind!r}")
        if self.b_dist not in ("gaussian", "rademacher"):
            raise ConfigError(f"unknown b distribution {self.b_dist!r}")
        object.__setattr__(self, "variances", _check_variances(self.variances))

    @property
    def is_linear(self) -> bool:
        return self.kind in LINEAR_KINDS

    @classmethod
    def quadratic(cls, dim: int, variances=None, b_dist: str = "gaussian") -> SliceSampler:
        return cls("quadratic-goe", dim, variances or default_quadratic_variances(dim), b_dist)

    def draw(self, data, slices_per_point: int, seed) -> SliceDraws:
        data = _as_data(data)
        if data.shape[1] != self.dim:
            raise ConfigError(f"sampler dim {self.dim} does not match data dim {data.shape[1]}")
        if slices_per_point < 1:
            raise ConfigError("slices_per_point must be >= 1")
        rng = np.random.default_rng(seed)
        shape = (data.shape[0], slices_per_point, self.dim)
        if self.kind == "linear-rademacher":
            return SliceDraws(grad=_rademacher(rng, shape))
        if self.kind == "linear-gaussian":
            return SliceDraws(grad=rng.standard_normal(shape))
        var_diag, var_off, var_b = self.variances
        A = sample_symmetric(rng, shape[:2], self.dim, var_diag, var_off)
        b = _offset(rng, shape, var_b, self.b_dist)
        grad = np.einsum("nsij,nj->nsi", A, data) + b
        return SliceDraws(grad=grad, hess=A, lap=np.trace(A, axis1=-2, axis2=-1))


@dataclass(frozen=True)
class SliceDraws:
    """Per-(point, slice) derivatives of the drawn slice functions.

    ``grad`` is ``(N, S, n)``; ``hess`` is ``(N, S, n, n)`` or ``None`` for
    linear slices (zero Hessian); ``lap`` is ``(N, S)`` or ``None``.
    """

    grad: np.ndarray
    hess: np.ndarray | None = None
    lap: np.ndarray | None = None

    @property
    def materialized(self) -> bool:
        return self.hess is not None

    @property
    def valid(self):
        return np.any(self.grad != 0, axis=-1)

    def hessian_action(self, w):
        if self.hess is None:
            return np.zeros(np.broadcast_shapes(self.grad.shape, np.shape(w)))
        return np.einsum("...ij,...j->...i", self.hess, w)

    def normalized(self) -> SliceDraws:
        """Derivatives of the unit direction field ``u = grad v / |grad v|``.

        ``hess`` becomes ``du/dx = (I - u u^T) H_v / |grad v|`` (not symmetric in
        general) and ``lap`` its trace, which is what integration by parts
        produces for the normalized objective.
        """
        norm = np.linalg.norm(self.grad, axis=-1)
        safe = np.where(norm > 0, norm, 1.0)
        u = self.grad / safe[..., None]
        if self.hess is None:
            return SliceDraws(grad=u)
        n = u.shape[-1]
        proj = np.eye(n) - u[..., :, None] * u[..., None, :]
        du = proj @ self.hess / safe[..., None, None]
        return SliceDraws(grad=u, hess=du, lap=np.trace(du, axis1=-2, axis2=-1))


def _rademacher(rng, shape):
    return rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0


def _offset(rng, shape, var_b, b_dist):
    if b_dist == "rademacher":
        return np.sqrt(var_b) * _rademacher(rng, shape)
    return np.sqrt(var_b) * rng.standard_normal(shape)


def sample_symmetric(rng, batch_shape, n: int, var_diag: float, var_off: float):
    """Random symmetric matrices with independent Gaussian upper-triangle entries."""
    G = rng.standard_normal(tuple(batch_shape) + (n, n))
    upper = np.triu(G, 1) * np.sqrt(var_off)
    diag = np.einsum("...ii->...i", G) * np.sqrt(var_diag)
    return upper + np.swapaxes(upper, -1, -2) + diag[..., :, None] * np.eye(n)


def sample_goe(rng, batch_shape, n: int, sigma_sq: float):
    """GOE matrices: diagonal variance ``sigma_sq``, off-diagonal ``sigma_sq / 2``."""
    return sample_symmetric(rng, batch_shape, n, sigma_sq, sigma_sq / 2.0)


def goe_action_sample(x, sigma_sq: float, seed=None, size=()):
    """Draw ``A x`` for GOE ``A`` without forming ``A``.

    ``A x = (sigma / sqrt 2)(|x| eps + z x)`` with independent standard normal
    ``eps`` and ``z``; the result has covariance
    ``(sigma^2 / 2)(|x|^2 I + x x^T)``. Output shape is ``size + x.shape``.
    """
    if sigma_sq < 0:
        raise ConfigError("sigma_sq must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    size = tuple(np.atleast_1d(size)) if size != () else ()
    eps = rng.standard_normal(size + x.shape)
    z = rng.standard_normal(size + x.shape[:-1] + (1,))
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.sqrt(sigma_sq / 2.0) * (norm * eps + z * x)


def quadratic_directions(data, variances, slices: int, rng, b_dist: str = "gaussian"):
    """Samples of ``A x + b`` for the quadratic slice family, shape ``(N, S, n)``.

    When ``var_diag >= 2 var_off`` the draw is implicit: a GOE action with
    ``sigma^2 = 2 var_off`` plus an independent diagonal term of variance
    ``(var_diag - 2 var_off) x_i^2``. Otherwise ``A`` is materialized.
    """
    var_diag, var_off, var_b = _check_variances(variances)
    data = _as_data(data)
    N, n = data.shape
    if var_diag >= 2.0 * var_off:
        ax = goe_action_sample(data, 2.0 * var_off, rng, size=(slices,))
        ax = np.swapaxes(ax, 0, 1)
        extra = var_diag - 2.0 * var_off
        if extra > 0:
            ax = ax + np.sqrt(extra) * data[:, None, :] * rng.standard_normal((N, slices, n))
    else:
        A = sample_symmetric(rng, (N, slices), n, var_diag, var_off)
        ax = np.einsum("nsij,nj->nsi", A, data)
    return ax + _offset(rng, (N, slices, n), var_b, b_dist)


def quadratic_slice_expectations(s, x, variances):
    """Closed-form slice averages for the quadratic family.

    Returns ``(L1, L2)`` per point: ``L1 = E[((Ax+b)^T s)^2]`` and
    ``L2 = E[s^T A (Ax+b)] + E[(Ax+b)^T s tr A]``.
    """
    var_diag, var_off, var_b = _check_variances(variances)
    s = np.asarray(s, dtype=float)
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    sx = np.sum(s * x, axis=-1)
    ss = np.sum(s * s, axis=-1)
    xx = np.sum(x * x, axis=-1)
    L1 = (var_diag - 2.0 * var_off) * np.sum(s**2 * x**2, axis=-1) + var_off * (xx * ss + sx**2) + var_b * ss
    L2 = (2.0 * var_diag + (n - 1) * var_off) * sx
    return L1, L2


# -- estimators ---------------------------------------------------------------


def _reduce(per_pair, valid):
    """Average valid slices per point, then points; stderr over per-point means."""
    counts = valid.sum(axis=1)
    keep = counts > 0
    if not np.any(keep):
        raise DegenerateSlice("every slice draw had a zero gradient")
    per_point = np.where(valid, per_pair, 0.0).sum(axis=1)[keep] / counts[keep]
    mean, stderr = mc_mean_stderr(per_point)
    return mean, stderr, int(keep.sum()), int(counts.sum()), int(valid.size - counts.sum()), per_point


def _eval(model: ScoreModel, data):
    return np.asarray(model.eval(data), dtype=float), np.asarray(model.jacobian(data), dtype=float)


def _projection_terms(g, s, J):
    gs = np.einsum("nsi,ni->ns", g, s)
    return gs, 0.5 * gs**2 + np.einsum("nsi,nij,nsj->ns", g, J, g)


def sm_loss(model: ScoreModel, data) -> LossResult:
    """``E[|s|^2 / 2 + tr(ds/dx)]``."""
    data = _as_data(data)
    s, J = _eval(model, data)
    per_point = 0.5 * np.sum(s**2, axis=-1) + np.trace(J, axis1=-2, axis2=-1)
    mean, stderr = mc_mean_stderr(per_point)
    return LossResult(mean, stderr, data.shape[0], per_point=per_point)


def _linear_draws(sampler: SliceSampler, data, slices_per_point, seed, draws):
    if draws is None:
        if not sampler.is_linear:
            raise ConfigError(f"this loss needs a linear slice sampler, got {sampler.kind!r}")
        draws = sampler.draw(data, slices_per_point, seed)
    return draws


def ssm_loss(model: ScoreModel, data, sampler: SliceSampler, slices_per_point: int = 1, seed=0,
             draws: SliceDraws | None = None) -> LossResult:
    """``E[(v^T s)^2 / 2 + v^T (ds/dx) v]`` over data and linear slices."""
    data = _as_data(data)
    draws = _linear_draws(sampler, data, slices_per_point, seed, draws)
    s, J = _eval(model, data)
    _, per_pair = _projection_terms(draws.grad, s, J)
    return LossResult(*_reduce(per_pair, draws.valid))


def ssm_vr_loss(model: ScoreModel, data, sampler: SliceSampler, slices_per_point: int = 1, seed=0,
                draws: SliceDraws | None = None) -> LossResult:
    """``E[|s|^2 / 2 + v^T (ds/dx) v]``: the quadratic part is integrated exactly."""
    data = _as_data(data)
    draws = _linear_draws(sampler, data, slices_per_point, seed, draws)
    s, J = _eval(model, data)
    g = draws.grad
    per_pair = 0.5 * np.sum(s**2, axis=-1)[:, None] + np.einsum("nsi,nij,nsj->ns", g, J, g)
    return LossResult(*_reduce(per_pair, draws.valid))


def gssm_per_pair(draws: SliceDraws, s, J):
    g = draws.grad
    gs, per_pair = _projection_terms(g, s, J)
    if draws.hess is not None:
        per_pair = per_pair + np.einsum("ni,nsij,nsj->ns", s, draws.hess, g)
        per_pair = per_pair + gs * draws.lap
    return per_pair


def gssm_loss(model: ScoreModel, data, sampler: SliceSampler, slices_per_point: int = 1,
              mode: str = "unnormalized", seed=0, draws: SliceDraws | None = None) -> LossResult:
    """Generalized sliced score matching.

    Per draw: ``(g^T s)^2 / 2 + g^T (ds/dx) g + s^T H_v g + (g^T s) lap v`` with
    ``g = grad v``. In normalized mode ``g`` is replaced by the unit direction
    and ``H_v``, ``lap v`` by the derivative of that direction field and its
    trace. Draws with ``g = 0`` are skipped and counted.
    """
    if mode not in ("normalized", "unnormalized"):
        raise ConfigError(f"unknown GSSM mode {mode!r}")
    data = _as_data(data)
    if draws is None:
        draws = sampler.draw(data, slices_per_point, seed)
    valid = draws.valid
    if mode == "normalized":
        draws = draws.normalized()
    s, J = _eval(model, data)
    return LossResult(*_reduce(gssm_per_pair(draws, s, J), valid))


def gssm_vr_quadratic_loss(model: ScoreModel, data, variances=None, hessian_slices: int = 1, seed=0,
                           b_dist: str = "gaussian", mode: str = "unnormalized",
                           directions=None) -> LossResult:
    """Variance-reduced GSSM for quadratic slices.

    ``L1 / 2 + L2`` is exact per point; only the Jacobian term
    ``(Ax+b)^T (ds/dx) (Ax+b)`` is sampled, using ``hessian_slices`` draws.
    """
    if mode != "unnormalized":
        raise ConfigError("the normalized GSSM objective has no variance-reduced form")
    data = _as_data(data)
    variances = _check_variances(variances or default_quadratic_variances(data.shape[1]))
    if directions is None:
        directions = quadratic_directions(data, variances, hessian_slices, np.random.default_rng(seed), b_dist)
    s, J = _eval(model, data)
    L1, L2 = quadratic_slice_expectations(s, data, variances)
    L3 = np.einsum("nsi,nij,nsj->ns", directions, J, directions)
    per_pair = (0.5 * L1 + L2)[:, None] + L3
    return LossResult(*_reduce(per_pair, np.ones(per_pair.shape, dtype=bool)))


# -- denoising ----------------------------------------------------------------


def weighted_dsm_loss(model: Callable, transform: DiffeoTransform, vp: VpSchedule, data0, times, seed=0,
                      weight: Callable | None = None, t_min: float = T_MIN) -> LossResult:
    """Jacobian-weighted denoising score matching for the VP SDE.

    Draws ``x ~ p_{0t}(. | x0)`` and averages
    ``weight(t) |J_{phi^{-1}}(phi(x))^T (model(x, t) - grad log p_{0t}(x | x0))|^2``.
    ``weight`` defaults to 1.
    """
    data0 = _as_data(data0)
    times = np.broadcast_to(np.asarray(times, dtype=float), data0.shape[:1]).copy()
    rng = np.random.default_rng(seed)
    x = vp_conditional_sample(vp, data0, times, rng, t_min)
    residual = np.asarray(model(x, times), dtype=float) - vp_conditional_score(x, data0, times, vp, t_min)
    Jinv = invert_jacobian(transform.jacobian(x, times))
    weighted = np.einsum("...ba,...b->...a", Jinv, residual)
    lam = np.ones_like(times) if weight is None else np.asarray(weight(times), dtype=float)
    per_point = lam * np.sum(weighted**2, axis=-1)
    mean, stderr = mc_mean_stderr(per_point)
    return LossResult(mean, stderr, data0.shape[0], per_point=per_point)
