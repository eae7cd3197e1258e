"""Smooth invertible transforms and the score change of variables.

Transforms are batched: points have shape ``(..., n)``, Jacobians
``(..., n, n)`` with ``J[i, j] = d phi_i / d x_j`` and Hessian tensors
``(..., n, n, n)`` with ``H[i, j, k] = d^2 phi_i / d x_j d x_k``. Every
method takes an optional time argument so static and time-dependent maps
share one interface.

Score fields are plain callables ``s(x, t) -> (..., n)``; :class:`ScoreField`
is a thin wrapper that records the dimension.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DegenerateSlice, DomainError, ScoreXformError, SingularJacobian
from .oracle import DEFAULT_FD, FdConfig, fd_jacobian, fd_partials

DOMAIN_MARGIN = 1e-9


@dataclass(frozen=True)
class ScoreField:
    dim: int
    fn: Callable

    def __call__(self, x, t=0.0):
        out = np.asarray(self.fn(x, t), dtype=float)
        if out.shape[-1:] != (self.dim,):
            raise ValueError(f"score returned shape {out.shape}, expected trailing dim {self.dim}")
        return out


def standard_normal_score(dim: int) -> ScoreField:
    return ScoreField(dim, lambda x, t=0.0: -np.asarray(x, dtype=float))


def _eye_like(x, n):
    return np.broadcast_to(np.eye(n), np.shape(x)[:-1] + (n, n)).copy()


def invert_jacobian(J):
    """Batched matrix inverse that reports singular Jacobians as such."""
    J = np.asarray(J, dtype=float)
    det = np.linalg.det(J)
    if np.any(det == 0) or not np.all(np.isfinite(det)):
        raise SingularJacobian("Jacobian is singular or non-finite")
    try:
        return np.linalg.inv(J)
    except np.linalg.LinAlgError as exc:
        raise SingularJacobian(str(exc)) from exc


class DiffeoTransform:
    """A time-dependent bijection ``y = phi(x, t)`` of ``R^n`` (or a subset)."""

    dim: int
    kind = "abstract"

    @property
    def dim_in(self) -> int:
        return self.dim

    @property
    def dim_out(self) -> int:
        return self.dim

    def forward(self, x, t=0.0):
        raise NotImplementedError

    def inverse(self, y, t=0.0):
        raise NotImplementedError

    def jacobian(self, x, t=0.0):
        raise NotImplementedError

    def hessian(self, x, t=0.0):
        raise NotImplementedError

    def time_partial(self, x, t=0.0):
        return np.zeros(np.shape(x))

    def check_domain(self, x):
        """Raise :class:`DomainError` if ``x`` is outside the map's domain."""

    def check_image(self, y):
        """Raise :class:`DomainError` if ``y`` is outside the map's image."""

    def log_abs_det_jacobian(self, x, t=0.0):
        _, logdet = np.linalg.slogdet(self.jacobian(x, t))
        return logdet

    def inverted(self) -> DiffeoTransform:
        return InverseTransform(self)

    def then(self, other: DiffeoTransform) -> DiffeoTransform:
        """The composition ``other o self``."""
        return ComposedTransform(self, other)

    def to_descriptor(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} has no JSON descriptor")

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


class IdentityTransform(DiffeoTransform):
    kind = "identity"

    def __init__(self, dim: int):
        self.dim = int(dim)

    def forward(self, x, t=0.0):
        return np.array(x, dtype=float)

    inverse = forward

    def jacobian(self, x, t=0.0):
        return _eye_like(x, self.dim)

    def hessian(self, x, t=0.0):
        return np.zeros(np.shape(x)[:-1] + (self.dim,) * 3)

    def log_abs_det_jacobian(self, x, t=0.0):
        return np.zeros(np.shape(x)[:-1])

    def inverted(self):
        return self

    def to_descriptor(self):
        return {"kind": self.kind, "params": {"dim": self.dim}}


class AffineTransform(DiffeoTransform):
    """``phi(x) = A x + b`` with a fixed invertible ``A``."""

    kind = "affine"

    def __init__(self, matrix, offset=None):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.dim = self.matrix.shape[0]
        if self.matrix.shape != (self.dim, self.dim):
            raise ConfigError("affine matrix must be square")
        self.offset = np.zeros(self.dim) if offset is None else np.asarray(offset, dtype=float)
        self._inv = invert_jacobian(self.matrix)

    def forward(self, x, t=0.0):
        return np.asarray(x, dtype=float) @ self.matrix.T + self.offset

    def inverse(self, y, t=0.0):
        return (np.asarray(y, dtype=float) - self.offset) @ self._inv.T

    def jacobian(self, x, t=0.0):
        return np.broadcast_to(self.matrix, np.shape(x)[:-1] + self.matrix.shape).copy()

    def hessian(self, x, t=0.0):
        return np.zeros(np.shape(x)[:-1] + (self.dim,) * 3)

    def inverted(self):
        return AffineTransform(self._inv, -self._inv @ self.offset)

    def to_descriptor(self):
        return {"kind": self.kind, "params": {"matrix": self.matrix.tolist(), "offset": self.offset.tolist()}}


class TimeScalingTransform(DiffeoTransform):
    """``phi(x, t) = exp(rate * t) x``, the simplest genuinely time-dependent map."""

    kind = "time_scaling"

    def __init__(self, dim: int, rate: float):
        self.dim = int(dim)
        self.rate = float(rate)

    def _scale(self, t):
        return np.exp(self.rate * np.asarray(t, dtype=float))[..., None]

    def forward(self, x, t=0.0):
        return self._scale(t) * np.asarray(x, dtype=float)

    def inverse(self, y, t=0.0):
        return np.asarray(y, dtype=float) / self._scale(t)

    def jacobian(self, x, t=0.0):
        return self._scale(t)[..., None] * _eye_like(x, self.dim)

    def hessian(self, x, t=0.0):
        return np.zeros(np.shape(x)[:-1] + (self.dim,) * 3)

    def time_partial(self, x, t=0.0):
        return self.rate * self.forward(x, t)

    def inverted(self):
        return TimeScalingTransform(self.dim, -self.rate)

    def to_descriptor(self):
        return {"kind": self.kind, "params": {"dim": self.dim, "rate": self.rate}}


class ElementwiseTransform(DiffeoTransform):
    """Applies the same strictly monotone scalar map to every coordinate."""

    def __init__(self, dim: int):
        self.dim = int(dim)

    def _f(self, x):
        raise NotImplementedError

    def _finv(self, y):
        raise NotImplementedError

    def _d1(self, x):
        raise NotImplementedError

    def _d2(self, x):
        raise NotImplementedError

    def forward(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        self.check_domain(x)
        return self._f(x)

    def inverse(self, y, t=0.0):
        y = np.asarray(y, dtype=float)
        self.check_image(y)
        return self._finv(y)

    def jacobian(self, x, t=0.0):
        d1 = self._d1(np.asarray(x, dtype=float))
        return d1[..., :, None] * np.eye(self.dim)

    def hessian(self, x, t=0.0):
        d2 = self._d2(np.asarray(x, dtype=float))
        H = np.zeros(d2.shape + (self.dim, self.dim))
        idx = np.arange(self.dim)
        H[..., idx, idx, idx] = d2
        return H

    def log_abs_det_jacobian(self, x, t=0.0):
        return np.sum(np.log(np.abs(self._d1(np.asarray(x, dtype=float)))), axis=-1)

    def to_descriptor(self):
        return {"kind": self.kind, "params": {"dim": self.dim}}


class ElementwiseExp(ElementwiseTransform):
    kind = "elementwise_exp"

    def _f(self, x):
        return np.exp(x)

    _d1 = _d2 = _f

    def _finv(self, y):
        return np.log(y)

    def check_image(self, y):
        if np.any(np.asarray(y) <= 0):
            raise DomainError("elementwise exp has image (0, inf)")

    def inverted(self):
        return ElementwiseLog(self.dim)


class ElementwiseLog(ElementwiseTransform):
    kind = "elementwise_log"

    def _f(self, x):
        return np.log(x)

    def _finv(self, y):
        return np.exp(y)

    def _d1(self, x):
        return 1.0 / x

    def _d2(self, x):
        return -1.0 / x**2

    def check_domain(self, x):
        if np.any(np.asarray(x) <= 0):
            raise DomainError("elementwise log needs positive inputs")

    def inverted(self):
        return ElementwiseExp(self.dim)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Sigmoid(ElementwiseTransform):
    kind = "sigmoid"

    def _f(self, x):
        return _sigmoid(x)

    def _finv(self, y):
        return np.log(y) - np.log1p(-y)

    def _d1(self, x):
        s = _sigmoid(x)
        return s * (1.0 - s)

    def _d2(self, x):
        s = _sigmoid(x)
        return s * (1.0 - s) * (1.0 - 2.0 * s)

    def check_image(self, y):
        y = np.asarray(y)
        if np.any(y <= DOMAIN_MARGIN) or np.any(y >= 1.0 - DOMAIN_MARGIN):
            raise DomainError("sigmoid image is the open unit interval")

    def inverted(self):
        return Logit(self.dim)


class Logit(ElementwiseTransform):
    kind = "logit"

    def _f(self, x):
        return np.log(x) - np.log1p(-x)

    def _finv(self, y):
        return _sigmoid(y)

    def _d1(self, x):
        return 1.0 / (x * (1.0 - x))

    def _d2(self, x):
        return (2.0 * x - 1.0) / (x * (1.0 - x)) ** 2

    def check_domain(self, x):
        x = np.asarray(x)
        if np.any(x <= DOMAIN_MARGIN) or np.any(x >= 1.0 - DOMAIN_MARGIN):
            raise DomainError("logit domain is the open unit interval")

    def inverted(self):
        return Sigmoid(self.dim)


class SoftClip(ElementwiseTransform):
    """``phi(x) = bound * tanh(x / bound)``: identity near zero, saturating at +-bound."""

    kind = "soft_clip"

    def __init__(self, dim: int, bound: float = 1.0):
        super().__init__(dim)
        if not bound > 0:
            raise ConfigError("soft_clip bound must be positive")
        self.bound = float(bound)

    def _f(self, x):
        return self.bound * np.tanh(x / self.bound)

    def _finv(self, y):
        return self.bound * np.arctanh(y / self.bound)

    def _d1(self, x):
        return 1.0 / np.cosh(x / self.bound) ** 2

    def _d2(self, x):
        u = x / self.bound
        return -2.0 * np.tanh(u) / (self.bound * np.cosh(u) ** 2)

    def check_image(self, y):
        if np.any(np.abs(np.asarray(y)) >= self.bound * (1.0 - DOMAIN_MARGIN)):
            raise DomainError(f"soft clip image is (-{self.bound}, {self.bound})")

    def inverted(self):
        return SoftClipInverse(self.dim, self.bound)

    def to_descriptor(self):
        return {"kind": self.kind, "params": {"dim": self.dim, "bound": self.bound}}


class SoftClipInverse(ElementwiseTransform):
    kind = "soft_clip_inverse"

    def __init__(self, dim: int, bound: float = 1.0):
        super().__init__(dim)
        self.bound = float(bound)

    def _f(self, x):
        return self.bound * np.arctanh(x / self.bound)

    def _finv(self, y):
        return self.bound * np.tanh(y / self.bound)

    def _d1(self, x):
        u = x / self.bound
        return 1.0 / (1.0 - u**2)

    def _d2(self, x):
        u = x / self.bound
        return 2.0 * u / (self.bound * (1.0 - u**2) ** 2)

    def check_domain(self, x):
        if np.any(np.abs(np.asarray(x)) >= self.bound * (1.0 - DOMAIN_MARGIN)):
            raise DomainError(f"soft clip inverse domain is (-{self.bound}, {self.bound})")

    def inverted(self):
        return SoftClip(self.dim, self.bound)

    def to_descriptor(self):
        return {"kind": self.kind, "params": {"dim": self.dim, "bound": self.bound}}


class AdditiveLogistic(DiffeoTransform):
    """Additive logistic map from ``R^k`` onto the open projected simplex.

    ``y_i = exp(x_i) / (1 + sum_j exp(x_j))``; the implicit remainder
    ``1 - sum_i y_i`` is the mass of the extra category.
    """

    kind = "additive_logistic"

    def __init__(self, k: int):
        self.dim = int(k)

    def forward(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        shift = np.maximum(0.0, x.max(axis=-1, keepdims=True))
        e = np.exp(x - shift)
        return e / (np.exp(-shift) + e.sum(axis=-1, keepdims=True))

    def remainder(self, y):
        return 1.0 - np.sum(y, axis=-1)

    def check_image(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.dim:
            raise DomainError(f"expected simplex points of length {self.dim}")
        if np.any(y <= DOMAIN_MARGIN) or np.any(self.remainder(y) <= DOMAIN_MARGIN):
            raise DomainError("point is not in the strict interior of the projected simplex")

    def inverse(self, y, t=0.0):
        y = np.asarray(y, dtype=float)
        self.check_image(y)
        return np.log(y) - np.log(self.remainder(y))[..., None]

    def jacobian(self, x, t=0.0):
        y = self.forward(x)
        return y[..., :, None] * np.eye(self.dim) - y[..., :, None] * y[..., None, :]

    def hessian(self, x, t=0.0):
        y = self.forward(x)
        eye = np.eye(self.dim)
        yi = y[..., :, None, None]
        yj = y[..., None, :, None]
        yk = y[..., None, None, :]
        d_ij = eye[:, :, None]
        d_ik = eye[:, None, :]
        d_jk = eye[None, :, :]
        return (
            yi * d_ij * d_ik
            - yi * yk * d_ij
            - yi * yj * d_ik
            - yi * yj * d_jk
            + 2.0 * yi * (yj * yk)
        )

    def log_abs_det_jacobian(self, x, t=0.0):
        y = self.forward(x)
        return np.sum(np.log(y), axis=-1) + np.log(self.remainder(y))

    def to_descriptor(self):
        return {"kind": self.kind, "params": {"k": self.dim}}


class InverseTransform(DiffeoTransform):
    """The inverse of an arbitrary transform, with derivatives obtained by implicit differentiation."""

    kind = "inverse"

    def __init__(self, base: DiffeoTransform):
        self.base = base
        self.dim = base.dim

    def forward(self, y, t=0.0):
        return self.base.inverse(y, t)

    def inverse(self, x, t=0.0):
        return self.base.forward(x, t)

    def check_domain(self, y):
        self.base.check_image(y)

    def check_image(self, x):
        self.base.check_domain(x)

    def jacobian(self, y, t=0.0):
        return invert_jacobian(self.base.jacobian(self.base.inverse(y, t), t))

    def hessian(self, y, t=0.0):
        x = self.base.inverse(y, t)
        Jinv = invert_jacobian(self.base.jacobian(x, t))
        H = self.base.hessian(x, t)
        return -np.einsum("...ai,...ijk,...jc,...kd->...acd", Jinv, H, Jinv, Jinv)

    def time_partial(self, y, t=0.0):
        x = self.base.inverse(y, t)
        Jinv = invert_jacobian(self.base.jacobian(x, t))
        return -np.einsum("...ij,...j->...i", Jinv, self.base.time_partial(x, t))

    def log_abs_det_jacobian(self, y, t=0.0):
        return -self.base.log_abs_det_jacobian(self.base.inverse(y, t), t)

    def inverted(self):
        return self.base

    def to_descriptor(self):
        return {"kind": self.kind, "params": {"transform": self.base.to_descriptor()}}


class ComposedTransform(DiffeoTransform):
    """``x -> second(first(x, t), t)``."""

    kind = "compose"

    def __init__(self, first: DiffeoTransform, second: DiffeoTransform):
        if first.dim != second.dim:
            raise ConfigError("composed transforms must share a dimension")
        self.first, self.second = first, second
        self.dim = first.dim

    def forward(self, x, t=0.0):
        return self.second.forward(self.first.forward(x, t), t)

    def inverse(self, y, t=0.0):
        return self.first.inverse(self.second.inverse(y, t), t)

    def check_domain(self, x):
        self.first.check_domain(x)

    def check_image(self, y):
        self.second.check_image(y)

    def jacobian(self, x, t=0.0):
        u = self.first.forward(x, t)
        return self.second.jacobian(u, t) @ self.first.jacobian(x, t)

    def hessian(self, x, t=0.0):
        u = self.first.forward(x, t)
        J1 = self.first.jacobian(x, t)
        return np.einsum("...iab,...aj,...bk->...ijk", self.second.hessian(u, t), J1, J1) + np.einsum(
            "...ia,...ajk->...ijk", self.second.jacobian(u, t), self.first.hessian(x, t)
        )

    def time_partial(self, x, t=0.0):
        u = self.first.forward(x, t)
        return self.second.time_partial(u, t) + np.einsum(
            "...ij,...j->...i", self.second.jacobian(u, t), self.first.time_partial(x, t)
        )

    def inverted(self):
        return ComposedTransform(self.second.inverted(), self.first.inverted())

    def to_descriptor(self):
        return {
            "kind": self.kind,
            "params": {"transforms": [self.first.to_descriptor(), self.second.to_descriptor()]},
        }


class FiniteDifferenceTransform(DiffeoTransform):
    """Wraps forward/inverse callables and differentiates them numerically.

    Jacobian, Hessian and time partial all come from central differences with
    the configured step, so anything built on top inherits O(step^2) error.
    """

    kind = "finite_difference"

    def __init__(self, dim: int, forward: Callable, inverse: Callable, cfg: FdConfig = DEFAULT_FD):
        self.dim = int(dim)
        self._forward, self._inverse = forward, inverse
        self.cfg = cfg

    def forward(self, x, t=0.0):
        return np.asarray(self._forward(np.asarray(x, dtype=float), t), dtype=float)

    def inverse(self, y, t=0.0):
        return np.asarray(self._inverse(np.asarray(y, dtype=float), t), dtype=float)

    def jacobian(self, x, t=0.0):
        return fd_jacobian(lambda z: self.forward(z, t), x, self.cfg)

    def hessian(self, x, t=0.0):
        H = fd_partials(lambda z: self.jacobian(z, t), x, self.cfg)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    def time_partial(self, x, t=0.0):
        h = self.cfg.step * max(1.0, abs(float(t)))
        return (self.forward(x, t + h) - self.forward(x, t - h)) / (2.0 * h)


def from_descriptor(desc: dict) -> DiffeoTransform:
    """Build a transform from ``{"kind": ..., "params": {...}}``."""
    try:
        kind = desc["kind"]
        params = dict(desc.get("params", {}))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed transform descriptor: {desc!r}") from exc
    builders = {
        "identity": lambda p: IdentityTransform(p["dim"]),
        "affine": lambda p: AffineTransform(p["matrix"], p.get("offset")),
        "time_scaling": lambda p: TimeScalingTransform(p["dim"], p["rate"]),
        "elementwise_exp": lambda p: ElementwiseExp(p["dim"]),
        "elementwise_log": lambda p: ElementwiseLog(p["dim"]),
        "sigmoid": lambda p: Sigmoid(p["dim"]),
        "logit": lambda p: Logit(p["dim"]),
        "soft_clip": lambda p: SoftClip(p["dim"], p.get("bound", 1.0)),
        "soft_clip_inverse": lambda p: SoftClipInverse(p["dim"], p.get("bound", 1.0)),
        "additive_logistic": lambda p: AdditiveLogistic(p["k"]),
        "inverse": lambda p: from_descriptor(p["transform"]).inverted(),
        "compose": lambda p: _compose_all([from_descriptor(d) for d in p["transforms"]]),
    }
    if kind not in builders:
        raise ConfigError(f"unknown transform kind {kind!r}")
    try:
        return builders[kind](params)
    except KeyError as exc:
        raise ConfigError(f"transform {kind!r} is missing parameter {exc}") from exc


def _compose_all(transforms: Sequence[DiffeoTransform]) -> DiffeoTransform:
    if not transforms:
        raise ConfigError("compose needs at least one transform")
    out = transforms[0]
    for t in transforms[1:]:
        out = ComposedTransform(out, t)
    return out


# -- score change of variables ----------------------------------------------


def grad_log_det(t: DiffeoTransform, x, time=0.0):
    """``grad_x log|det J_phi(x)|`` from the Jacobian and Hessian tensor.

    Uses Jacobi's formula: component k is ``tr(J^{-1} dJ/dx_k)``.
    """
    Jinv = invert_jacobian(t.jacobian(x, time))
    return np.einsum("...ba,...abk->...k", Jinv, t.hessian(x, time))


def _inverse_jacobian_and_divergence(t: DiffeoTransform, x, time):
    Jinv = invert_jacobian(t.jacobian(x, time))
    gld = np.einsum("...ba,...abk->...k", Jinv, t.hessian(x, time))
    div = -np.einsum("...ba,...b->...a", Jinv, gld)
    return Jinv, div


def jacobian_transpose_divergence(t: DiffeoTransform, x, time=0.0):
    """Row-wise x-divergence of ``J_{phi^-1}(phi(x))^T``.

    This equals ``grad_y log|det J_{phi^-1}(y)|`` at ``y = phi(x)`` and is
    computed through ``-J_phi^{-T} grad_x log|det J_phi(x)|``.
    """
    return _inverse_jacobian_and_divergence(t, x, time)[1]


def pushforward_score(t: DiffeoTransform, s_x, y, time=0.0):
    """Score of ``Y = phi(X)`` at ``y`` given the score of ``X``."""
    t.check_image(y)
    x = t.inverse(y, time)
    Jinv, div = _inverse_jacobian_and_divergence(t, x, time)
    return np.einsum("...ba,...b->...a", Jinv, s_x(x, time)) + div


def score_1d_forms(t: DiffeoTransform, s_x, y, time=0.0):
    """Both closed forms of the scalar score change of variables.

    Returns ``(via_inverse, via_forward)``: the first uses the first and second
    derivatives of the inverse map at ``y``, the second those of the forward
    map at ``x = phi^{-1}(y)``.
    """
    if t.dim != 1:
        raise ConfigError("scalar score transport needs a one-dimensional transform")
    yv = np.asarray(y, dtype=float)[..., None]
    t.check_image(yv)
    x = t.inverse(yv, time)
    sx = np.asarray(s_x(x, time), dtype=float)[..., 0]
    d1 = t.jacobian(x, time)[..., 0, 0]
    d2 = t.hessian(x, time)[..., 0, 0, 0]
    if np.any(d1 == 0):
        raise SingularJacobian("phi'(x) vanishes")
    inv = t.inverted()
    e1 = inv.jacobian(yv, time)[..., 0, 0]
    e2 = inv.hessian(yv, time)[..., 0, 0, 0]
    via_inverse = e1 * sx + e2 / e1
    via_forward = (d1 * sx - d2) / d1**2
    return via_inverse, via_forward


def pushforward_score_1d(t: DiffeoTransform, s_x, y, time=0.0, rtol=1e-10):
    """Scalar score of ``Y = phi(X)``; both closed forms must agree."""
    a, b = score_1d_forms(t, s_x, y, time)
    if not np.allclose(a, b, rtol=rtol, atol=rtol):
        raise ScoreXformError(f"scalar score forms disagree: {a} vs {b}")
    return b


@dataclass(frozen=True)
class ScalarSlice:
    """A scalar function ``v: R^n -> R`` with its first and second derivatives."""

    value: Callable
    gradient: Callable
    hessian: Callable
    laplacian: Callable | None = None

    def lap(self, x):
        if self.laplacian is not None:
            return self.laplacian(x)
        return np.trace(self.hessian(x), axis1=-2, axis2=-1)


def linear_slice(w) -> ScalarSlice:
    w = np.asarray(w, dtype=float)
    n = w.size
    return ScalarSlice(
        value=lambda x: np.asarray(x) @ w,
        gradient=lambda x: np.broadcast_to(w, np.shape(x)).copy(),
        hessian=lambda x: np.zeros(np.shape(x)[:-1] + (n, n)),
        laplacian=lambda x: np.zeros(np.shape(x)[:-1]),
    )


def quadratic_slice(A, b) -> ScalarSlice:
    """``v(x) = x^T A x / 2 + b^T x`` with symmetric ``A``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    return ScalarSlice(
        value=lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, A, x) + np.asarray(x) @ b,
        gradient=lambda x: np.asarray(x) @ A.T + b,
        hessian=lambda x: np.broadcast_to(A, np.shape(x)[:-1] + A.shape).copy(),
        laplacian=lambda x: np.full(np.shape(x)[:-1], np.trace(A)),
    )


def project_score(v: ScalarSlice, s_x, x, conditional_term: Callable, time=0.0):
    """Score of the scalar ``Y = v(X)`` at ``y = v(x)``.

    ``conditional_term(x, i)`` must return ``d/dy log p(x_{-i} | y)``; it cannot
    be recovered from the score of ``X`` alone and is supplied by the caller.
    """
    x = np.asarray(x, dtype=float)
    g = np.asarray(v.gradient(x), dtype=float)
    norm2 = float(g @ g)
    if norm2 == 0.0:
        raise DegenerateSlice("slice gradient vanishes at x")
    cond = sum(g[i] ** 2 * float(conditional_term(x, i)) for i in range(g.size))
    sx = np.asarray(s_x(x, time), dtype=float)
    return (float(g @ sx) - float(v.lap(x)) - cond) / norm2


def expand_score(components: Sequence[DiffeoTransform], s_x, x, time=0.0):
    """Per-component scores of ``Y = (v_1(X), ..., v_n(X))`` for scalar ``X``.

    Each component is a monotone scalar map treated on its own, so the result
    stacks ``n`` one-dimensional pushforwards.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = []
    for v in components:
        yi = v.forward(x, time)
        d1 = v.jacobian(x, time)[..., 0, 0]
        if np.any(d1 == 0):
            raise SingularJacobian("a component derivative vanishes")
        out.append(float(pushforward_score_1d(v, s_x, yi[0], time)))
    return np.array(out)
