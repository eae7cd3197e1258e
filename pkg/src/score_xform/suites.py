"""Self-checks comparing analytic code paths against independent oracles.

Each suite returns a list of :class:`Check` records; the CLI turns them into
JSON reports.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .oracle import FdConfig, fd_gradient, mc_mean_stderr
from .scorematch import ScoreModel, SliceSampler, default_quadratic_variances, gssm_loss, gssm_vr_quadratic_loss
from .sde import (
    GaussianMixture,
    SdeSpec,
    VpSchedule,
    ito_transform,
    reverse_equivalence_check,
    reverse_ito_drift,
    vp_mixture_score_field,
    vp_sde,
)
from .simplexlab import simplex_reverse_coeffs
from .transforms import (
    AdditiveLogistic,
    AffineTransform,
    DiffeoTransform,
    ElementwiseExp,
    IdentityTransform,
    Sigmoid,
    SoftClip,
    grad_log_det,
    pushforward_score,
    standard_normal_score,
)

# Log densities on the simplex have third derivatives of order 1/y^3, so the
# default step is far too coarse there. These steps balance truncation against
# rounding for every bundled map (worst observed error ~1e-6).
PUSHFORWARD_FD = FdConfig(3e-8)
IDENTITY_FD = FdConfig(1e-7)


@dataclass(frozen=True)
class Check:
    name: str
    metric: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.metric) and self.metric <= self.tolerance)

    def to_dict(self) -> dict:
        return {**asdict(self), "status": "pass" if self.passed else "fail"}


def bundled_transforms(seed: int = 0) -> dict[str, DiffeoTransform]:
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)
    return {
        "affine": AffineTransform(A, rng.standard_normal(3)),
        "elementwise_exp": ElementwiseExp(3),
        "sigmoid": Sigmoid(3),
        "soft_clip": SoftClip(3, 2.0),
        "additive_logistic_k2": AdditiveLogistic(2),
        "additive_logistic_k12": AdditiveLogistic(12),
    }


def log_density_pushforward(t: DiffeoTransform, y):
    """``log p(phi^{-1}(y)) - log|det J_phi(phi^{-1}(y))|`` for standard-normal ``p`` (up to a constant)."""
    x = t.inverse(y)
    _, logdet = np.linalg.slogdet(t.jacobian(x))
    return -0.5 * np.sum(x**2, axis=-1) - logdet


def pushforward_oracle_error(t: DiffeoTransform, y, cfg: FdConfig = PUSHFORWARD_FD) -> float:
    s = standard_normal_score(t.dim_in)
    analytic = pushforward_score(t, s, y)
    oracle = fd_gradient(lambda z: log_density_pushforward(t, z), y, cfg)
    return float(np.max(np.abs(analytic - oracle)))


def grad_log_det_identity_error(t: DiffeoTransform, x, cfg: FdConfig = IDENTITY_FD) -> float:
    """Gap between ``grad_x log|det J_phi|`` and ``-J_phi^T grad_y log|det J_{phi^{-1}}|``, both by FD."""
    y = t.forward(x)
    inv = t.inverted()
    lhs = fd_gradient(lambda z: np.linalg.slogdet(t.jacobian(z))[1], x, cfg)
    rhs_y = fd_gradient(lambda z: np.linalg.slogdet(inv.jacobian(z))[1], y, cfg)
    rhs = -np.einsum("...ji,...j->...i", t.jacobian(x), rhs_y)
    return float(np.max(np.abs(lhs - rhs)))


def transforms_suite(seed: int = 7, n_points: int = 100) -> list[Check]:
    rng = np.random.default_rng(seed)
    checks = []
    for name, t in bundled_transforms(seed).items():
        x = rng.standard_normal((n_points, t.dim_in))
        y = t.forward(x)
        checks.append(Check(f"{name}/round_trip", float(np.max(np.abs(t.inverse(y) - x) / (1 + np.abs(x)))), 1e-10))
        checks.append(Check(f"{name}/pushforward_vs_fd", pushforward_oracle_error(t, y), 1e-5))
        s = standard_normal_score(t.dim_in)
        back = pushforward_score(t.inverted(), lambda yy, tt: pushforward_score(t, s, yy, tt), x)
        checks.append(Check(f"{name}/score_round_trip", float(np.max(np.abs(back - s(x)))), 1e-8))
        checks.append(Check(f"{name}/grad_log_det_identity", grad_log_det_identity_error(t, x), 1e-6))
        fd = fd_gradient(lambda z: t.log_abs_det_jacobian(z), x)
        checks.append(Check(f"{name}/grad_log_det_vs_fd", float(np.max(np.abs(grad_log_det(t, x) - fd))), 1e-5))
    return checks


def reference_mixture(dim: int, seed: int = 0, components: int = 3) -> GaussianMixture:
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.5, 1.5, components)
    return GaussianMixture(w / w.sum(), 1.5 * rng.standard_normal((components, dim)),
                           rng.uniform(0.3, 0.8, (components, dim)))


def reverse_ito_suite(seed: int = 0, n_points: int = 1000, k: int = 3) -> list[Check]:
    rng = np.random.default_rng(seed)
    vp = VpSchedule()
    sde = vp_sde(vp, k)
    score = vp_mixture_score_field(reference_mixture(k, seed), vp)
    al = AdditiveLogistic(k)
    y = al.forward(1.5 * rng.standard_normal((n_points, k)))
    t = rng.uniform(0.01, 1.0, n_points)
    checks = [Check("additive_logistic_vp_mixture", reverse_equivalence_check(al, sde, score, y, t), 1e-6)]

    ident = IdentityTransform(k)
    checks.append(Check("identity", reverse_equivalence_check(ident, sde, score, y, t), 0.0))

    A = rng.standard_normal((k, k)) + 3.0 * np.eye(k)
    lin = AffineTransform(A)
    ou = SdeSpec(k, lambda x, tt: -0.5 * x, lambda x, tt: np.broadcast_to(np.eye(k), np.shape(x) + (k,)),
                 lambda x, tt: np.zeros(np.shape(x)))
    x = rng.standard_normal((n_points, k))
    std = standard_normal_score(k)
    checks.append(Check("linear_ou", reverse_equivalence_check(lin, ou, std, lin.forward(x), 0.5), 1e-10))
    return checks


def gssm_vr_suite(seed: int = 0, slices: int = 100_000, n: int = 3) -> list[Check]:
    """Paired comparison of MC quadratic-slice GSSM against its VR form at the true score."""
    rng = np.random.default_rng(seed)
    per_point = 100
    n_points = max(1, slices // per_point)
    data = rng.standard_normal((n_points, n))
    model = ScoreModel.affine(-np.eye(n))
    variances = default_quadratic_variances(n)
    mc = gssm_loss(model, data, SliceSampler.quadratic(n, variances), per_point, seed=seed + 1)
    vr = gssm_vr_quadratic_loss(model, data, variances, per_point, seed=seed + 2)
    diff_mean, diff_se = mc_mean_stderr(mc.per_point - vr.per_point)
    return [Check("mc_minus_vr_in_stderr_units", abs(diff_mean) / diff_se, 3.0)]


def simplex_suite(seed: int = 0, n_points: int = 1000, k: int = 12) -> list[Check]:
    rng = np.random.default_rng(seed)
    vp = VpSchedule()
    al = AdditiveLogistic(k)
    sde = vp_sde(vp, k)
    score = vp_mixture_score_field(reference_mixture(k, seed), vp)
    y = al.forward(2.0 * rng.standard_normal((n_points, k)))
    t = rng.uniform(1e-3, 1.0, n_points)
    drift, G = simplex_reverse_coeffs(vp, score, y, t)
    generic_drift = reverse_ito_drift(al, sde, score, y, t)
    generic_G = ito_transform(sde, al).diffusion(y, t)
    g = np.sqrt(vp.beta(t))[:, None]
    row_sum = g * y * (1.0 - y.sum(axis=-1, keepdims=True))
    return [
        Check("drift_closed_vs_generic", float(np.max(np.abs(drift - generic_drift))), 1e-8),
        Check("diffusion_closed_vs_generic", float(np.max(np.abs(G - generic_G))), 1e-8),
        Check("diffusion_row_sums", float(np.max(np.abs(G.sum(axis=-1) - row_sum))), 1e-12),
    ]


SUITES = {
    "transforms": transforms_suite,
    "reverse-ito": reverse_ito_suite,
    "gssm-vr": gssm_vr_suite,
    "simplex": simplex_suite,
}
