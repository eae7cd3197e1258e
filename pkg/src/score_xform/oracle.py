"""Brute-force verification utilities.

Central finite differences, grid-based 1D score estimates, Monte Carlo
summaries and 1D Wasserstein distances. Everything here is deliberately
independent of the analytic code paths it is used to check.

All differentiation helpers are vectorized over leading batch axes: a point
array of shape ``(..., n)`` is perturbed one coordinate at a time and the
callable is evaluated on the whole batch at once.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptyData


@dataclass(frozen=True)
class FdConfig:
    """Central-difference settings; the step is scaled by ``max(1, ||x||)``."""

    step: float = 1e-4

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")

    def steps_for(self, x):
        x = np.asarray(x, dtype=float)
        norm = np.linalg.norm(x, axis=-1) if x.ndim else abs(x)
        return self.step * np.maximum(1.0, norm)


DEFAULT_FD = FdConfig()


def _checked(value):
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)):
        raise DomainError("non-finite function value inside the finite-difference stencil")
    return value


def fd_partials(f, x, cfg: FdConfig = DEFAULT_FD):
    """Partial derivatives of ``f`` appended as a trailing axis.

    ``f`` maps ``(..., n)`` to ``(..., *out)``; the result has shape
    ``(..., *out, n)`` with entry ``[..., j]`` equal to ``d f / d x_j``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    h = cfg.steps_for(x)
    cols = []
    for j in range(n):
        dx = np.zeros_like(x)
        dx[..., j] = h
        up = _checked(f(x + dx))
        down = _checked(f(x - dx))
        hj = np.reshape(h, h.shape + (1,) * (up.ndim - np.ndim(h)))
        cols.append((up - down) / (2.0 * hj))
    return np.stack(cols, axis=-1)


def fd_gradient(f, x, cfg: FdConfig = DEFAULT_FD):
    """Gradient of a scalar field, shape ``(..., n)``."""
    return fd_partials(f, x, cfg)


def fd_jacobian(f, x, cfg: FdConfig = DEFAULT_FD):
    """Jacobian ``J[..., i, j] = d f_i / d x_j`` of a vector field."""
    return fd_partials(f, x, cfg)


def fd_hessian(f, x, cfg: FdConfig = DEFAULT_FD):
    """Hessian of a scalar field by nested central differences."""
    return fd_partials(lambda z: fd_partials(f, z, cfg), x, cfg)


def fd_matrix_divergence(A, x, cfg: FdConfig = DEFAULT_FD):
    """Row-wise divergence ``[sum_j d A_ij / d x_j]_i`` of a matrix field."""
    partials = fd_partials(A, x, cfg)  # [..., i, j, k] = dA_ij/dx_k
    return np.einsum("...ijj->...i", partials)


def grid_density_score_1d(grid, p_values, x):
    """Estimate ``d/dx log p(x)`` from density values tabulated on a uniform grid.

    Central differences of ``log p`` at the nodes, then cubic interpolation of
    the node derivatives at ``x``. The grid must extend at least four nodes
    beyond ``x`` on both sides.
    """
    grid = np.asarray(grid, dtype=float)
    p_values = np.asarray(p_values, dtype=float)
    if grid.ndim != 1 or grid.shape != p_values.shape or grid.size < 9:
        raise DomainError("grid and p_values must be matching 1D arrays with at least 9 nodes")
    if np.any(p_values <= 0):
        raise DomainError("density values must be positive to take logs")
    i = int(np.searchsorted(grid, x))
    if i - 4 < 0 or i + 4 > grid.size:
        raise DomainError(f"x={x} lies within four nodes of the grid edge")
    dlog = np.gradient(np.log(p_values), grid)
    nodes = slice(i - 2, i + 2)
    coeffs = np.polyfit(grid[nodes] - x, dlog[nodes], 3)
    return float(coeffs[-1])


def mc_mean_stderr(values):
    """Sample mean and its standard error ``std / sqrt(n)``."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise EmptyData("cannot summarize an empty sample")
    if values.size == 1:
        return float(values[0]), float("inf")
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def _quantile_subsample(sorted_values, size):
    m = sorted_values.size
    idx = np.floor((np.arange(size) + 0.5) * m / size).astype(int)
    return sorted_values[idx]


def w1_distance_1d(a, b):
    """Wasserstein-1 distance between two 1D samples via the sorted coupling.

    Unequal sizes are handled by taking evenly spaced order statistics of the
    larger sample, which keeps the result deterministic.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptyData("W1 needs two nonempty samples")
    if a.size > b.size:
        a = _quantile_subsample(a, b.size)
    elif b.size > a.size:
        b = _quantile_subsample(b, a.size)
    return float(np.mean(np.abs(a - b)))
