"""Quadratic-cost optimal transport on grid densities.

Densities are piecewise constant on cells, so in 1D the cumulative mass is
piecewise linear and its pseudo-inverse (the quantile function) is
piecewise linear too. Every 1D quantity below is computed by integrating
products of such functions exactly on the merged breakpoint set. Masses
are carried explicitly: W2^2 = int |x - T(x)|^2 rho_0 for densities of
total mass m, not probability measures.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .fields import ChemoField, DensityField, Grid, l2_norm, linf_norm, mass
from .laws import DiffusionLaw

log = logging.getLogger(__name__)

DISCRETE_CAP = 4096
COARSE_SIDE = 64
MASS_RTOL = 1e-10

_GL_NODES = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])


def _ot():
    """Import POT lazily, without probing the heavy optional backends."""
    for name in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    import ot

    return ot


def _check_1d(*fields):
    for f in fields:
        if f.grid.d != 1:
            raise ValueError("this operation is one-dimensional")


def _common_mass(rho0: DensityField, rho1: DensityField) -> float:
    m0, m1 = mass(rho0), mass(rho1)
    if abs(m0 - m1) > MASS_RTOL * max(m0, m1, 1e-300):
        raise ValueError(f"mass mismatch: {m0:.15g} vs {m1:.15g}")
    if m0 <= 0:
        raise ValueError("zero-mass density")
    return 0.5 * (m0 + m1)


class Quantile:
    """Pseudo-inverse of the cumulative mass of a 1D cell density, on [0, total]."""

    def __init__(self, rho: DensityField, total: float | None = None):
        g = rho.grid
        cell = rho.values * g.cell_volume
        cum = np.concatenate([[0.0], np.cumsum(cell)])
        if total is not None:
            scale = total / cum[-1]
            cum *= scale
            cell = cell * scale
        self.grid = g
        self.cum = cum
        self.cell = cell
        self.total = float(cum[-1])

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        j = np.clip(np.searchsorted(self.cum, u, side="right") - 1, 0, self.grid.n - 1)
        # skip empty cells that share the same cumulative value
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(self.cell[j] > 0, (u - self.cum[j]) / self.cell[j], 0.0)
        return self.grid.edges[j] + np.clip(frac, 0.0, 1.0) * self.grid.h

    def cdf(self, x) -> np.ndarray:
        """Cumulative mass up to x (piecewise linear in x)."""
        return np.interp(x, self.grid.edges, self.cum)

    def breakpoints(self) -> np.ndarray:
        return self.cum[np.concatenate([[True], self.cell > 0])]


def _merged_intervals(*qs: Quantile) -> tuple[np.ndarray, np.ndarray]:
    total = qs[0].total
    u = np.unique(np.concatenate([np.clip(q.breakpoints(), 0.0, total) for q in qs] + [[0.0, total]]))
    lo, hi = u[:-1], u[1:]
    keep = hi > lo
    return lo[keep], hi[keep]


def _gauss_points(lo, hi):
    """Two-point Gauss nodes per interval (exact for quadratics) and their weights."""
    w = hi - lo
    pts = lo[:, None] + w[:, None] * _GL_NODES[None, :]
    return pts.ravel(), np.repeat(0.5 * w, 2)


@dataclass
class TransportPlan1D:
    """Monotone rearrangement from ``source`` to ``target`` (1D)."""

    source: DensityField
    target: DensityField

    def __post_init__(self):
        _check_1d(self.source, self.target)
        self.total = _common_mass(self.source, self.target)
        self.q0 = Quantile(self.source, self.total)
        self.q1 = Quantile(self.target, self.total)
        self.u_lo, self.u_hi = _merged_intervals(self.q0, self.q1)

    def sampled_quantiles(self, count: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Both quantile functions on a uniform midpoint u-grid in (0, 1)."""
        u = (np.arange(count) + 0.5) / count
        return u, self.q0(u * self.total), self.q1(u * self.total)

    def map(self, x) -> np.ndarray:
        """T = Q_target o F_source."""
        return self.q1(self.q0.cdf(x))

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        return _gauss_points(self.u_lo, self.u_hi)

    def w2_squared(self) -> float:
        u, w = self.quadrature()
        return float(np.sum(w * (self.q0(u) - self.q1(u)) ** 2))


def w2_1d(rho0: DensityField, rho1: DensityField, quantile_count: int | None = None) -> float:
    """W2 between two 1D densities of equal mass.

    By default the quantile integral is evaluated exactly on the merged
    breakpoints. With ``quantile_count`` it uses midpoint quadrature on a
    uniform u-grid of that many points instead.
    """
    plan = TransportPlan1D(rho0, rho1)
    if quantile_count is None:
        return math.sqrt(max(plan.w2_squared(), 0.0))
    u, a, b = plan.sampled_quantiles(int(quantile_count))
    return math.sqrt(plan.total * float(np.mean((a - b) ** 2)))


def w2_atoms_1d(x, a, y, b) -> float:
    """Exact W2 between two weighted point clouds on the line (monotone coupling)."""
    x, a, y, b = (np.asarray(t, dtype=float).ravel() for t in (x, a, y, b))
    if abs(a.sum() - b.sum()) > MASS_RTOL * max(a.sum(), b.sum()):
        raise ValueError("weight totals differ")
    ix, iy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    x, a, y, b = x[ix], a[ix], y[iy], b[iy]
    ca, cb = np.cumsum(a), np.cumsum(b) * (a.sum() / b.sum())
    cuts = np.unique(np.concatenate([[0.0], ca, cb]))
    cuts = cuts[cuts <= ca[-1]]
    mid = 0.5 * (cuts[:-1] + cuts[1:])
    wts = np.diff(cuts)
    xi = x[np.minimum(np.searchsorted(ca, mid), x.size - 1)]
    yi = y[np.minimum(np.searchsorted(cb, mid), y.size - 1)]
    return math.sqrt(float(np.sum(wts * (xi - yi) ** 2)))


def w2_discrete(x, a, y, b) -> float:
    """Exact W2 between weighted point clouds via a network-simplex solve.

    ``x``: (N,) or (N, d) support points with weights ``a``; likewise ``y``, ``b``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    x = x.reshape(len(x), -1)
    y = y.reshape(len(y), -1)
    if len(x) != a.size or len(y) != b.size:
        raise ValueError("supports and weights have different lengths")
    if max(len(x), len(y)) > DISCRETE_CAP:
        raise ValueError(f"support size {max(len(x), len(y))} exceeds {DISCRETE_CAP}; "
                         "coarsen the densities first (see coarsen)")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("negative weights")
    ta, tb = a.sum(), b.sum()
    if abs(ta - tb) > MASS_RTOL * max(ta, tb):
        raise ValueError(f"weight totals differ: {ta:.15g} vs {tb:.15g}")
    ot = _ot()
    # the solver works with probability vectors; mass is restored afterwards
    pa, pb = a / ta, b / tb
    cost = ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1)
    plan = ot.emd(pa, pb, cost, numItermax=10_000_000)
    return math.sqrt(max(float(np.sum(plan * cost)) * ta, 0.0))


def coarsen(rho: DensityField, max_side: int = COARSE_SIDE) -> tuple[np.ndarray, np.ndarray]:
    """Aggregate cell masses into blocks; returns (block centres, block masses) with empty blocks dropped."""
    g = rho.grid
    f = 1
    while g.n // f > max_side or g.n % f:
        f += 1
        if f > g.n:
            raise ValueError(f"cannot coarsen n={g.n} to at most {max_side} per side")
    side = g.n // f
    cells = rho.values * g.cell_volume
    blocks = cells.reshape(*([side, f] * g.d)).sum(axis=tuple(range(1, 2 * g.d, 2)))
    centres_1d = -g.L + (np.arange(side) + 0.5) * f * g.h
    if g.d == 1:
        pts = centres_1d[:, None]
    else:
        X, Y = np.meshgrid(centres_1d, centres_1d, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    w = blocks.ravel()
    keep = w > 0
    return pts[keep], w[keep]


def w2(rho0: DensityField, rho1: DensityField) -> float:
    """Exact quantile W2 in 1D, coarsened network-simplex W2 in 2D."""
    if rho0.grid.d == 1:
        return w2_1d(rho0, rho1)
    _common_mass(rho0, rho1)
    x, a = coarsen(rho0)
    y, b = coarsen(rho1)
    return w2_discrete(x, a, y, b)


def displacement_interpolate(rho0: DensityField, rho1: DensityField, s: float) -> DensityField:
    """Push rho0 along (1-s) id + s T and average the result back onto the grid."""
    if not 0.0 <= s <= 1.0:
        raise ValueError("s must lie in [0, 1]")
    plan = TransportPlan1D(rho0, rho1)
    g = rho0.grid
    lo, hi = plan.u_lo, plan.u_hi
    # both quantiles are affine on each interval, so evaluate at interior
    # nodes and extrapolate to the endpoints (this resolves jump sides)
    u_a, u_b = lo + 0.25 * (hi - lo), lo + 0.75 * (hi - lo)
    x_a = (1 - s) * plan.q0(u_a) + s * plan.q1(u_a)
    x_b = (1 - s) * plan.q0(u_b) + s * plan.q1(u_b)
    slope = (x_b - x_a) / (u_b - u_a)
    left = x_a - slope * (u_a - lo)
    right = x_b + slope * (hi - u_b)
    xs = np.maximum.accumulate(np.column_stack([left, right]).ravel())
    us = np.column_stack([lo, hi]).ravel()
    cum = np.interp(g.edges, xs, us, left=0.0, right=plan.total)
    cells = np.maximum(np.diff(cum), 0.0)
    vals = cells / g.h
    total = cells.sum()
    return DensityField(g, vals * (plan.total / total), plan.total)


def h_minus1_norm(f, alpha: float = 0.0, grid: Grid | None = None) -> float:
    """Periodic negative Sobolev norm (sum |f_k|^2 / (|k|^2 + alpha))^(1/2).

    With alpha = 0 the zero mode is excluded and ``f`` must have zero mean.
    """
    if isinstance(f, (DensityField, ChemoField)):
        grid, arr = f.grid, f.values
    else:
        if grid is None:
            raise ValueError("a grid is required for raw arrays")
        arr = np.asarray(f, dtype=float)
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    c = np.fft.fftn(arr) / arr.size
    sym = grid.k_squared() + alpha
    if alpha == 0:
        scale = float(np.abs(arr).sum() * grid.cell_volume)
        if abs(c.flat[0].real) * grid.volume > 1e-9 * max(scale, 1e-300):
            raise ValueError("homogeneous H^-1 norm needs a zero-mean function")
        c.flat[0] = 0.0
        sym = sym.copy()
        sym.flat[0] = 1.0
    return math.sqrt(grid.volume * float(np.sum(np.abs(c) ** 2 / sym)))


def h1_alpha_norm(v, alpha: float = 0.0, grid: Grid | None = None) -> float:
    """(||grad v||^2 + alpha ||v||^2)^(1/2), spectral."""
    if isinstance(v, (DensityField, ChemoField)):
        grid, arr = v.grid, v.values
    else:
        arr = np.asarray(v, dtype=float)
    c = np.fft.fftn(arr) / arr.size
    return math.sqrt(grid.volume * float(np.sum(np.abs(c) ** 2 * (grid.k_squared() + alpha))))


def w2_h_minus1_bound(rho1: DensityField, rho2: DensityField) -> tuple[float, float]:
    """(||rho1 - rho2||_{H^-1}, max(||rho1||_inf, ||rho2||_inf)^(1/2) W2); the first should not exceed the second."""
    lhs = h_minus1_norm(rho1.values - rho2.values, 0.0, rho1.grid)
    rhs = math.sqrt(max(linf_norm(rho1), linf_norm(rho2))) * w2(rho1, rho2)
    return lhs, rhs


@dataclass(frozen=True)
class ProductState:
    """A point of the product space: density plus (for eps > 0) the chemoattractant."""

    rho: DensityField
    v: ChemoField | None = None

    def __post_init__(self):
        if self.v is not None and self.v.grid.shape != self.rho.grid.shape:
            raise ValueError("rho and v live on different grids")


def metric_D(z1: ProductState, z2: ProductState, eps: float) -> float:
    """(W2^2 + eps ||v1 - v2||^2)^(1/2); v is ignored when eps = 0."""
    d2 = w2(z1.rho, z2.rho) ** 2
    if eps > 0:
        if z1.v is None or z2.v is None:
            raise ValueError("eps > 0 needs both chemoattractant fields")
        d2 += eps * l2_norm(z1.v.values - z2.v.values, z1.rho.grid) ** 2
    return math.sqrt(d2)


def _interp_centres(grid: Grid, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.interp(x, grid.centers, values)


def w2_derivative(rho_t: DensityField, xi, rho_bar: DensityField) -> float:
    """int <xi, x - T(x)> rho_t, T the optimal map from rho_t to rho_bar (1D).

    ``xi`` is the velocity at cell centres (array or 1-element list).
    """
    xi = np.asarray(xi[0] if isinstance(xi, (list, tuple)) else xi, dtype=float)
    plan = TransportPlan1D(rho_t, rho_bar)
    u, w = plan.quadrature()
    x = plan.q0(u)
    return float(np.sum(w * _interp_centres(rho_t.grid, xi, x) * (x - plan.q1(u))))


def _centred_gradient_zero_outside(f: np.ndarray, h: float) -> np.ndarray:
    p = np.pad(f, 1)
    return (p[2:] - p[:-2]) / (2 * h)


def above_tangent_check(rho: DensityField, rho_bar: DensityField, law: DiffusionLaw) -> float:
    """[int Psi(rho_bar) - int Psi(rho)] - int <grad pressure(rho), T - id>, T: rho -> rho_bar.

    Displacement convexity of the internal energy makes this nonnegative.
    """
    plan = TransportPlan1D(rho, rho_bar)
    g = rho.grid
    dv = g.cell_volume
    energy_gap = float((np.sum(law.Psi(rho_bar.values)) - np.sum(law.Psi(rho.values))) * dv)
    grad_p = _centred_gradient_zero_outside(law.pressure(rho.values), g.h)
    disp = plan.map(g.centers) - g.centers
    tangent = float(np.sum(grad_p * disp) * dv)
    return energy_gap - tangent
