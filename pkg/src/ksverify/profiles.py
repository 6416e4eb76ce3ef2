"""Named initial profiles, discretised as exact (or high-order) cell averages."""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .fields import ChemoField, DensityField, Grid

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)


def _cell_average(grid: Grid, fn) -> np.ndarray:
    """Tensor Gauss-Legendre cell averages of a pointwise function ``fn(*coords)``."""
    h = grid.h
    offs = 0.5 * h * _GL_NODES
    w = 0.5 * _GL_WEIGHTS
    x = grid.centers
    if grid.d == 1:
        return sum(wi * fn(x + oi) for oi, wi in zip(offs, w))
    X, Y = grid.mesh()
    out = np.zeros(grid.shape)
    for oi, wi in zip(offs, w):
        for oj, wj in zip(offs, w):
            out += wi * wj * fn(X + oi, Y + oj)
    return out


def _gauss_cdf_avg(grid: Grid, mean: float, sigma: float) -> np.ndarray:
    e = grid.edges
    c = 0.5 * (1.0 + erf((e - mean) / (np.sqrt(2.0) * sigma)))
    return np.diff(c) / grid.h


def gaussian(grid: Grid, mean=0.0, sigma=1.0, mass=1.0) -> DensityField:
    """Isotropic Gaussian, exact cell averages (separable erf differences)."""
    means = np.broadcast_to(np.atleast_1d(np.asarray(mean, dtype=float)), (grid.d,))
    parts = [_gauss_cdf_avg(grid, mu, sigma) for mu in means]
    vals = parts[0] if grid.d == 1 else np.outer(parts[0], parts[1])
    return _with_mass(grid, vals, mass)


def _with_mass(grid: Grid, vals: np.ndarray, mass: float) -> DensityField:
    total = vals.sum() * grid.cell_volume
    return DensityField(grid, vals * (mass / total), mass)


def bump(grid: Grid, center=0.0, radius=1.0, mass=1.0) -> DensityField:
    """Smooth compactly supported bump exp(-1/(1-r^2/R^2))."""
    c = np.broadcast_to(np.atleast_1d(np.asarray(center, dtype=float)), (grid.d,))

    def f(*xs):
        r2 = sum((x - ci) ** 2 for x, ci in zip(xs, c)) / radius**2
        out = np.zeros_like(r2)
        inside = r2 < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
        return out

    return _with_mass(grid, _cell_average(grid, f), mass)


def uniform_slab(grid: Grid, a=-0.5, b=0.5, mass=1.0) -> DensityField:
    """Uniform density on [a, b] (d=1) or [a, b]^d, exact overlap fractions."""
    e = grid.edges
    frac = np.clip(np.minimum(e[1:], b) - np.maximum(e[:-1], a), 0.0, None) / grid.h
    vals = frac if grid.d == 1 else np.outer(frac, frac)
    return _with_mass(grid, vals, mass)


def two_bumps(grid: Grid, sep=2.0, sigma=0.5, mass=1.0) -> DensityField:
    m = np.zeros(grid.d)
    m[0] = sep / 2
    a = gaussian(grid, -m, sigma, 0.5 * mass).values
    b = gaussian(grid, m, sigma, 0.5 * mass).values
    return _with_mass(grid, a + b, mass)


def gaussian_mixture(grid: Grid, means, sigmas, weights, mass=1.0) -> DensityField:
    vals = sum(w * gaussian(grid, mu, s, 1.0).values for mu, s, w in zip(means, sigmas, weights))
    return _with_mass(grid, vals, mass)


def barenblatt(grid: Grid, t: float, C: float = 1.0, m: float = 2.0) -> DensityField:
    """Barenblatt solution of d_t u = Lap(u^m) at time ``t`` (cell averages)."""
    d = grid.d
    a = d / (d * (m - 1.0) + 2.0)
    k = (m - 1.0) * a / (2.0 * m * d)

    if d == 1 and m == 2.0:
        # closed-form antiderivative of t^-a (C - k x^2 t^{-2a/d})_+
        R = np.sqrt(C / k) * t ** (a / d)
        e = np.clip(grid.edges, -R, R)
        F = t**-a * (C * e - k * e**3 / (3.0 * t ** (2 * a / d)))
        vals = np.diff(F) / grid.h
        return DensityField(grid, np.clip(vals, 0.0, None))

    def f(*xs):
        r2 = sum(x**2 for x in xs)
        base = np.clip(C - k * r2 * t ** (-2.0 * a / d), 0.0, None)
        return t**-a * base ** (1.0 / (m - 1.0))

    return DensityField(grid, np.clip(_cell_average(grid, f), 0.0, None))


def disc_indicator(grid: Grid, radius=1.0, mass=None) -> DensityField:
    def f(*xs):
        return (sum(x**2 for x in xs) <= radius**2).astype(float)

    vals = _cell_average(grid, f)
    if mass is None:
        return DensityField(grid, vals)
    return _with_mass(grid, vals, mass)


def kink_potential(grid: Grid, cap=1.0) -> ChemoField:
    """Lipschitz datum min(|x|, cap): log-Lipschitz but not W^{2,inf}."""
    r = np.sqrt(grid.radius_sq())
    return ChemoField(grid, np.minimum(r, cap))

