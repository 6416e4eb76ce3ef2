"""Chemoattractant solvers and the log-Lipschitz modulus machinery.

Elliptic and parabolic solves are spectral on the periodic box; the
free-space variant convolves with the whole-space kernel on a grid
zero-padded to twice its size per axis.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import k0

from .fields import ChemoField, DensityField, Grid

log = logging.getLogger(__name__)

PHI_BREAK = math.exp(-1.0 - math.sqrt(2.0))
_PHI_SHIFT = 2.0 * (1.0 + math.sqrt(2.0)) * PHI_BREAK
EULER_GAMMA = 0.5772156649015329
# mean of log|x| over the unit square centred at the origin
MEAN_LOG_UNIT_SQUARE = -0.5 * math.log(2.0) - 1.5 + math.pi / 4.0


@dataclass(frozen=True)
class KernelSpec:
    alpha: float
    d: int

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2")


def bessel_kernel_value(spec: KernelSpec, r):
    """Kernel B_{alpha,d}(r).

    For d=1, alpha=0 this returns |r|, the convention used in the energy
    discussion of the source model; solvers use the Green's function -|r|/2
    of -d^2/dx^2 instead (see :func:`green_function`).
    """
    r = np.abs(np.asarray(r, dtype=float))
    a, d = spec.alpha, spec.d
    if d == 1:
        if a == 0:
            return r
        s = math.sqrt(a)
        return np.exp(-s * r) / (2.0 * s)
    if np.any(r == 0):
        raise ValueError("2D kernel is singular at r = 0")
    if a == 0:
        return -np.log(r) / (2.0 * math.pi)
    return k0(math.sqrt(a) * r) / (2.0 * math.pi)


def green_function(spec: KernelSpec, r):
    """Fundamental solution of -Lap + alpha (pointwise, r > 0 in 2D)."""
    if spec.d == 1 and spec.alpha == 0:
        return -0.5 * np.abs(np.asarray(r, dtype=float))
    return bessel_kernel_value(spec, r)


def _origin_cell_average(spec: KernelSpec, h: float) -> float:
    """Average of the 2D kernel over the cell centred at its singularity."""
    mean_log = math.log(h) + MEAN_LOG_UNIT_SQUARE
    if spec.alpha == 0:
        return -mean_log / (2.0 * math.pi)
    # K0(z) = -log(z/2) - gamma + O(z^2 log z)
    return -(mean_log + math.log(math.sqrt(spec.alpha) / 2.0) + EULER_GAMMA) / (2.0 * math.pi)


@lru_cache(maxsize=32)
def _padded_kernel_hat(grid: Grid, alpha: float) -> np.ndarray:
    spec = KernelSpec(alpha, grid.d)
    m = 2 * grid.n
    off = np.fft.fftfreq(m, d=1.0 / m) * grid.h  # signed offsets, circular layout
    if grid.d == 1:
        K = green_function(spec, off)
    else:
        R = np.hypot(off[:, None], off[None, :])
        R[0, 0] = 1.0
        K = green_function(spec, R)
        K[0, 0] = _origin_cell_average(spec, grid.h)
    return np.fft.rfftn(K) * grid.cell_volume


def solve_elliptic(rho: DensityField, alpha: float) -> ChemoField:
    """Solve -Lap v + alpha v = rho.

    Periodic grids use the exact spectral symbol; with alpha = 0 the mean of
    rho is removed first (gauge choice, v has zero mean).
    """
    g = rho.grid
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if g.bc == "free-space-padded":
        m = 2 * g.n
        khat = _padded_kernel_hat(g, float(alpha))
        axes = tuple(range(g.d))
        full = np.fft.irfftn(np.fft.rfftn(rho.values, s=(m,) * g.d, axes=axes) * khat, s=(m,) * g.d, axes=axes)
        return ChemoField(g, full[tuple(slice(0, g.n) for _ in range(g.d))])
    rhat = np.fft.fftn(rho.values)
    sym = g.k_squared() + alpha
    if alpha == 0:
        log.debug("periodic alpha=0 solve: removed mean %.6e", rhat.flat[0].real / rho.values.size)
        rhat.flat[0] = 0.0
        sym = sym.copy()
        sym.flat[0] = 1.0
    return ChemoField(g, np.fft.ifftn(rhat / sym).real)


def spectral_laplacian(v: np.ndarray, grid: Grid) -> np.ndarray:
    return np.fft.ifftn(-grid.k_squared() * np.fft.fftn(v)).real


def spectral_gradient(v: np.ndarray, grid: Grid) -> list[np.ndarray]:
    vh = np.fft.fftn(v)
    out = []
    for k in grid.wavenumbers():
        kk = np.broadcast_to(k, grid.shape).copy()
        if grid.n % 2 == 0:
            # Nyquist mode carries no odd-derivative information
            idx = [slice(None)] * grid.d
            ax = len(out)
            idx[ax] = grid.n // 2
            kk[tuple(idx)] = 0.0
        out.append(np.fft.ifftn(1j * kk * vh).real)
    return out


def step_parabolic(v: ChemoField, rho: DensityField, eps: float, alpha: float, dt: float) -> ChemoField:
    """One exponential-integrator step of eps v_t = Lap v + rho - alpha v (rho frozen)."""
    if eps <= 0 or dt <= 0:
        raise ValueError("step_parabolic needs eps > 0 and dt > 0")
    g = v.grid
    lam = g.k_squared() + alpha
    decay = np.exp(-lam * dt / eps)
    # (1 - e^{-lam dt/eps}) / lam, with the lam -> 0 limit dt/eps
    with np.errstate(invalid="ignore", divide="ignore"):
        gain = np.where(lam > 0, -np.expm1(-lam * dt / eps) / np.where(lam > 0, lam, 1.0), dt / eps)
    vh = np.fft.fftn(v.values) * decay + np.fft.fftn(rho.values) * gain
    return ChemoField(g, np.fft.ifftn(vh).real)


def gradient(v) -> list[np.ndarray]:
    """Centred second-order differences per axis.

    Periodic grids wrap; padded grids use second-order one-sided stencils on
    the boundary cells.
    """
    g = v.grid
    f = v.values
    h = g.h
    out = []
    for ax in range(g.d):
        if g.bc == "periodic":
            out.append((np.roll(f, -1, ax) - np.roll(f, 1, ax)) / (2 * h))
            continue
        df = np.empty_like(f)
        sl = lambda a, b: tuple(slice(a, b) if i == ax else slice(None) for i in range(g.d))
        df[sl(1, -1)] = (f[sl(2, None)] - f[sl(None, -2)]) / (2 * h)
        df[sl(0, 1)] = (-3 * f[sl(0, 1)] + 4 * f[sl(1, 2)] - f[sl(2, 3)]) / (2 * h)
        df[sl(-1, None)] = (3 * f[sl(-1, None)] - 4 * f[sl(-2, -1)] + f[sl(-3, -2)]) / (2 * h)
        out.append(df)
    return out


def phi(x):
    """Concave modulus: x log^2 x below e^{-1-sqrt 2}, affine above."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("phi is defined on [0, inf)")
    with np.errstate(divide="ignore", invalid="ignore"):
        small = x * np.log(x) ** 2
    small = np.where(x == 0, 0.0, small)
    out = np.where(x <= PHI_BREAK, small, x + _PHI_SHIFT)
    return out if out.ndim else float(out)


# -- sampled log-Lipschitz constant -------------------------------------------

def _van_der_corput(count: int, base: int = 2) -> np.ndarray:
    out = np.empty(count)
    for i in range(count):
        q, denom, n = 0.0, 1.0, i + 1
        while n:
            n, rem = divmod(n, base)
            denom *= base
            q += rem / denom
        out[i] = q
    return out


@lru_cache(maxsize=64)
def loglip_pairs(grid: Grid, pair_budget: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic pair sample: all nearest neighbours plus a stratified set over scales.

    Returns ``(idx_a, idx_b, dist)`` with flat cell indices. The far-pair set
    for a larger budget contains the one for a smaller budget, so the sampled
    supremum is monotone in ``pair_budget``.
    """
    n, d = grid.n, grid.d
    shape = grid.shape
    a_list, b_list, dist_list = [], [], []
    idx = np.arange(n**d).reshape(shape)
    wrap = grid.bc == "periodic"
    for ax in range(d):
        nb = np.roll(idx, -1, ax)
        a, b = idx, nb
        if not wrap:
            sl = tuple(slice(0, n - 1) if i == ax else slice(None) for i in range(d))
            a, b = a[sl], b[sl]
        a_list.append(a.ravel())
        b_list.append(b.ravel())
        dist_list.append(np.full(a.size, grid.h))

    offsets = np.unique(np.round(np.geomspace(2, n - 1, max(4, int(2 * math.log2(n))))).astype(int))
    dirs = [np.eye(d, dtype=int)[i] for i in range(d)]
    if d == 2:
        dirs.append(np.array([1, 1]))
    n_far = max(0, pair_budget - sum(a.size for a in a_list))
    per = max(1, n_far // (len(offsets) * len(dirs)))
    u = _van_der_corput(per, 2)
    u2 = _van_der_corput(per, 3) if d == 2 else None
    for o in offsets:
        for e in dirs:
            span = n - o * e  # valid starts per axis
            if np.any(span <= 0):
                continue
            cols = [np.floor(u * span[0]).astype(int)]
            if d == 2:
                cols.append(np.floor(u2 * span[1]).astype(int))
            st = np.stack(cols, axis=1)
            # drop repeats but keep first-occurrence order (prefix-nested sets)
            st = st[np.sort(np.unique(st, axis=0, return_index=True)[1])]
            end = st + o * e
            a_list.append(np.ravel_multi_index(tuple(st.T), shape))
            b_list.append(np.ravel_multi_index(tuple(end.T), shape))
            dist_list.append(np.full(len(st), o * grid.h * float(np.linalg.norm(e))))
    return np.concatenate(a_list), np.concatenate(b_list), np.concatenate(dist_list)


def loglip_ratios(v: ChemoField, pair_budget: int = 20000) -> np.ndarray:
    """|grad v(x) - grad v(y)| / sqrt(phi(|x-y|^2)) over the deterministic pair sample."""
    a, b, dist = loglip_pairs(v.grid, int(pair_budget))
    grads = [gi.ravel() for gi in gradient(v)]
    diff = np.sqrt(sum((gi[a] - gi[b]) ** 2 for gi in grads))
    return diff / np.sqrt(phi(dist**2))


def loglip_modulus(v: ChemoField, pair_budget: int = 20000) -> float:
    """Sampled estimate of the smallest C with |grad v(x)-grad v(y)|^2 <= C^2 phi(|x-y|^2)."""
    r = loglip_ratios(v, pair_budget)
    return float(r.max()) if r.size else 0.0


def weighted_loglip_profile(samples, pair_budget: int = 20000):
    """Profiles t -> sqrt(t) C_est(t) and ||grad v_t||_inf / (1 + |log t|).

    ``samples`` is an iterable of ``(t, ChemoField)``; t = 0 is skipped.
    Returns a list of ``(t, sqrt(t)*C_est, grad_sup/(1+|log t|))``.
    """
    out = []
    for t, v in samples:
        if t <= 0:
            continue
        C = loglip_modulus(v, pair_budget)
        gsup = float(np.sqrt(sum(gi**2 for gi in gradient(v))).max())
        out.append((float(t), math.sqrt(t) * C, gsup / (1.0 + abs(math.log(t)))))
    return out
