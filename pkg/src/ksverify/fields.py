"""Grid geometry, density / chemoattractant fields and their scalar statistics.

Everything lives on a uniform cell-centred grid over the box [-L, L]^d.
Values are cell averages, so ``h**d * values.sum()`` is the exact mass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

BOUNDARIES = ("periodic", "free-space-padded")


@dataclass(frozen=True)
class Grid:
    d: int
    n: int
    L: float
    bc: str = "periodic"

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"d must be 1 or 2, got {self.d}")
        if self.n < 8:
            raise ValueError(f"n must be >= 8, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if self.bc not in BOUNDARIES:
            raise ValueError(f"bc must be one of {BOUNDARIES}, got {self.bc!r}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def volume(self) -> float:
        return (2.0 * self.L) ** self.d

    @property
    def centers(self) -> np.ndarray:
        """1D array of cell centres along one axis."""
        return -self.L + (np.arange(self.n) + 0.5) * self.h

    @property
    def edges(self) -> np.ndarray:
        return -self.L + np.arange(self.n + 1) * self.h

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Cell-centre coordinates, one array per axis (``indexing='ij'``)."""
        x = self.centers
        if self.d == 1:
            return (x,)
        return tuple(np.meshgrid(x, x, indexing="ij"))

    def radius_sq(self) -> np.ndarray:
        return sum(X**2 for X in self.mesh())

    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Angular wavenumbers of the periodic box, broadcastable per axis."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)
        if self.d == 1:
            return (k,)
        return (k[:, None], k[None, :])

    def k_squared(self) -> np.ndarray:
        return sum(k**2 for k in self.wavenumbers())

    def with_n(self, n: int) -> Grid:
        return Grid(self.d, n, self.L, self.bc)


@dataclass(frozen=True, eq=False)
class DensityField:
    grid: Grid
    values: np.ndarray
    mass_target: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("density contains non-finite values")
        if np.any(v < 0):
            raise ValueError(f"density has negative cells (min {v.min():.3e})")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.mass_target is None:
            object.__setattr__(self, "mass_target", float(v.sum() * self.grid.cell_volume))

    @property
    def mass(self) -> float:
        return mass(self)

    def with_values(self, values: np.ndarray) -> DensityField:
        return DensityField(self.grid, values, self.mass_target)


@dataclass(frozen=True, eq=False)
class ChemoField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("chemoattractant contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def _vals(f) -> np.ndarray:
    return f.values if hasattr(f, "values") else np.asarray(f, dtype=float)


def mass(rho: DensityField) -> float:
    return float(rho.values.sum() * rho.grid.cell_volume)


def first_moment(rho: DensityField) -> np.ndarray:
    g = rho.grid
    return np.array([float((X * rho.values).sum() * g.cell_volume) for X in g.mesh()])


def second_moment(rho: DensityField) -> float:
    g = rho.grid
    return float((g.radius_sq() * rho.values).sum() * g.cell_volume)


def linf_norm(f) -> float:
    return float(np.abs(_vals(f)).max())


def l2_norm(f, grid: Grid | None = None) -> float:
    grid = grid if grid is not None else f.grid
    return float(np.sqrt((_vals(f) ** 2).sum() * grid.cell_volume))


def renormalize_mass(rho: DensityField, target: float | None = None) -> tuple[DensityField, float]:
    """Rescale ``rho`` to mass ``target``; returns the field and the relative scale change."""
    target = rho.mass_target if target is None else target
    m = mass(rho)
    if m <= 0:
        raise ValueError("cannot renormalize a zero-mass density")
    scale = target / m
    change = scale - 1.0
    if change == 0.0:
        return DensityField(rho.grid, rho.values, target), 0.0
    log.debug("mass correction %.3e", change)
    return DensityField(rho.grid, rho.values * scale, target), change


# -- snapshot text format -----------------------------------------------------

def write_snapshot(path, f, t: float = 0.0) -> None:
    g = f.grid
    kind = "rho" if isinstance(f, DensityField) else "v"
    lines = [f"# ks-snapshot d={g.d} n={g.n} L={g.L!r} t={t!r} kind={kind}"]
    lines.extend(f"{x:.17g}" for x in np.ravel(f.values, order="C"))
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path, bc: str = "periodic"):
    """Read a snapshot; returns ``(field, t)``."""
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# ks-snapshot"):
        raise ValueError(f"{path}: missing ks-snapshot header")
    header = dict(tok.split("=", 1) for tok in text[0].split()[2:])
    d, n, L = int(header["d"]), int(header["n"]), float(header["L"])
    t, kind = float(header["t"]), header["kind"]
    vals = np.array([float(s) for s in text[1:] if s.strip()])
    if vals.size != n**d:
        raise ValueError(f"{path}: expected {n**d} values, found {vals.size}")
    grid = Grid(d, n, L, bc)
    vals = vals.reshape(grid.shape)
    if kind == "rho":
        return DensityField(grid, vals), t
    if kind == "v":
        return ChemoField(grid, vals), t
    raise ValueError(f"{path}: unknown kind {kind!r}")
