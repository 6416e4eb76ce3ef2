"""Free-energy functionals, their renormalisation, and the convexity predicate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import three_point_derivative
from .chemo import solve_elliptic
from .fields import ChemoField, DensityField, Grid, mass
from .laws import DiffusionLaw, _xlogx


class RenormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyBreakdown:
    entropy_term: float
    coupling_term: float
    dirichlet_term: float

    @property
    def total(self) -> float:
        return self.entropy_term + self.coupling_term + self.dirichlet_term

    def as_dict(self) -> dict:
        return {
            "entropy_term": self.entropy_term,
            "coupling_term": self.coupling_term,
            "dirichlet_term": self.dirichlet_term,
            "total": self.total,
        }


@dataclass(frozen=True)
class RenormalizationReference:
    rho_star: DensityField
    v_star: ChemoField

    def __post_init__(self):
        if self.rho_star.grid != self.v_star.grid:
            raise ValueError("reference fields live on different grids")


def needs_renormalization(eps: float, alpha: float, d: int) -> bool:
    return eps == 0 and alpha == 0 and d <= 2


def default_reference(grid: Grid, total_mass: float, width: float | None = None) -> RenormalizationReference:
    """Gaussian of width L/6 truncated at |x| > L/2, scaled to ``total_mass``."""
    width = grid.L / 6.0 if width is None else width
    r2 = grid.radius_sq()
    vals = np.where(r2 <= (grid.L / 2.0) ** 2, np.exp(-0.5 * r2 / width**2), 0.0)
    vals *= total_mass / (vals.sum() * grid.cell_volume)
    return reference_from(DensityField(grid, vals, total_mass))


def reference_from(rho_star: DensityField) -> RenormalizationReference:
    return RenormalizationReference(rho_star, solve_elliptic(rho_star, 0.0))


def entropy(rho: DensityField) -> float:
    """int rho log rho with 0 log 0 = 0."""
    return float(_xlogx(rho.values).sum() * rho.grid.cell_volume)


def _dirichlet(v: np.ndarray, grid: Grid, alpha: float) -> float:
    """1/2 int |grad v|^2 + alpha v^2, gradient term by Parseval."""
    c = np.fft.fftn(v) / v.size
    grad2 = grid.volume * float((grid.k_squared() * np.abs(c) ** 2).sum())
    return 0.5 * (grad2 + alpha * float((v**2).sum() * grid.cell_volume))


def _breakdown(internal: float, rho: DensityField, v: ChemoField, eps: float, alpha: float,
               renorm: RenormalizationReference | None) -> EnergyBreakdown:
    g = rho.grid
    if v.grid.shape != g.shape:
        raise ValueError("rho and v live on different grids")
    dv = g.cell_volume
    if needs_renormalization(eps, alpha, g.d):
        if renorm is None:
            raise RenormalizationError("eps = alpha = 0 with d <= 2 requires a renormalization reference")
        rs, vs = renorm.rho_star, renorm.v_star
        if abs(mass(rs) - mass(rho)) > 1e-10 * max(1.0, mass(rho)):
            raise RenormalizationError(f"reference mass {mass(rs):.12g} != density mass {mass(rho):.12g}")
        coupling = -float((v.values * (rho.values - rs.values)).sum() * dv)
        dirich = _dirichlet(v.values - vs.values, g, 0.0) - 0.5 * float((rs.values * vs.values).sum() * dv)
        return EnergyBreakdown(internal, coupling, dirich)
    coupling = -float((v.values * rho.values).sum() * dv)
    return EnergyBreakdown(internal, coupling, _dirichlet(v.values, g, alpha))


def free_energy(rho: DensityField, v: ChemoField, eps: float, alpha: float,
                renorm: RenormalizationReference | None = None) -> EnergyBreakdown:
    """int (rho log rho - v rho) + 1/2 int (|grad v|^2 + alpha v^2), renormalised when eps=alpha=0, d<=2.

    For eps = 0 the caller passes ``v = solve_elliptic(rho, alpha)``.
    """
    return _breakdown(entropy(rho), rho, v, eps, alpha, renorm)


def nonlinear_energy(rho: DensityField, v: ChemoField, law: DiffusionLaw, eps: float, alpha: float,
                     renorm: RenormalizationReference | None = None) -> EnergyBreakdown:
    """Same structure as :func:`free_energy` with int Psi(rho) as internal energy."""
    law.check_growth(rho.grid.d)
    internal = float(np.asarray(law.Psi(rho.values)).sum() * rho.grid.cell_volume)
    return _breakdown(internal, rho, v, eps, alpha, renorm)


def energy_of(rho: DensityField, v: ChemoField, law: DiffusionLaw, eps: float, alpha: float,
              renorm: RenormalizationReference | None = None) -> EnergyBreakdown:
    """The functional a trajectory with ``law`` dissipates (entropy form for the linear law)."""
    if law.kind == "linear":
        return free_energy(rho, v, eps, alpha, renorm)
    return nonlinear_energy(rho, v, law, eps, alpha, renorm)


def auxiliary_phi(rho: DensityField, v: ChemoField) -> float:
    """int (rho log rho - v rho): the energy minus its Dirichlet part."""
    return entropy(rho) - float((v.values * rho.values).sum() * rho.grid.cell_volume)


# -- displacement convexity of the internal energy -----------------------------

@dataclass
class ConvexityReport:
    convex: bool
    monotone_direction: int  # +1 nondecreasing, -1 nonincreasing, 0 mixed
    violations: list
    differential_ok: bool | None  # second-order criterion (d >= 2), None for d = 1
    r_min: float
    r_max: float
    note: str = ""


def is_displacement_convex(law: DiffusionLaw, d: int, r_grid=None, rtol: float = 1e-9) -> ConvexityReport:
    """Convexity and monotone direction of u(r) = r^d Psi(r^-d) on a log grid.

    The predicate reports the observed monotone direction; it does not require
    u to be nondecreasing (the admissible examples all give a nonincreasing u).
    """
    if r_grid is None:
        r_grid = np.geomspace(1e-6, 1e6, 400)
    r = np.asarray(r_grid, dtype=float)
    if r.size < 64 or np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise ValueError("r_grid must be >= 64 strictly increasing positive points")
    note = ""
    with np.errstate(over="raise", invalid="raise"):
        while True:
            try:
                u = r**d * law.Psi(r ** (-d))
                break
            except FloatingPointError:
                r = r[r.size // 8:]
                note = f"r_grid shrunk to start at {r[0]:.3e} (Psi overflow)"
                if r.size < 64:
                    raise
    slopes = np.diff(u) / np.diff(r)
    scale = np.maximum(np.abs(slopes[1:]), np.abs(slopes[:-1]))
    jumps = np.diff(slopes)
    bad = np.nonzero(jumps < -rtol * np.maximum(scale, 1e-300))[0]
    violations = [(float(r[i + 1]), float(jumps[i])) for i in bad]
    s_tol = rtol * np.max(np.abs(slopes))
    if np.all(slopes >= -s_tol):
        direction = 1
    elif np.all(slopes <= s_tol):
        direction = -1
    else:
        direction = 0

    differential_ok = None
    if d >= 2:
        psi, dpsi, d2 = law.Psi(r), law.dPsi(r), law.d2Psi(r)
        lhs = psi / r - dpsi + r * d2
        rhs = -r * d2 / (d - 1)
        differential_ok = bool(np.all(lhs >= rhs - rtol * np.maximum(np.abs(lhs), np.abs(rhs))))
    return ConvexityReport(len(violations) == 0, direction, violations, differential_ok,
                           float(r[0]), float(r[-1]), note)


# -- energy dissipation identity ---------------------------------------------

@dataclass
class DissipationResidual:
    t: np.ndarray
    dFdt: np.ndarray
    dissipation: np.ndarray
    residual: np.ndarray

    @property
    def max(self) -> float:
        return float(np.max(self.residual))

    @property
    def mean(self) -> float:
        return float(np.mean(self.residual))

    def relative(self) -> np.ndarray:
        return self.residual / np.maximum(np.abs(self.dissipation), 1e-300)


def dissipation_identity(t, F, dissipation) -> DissipationResidual:
    """|dF/dt + dissipation| at interior samples, centred differences in time."""
    t = np.asarray(t, dtype=float)
    F = np.asarray(F, dtype=float)
    D = np.asarray(dissipation, dtype=float)
    if t.size < 3:
        raise ValueError("dissipation identity needs at least 3 samples")
    dF = three_point_derivative(t, F)
    return DissipationResidual(t[1:-1], dF, D[1:-1], np.abs(dF + D[1:-1]))
