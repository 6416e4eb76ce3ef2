"""Structural checks: Osgood modulus, EVI residuals, expansion control, omega-convexity.

The modulus is omega(x) = sqrt(m x phi(x/m)). Both branches of phi give
1/omega an elementary antiderivative, so G(s) = int_{s0}^s dr/omega(r) and
its inverse are evaluated in closed form. Near zero 1/omega ~ 1/(r |log r|),
whose antiderivative -log(-log r) diverges: G(0) = -inf and the envelope
started from zero distance stays at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._util import three_point_derivative
from .chemo import PHI_BREAK, _PHI_SHIFT, phi, solve_elliptic
from .dynamics import Trajectory, internal_energy
from .energy import energy_of
from .fields import ChemoField, mass
from .laws import DiffusionLaw
from .transport import ProductState, displacement_interpolate, metric_D

DEFAULT_D2_FLOOR = 1e-14


def omega(x, total_mass: float = 1.0):
    """sqrt(m x phi(x/m)) for x >= 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("omega is defined on [0, inf)")
    y = x / total_mass
    # on the log branch the square root is exact; taking it avoids underflow of x^2 log^2 x
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.where(y > 0, x * np.abs(np.log(np.where(y > 0, y, 1.0))), 0.0)
    out = np.where(y <= PHI_BREAK, small, np.sqrt(total_mass * x * phi(np.maximum(y, PHI_BREAK))))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class OsgoodMachinery:
    """omega, G and G^{-1} for a given mass and anchor s0."""

    total_mass: float = 1.0
    s0: float = 1.0

    def __post_init__(self):
        if self.total_mass <= 0 or self.s0 <= 0:
            raise ValueError("mass and anchor must be positive")

    @property
    def _b(self) -> float:
        return self.total_mass * PHI_BREAK

    @property
    def _a(self) -> float:
        return _PHI_SHIFT * self.total_mass

    def _A(self, r: np.ndarray) -> np.ndarray:
        """Continuous antiderivative of 1/omega, -inf at 0."""
        m, b, a = self.total_mass, self._b, self._a
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        small = r <= b
        with np.errstate(divide="ignore"):
            out[small] = -np.log(-np.log(r[small] / m))
        rl = r[~small]
        out[~small] = self._A_b + 2.0 * (np.log(np.sqrt(rl) + np.sqrt(rl + a)) - self._log_root_b)
        return out

    @property
    def _log_root_b(self) -> float:
        return math.log(math.sqrt(self._b) + math.sqrt(self._b + self._a))

    @property
    def _A_b(self) -> float:
        return -math.log(-math.log(PHI_BREAK))

    def omega(self, x):
        return omega(x, self.total_mass)

    def G(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise ValueError("G is defined on [0, inf)")
        out = self._A(np.atleast_1d(s)) - float(self._A(np.array([self.s0]))[0])
        return out.reshape(s.shape) if s.ndim else float(out[0])

    def G_inverse(self, y):
        y = np.asarray(y, dtype=float)
        target = np.atleast_1d(y) + float(self._A(np.array([self.s0]))[0])
        out = np.empty_like(target)
        small = target <= self._A_b
        with np.errstate(over="ignore"):
            out[small] = self.total_mass * np.exp(-np.exp(-target[small]))
            E = np.exp(0.5 * (target[~small] - self._A_b) + self._log_root_b)
            out[~small] = ((E * E - self._a) / (2.0 * E)) ** 2
        out[np.isposinf(target)] = np.inf
        return out.reshape(y.shape) if y.ndim else float(out[0])

    def envelope(self, d2_initial: float, t, C: float, weighted: bool = False):
        """G^{-1}(G(D0^2) + 4Ct), or with 8C sqrt(t) in the weighted form."""
        t = np.asarray(t, dtype=float)
        growth = 8.0 * C * np.sqrt(t) if weighted else 4.0 * C * t
        return self.G_inverse(self.G(d2_initial) + growth)


def G_by_quadrature(s: float, s0: float = 1.0, total_mass: float = 1.0) -> float:
    """Independent evaluation of G by adaptive quadrature (diagnostic; finite for every s > 0)."""
    from scipy.integrate import quad

    lo, hi = sorted((s, s0))
    pts = [p for p in (total_mass * PHI_BREAK,) if lo < p < hi]
    # substitute r = e^q so the log-scale integrand is smooth
    f = lambda q: math.exp(q) / omega(math.exp(q), total_mass)
    val, _ = quad(f, math.log(lo), math.log(hi), points=[math.log(p) for p in pts] or None,
                  epsabs=0, epsrel=1e-12, limit=200)
    return val if s >= s0 else -val


# -- EVI ------------------------------------------------------------------------

@dataclass
class EviReport:
    times: np.ndarray
    d2: np.ndarray
    d2_rate: np.ndarray  # dD^2/dt at interior samples (aligned with times[1:-1])
    energy_gap: np.ndarray  # F(zbar) - F(z_t), interior samples
    omega_term: np.ndarray  # w(t) omega(D^2), interior samples
    included: np.ndarray
    C_min: float
    C_used: float
    weighted: bool
    residual: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.residual is None:
            self.residual = self.residual_at(self.C_used)

    def residual_at(self, C: float) -> np.ndarray:
        return 0.5 * self.d2_rate - self.energy_gap - C * self.omega_term

    @property
    def interior_times(self) -> np.ndarray:
        return self.times[1:-1]

    def passed(self, tol: float = 0.0) -> bool:
        r = self.residual[self.included]
        return bool(np.all(r <= tol))

    def rows(self, label: str = "evi"):
        """(check, t, lhs, rhs, slack, constant) per interior sample."""
        lhs = 0.5 * self.d2_rate
        rhs = self.energy_gap + self.C_used * self.omega_term
        return [(label, float(t), float(l), float(r), float(r - l), self.C_used)
                for t, l, r, inc in zip(self.interior_times, lhs, rhs, self.included) if inc]


def _state(traj: Trajectory, k: int) -> ProductState:
    rho, v = traj.states[k]
    return ProductState(rho, v if traj.params.eps > 0 else None)


def state_energy(z: ProductState, traj_or_params, renorm=None) -> float:
    """Energy of a product state under a trajectory's law and parameters."""
    p = traj_or_params.params if isinstance(traj_or_params, Trajectory) else traj_or_params
    if renorm is None and isinstance(traj_or_params, Trajectory):
        renorm = traj_or_params.renorm
    if not p.chemotaxis:
        return internal_energy(z.rho, p.law)
    v = z.v if p.eps > 0 else solve_elliptic(z.rho, p.alpha)
    return energy_of(z.rho, v, p.law, p.eps, p.alpha, renorm).total


def evi_check(traj: Trajectory, z_bar: ProductState, weighted: bool = False, C: float | None = None,
              d2_floor: float = DEFAULT_D2_FLOOR) -> EviReport:
    """Residuals of 1/2 dD^2/dt <= F(zbar) - F(z_t) + C w(t) omega(D^2) on the stored samples.

    ``C_min`` is the smallest constant making every included residual
    nonpositive; samples with D^2 below ``d2_floor`` or with a zero omega
    term are left out. With ``C=None`` the residual uses ``C_min``.
    """
    if len(traj.times) < 3:
        raise ValueError("EVI check needs at least 3 stored samples")
    eps = traj.params.eps
    t = np.asarray(traj.times, dtype=float)
    m = mass(traj.rho_at(0))
    d2 = np.array([metric_D(_state(traj, k), z_bar, eps) ** 2 for k in range(len(t))])
    f_bar = state_energy(z_bar, traj)
    f_t = np.array([state_energy(_state(traj, k), traj) for k in range(1, len(t) - 1)])
    rate = three_point_derivative(t, d2)
    gap = f_bar - f_t
    ti = t[1:-1]
    weight = ti ** -0.5 if weighted else np.ones_like(ti)
    om = weight * omega(d2[1:-1], m)
    included = (d2[1:-1] >= d2_floor) & (om > 0)
    excess = np.maximum(0.5 * rate - gap, 0.0)
    C_min = float(np.max(excess[included] / om[included])) if included.any() else 0.0
    used = C_min if C is None else float(C)
    return EviReport(t, d2, rate, gap, om, included, C_min, used, weighted)


# -- expansion control ----------------------------------------------------------

@dataclass
class ContractionReport:
    times: np.ndarray
    d2: np.ndarray
    envelope: np.ndarray
    C: float
    weighted: bool
    tol: float
    uniqueness_mode: bool
    uniqueness_ok: bool | None

    @property
    def slack(self) -> np.ndarray:
        return self.envelope - self.d2

    @property
    def passed(self) -> bool:
        ok = bool(np.all(self.slack >= -self.tol))
        if self.uniqueness_mode:
            return ok and bool(self.uniqueness_ok)
        return ok

    def rows(self, label: str = "contraction"):
        return [(label, float(t), float(a), float(b), float(b - a), self.C)
                for t, a, b in zip(self.times, self.d2, self.envelope)]


def distance_series(traj1: Trajectory, traj2: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    t1, t2 = np.asarray(traj1.times), np.asarray(traj2.times)
    if t1.shape != t2.shape or np.max(np.abs(t1 - t2)) > 1e-12 * max(1.0, t1[-1]):
        raise ValueError("trajectories are sampled at different times")
    eps = traj1.params.eps
    d2 = np.array([metric_D(_state(traj1, k), _state(traj2, k), eps) ** 2 for k in range(len(t1))])
    return t1, d2


def mutual_evi_constant(traj1: Trajectory, traj2: Trajectory, weighted: bool = False,
                        d2_floor: float = DEFAULT_D2_FLOOR) -> float:
    """max of C_min over EVI checks of each trajectory against every stored state of the other."""
    best = 0.0
    for a, b in ((traj1, traj2), (traj2, traj1)):
        for k in range(len(b.times)):
            rep = evi_check(a, _state(b, k), weighted=weighted, d2_floor=d2_floor)
            best = max(best, rep.C_min)
    return best


def contraction_check(traj1: Trajectory, traj2: Trajectory, C: float | None = None, weighted: bool = False,
                      s0: float = 1.0, tol: float = 1e-12, uniqueness_atol: float = 0.0,
                      uniqueness_atol_out: float | None = None) -> ContractionReport:
    """Compare D^2(z_t, zeta_t) with the Osgood envelope started from D^2 at t=0.

    With C=None the constant is fitted from mutual EVI checks. When
    D(0) <= ``uniqueness_atol`` the report also requires D(t) <=
    ``uniqueness_atol_out`` (defaults to the same tolerance) at every sample.
    """
    t, d2 = distance_series(traj1, traj2)
    if C is None:
        C = mutual_evi_constant(traj1, traj2, weighted)
    machinery = OsgoodMachinery(mass(traj1.rho_at(0)), s0)
    env = np.asarray(machinery.envelope(d2[0], t, C, weighted), dtype=float)
    mode = math.sqrt(d2[0]) <= uniqueness_atol
    uniq = None
    if mode:
        out_tol = uniqueness_atol if uniqueness_atol_out is None else uniqueness_atol_out
        uniq = bool(np.all(np.sqrt(d2) <= out_tol))
    return ContractionReport(t, d2, env, float(C), weighted, tol, mode, uniq)


# -- omega-convexity ------------------------------------------------------------

@dataclass
class ConvexityAlongGeodesic:
    s: np.ndarray
    energy: np.ndarray
    chord: np.ndarray
    correction: np.ndarray
    R_T: float
    d2: float
    tol: float

    @property
    def slack(self) -> np.ndarray:
        return self.chord + self.correction - self.energy

    @property
    def passed(self) -> bool:
        return bool(np.all(self.slack >= -self.tol))

    def rows(self, label: str = "omega-convexity"):
        rhs = self.chord + self.correction
        return [(label, float(s), float(a), float(b), float(b - a), self.R_T)
                for s, a, b in zip(self.s, self.energy, rhs)]


def geodesic_state(z0: ProductState, z1: ProductState, s: float, eps: float, alpha: float) -> ProductState:
    """Displacement interpolation in rho, linear interpolation in v (eps > 0)."""
    rho = displacement_interpolate(z0.rho, z1.rho, s)
    if eps > 0:
        v = ChemoField(rho.grid, (1 - s) * z0.v.values + s * z1.v.values)
    else:
        v = solve_elliptic(rho, alpha)
    return ProductState(rho, v)


def omega_convexity_check(z0: ProductState, z1: ProductState, R_T: float, eps: float, alpha: float,
                          law: DiffusionLaw | None = None, s_samples=None, renorm=None,
                          tol: float = 1e-3) -> ConvexityAlongGeodesic:
    """F(z^s) <= (1-s)F(z0) + sF(z1) + R_T[(1-s) omega(s^2 D^2) + s omega((1-s)^2 D^2)]."""
    if z0.rho.grid.d != 1:
        raise ValueError("geodesics are available in d = 1 only")
    law = law or DiffusionLaw.linear()
    s = np.linspace(0.0, 1.0, 17) if s_samples is None else np.asarray(s_samples, dtype=float)
    m = mass(z0.rho)

    def F(z):
        v = z.v if eps > 0 else solve_elliptic(z.rho, alpha)
        return energy_of(z.rho, v, law, eps, alpha, renorm).total

    f0, f1 = F(z0), F(z1)
    d2 = metric_D(z0, z1, eps) ** 2
    energy = np.array([F(geodesic_state(z0, z1, si, eps, alpha)) for si in s])
    chord = (1 - s) * f0 + s * f1
    corr = R_T * ((1 - s) * omega(s**2 * d2, m) + s * omega((1 - s) ** 2 * d2, m))
    return ConvexityAlongGeodesic(s, energy, chord, np.asarray(corr), float(R_T), float(d2), tol)


# -- constants ------------------------------------------------------------------

@dataclass
class FittedConstants:
    C_evi: float
    Q: float
    R_T: float

    def as_dict(self) -> dict:
        return {"C_evi": self.C_evi, "Q": self.Q, "R_T": self.R_T}


def max_linf(trajectories) -> float:
    return max(float(np.max(tr.column("linf"))) for tr in trajectories)


def fit_constants(trajectories, C_evi: float | None = None, weighted: bool = False) -> FittedConstants:
    """Q = max L-inf over all steps; C_evi from mutual EVI checks (or given); R_T = Q C_evi."""
    trajectories = list(trajectories)
    Q = max_linf(trajectories)
    if C_evi is None:
        C_evi = 0.0
        for i, a in enumerate(trajectories):
            for b in trajectories[i + 1:]:
                C_evi = max(C_evi, mutual_evi_constant(a, b, weighted))
    return FittedConstants(float(C_evi), Q, Q * float(C_evi))


def fit_geodesic_constants(z0: ProductState, z1: ProductState, params, s_samples=None, T_fit: float = 0.05,
                           sample_dt: float = 0.0025, renorm=None, runner=map) -> FittedConstants:
    """Constants for the omega-convexity check from flows started on the geodesic.

    Each interior geodesic point z^s is evolved for ``T_fit`` and checked
    against both endpoints; C_evi is the largest fitted EVI constant, Q the
    largest L-inf norm seen along those flows, and R_T = Q C_evi.
    ``runner`` is a map-like callable (e.g. a thread-pool map).
    """
    from .dynamics import simulate

    s = np.linspace(0.0, 1.0, 17) if s_samples is None else np.asarray(s_samples, dtype=float)
    inner = [float(x) for x in s if 0.0 < x < 1.0]
    p = replace(params, T=T_fit, sample_dt=sample_dt)

    def one(si):
        zs = geodesic_state(z0, z1, si, p.eps, p.alpha)
        tr = simulate(p, zs.rho, zs.v if p.eps > 0 else None, renorm=renorm)
        C = max(evi_check(tr, z0).C_min, evi_check(tr, z1).C_min)
        return C, float(np.max(tr.column("linf")))

    results = list(runner(one, inner))
    C = max((c for c, _ in results), default=0.0)
    Q = max([q for _, q in results] + [float(np.max(z0.rho.values)), float(np.max(z1.rho.values))])
    return FittedConstants(C, Q, Q * C)
