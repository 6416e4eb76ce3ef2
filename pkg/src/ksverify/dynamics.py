"""Density transport and trajectory assembly.

The density step is a finite-volume split: explicit upwind fluxes for the
chemotactic drift, then either implicit (linear law) or explicit (power
law) diffusion. Box faces carry zero flux, so mass is conserved by
telescoping. A second, central-flux scheme exists for scheme-comparison
runs in 1D.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

from .chemo import gradient, solve_elliptic, spectral_laplacian, step_parabolic
from .energy import RenormalizationReference, default_reference, energy_of, entropy, needs_renormalization
from .fields import (ChemoField, DensityField, Grid, linf_norm, mass, read_snapshot,
                     second_moment, write_snapshot)
from .laws import DiffusionLaw

log = logging.getLogger(__name__)

POSITIVITY_FLOOR = 1e-300
SCHEMES = ("upwind", "central")


class CFLViolation(ValueError):
    def __init__(self, dt, dt_max):
        super().__init__(f"time step {dt:.3e} exceeds the stable limit {dt_max:.3e}")
        self.dt = dt
        self.required = dt_max


class SchemeError(RuntimeError):
    """Mass correction beyond roundoff, or non-finite state."""


@dataclass(frozen=True)
class SystemParams:
    grid: Grid
    eps: float = 0.0
    alpha: float = 0.0
    law: DiffusionLaw = field(default_factory=DiffusionLaw.linear)
    T: float = 0.5
    dt: float | None = None  # None: CFL-adaptive
    safety: float = 0.4
    sample_dt: float | None = None  # spacing of stored states; None stores only t=0 and T
    scheme: str = "upwind"
    floor: float = POSITIVITY_FLOOR
    mass_tol: float = 1e-10  # larger per-step renormalisations abort the run
    linf_ceiling: float = math.inf
    dt_floor: float = 0.0
    chemotaxis: bool = True  # False: v = 0, pure (nonlinear) diffusion

    def __post_init__(self):
        if self.eps < 0 or self.alpha < 0:
            raise ValueError("eps and alpha must be >= 0")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.scheme == "central" and self.grid.d != 1:
            raise ValueError("the central scheme is implemented for d = 1 only")
        self.law.check_admissible(self.grid.d)

    def as_dict(self) -> dict:
        out = {
            "d": self.grid.d, "n": self.grid.n, "L": self.grid.L, "bc": self.grid.bc,
            "law": self.law.kind, "m": self.law.m,
        }
        for f in fields(self):
            if f.name not in ("grid", "law"):
                out[f.name] = getattr(self, f.name)
        return out


@dataclass
class Trajectory:
    params: SystemParams
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)  # (DensityField, ChemoField)
    diag: dict = field(default_factory=dict)  # column -> list, one entry per step (t=0 included)
    status: str = "ok"  # ok | blowup | aborted
    message: str = ""
    renorm: RenormalizationReference | None = None

    DIAG_COLUMNS = ("t", "mass", "m2", "linf", "energy", "fisher", "dissipation_rho", "dissipation_v")

    def column(self, name) -> np.ndarray:
        return np.asarray(self.diag[name], dtype=float)

    def rho_at(self, k: int) -> DensityField:
        return self.states[k][0]

    def v_at(self, k: int) -> ChemoField:
        return self.states[k][1]

    @property
    def blowup(self) -> bool:
        return self.status == "blowup"

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        meta = self.params.as_dict()
        meta.update(status=self.status, message=self.message)
        (out / "meta.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
        with open(out / "diag.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.DIAG_COLUMNS)
            cols = [self.diag[c] for c in self.DIAG_COLUMNS]
            for row in zip(*cols):
                w.writerow([f"{x:.17g}" for x in row])
        for k, (t, (rho, v)) in enumerate(zip(self.times, self.states)):
            write_snapshot(out / f"rho_{k:04d}.txt", rho, t)
            write_snapshot(out / f"v_{k:04d}.txt", v, t)
        return out


def load_trajectory(run_dir) -> Trajectory:
    """Rebuild a trajectory (sampled states and per-step diagnostics) from a run directory."""
    run = Path(run_dir)
    meta = dict(line.split("=", 1) for line in (run / "meta.txt").read_text().splitlines() if "=" in line)
    grid = Grid(int(meta["d"]), int(meta["n"]), float(meta["L"]), meta["bc"])
    law = DiffusionLaw(meta["law"], float(meta["m"]))

    def opt(key):
        return None if meta.get(key, "None") == "None" else float(meta[key])

    params = SystemParams(grid, eps=float(meta["eps"]), alpha=float(meta["alpha"]), law=law,
                          T=float(meta["T"]), dt=opt("dt"), safety=float(meta["safety"]),
                          sample_dt=opt("sample_dt"), scheme=meta["scheme"],
                          floor=float(meta.get("floor", POSITIVITY_FLOOR)),
                          mass_tol=float(meta.get("mass_tol", 1e-10)),
                          linf_ceiling=float(meta.get("linf_ceiling", "inf")),
                          dt_floor=float(meta.get("dt_floor", 0.0)),
                          chemotaxis=meta.get("chemotaxis", "True") == "True")
    traj = Trajectory(params, status=meta.get("status", "ok"), message=meta.get("message", ""))
    with open(run / "diag.csv") as fh:
        rows = list(csv.DictReader(fh))
    traj.diag = {c: [float(r[c]) for r in rows] for c in Trajectory.DIAG_COLUMNS}
    for rho_path in sorted(run.glob("rho_*.txt")):
        rho, t = read_snapshot(rho_path, grid.bc)
        v, _ = read_snapshot(run / rho_path.name.replace("rho_", "v_"), grid.bc)
        traj.times.append(t)
        traj.states.append((rho, v))
    return traj


# -- pointwise operators -------------------------------------------------------

def _as_field(grid: Grid, values: np.ndarray) -> ChemoField:
    return ChemoField(grid, values)


def velocity_field(rho: DensityField, v: ChemoField, law: DiffusionLaw,
                   floor: float = POSITIVITY_FLOOR) -> list[np.ndarray]:
    """xi = grad v - grad P(rho) where rho > floor, grad v elsewhere."""
    g = rho.grid
    live = rho.values > floor
    with np.errstate(divide="ignore", invalid="ignore"):
        P = np.where(live, law.P(np.where(live, rho.values, 1.0)), 0.0)
    gP = gradient(_as_field(g, P))
    gv = gradient(v)
    return [np.where(live, a - b, a) for a, b in zip(gv, gP)]


def internal_energy(rho: DensityField, law: DiffusionLaw) -> float:
    """int rho log rho for the linear law, int Psi(rho) otherwise."""
    if law.kind == "linear":
        return entropy(rho)
    return float(np.asarray(law.Psi(rho.values)).sum() * rho.grid.cell_volume)


def fisher_information(rho: DensityField, law: DiffusionLaw, floor: float = POSITIVITY_FLOOR) -> float:
    """int |grad P(rho)|^2 rho over cells above the floor (|grad rho|^2/rho for the linear law)."""
    g = rho.grid
    live = rho.values > floor
    with np.errstate(divide="ignore", invalid="ignore"):
        P = np.where(live, law.P(np.where(live, rho.values, 1.0)), 0.0)
    gP = gradient(_as_field(g, P))
    integrand = sum(a**2 for a in gP) * rho.values
    return float(np.where(live, integrand, 0.0).sum() * g.cell_volume)


def dissipation_terms(rho: DensityField, v: ChemoField, law: DiffusionLaw, eps: float, alpha: float,
                      floor: float = POSITIVITY_FLOOR) -> tuple[float, float]:
    """(int rho |xi|^2, eps ||d_t v||^2); the second is zero when eps = 0."""
    xi = velocity_field(rho, v, law, floor)
    d_rho = float((sum(a**2 for a in xi) * rho.values).sum() * rho.grid.cell_volume)
    if eps == 0:
        return d_rho, 0.0
    r = spectral_laplacian(v.values, v.grid) + rho.values - alpha * v.values
    return d_rho, float((r**2).sum() * v.grid.cell_volume) / eps


# -- density step ----------------------------------------------------------------

def _face_velocity(v: ChemoField, ax: int) -> np.ndarray:
    """(v_{i+1} - v_i)/h on the n-1 interior faces along ``ax``."""
    f = v.values
    return np.diff(f, axis=ax) / v.grid.h


def _pad_faces(u: np.ndarray, ax: int) -> np.ndarray:
    """Interior face values -> all n+1 faces with zero at the two walls."""
    pad = [(0, 0)] * u.ndim
    pad[ax] = (1, 1)
    return np.pad(u, pad)


def cfl_timestep(rho: DensityField, v: ChemoField, law: DiffusionLaw, grid: Grid | None = None,
                 safety: float = 0.4, floor: float = POSITIVITY_FLOOR) -> float:
    """safety * min(h / (d max|u|), h^2 / (2 d max diffusivity)).

    ``u`` is the drift velocity on cell faces; the diffusive velocity is
    accounted for by the diffusion limit.
    """
    g = grid if grid is not None else rho.grid
    h, d = g.h, g.d
    umax = max(float(np.abs(_face_velocity(v, ax)).max()) for ax in range(d))
    live = rho.values > floor
    dmax = 0.0
    if live.any():
        r = rho.values[live]
        # pressure/rho bounds the explicit update's self-weight when m < 1
        dmax = float(np.maximum(law.diffusivity(r), law.pressure(r) / r).max())
    limits = [h**2 / (2 * d * dmax)] if dmax > 0 else []
    if umax > 0:
        limits.append(h / (d * umax))
    return safety * min(limits) if limits else math.inf


def _upwind_drift(rho: np.ndarray, v: ChemoField, dt: float) -> np.ndarray:
    """Explicit upwind transport, written as a convex combination (exactly nonnegative)."""
    g = v.grid
    c = dt / g.h
    out_rate = np.zeros_like(rho)
    inflow = np.zeros_like(rho)
    for ax in range(g.d):
        u = _pad_faces(_face_velocity(v, ax), ax)  # n+1 faces
        lo = [slice(None)] * g.d
        hi = [slice(None)] * g.d
        lo[ax], hi[ax] = slice(0, -1), slice(1, None)
        u_left, u_right = u[tuple(lo)], u[tuple(hi)]
        out_rate += np.maximum(u_right, 0.0) + np.maximum(-u_left, 0.0)
        # mass arriving from the neighbours
        nb_left = np.roll(rho, 1, ax)
        nb_right = np.roll(rho, -1, ax)
        inflow += np.maximum(u_left, 0.0) * nb_left + np.maximum(-u_right, 0.0) * nb_right
    return rho * (1.0 - c * out_rate) + c * inflow


def _implicit_heat(rho: np.ndarray, grid: Grid, dt: float) -> np.ndarray:
    """(I - dt Lap_h)^{-1} with zero-flux walls; dimension-split in 2D."""
    n, r = grid.n, dt / grid.h**2
    ab = np.zeros((3, n))
    ab[0, 1:] = -r
    ab[2, :-1] = -r
    ab[1, :] = 1.0 + 2.0 * r
    ab[1, 0] = ab[1, -1] = 1.0 + r
    out = rho
    for ax in range(grid.d):
        moved = np.moveaxis(out, ax, 0)
        out = np.moveaxis(solve_banded((1, 1), ab, moved, check_finite=False), 0, ax)
    return out


def _explicit_pressure_diffusion(rho: np.ndarray, grid: Grid, law: DiffusionLaw, dt: float) -> np.ndarray:
    """Explicit div(grad pressure(rho)), as a convex combination per cell."""
    c = dt / grid.h**2
    p = law.pressure(rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rho > 0, p / np.where(rho > 0, rho, 1.0), 0.0)
    keep = np.ones_like(rho)
    inflow = np.zeros_like(rho)
    for ax in range(grid.d):
        n = grid.n
        has_left = np.ones(n)
        has_left[0] = 0.0
        has_right = np.ones(n)
        has_right[-1] = 0.0
        shape = [1] * grid.d
        shape[ax] = n
        hl, hr = has_left.reshape(shape), has_right.reshape(shape)
        keep -= c * ratio * (hl + hr)
        inflow += c * (hl * np.roll(p, 1, ax) + hr * np.roll(p, -1, ax))
    return rho * keep + inflow


def _central_implicit(rho: np.ndarray, v: ChemoField, dt: float) -> np.ndarray:
    """Implicit drift-diffusion with centred drift fluxes (hybrid upwind where |u| h > 2), 1D."""
    g = v.grid
    n, h = g.n, g.h
    u = _face_velocity(v, 0)  # n-1 interior faces
    central = np.abs(u) * h <= 2.0
    # flux F_{i+1/2} = -(r_{i+1}-r_i)/h + a r_i + b r_{i+1}
    a = np.where(central, 0.5 * u, np.maximum(u, 0.0))
    b = np.where(central, 0.5 * u, np.minimum(u, 0.0))
    c = dt / h
    ab = np.zeros((3, n))
    diag = np.ones(n)
    # contribution of face i+1/2 to rows i (out) and i+1 (in)
    diag[:-1] += c * (1.0 / h + a)
    diag[1:] += c * (1.0 / h - b)
    ab[1] = diag
    ab[0, 1:] = c * (-1.0 / h + b)  # row i, col i+1
    ab[2, :-1] = -c * (1.0 / h + a)  # row i+1, col i
    return solve_banded((1, 1), ab, rho, check_finite=False)


def step_density(rho: DensityField, v: ChemoField, law: DiffusionLaw, dt: float, *,
                 scheme: str = "upwind", safety: float = 1.0, floor: float = POSITIVITY_FLOOR,
                 check_cfl: bool = True) -> DensityField:
    """Advance rho_t = div(rho grad P(rho)) - div(rho grad v) by one step (no renormalisation)."""
    g = rho.grid
    if check_cfl and scheme == "upwind":
        limit = cfl_timestep(rho, v, law, g, safety=safety, floor=floor)
        if dt > limit * (1 + 1e-12):
            raise CFLViolation(dt, limit)
    x = rho.values
    if scheme == "central":
        if law.kind != "linear":
            raise ValueError("the central scheme supports the linear law only")
        new = _central_implicit(x, v, dt)
    else:
        x = _upwind_drift(x, v, dt)
        if law.kind == "linear":
            new = _implicit_heat(x, g, dt)
        else:
            new = _explicit_pressure_diffusion(x, g, law, dt)
    if not np.all(np.isfinite(new)):
        raise SchemeError("non-finite density after step")
    new = np.where(new < 0.0, 0.0, new) if scheme == "central" else new
    return DensityField(g, new, rho.mass_target)


# -- trajectories ----------------------------------------------------------------

def _sample_times(params: SystemParams) -> np.ndarray:
    if params.sample_dt is None:
        return np.array([0.0, params.T])
    k = int(round(params.T / params.sample_dt))
    ts = np.arange(k + 1) * params.sample_dt
    if ts[-1] < params.T * (1 - 1e-12):
        ts = np.append(ts, params.T)
    ts[-1] = params.T
    return ts


def simulate(params: SystemParams, rho0: DensityField, v0: ChemoField | None = None,
             renorm: RenormalizationReference | None = None) -> Trajectory:
    """Alternate density steps and chemoattractant updates up to time T."""
    g = params.grid
    law, eps, alpha = params.law, params.eps, params.alpha
    if rho0.grid != g:
        raise ValueError("initial density is not on the parameter grid")
    if eps > 0 and v0 is None and params.chemotaxis:
        raise ValueError("v0 required when eps > 0")
    target = mass(rho0)
    rho = DensityField(g, rho0.values, target)
    coupled = params.chemotaxis
    zero_v = ChemoField(g, np.zeros(g.shape))
    if not coupled:
        v = zero_v
    else:
        v = solve_elliptic(rho, alpha) if eps == 0 else v0
    if coupled and needs_renormalization(eps, alpha, g.d) and renorm is None:
        renorm = default_reference(g, target)
    traj = Trajectory(params, renorm=renorm)
    traj.diag = {c: [] for c in Trajectory.DIAG_COLUMNS}
    traj.diag["mass_drift"] = []
    traj.diag["min_value"] = []

    def record(t, rho, v, drift):
        if coupled:
            en = energy_of(rho, v, law, eps, alpha, renorm).total
            d_rho, d_v = dissipation_terms(rho, v, law, eps, alpha, params.floor)
        else:
            en = internal_energy(rho, law)
            d_rho, d_v = dissipation_terms(rho, v, law, 0.0, 0.0, params.floor)
        row = dict(t=t, mass=mass(rho), m2=second_moment(rho), linf=linf_norm(rho), energy=en,
                   fisher=fisher_information(rho, law, params.floor), dissipation_rho=d_rho,
                   dissipation_v=d_v, mass_drift=drift, min_value=float(rho.values.min()))
        for k, val in row.items():
            traj.diag[k].append(val)

    samples = _sample_times(params)
    record(0.0, rho, v, 0.0)
    traj.times.append(0.0)
    traj.states.append((rho, v))
    t = 0.0
    for t_next in samples[1:]:
        while t < t_next:
            remaining = t_next - t
            if params.dt is not None:
                dt_max = params.dt
            elif params.scheme == "central":
                dt_max = params.safety * g.h**2 / (2 * g.d)
            else:
                dt_max = cfl_timestep(rho, v, law, g, params.safety, params.floor)
            if dt_max < params.dt_floor:
                traj.status = "blowup"
                traj.message = f"time step collapsed to {dt_max:.3e} at t={t:.6g}"
                log.warning(traj.message)
                return _finish(traj, t, rho, v)
            nsub = max(1, math.ceil(remaining / dt_max * (1 - 1e-12)))
            dt = remaining / nsub
            try:
                new = step_density(rho, v, law, dt, scheme=params.scheme, floor=params.floor,
                                   check_cfl=False)
            except SchemeError as exc:
                traj.status, traj.message = "aborted", str(exc)
                return _finish(traj, t, rho, v)
            m_new = mass(new)
            drift = m_new / target - 1.0
            if abs(drift) > params.mass_tol:
                traj.status = "aborted"
                traj.message = f"mass correction {drift:.3e} exceeds roundoff at t={t:.6g}"
                log.error(traj.message)
                return _finish(traj, t, rho, v)
            rho = DensityField(g, new.values * (target / m_new), target)
            if not coupled:
                v = zero_v
            elif eps == 0:
                v = solve_elliptic(rho, alpha)
            else:
                v = step_parabolic(v, rho, eps, alpha, dt)
            t = t_next if nsub == 1 else t + dt
            record(t, rho, v, drift)
            linf = traj.diag["linf"][-1]
            if not math.isfinite(linf) or linf > params.linf_ceiling:
                traj.status = "blowup"
                traj.message = f"L-inf {linf:.4g} exceeded ceiling {params.linf_ceiling:.4g} at t={t:.6g}"
                log.warning(traj.message)
                return _finish(traj, t, rho, v)
        traj.times.append(float(t_next))
        traj.states.append((rho, v))
    return traj


def _finish(traj: Trajectory, t, rho, v) -> Trajectory:
    if not traj.times or traj.times[-1] < t:
        traj.times.append(float(t))
        traj.states.append((rho, v))
    return traj
