"""Plain ``key=value`` run configuration.

One assignment per line (several may share a line, separated by blanks),
``#`` starts a comment. Every key is validated; errors name the key and
the line it came from.
"""

from __future__ import annotations

import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import profiles
from .chemo import solve_elliptic
from .dynamics import SCHEMES, SystemParams
from .fields import BOUNDARIES, ChemoField, DensityField, Grid, read_snapshot
from .laws import AdmissibilityError, DiffusionLaw

SCENARIOS = ("simulate", "verify-evi", "verify-contraction", "verify-convexity", "estimate-loglip", "suite")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.key = key
        self.line = line


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt_float(text: str):
    return None if text.strip().lower() in ("none", "cfl", "") else float(text)


@dataclass
class RunConfig:
    scenario: str = "simulate"
    d: int = 1
    n: int = 256
    L: float = 8.0
    bc: str = "periodic"
    epsilon: float = 0.0
    alpha: float = 0.0
    law: str = "linear"
    m: float = 2.0  # used only with law=power
    T: float = 0.5
    dt: float | None = None
    safety: float = 0.4
    sample_dt: float | None = 0.05
    scheme: str = "upwind"
    floor: float = 1e-300
    mass_tol: float = 1e-10
    linf_ceiling: float = math.inf
    dt_floor: float = 0.0
    chemotaxis: bool = True
    mass: float = 1.0
    initial: str = "gaussian(0,1)"
    v0: str | None = None  # elliptic | zero | kink | file:<path>
    reference: str = "gaussian(0,0.7)"  # ';'-separated profile specs
    perturbation: float = 1e-2  # D(0) of the perturbed partner in verify-contraction
    partner: str = "gaussian(0.5,0.8)"  # direction of the perturbation
    endpoint: str = "gaussian(1,0.5)"  # second geodesic endpoint for verify-convexity
    weighted: bool = False
    C: float | None = None  # None: fitted
    s_samples: int = 17
    fit_T: float = 0.05
    fit_sample_dt: float = 0.0025
    convexity_tol: float = 1e-3
    pair_budget: int = 20000
    seed: int = 0
    out: str | None = None

    # -- derived objects ------------------------------------------------------
    def grid(self) -> Grid:
        return Grid(self.d, self.n, self.L, self.bc)

    def diffusion_law(self) -> DiffusionLaw:
        return DiffusionLaw.linear() if self.law == "linear" else DiffusionLaw.power(self.m)

    def system_params(self, **overrides) -> SystemParams:
        p = SystemParams(self.grid(), eps=self.epsilon, alpha=self.alpha, law=self.diffusion_law(), T=self.T,
                         dt=self.dt, safety=self.safety, sample_dt=self.sample_dt, scheme=self.scheme,
                         floor=self.floor, mass_tol=self.mass_tol, linf_ceiling=self.linf_ceiling,
                         dt_floor=self.dt_floor, chemotaxis=self.chemotaxis)
        return replace(p, **overrides) if overrides else p

    def initial_density(self, grid: Grid | None = None) -> DensityField:
        return build_profile(self.initial, grid or self.grid(), self.mass)

    def references(self, grid: Grid | None = None) -> list[DensityField]:
        return [build_profile(s, grid or self.grid(), self.mass) for s in self.reference.split(";") if s.strip()]

    def initial_chemo(self, rho: DensityField) -> ChemoField | None:
        if self.epsilon == 0:
            return None
        return build_chemo(self.v0, rho, self.alpha)

    def as_text(self) -> str:
        """Re-parseable ``key=value`` text; unset optional keys are left out."""
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self) if getattr(self, f.name) is not None)


_PARSERS = {
    "scenario": str, "d": int, "n": int, "L": float, "bc": str, "epsilon": float, "alpha": float,
    "law": str, "m": float, "T": float, "dt": _opt_float, "safety": float, "sample_dt": _opt_float,
    "scheme": str, "floor": float, "mass_tol": float, "linf_ceiling": float, "dt_floor": float,
    "chemotaxis": _bool, "mass": float, "initial": str, "v0": lambda s: s.strip() or None,
    "reference": str, "perturbation": float, "partner": str, "endpoint": str, "weighted": _bool,
    "C": _opt_float, "s_samples": int, "fit_T": float, "fit_sample_dt": float, "convexity_tol": float,
    "pair_budget": int, "seed": int, "out": str,
}
_ALIASES = {"eps": "epsilon"}

_ASSIGN = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(\S+)")


def _tokens(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        pos = 0
        while pos < len(line):
            match = _ASSIGN.match(line, pos)
            if not match:
                raise ConfigError(f"cannot parse {line[pos:]!r} (expected key=value)", line=lineno)
            yield lineno, match.group(1), match.group(2)
            pos = match.end()
            while pos < len(line) and line[pos].isspace():
                pos += 1


def parse_config(text: str, overrides=()) -> RunConfig:
    """Parse and validate; ``overrides`` are extra ``key=value`` strings applied last."""
    values: dict = {}
    origin: dict = {}
    entries = list(_tokens(text))
    entries += [(None, *o.split("=", 1)) for o in overrides if "=" in o]
    for bad in (o for o in overrides if "=" not in o):
        raise ConfigError(f"override {bad!r} is not key=value")
    for lineno, key, raw in entries:
        key = _ALIASES.get(key.strip(), key.strip())
        if key not in _PARSERS:
            raise ConfigError(f"unknown key {key!r}", key, lineno)
        try:
            values[key] = _PARSERS[key](raw.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", key, lineno) from None
        origin[key] = lineno
    if "m" in values and "law" not in values:
        values["law"] = "power"  # an exponent on its own selects the power law
    cfg = RunConfig(**values)
    validate(cfg, origin)
    return cfg


def load_config(path, overrides=()) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), overrides)


def validate(cfg: RunConfig, origin: dict | None = None) -> None:
    origin = origin or {}

    def fail(key, message):
        raise ConfigError(message, key, origin.get(key))

    if cfg.scenario not in SCENARIOS:
        fail("scenario", f"scenario must be one of {', '.join(SCENARIOS)}")
    if cfg.d not in (1, 2):
        fail("d", "d must be 1 or 2")
    if cfg.n < 8:
        fail("n", "n must be >= 8")
    if cfg.L <= 0:
        fail("L", "L must be positive")
    if cfg.bc not in BOUNDARIES:
        fail("bc", f"bc must be one of {', '.join(BOUNDARIES)}")
    if cfg.epsilon < 0:
        fail("epsilon", "epsilon must be >= 0")
    if cfg.alpha < 0:
        fail("alpha", "alpha must be >= 0")
    if cfg.law not in ("linear", "power"):
        fail("law", "law must be linear or power")
    if cfg.law == "power":
        if cfg.m == 1.0:
            fail("m", "m=1 is the linear law; set law=linear")
        try:
            cfg.diffusion_law().check_admissible(cfg.d)
        except AdmissibilityError as exc:
            fail("m", str(exc))
    if cfg.T <= 0:
        fail("T", "T must be positive")
    if cfg.dt is not None and cfg.dt <= 0:
        fail("dt", "dt must be positive (or cfl)")
    if not 0 < cfg.safety <= 1:
        fail("safety", "safety must lie in (0, 1]")
    if cfg.sample_dt is not None and not 0 < cfg.sample_dt <= cfg.T:
        fail("sample_dt", "sample_dt must lie in (0, T]")
    if cfg.scheme not in SCHEMES:
        fail("scheme", f"scheme must be one of {', '.join(SCHEMES)}")
    if cfg.scheme == "central" and (cfg.d != 1 or cfg.law != "linear"):
        fail("scheme", "the central scheme needs d=1 and the linear law")
    if cfg.mass <= 0:
        fail("mass", "mass must be positive")
    if cfg.epsilon > 0 and cfg.chemotaxis and cfg.v0 is None:
        fail("v0", "v0 required when epsilon>0")
    if cfg.s_samples < 2:
        fail("s_samples", "s_samples must be >= 2")
    if cfg.perturbation < 0:
        fail("perturbation", "perturbation must be >= 0")
    if cfg.scenario == "verify-convexity" and cfg.d != 1:
        fail("scenario", "verify-convexity builds 1D geodesics; set d=1")
    if cfg.scenario == "verify-contraction" and cfg.perturbation > 0 and cfg.d != 1:
        fail("perturbation", "perturbed partners are built along 1D geodesics; use d=1 or perturbation=0")
    for key in ("initial", "partner", "endpoint"):
        _check_profile_syntax(getattr(cfg, key), key, fail)
    for spec in cfg.reference.split(";"):
        if spec.strip():
            _check_profile_syntax(spec, "reference", fail)
    if cfg.v0 is not None and not (cfg.v0 in ("elliptic", "zero", "kink") or cfg.v0.startswith("file:")):
        fail("v0", "v0 must be elliptic, zero, kink or file:<path>")


# -- named profiles ---------------------------------------------------------------

_PROFILE = re.compile(r"^([a-z\-]+)(?:\(([^)]*)\))?$")
_PROFILE_ARITY = {"gaussian": (0, 2), "bump": (0, 2), "uniform-slab": (0, 2), "two-bumps": (0, 2),
                  "barenblatt": (1, 2)}


def _split_profile(spec: str):
    spec = spec.strip()
    if spec.startswith("file:"):
        return "file", [spec[5:]]
    m = _PROFILE.match(spec)
    if not m:
        raise ValueError(f"cannot parse profile {spec!r}")
    name, args = m.group(1), m.group(2)
    if name not in _PROFILE_ARITY:
        raise ValueError(f"unknown profile {name!r} (known: {', '.join(_PROFILE_ARITY)}, file:<path>)")
    nums = [float(a) for a in args.split(",")] if args and args.strip() else []
    lo, hi = _PROFILE_ARITY[name]
    if not lo <= len(nums) <= hi:
        raise ValueError(f"profile {name} takes {lo} to {hi} arguments")
    return name, nums


def _check_profile_syntax(spec, key, fail):
    try:
        _split_profile(spec)
    except ValueError as exc:
        fail(key, str(exc))


def build_profile(spec: str, grid: Grid, total_mass: float = 1.0) -> DensityField:
    name, args = _split_profile(spec)
    if name == "file":
        rho, _ = read_snapshot(args[0], grid.bc)
        if rho.grid.shape != grid.shape:
            raise ValueError(f"snapshot {args[0]} does not match the configured grid")
        return rho
    if name == "gaussian":
        return profiles.gaussian(grid, *args, mass=total_mass)
    if name == "bump":
        return profiles.bump(grid, *args, mass=total_mass)
    if name == "uniform-slab":
        return profiles.uniform_slab(grid, *args, mass=total_mass)
    if name == "two-bumps":
        return profiles.two_bumps(grid, *args, mass=total_mass)
    t = args[0]
    C = args[1] if len(args) > 1 else 1.0
    return profiles.barenblatt(grid, t, C)


def build_chemo(spec: str | None, rho: DensityField, alpha: float) -> ChemoField:
    g = rho.grid
    if spec in (None, "elliptic"):
        return solve_elliptic(rho, alpha)
    if spec == "zero":
        return ChemoField(g, np.zeros(g.shape))
    if spec == "kink":
        return profiles.kink_potential(g)
    v, _ = read_snapshot(spec[5:], g.bc)
    return v


# -- worker pool ------------------------------------------------------------------

def worker_count() -> int:
    raw = os.environ.get("KS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Order-preserving map over at most KS_THREADS workers."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
