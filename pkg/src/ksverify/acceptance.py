"""The acceptance battery: twelve numbered checks with fixed tolerances.

Each ``criterion_N`` runs its own simulations and returns a
:class:`CriterionResult`; ``run_all`` executes them in order. Every
trajectory produced here is also recorded in a shared run log so the
conservation check can audit all of them.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import profiles
from .chemo import PHI_BREAK, _PHI_SHIFT, solve_elliptic
from .config import parallel_map
from .dynamics import SystemParams, Trajectory, simulate
from .energy import dissipation_identity, is_displacement_convex
from .fields import DensityField, Grid
from .laws import DiffusionLaw
from .transport import (ProductState, displacement_interpolate, w2_1d, w2_atoms_1d, w2_discrete,
                        w2_h_minus1_bound)
from .verify import (OsgoodMachinery, contraction_check, distance_series, evi_check, fit_geodesic_constants,
                     omega, omega_convexity_check)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    summary: str
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.title}: {self.summary} ({self.seconds:.1f}s)"


@dataclass
class RunLog:
    """Conservation and positivity figures of every trajectory run by the battery."""

    entries: list = field(default_factory=list)

    def add(self, label: str, traj: Trajectory) -> Trajectory:
        m = traj.column("mass")
        self.entries.append({
            "label": label,
            "step_drift": float(np.max(np.abs(traj.column("mass_drift")))),
            "total_drift": float(abs(m[-1] / m[0] - 1.0)),
            "min_value": float(np.min(traj.column("min_value"))),
            "status": traj.status,
        })
        return traj


RUN_LOG = RunLog()


def _sim(label, params, rho0, v0=None, log: RunLog | None = None):
    return (log or RUN_LOG).add(label, simulate(params, rho0, v0))


def _timed(number, title, fn):
    t0 = time.perf_counter()
    passed, summary, metrics = fn()
    return CriterionResult(number, title, bool(passed), summary, metrics, time.perf_counter() - t0)


# 1 -----------------------------------------------------------------------------

def criterion_1(log=None) -> CriterionResult:
    def run():
        t0 = time.perf_counter()
        g = Grid(1, 512, 10.0)
        heat = _sim("heat", SystemParams(g, T=0.25, chemotaxis=False), profiles.gaussian(g, 0.0, 1.0, 1.0), log=log)
        exact = profiles.gaussian(g, 0.0, math.sqrt(1.0 + 2 * 0.25), 1.0)
        heat_err = float(np.abs(heat.rho_at(-1).values - exact.values).sum() * g.h)
        heat_time = time.perf_counter() - t0

        t0 = time.perf_counter()
        g = Grid(1, 256, 5.0)
        start = profiles.barenblatt(g, 1.0)
        pm = _sim("barenblatt", SystemParams(g, T=1.0, law=DiffusionLaw.power(2), chemotaxis=False), start, log=log)
        target = profiles.barenblatt(g, 2.0)
        pm_err = float(np.abs(pm.rho_at(-1).values - target.values).sum() * g.h)
        pm_time = time.perf_counter() - t0
        ok = heat_err <= 1e-3 and pm_err <= 1e-2 and heat_time <= 10 and pm_time <= 10
        return ok, (f"heat L1={heat_err:.2e} ({heat_time:.1f}s), Barenblatt L1={pm_err:.2e} ({pm_time:.1f}s)"), \
            {"heat_l1": heat_err, "barenblatt_l1": pm_err, "heat_seconds": heat_time, "barenblatt_seconds": pm_time}

    return _timed(1, "exact-solution solver checks", run)


# 2 -----------------------------------------------------------------------------

def _conservation_battery(log: RunLog):
    g = Grid(1, 256, 8.0)
    rho = profiles.two_bumps(g, 2.0, 0.5, 1.0)
    for eps, alpha in ((0, 0), (0, 1), (1, 0), (1, 1)):
        v0 = solve_elliptic(rho, alpha) if eps else None
        _sim(f"ks1d eps={eps} alpha={alpha}", SystemParams(g, eps=eps, alpha=alpha, T=0.5), rho, v0, log=log)
    _sim("ks1d power m=2", SystemParams(g, alpha=1.0, law=DiffusionLaw.power(2), T=0.5), rho, log=log)
    _sim("ks1d central", SystemParams(g, alpha=1.0, T=0.5, scheme="central"), rho, log=log)
    g2 = Grid(2, 96, 5.0, "free-space-padded")
    r2 = profiles.gaussian(g2, 0.0, 0.7, 1.5 * 8 * math.pi)
    _sim("ks2d supercritical", SystemParams(g2, T=1.0, linf_ceiling=10 * r2.values.max()), r2, log=log)


def criterion_2(log: RunLog | None = None) -> CriterionResult:
    log = log or RUN_LOG

    def run():
        _conservation_battery(log)
        worst_step = max(e["step_drift"] for e in log.entries)
        worst_total = max(e["total_drift"] for e in log.entries)
        lowest = min(e["min_value"] for e in log.entries)
        ok = worst_step <= 1e-8 and worst_total <= 1e-8 and lowest >= 0.0
        return ok, (f"{len(log.entries)} runs, max step drift {worst_step:.1e}, "
                    f"max total drift {worst_total:.1e}, min cell {lowest:.1e}"), \
            {"runs": len(log.entries), "step_drift": worst_step, "total_drift": worst_total, "min_value": lowest}

    return _timed(2, "conservation and positivity", run)


# 3 -----------------------------------------------------------------------------

def entropy_fisher_mismatch(n: int, log=None) -> float:
    g = Grid(1, n, 8.0)
    tr = _sim(f"heat n={n}", SystemParams(g, T=0.5, chemotaxis=False), profiles.gaussian(g, 0.0, 1.0, 1.0), log=log)
    res = dissipation_identity(tr.column("t"), tr.column("energy"), tr.column("fisher"))
    return float(np.max(res.relative()))


def criterion_3(log=None) -> CriterionResult:
    def run():
        a, b = entropy_fisher_mismatch(256, log), entropy_fisher_mismatch(512, log)
        ok = a <= 0.05 and b <= 0.5 * a
        return ok, f"relative mismatch n=256 {a:.2e}, n=512 {b:.2e} (ratio {a / b:.1f})", \
            {"mismatch_256": a, "mismatch_512": b}

    return _timed(3, "entropy-Fisher identity", run)


# 4 -----------------------------------------------------------------------------

def criterion_4(log=None) -> CriterionResult:
    def run():
        cases = [(1, e, a) for e, a in ((0, 0), (0, 1), (1, 0), (1, 1))] + [(2, 0, 0), (2, 0, 1)]
        worst = -math.inf
        per = {}
        for d, eps, alpha in cases:
            g = Grid(1, 256, 8.0) if d == 1 else Grid(2, 64, 6.0)
            rho = profiles.two_bumps(g, 2.0, 0.5, 1.0) if d == 1 else profiles.gaussian(g, 0.0, 1.0, 4 * math.pi)
            v0 = solve_elliptic(rho, alpha) if eps else None
            tr = _sim(f"energy d={d} eps={eps} alpha={alpha}", SystemParams(g, eps=eps, alpha=alpha, T=0.5),
                      rho, v0, log=log)
            F = tr.column("energy")
            excess = np.diff(F) - 1e-6 * (1.0 + np.abs(F[:-1]))
            per[f"d{d}_eps{eps}_alpha{alpha}"] = float(excess.max())
            worst = max(worst, float(excess.max()))
        return worst <= 0.0, f"largest per-step increase beyond slack {worst:.2e} over {len(cases)} runs", per

    return _timed(4, "energy monotonicity", run)


# 5 -----------------------------------------------------------------------------

def criterion_5() -> CriterionResult:
    def run():
        g = Grid(1, 512, 8.0)
        a = profiles.bump(g, -1.0, 2.0, 1.0)
        shift = 40
        b = DensityField(g, np.roll(a.values, shift))
        translation = abs(w2_1d(a, b) - shift * g.h)

        gu = Grid(1, 400, 2.0)
        u1, u2 = profiles.uniform_slab(gu, 0.0, 1.0, 1.0), profiles.uniform_slab(gu, 0.0, 2.0, 1.0)
        uniform = abs(w2_1d(u1, u2, quantile_count=10_000) - 1.0 / math.sqrt(3.0))

        rng = np.random.default_rng(5)
        x, y = rng.uniform(-3, 3, 100), rng.uniform(-3, 3, 100)
        wa, wb = rng.random(100), rng.random(100)
        wa, wb = wa / wa.sum(), wb / wb.sum()
        discrete = abs(w2_discrete(x, wa, y, wb) - w2_atoms_1d(x, wa, y, wb))

        r0, r1 = profiles.gaussian(g, -1.0, 0.5, 1.0), profiles.gaussian(g, 1.5, 0.8, 1.0)
        W = w2_1d(r0, r1)
        geodesic = 0.0
        for r, s in ((0.0, 0.5), (0.25, 0.75), (0.1, 0.9), (0.0, 1.0), (0.3, 0.4), (0.5, 1.0)):
            dist = w2_1d(displacement_interpolate(r0, r1, r), displacement_interpolate(r0, r1, s))
            geodesic = max(geodesic, abs(dist - (s - r) * W))
        ok = translation <= 1e-10 and uniform <= 1e-6 and discrete <= 1e-8 and geodesic <= 1e-4
        return ok, (f"translation {translation:.1e}, uniform pair {uniform:.1e}, "
                    f"simplex vs quantile {discrete:.1e}, geodesic {geodesic:.1e}"), \
            {"translation": translation, "uniform": uniform, "discrete": discrete, "geodesic": geodesic}

    return _timed(5, "transport oracles", run)


# 6 -----------------------------------------------------------------------------

H1_BOX = 6.0


def random_mixture_specs(count: int, seed: int = 2024):
    """Gaussian-mixture pairs resolved on the coarsest grid used (sigma >= 0.6)."""
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(count):
        pair = []
        for _ in range(2):
            k = int(rng.integers(1, 4))
            pair.append((rng.uniform(-2, 2, k), rng.uniform(0.6, 1.2, k), rng.uniform(0.2, 1.0, k)))
        specs.append(pair)
    return specs


def _bound_terms(n, spec):
    g = Grid(1, n, H1_BOX)
    a, b = (profiles.gaussian_mixture(g, m, s, w, 1.0) for m, s, w in spec)
    return w2_h_minus1_bound(a, b)


def richardson_slack(spec, n) -> float:
    l1, r1 = _bound_terms(n, spec)
    l2, r2 = _bound_terms(2 * n, spec)
    return abs(l1 - l2) + abs(r1 - r2)


def criterion_6() -> CriterionResult:
    def run():
        specs = random_mixture_specs(100)
        worst_margin, worst_slack = math.inf, 0.0
        for spec in specs:
            lhs, rhs = _bound_terms(256, spec)
            slack = richardson_slack(spec, 256)
            worst_slack = max(worst_slack, slack)
            worst_margin = min(worst_margin, rhs + slack - lhs)
        ratios = [richardson_slack(s, 128) / richardson_slack(s, 512) for s in specs[:10]]
        ok = worst_margin >= 0 and worst_slack <= 1e-3 and min(ratios) >= 2.0
        return ok, (f"min margin {worst_margin:.3e}, max slack {worst_slack:.1e}, "
                    f"min slack ratio 128->512 {min(ratios):.1f}"), \
            {"margin": worst_margin, "slack": worst_slack, "min_ratio": min(ratios)}

    return _timed(6, "W2 / H^-1 inequality", run)


# 7 -----------------------------------------------------------------------------

def evi_setup(n: int):
    g = Grid(1, n, 8.0)
    rho0 = profiles.two_bumps(g, 2.0, 0.5, 1.0)
    refs = [profiles.gaussian(g, 0.0, 0.7, 1.0),
            profiles.gaussian_mixture(g, [-0.9, 1.1], [0.5, 0.5], [1.0, 1.0], 1.0),
            profiles.uniform_slab(g, -2.0, 1.0, 1.0)]
    return g, rho0, [ProductState(r) for r in refs]


def evi_run(n: int, log=None):
    g, rho0, refs = evi_setup(n)
    tr = _sim(f"evi n={n}", SystemParams(g, alpha=1.0, T=0.5, sample_dt=0.01), rho0, log=log)
    return tr, [evi_check(tr, z) for z in refs]


def criterion_7(log=None) -> CriterionResult:
    def run():
        _, r128 = evi_run(128, log)
        _, r256 = evi_run(256, log)
        _, r512 = evi_run(512, log)
        c128 = max(r.C_min for r in r128)
        c256 = max(r.C_min for r in r256)
        stable = math.isfinite(c128) and math.isfinite(c256) and abs(c128 - c256) <= 0.25 * max(c128, c256)
        by_construction = max(float(np.max(r.residual_at(r.C_min)[r.included])) for r in r256)
        transfer = max(float(np.max(r.residual_at(1.5 * c256)[r.included])) for r in r512)
        ok = stable and by_construction <= 1e-12 and transfer <= 1e-12
        return ok, (f"C_min n=128 {c128:.3e}, n=256 {c256:.3e}; max residual at C_min {by_construction:.2e}, "
                    f"at 1.5 C_min on n=512 {transfer:.2e}"), \
            {"C_min_128": c128, "C_min_256": c256, "residual_cmin": by_construction, "residual_512": transfer}

    return _timed(7, "EVI", run)


# 8 -----------------------------------------------------------------------------

def perturbed_pair(n: int, delta: float, eps: float = 0.0, v0_kind: str = "elliptic", log=None):
    g = Grid(1, n, 8.0)
    rho0 = profiles.two_bumps(g, 2.0, 0.5, 1.0)
    partner = profiles.gaussian(g, 0.5, 0.8, 1.0)
    rho1 = displacement_interpolate(rho0, partner, delta / w2_1d(rho0, partner))
    p = SystemParams(g, eps=eps, alpha=1.0, T=0.5, sample_dt=0.01)
    if eps > 0:
        v0 = profiles.kink_potential(g) if v0_kind == "kink" else solve_elliptic(rho0, 1.0)
    else:
        v0 = None
    return parallel_map(lambda r: _sim(f"pair n={n} delta={delta} eps={eps}", p, r, v0, log=log), [rho0, rho1])


def scheme_gap(n: int, log=None) -> float:
    g = Grid(1, n, 8.0)
    rho0 = profiles.two_bumps(g, 2.0, 0.5, 1.0)
    runs = parallel_map(
        lambda s: _sim(f"scheme {s} n={n}", SystemParams(g, alpha=1.0, T=0.5, sample_dt=0.05, scheme=s), rho0, log=log),
        ["upwind", "central"])
    _, d2 = distance_series(*runs)
    return math.sqrt(d2[-1])


def criterion_8(log=None) -> CriterionResult:
    def run():
        metrics = {}
        ok = True
        for delta in (1e-2, 1e-3):
            a, b = perturbed_pair(256, delta, log=log)
            rep = contraction_check(a, b, tol=1e-9 * delta**2)
            metrics[f"slack_{delta:g}"] = float(rep.slack.min())
            metrics[f"C_{delta:g}"] = rep.C
            ok &= rep.passed
        gaps = [scheme_gap(n, log) for n in (128, 256, 512)]
        ratios = [gaps[i] / gaps[i + 1] for i in range(2)]
        metrics.update({"scheme_gaps": gaps, "scheme_ratios": ratios})
        ok &= min(ratios) >= 2.0
        a, b = perturbed_pair(256, 1e-2, eps=1.0, v0_kind="kink", log=log)
        wrep = contraction_check(a, b, weighted=True, tol=1e-9 * 1e-4)
        metrics["weighted_slack"] = float(wrep.slack.min())
        metrics["weighted_C"] = wrep.C
        ok &= wrep.passed
        return ok, (f"envelope slack {metrics['slack_0.01']:.1e}/{metrics['slack_0.001']:.1e}, "
                    f"scheme ratios {ratios[0]:.3f}, {ratios[1]:.3f}, weighted slack {metrics['weighted_slack']:.1e}"), \
            metrics

    return _timed(8, "expansion control and uniqueness", run)


# 9 -----------------------------------------------------------------------------

def convexity_case(law: DiffusionLaw, eps: float, n: int = 512, alpha: float = 1.0):
    g = Grid(1, n, 8.0)
    r0, r1 = profiles.gaussian(g, 0.0, 0.5, 1.0), profiles.gaussian(g, 1.0, 0.5, 1.0)
    z0 = ProductState(r0, solve_elliptic(r0, alpha) if eps else None)
    z1 = ProductState(r1, solve_elliptic(r1, alpha) if eps else None)
    s = np.linspace(0.0, 1.0, 17)
    params = SystemParams(g, eps=eps, alpha=alpha, law=law, T=0.5)
    fitted = fit_geodesic_constants(z0, z1, params, s, runner=parallel_map)
    report = omega_convexity_check(z0, z1, fitted.R_T, eps, alpha, law, s)
    return fitted, report


def criterion_9() -> CriterionResult:
    def run():
        metrics = {}
        worst = math.inf
        for law in (DiffusionLaw.linear(), DiffusionLaw.power(2)):
            for eps in (0.0, 1.0):
                fitted, rep = convexity_case(law, eps)
                key = f"{law.label}_eps{eps:g}"
                metrics[key] = {"min_slack": float(rep.slack.min()), **fitted.as_dict()}
                worst = min(worst, float(rep.slack.min()))
        return worst >= -1e-3, f"worst slack {worst:.2e} over 4 cases (17 samples each)", metrics

    return _timed(9, "omega-convexity along geodesics", run)


# 10 ----------------------------------------------------------------------------

def critical_mass_run(fraction: float, n: int = 192, log=None) -> Trajectory:
    g = Grid(2, n, 5.0, "free-space-padded")
    rho = profiles.gaussian(g, 0.0, 0.7, fraction * 8 * math.pi)
    p = SystemParams(g, T=1.0, sample_dt=0.1, linf_ceiling=10.0 * float(rho.values.max()))
    return _sim(f"critical mass {fraction}", p, rho, log=log)


def criterion_10(log=None) -> CriterionResult:
    def run():
        t0 = time.perf_counter()
        sub, sup = parallel_map(lambda f: critical_mass_run(f, log=log), [0.9, 1.5])
        elapsed = time.perf_counter() - t0
        li = sub.column("linf")
        growth = float(li.max() / li[0])
        ok = (sub.status == "ok" and sub.times[-1] == 1.0 and growth <= 2.0 and sup.blowup
              and sup.column("t")[-1] < 1.0 and elapsed <= 900)
        return ok, (f"0.9*8pi growth {growth:.2f}x to T=1; 1.5*8pi flag={sup.status} at "
                    f"t={sup.column('t')[-1]:.3f}"), \
            {"sub_growth": growth, "sup_status": sup.status, "sup_time": float(sup.column("t")[-1]),
             "seconds": elapsed}

    return _timed(10, "critical mass dichotomy", run)


# 11 ----------------------------------------------------------------------------

def criterion_11() -> CriterionResult:
    def run():
        b = PHI_BREAK
        continuity = abs(b * math.log(b) ** 2 - (b + _PHI_SHIFT))
        x = np.geomspace(1e-8, 1e4, 500)
        # sqrt(phi(x^2)) >= x, i.e. omega(y) >= y with y = x^2 and unit mass
        omega_gap = float(np.min(omega(x**2, 1.0) - x**2))
        M = OsgoodMachinery(1.0, 1.0)
        s = np.geomspace(1e-12, 1e6, 400)
        inverse = float(np.max(np.abs(M.G_inverse(M.G(s)) / s - 1.0)))
        t = np.linspace(0.0, 1.0, 11)
        anchor = 0.0
        for s0 in (1e-3, 0.3, 7.0, 1e3):
            other = OsgoodMachinery(1.0, s0)
            for d0 in (1e-6, 1e-2, 0.5, 4.0):
                base = M.envelope(d0, t, 0.8)
                anchor = max(anchor, float(np.max(np.abs(other.envelope(d0, t, 0.8) - base) / base)))
        ok = continuity <= 1e-15 and omega_gap >= 0 and inverse <= 1e-8 and anchor <= 1e-8
        return ok, (f"phi jump {continuity:.1e}, min omega(y)-y {omega_gap:.1e}, "
                    f"G inverse {inverse:.1e}, anchor {anchor:.1e}"), \
            {"continuity": continuity, "omega_gap": omega_gap, "inverse": inverse, "anchor": anchor}

    return _timed(11, "modulus machinery", run)


# 12 ----------------------------------------------------------------------------

def criterion_12() -> CriterionResult:
    def run():
        cases = [(DiffusionLaw.power(0.5), 2), (DiffusionLaw.linear(), 1), (DiffusionLaw.linear(), 2),
                 (DiffusionLaw.power(2), 1), (DiffusionLaw.power(2), 2), (DiffusionLaw.power(3), 1),
                 (DiffusionLaw.power(3), 2)]
        verdicts = {f"{law.label} d={d}": is_displacement_convex(law, d).convex for law, d in cases}
        bad = is_displacement_convex(DiffusionLaw.power(0.4), 2)
        ok = all(verdicts.values()) and not bad.convex
        return ok, (f"{sum(verdicts.values())}/{len(verdicts)} admissible laws convex; "
                    f"m=0.4 d=2 violations {len(bad.violations)}"), \
            {"verdicts": verdicts, "m04_violations": len(bad.violations)}

    return _timed(12, "displacement-convexity predicate", run)


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6,
            7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10, 11: criterion_11, 12: criterion_12}


def run_all(numbers=None, echo=print) -> list[CriterionResult]:
    out = []
    for k in numbers or sorted(CRITERIA):
        res = CRITERIA[k]()
        if echo:
            echo(res.line())
        out.append(res)
    return out
