"""Epsilon sweeps, slope fits and the acceptance suite."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.integrate import solve_ivp

from .conical import ConicalError, Intersection, is_conical, locate_intersection, stability_probe
from .model import ModelError, OperatorTriple, resolve
from .nonmixing import NonMixingField, integral_curve
from .planner import ControlPath, PlanError, SpreadTarget, plan, splitting_angles, vertexless_variants
from .propagate import PropagationError, propagate_effective, propagate_full, results_to_csv
from .spectral import Disc, SpectralError, eigvals_many

SWEEP_SCHEMA = "conic-climb/sweep/1"
REPORT_SCHEMA = "conic-climb/acceptance/1"
EPS_FLOOR = 1e-3
DEFAULT_EPSILONS = tuple(float(e) for e in np.geomspace(1e-3, 1e-1, 7))
DOMAIN_ERRORS = (ModelError, SpectralError, ConicalError, PlanError, PropagationError, ValueError)


class ExperimentError(RuntimeError):
    pass


class FitRefused(ExperimentError):
    pass


# ---------------------------------------------------------------------------
# slope fits

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    halfwidth: float
    residuals: tuple
    r_squared: float
    n: int

    def to_json(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "halfwidth": self.halfwidth,
                "residuals": list(self.residuals), "r_squared": self.r_squared, "n": self.n}


def fit_slope(epsilons, errors, confidence: float = 0.95) -> SlopeFit:
    """Least-squares fit log(error) = q log(eps) + c.

    The half-width is the Student-t confidence half-width of q from the residuals.
    """
    e = np.asarray(epsilons, dtype=float)
    y = np.asarray(errors, dtype=float)
    ok = np.isfinite(e) & np.isfinite(y) & (e > 0) & (y > 0)
    if np.count_nonzero(ok) < 4:
        raise FitRefused(f"slope fit needs >= 4 positive finite points, got {int(np.count_nonzero(ok))}")
    lx, ly = np.log(e[ok]), np.log(y[ok])
    if np.ptp(lx) == 0:
        raise FitRefused("slope fit needs distinct epsilon values")
    res = stats.linregress(lx, ly)
    n = int(lx.size)
    resid = ly - (res.slope * lx + res.intercept)
    tq = float(stats.t.ppf(0.5 + confidence / 2, n - 2))
    return SlopeFit(float(res.slope), float(res.intercept), tq * float(res.stderr),
                    tuple(float(r) for r in resid), float(res.rvalue ** 2), n)


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepSpec:
    """What to sweep: a model, a pre-planned path and a list of epsilons.

    ``model`` and ``path`` may be objects or references (a model ref for
    ``resolve`` and a path JSON file).  The target defaults to the one stored
    in the path metadata.
    """
    model: object
    path: object
    epsilons: tuple = DEFAULT_EPSILONS
    repetitions: int = 1
    output: str | None = None
    target: tuple | None = None
    expected: float | None = None
    tolerance: float = 0.15
    c_step: float = 0.1
    threads: int = 1
    allow_small_eps: bool = False
    label: str = ""

    def __post_init__(self):
        eps = np.asarray(self.epsilons, dtype=float).reshape(-1)
        if eps.size == 0 or np.any(~np.isfinite(eps)) or np.any(eps <= 0):
            raise ValueError("epsilon values must be strictly positive")
        if np.unique(eps).size < 4:
            raise ValueError("a sweep needs >= 4 distinct epsilon values")
        if math.log10(eps.max() / eps.min()) < 1.5 - 1e-12:
            raise ValueError("epsilon values must span >= 1.5 decades")
        if eps.min() < EPS_FLOOR * (1 - 1e-12) and not self.allow_small_eps:
            raise ValueError(f"epsilon below {EPS_FLOOR} needs allow_small_eps (cost grows like 1/eps^2)")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        self.epsilons = tuple(float(x) for x in eps)

    def resolve_model(self) -> OperatorTriple:
        return self.model if isinstance(self.model, OperatorTriple) else resolve(str(self.model))

    def resolve_path(self) -> ControlPath:
        if isinstance(self.path, ControlPath):
            return self.path
        return ControlPath.from_json(json.loads(Path(self.path).read_text()))

    def resolve_target(self, path: ControlPath) -> np.ndarray:
        if self.target is not None:
            return SpreadTarget(tuple(self.target)).array
        if "target" not in path.meta:
            raise ValueError("no target given and the path carries none")
        return SpreadTarget(tuple(path.meta["target"])).array


@dataclass
class ScalingReport:
    epsilons: tuple
    errors: tuple
    results: list = field(repr=False)
    failures: list
    fit: SlopeFit | None
    expected: float | None
    tolerance: float
    label: str = ""

    @property
    def verdict(self) -> str:
        if self.fit is None:
            return "no fit"
        if self.expected is None:
            return "n/a"
        return "pass" if abs(self.fit.slope - self.expected) <= self.tolerance else "fail"

    @property
    def slope(self) -> float:
        return math.nan if self.fit is None else self.fit.slope

    def to_json(self) -> dict:
        return {"schema": SWEEP_SCHEMA, "label": self.label, "epsilons": list(self.epsilons),
                "errors": [None if not np.isfinite(e) else e for e in self.errors],
                "failures": self.failures, "fit": None if self.fit is None else self.fit.to_json(),
                "expected": self.expected, "tolerance": self.tolerance, "verdict": self.verdict}

    def csv(self, timing: bool = False) -> str:
        return results_to_csv(self.results, timing)


def sweep(spec: SweepSpec, model: OperatorTriple | None = None, path: ControlPath | None = None) -> ScalingReport:
    """Run propagate_full for every epsilon and fit the error exponent.

    Points run in a thread pool; rows come back in epsilon order.  Failed points
    are recorded and left out of the fit.
    """
    model = spec.resolve_model() if model is None else model
    path = spec.resolve_path() if path is None else path
    target = spec.resolve_target(path)
    if target.size > model.dim:
        raise ValueError(f"target has {target.size} entries but the model has {model.dim} levels")
    jobs = [(e, r) for e in spec.epsilons for r in range(spec.repetitions)]

    def run(job):
        try:
            return propagate_full(model, path, job[0], target=target, c_step=spec.c_step)
        except DOMAIN_ERRORS as exc:
            return exc

    if spec.threads > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            outs = list(pool.map(run, jobs))
    else:
        outs = [run(j) for j in jobs]
    results, failures, errors = [], [], []
    for e in spec.epsilons:
        vals = []
        for (ej, _), out in zip(jobs, outs):
            if ej != e:
                continue
            if isinstance(out, Exception):
                failures.append({"epsilon": e, "error": f"{type(out).__name__}: {out}"})
            else:
                results.append(out)
                vals.append(out.error)
        errors.append(float(np.mean(vals)) if vals else math.nan)
    try:
        fit = fit_slope(spec.epsilons, errors)
    except FitRefused as exc:
        failures.append({"epsilon": None, "error": f"FitRefused: {exc}"})
        fit = None
    report = ScalingReport(spec.epsilons, tuple(errors), results, failures, fit, spec.expected,
                           spec.tolerance, spec.label)
    if spec.output:
        write_sweep(report, spec.output)
    return report


def write_sweep(report: ScalingReport, stem, timing: bool = False) -> tuple[Path, Path]:
    """Write ``stem.csv`` (one row per run) and ``stem.json`` (the fit)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
    with open(csv_path, "w", newline="") as fh:
        fh.write(report.csv(timing))
    json_path.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


# ---------------------------------------------------------------------------
# reference geometry for two-level vertex experiments

def two_level_vertex_path(model: OperatorTriple, intersection: Intersection, beta: float, scale: float = 1.0,
                          n_samples: int | None = None, seed: int = 0) -> ControlPath:
    """Single-vertex path splitting level 0 into (cos beta, sin beta).

    The start sits off the approach ray at ubar + scale * (0.9, 0.3); the path
    enters along angle 0 and ends on the exit ray at distance 0.9 * scale.
    Enlarging ``scale`` is equivalent to shrinking epsilon for a linear family,
    which moves a fixed epsilon window into the asymptotic regime.
    """
    ubar = intersection.point
    a_plus = splitting_angles(intersection, 0.0, beta)[0]
    u0 = ubar + scale * np.array([0.9, 0.3])
    u1 = ubar + 0.9 * scale * np.array([math.cos(a_plus), math.sin(a_plus)])
    target = SpreadTarget((math.cos(beta), math.sin(beta)))
    kw = {} if n_samples is None else {"n_samples": n_samples}
    return plan(model, [intersection], u0, u1, target, radius=0.3 * scale, approach_angles=[0.0],
                seed=seed, **kw)


# ---------------------------------------------------------------------------
# acceptance suite

CRITERIA = {
    1: ("conicity certification", 1.0),
    2: ("orthogonal invariance", 1.0),
    3: ("non-mixing defining property", 10.0),
    4: ("splitting law", 300.0),
    5: ("epsilon exponent, non-mixing", 1200.0),
    6: ("sqrt(epsilon) exponent, generic vertex", 2400.0),
    7: ("three-level climb", 600.0),
    8: ("effective vs full", 300.0),
    9: ("structural stability", 30.0),
    10: ("determinism", math.inf),
}


@dataclass
class AcceptanceConfig:
    two_level: str = "builtin:pauli2"
    three_level: str = "builtin:three_level"
    flow_models: tuple = ("builtin:pauli2", "builtin:three_level", "builtin:galerkin_demo")
    seed: int = 0
    criteria: tuple | None = None
    sabotage: bool = False
    sweep_scale: float = 100.0
    sweep_epsilons: tuple = DEFAULT_EPSILONS
    threads: int = 1
    tolerances: dict = field(default_factory=dict)

    def tol(self, key, default):
        return float(self.tolerances.get(key, default))


@dataclass
class AcceptanceReport:
    records: list
    seed: int
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r["verdict"] == "pass" for r in self.records)

    def record(self, cid: int) -> dict:
        return next(r for r in self.records if r["id"] == cid)

    def to_json(self, timing: bool = False) -> dict:
        out = {"schema": REPORT_SCHEMA, "seed": self.seed, "passed": self.passed, "criteria": self.records}
        if timing:
            out["seconds"] = {str(k): v for k, v in self.timings.items()}
        return out

    def dumps(self, timing: bool = False) -> str:
        return json.dumps(_clean(self.to_json(timing)), indent=2, sort_keys=True) + "\n"

    def lines(self) -> list[str]:
        return [f"[{r['verdict'].upper():7s}] {r['id']:2d} {r['name']}: {r.get('summary', r.get('reason', ''))}"
                for r in self.records]


def _clean(x):
    """Replace non-finite floats so the JSON stays standard."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _verdict(ok: bool) -> str:
    return "pass" if ok else "fail"


def _pauli_intersection(model: OperatorTriple, seed: int) -> Intersection:
    try:
        return is_conical(model, (0.0, 0.0), 0, ident="x0")
    except ConicalError:
        rng = np.random.default_rng(seed)
        return locate_intersection(model, 0, rng.uniform(-0.5, 0.5, 2), ident="x0")


def _crit1(cfg, models):
    m = models["two_level"]
    x = _pauli_intersection(m, cfg.seed)
    alphas = np.linspace(0.0, 2 * math.pi, 1024, endpoint=False)
    xi_err = float(np.max(np.abs(x.xi(alphas) - alphas / 2)))
    det_err = abs(abs(x.det) - 1.0)
    tol_det, tol_xi = cfg.tol("c1_det", 1e-10), cfg.tol("c1_xi", 1e-8)
    return {"values": {"abs_det": abs(x.det), "det_error": det_err, "xi_max_error": xi_err},
            "tolerance": {"det": tol_det, "xi": tol_xi},
            "verdict": _verdict(det_err <= tol_det and xi_err <= tol_xi),
            "summary": f"|det|-1 = {det_err:.2e}, max|Xi - a/2| = {xi_err:.2e}"}


def _crit2(cfg, models):
    from .conical import conicity_matrix
    m = models["two_level"]
    x = _pauli_intersection(m, cfg.seed)
    base = abs(x.det)
    rng = np.random.default_rng(cfg.seed)
    worst = 0.0
    for _ in range(500):
        th = rng.uniform(0, 2 * math.pi)
        q = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        if rng.random() < 0.5:
            q = q @ np.diag([1.0, -1.0])
        v = x.limit_basis @ q
        worst = max(worst, abs(abs(conicity_matrix(m, v[:, 0], v[:, 1]).det) - base))
    tol = cfg.tol("c2_det", 1e-12)
    return {"values": {"max_change": worst, "rebasings": 500}, "tolerance": {"det_change": tol},
            "verdict": _verdict(worst < tol), "summary": f"max | |det| change | = {worst:.2e}"}


def _flow_sample(fld, start, gap0, t_max):
    """Integral curve through ``start`` until the gap falls to 0.6 * gap0 or t_max.

    It also stops on leaving the field region or when a neighbouring level comes
    within 0.05 * gap0 of the pair, or when the rate F drops below 5% of its
    starting value.

    Returns the stop time and a dense-output evaluator for finite differences.
    """
    def drop(_t, y):
        w = eigvals_many(fld.model, y[None])[0]
        return w[fld.j + 1] - w[fld.j] - 0.6 * gap0
    drop.terminal = True

    def leave(_t, y):
        return 1.0 if fld.region.contains(y) else -1.0
    leave.terminal = True

    def crowd(_t, y):
        # a neighbouring level closing in would make the eigenvectors non-smooth
        w = eigvals_many(fld.model, y[None])[0]
        j = fld.j
        outer = [w[j] - w[j - 1]] if j > 0 else []
        outer += [w[j + 2] - w[j + 1]] if j + 2 < len(w) else []
        return min(outer, default=np.inf) - 0.05 * gap0
    crowd.terminal = True

    rate0 = fld.rate(start)

    def stall(_t, y):
        # the field flips sign where det M vanishes
        return fld.rate(y) - 0.05 * rate0
    stall.terminal = True

    sol = solve_ivp(lambda _t, y: fld(y), (0.0, t_max), np.asarray(start, float), method="DOP853",
                    rtol=1e-12, atol=1e-14, events=(drop, leave, crowd, stall), dense_output=True)
    return float(sol.t[-1]), lambda tt: np.atleast_2d(sol.sol(np.asarray(tt, float)).T)


def _crit3(cfg, models):
    """Finite-difference d(gap)/dt + F along 10 integral curves per model, j = 0."""
    rng = np.random.default_rng(cfg.seed)
    tol = cfg.tol("c3_residual", 1e-6)
    j = 0
    worst, monotone, per_model = 0.0, True, {}
    for ref, m in models["flow"].items():
        lip = m.lipschitz()
        mres, mmono, n, tries = 0.0, True, 0, 0
        while n < 10 and tries < 200:
            tries += 1
            start = rng.uniform(-1.0, 1.0, 2)
            w = eigvals_many(m, start[None])[0]
            gap0 = float(w[j + 1] - w[j])
            if gap0 < 0.05 * lip:
                continue
            fld = NonMixingField(m, j, region=Disc(tuple(start), 2.0), sabotage=cfg.sabotage)
            rate = fld.rate(start)
            if not rate > 1e-3 * lip * lip:
                continue
            t_end, dense = _flow_sample(fld, start, gap0, 2.0 * gap0 / rate)
            if not t_end > 0:
                continue
            t, ys = integral_curve(fld, start, t_end, n_out=41)
            ts = t_end * np.linspace(0.05, 0.95, 19)
            h = 1e-3 * t_end

            def gap_at(tt):
                ww = eigvals_many(m, dense(tt))
                return ww[:, j + 1] - ww[:, j]

            # central differences at h and h/2 combined by Richardson extrapolation
            d1 = (gap_at(ts + h) - gap_at(ts - h)) / (2 * h)
            d2 = (gap_at(ts + h / 2) - gap_at(ts - h / 2)) / h
            dgap = (4 * d2 - d1) / 3
            rates = np.array([fld.rate(p) for p in dense(ts)])
            res = float(np.max(np.abs(dgap + rates)))
            gg = eigvals_many(m, ys)
            mono = bool(np.all(np.diff(gg[:, j + 1] - gg[:, j]) < 0))
            mres, mmono, n = max(mres, res), mmono and mono, n + 1
        per_model[ref] = {"curves": n, "max_residual": mres, "gap_decreasing": mmono}
        worst = max(worst, mres)
        monotone = monotone and mmono and n == 10
    ok = worst <= tol and monotone
    return {"values": {"models": per_model, "max_residual": worst, "gap_decreasing": monotone,
                       "sabotage": cfg.sabotage},
            "tolerance": {"residual": tol}, "verdict": _verdict(ok),
            "summary": f"max |d gap/dt + F| = {worst:.2e}, gap strictly decreasing: {monotone}"}


def _populations_error(res, beta):
    pops = res.populations[:2]
    return float(np.max(np.abs(pops - np.array([math.cos(beta) ** 2, math.sin(beta) ** 2]))))


def _crit4(cfg, models):
    m = models["two_level"]
    x = _pauli_intersection(m, cfg.seed)
    betas = [0.0, math.pi / 8, math.pi / 4, 3 * math.pi / 8, math.pi / 2]
    eps, eps_small = 3e-3, 7.5e-4
    tol = cfg.tol("c4_population", 5e-2)
    rows, ok = [], True
    for b in betas:
        path = two_level_vertex_path(m, x, b, seed=cfg.seed)
        e1 = _populations_error(propagate_full(m, path, eps), b)
        e2 = _populations_error(propagate_full(m, path, eps_small), b)
        rows.append({"beta": b, "error": e1, "error_small_eps": e2})
        ok = ok and e1 <= tol
    improving = max(r["error_small_eps"] for r in rows) < max(r["error"] for r in rows)
    worst = max(r["error"] for r in rows)
    return {"values": {"epsilon": eps, "epsilon_small": eps_small, "betas": rows, "improving": improving},
            "tolerance": {"population": tol}, "verdict": _verdict(ok and improving),
            "summary": f"max population error {worst:.2e} at eps={eps}, improving: {improving}"}


def _sweep_record(cfg, models, variant, expected, key):
    m = models["two_level"]
    x = _pauli_intersection(m, cfg.seed)
    path = two_level_vertex_path(m, x, math.pi / 2, scale=cfg.sweep_scale, seed=cfg.seed)
    if variant is not None:
        path = vertexless_variants(path, variant)
    spec = SweepSpec(m, path, cfg.sweep_epsilons, expected=expected, tolerance=cfg.tol(key, 0.15),
                     threads=cfg.threads, label=variant or "non-mixing")
    rep = sweep(spec, m, path)
    return rep


def _sweep_json(rep):
    d = rep.to_json()
    return {"epsilons": d["epsilons"], "errors": d["errors"], "fit": d["fit"], "failures": d["failures"]}


def _crit5(cfg, models):
    rep = _sweep_record(cfg, models, None, 1.0, "c5_slope")
    n_ok = sum(np.isfinite(rep.errors))
    ok = rep.verdict == "pass" and n_ok >= 6
    return {"values": {"scale": cfg.sweep_scale, "sweep": _sweep_json(rep)},
            "tolerance": {"slope": [1.0 - rep.tolerance, 1.0 + rep.tolerance], "min_points": 6},
            "verdict": _verdict(ok), "summary": f"slope {rep.slope:.4f} over {n_ok} points"}


def _crit6(cfg, models):
    gen = _sweep_record(cfg, models, "generic_c2", 0.5, "c6_slope")
    jet = _sweep_record(cfg, models, "jet_matched", 1.0, "c6_slope")
    ok = gen.verdict == "pass" and jet.verdict == "pass"
    return {"values": {"scale": cfg.sweep_scale, "generic_c2": _sweep_json(gen), "jet_matched": _sweep_json(jet)},
            "tolerance": {"generic_c2": [0.5 - gen.tolerance, 0.5 + gen.tolerance],
                          "jet_matched": [1.0 - jet.tolerance, 1.0 + jet.tolerance]},
            "verdict": _verdict(ok),
            "summary": f"generic_c2 slope {gen.slope:.4f}, jet_matched slope {jet.slope:.4f}"}


def _three_level_intersections(m, seed):
    rng = np.random.default_rng(seed)
    found = []
    for j, (seed_pt, region) in enumerate([((1.2, 0.2), Disc((4 / 3, 0.0), 0.5)), ((0.1, 0.1), Disc((0.0, 0.0), 0.5))]):
        try:
            found.append(locate_intersection(m, j, seed_pt, region, ident=f"x{j}"))
        except ConicalError:
            found.append(locate_intersection(m, j, rng.uniform(-1, 1, 2), ident=f"x{j}"))
    return found


def _crit7(cfg, models):
    m = models["three_level"]
    xs = _three_level_intersections(m, cfg.seed)
    eps = 3e-3
    top = SpreadTarget((0.0, 0.0, 1.0))
    even = SpreadTarget.normalized((1.0, 1.0, 1.0))
    u0, u1 = (2.0, 0.5), (-0.6, 0.3)
    r_top = propagate_full(m, plan(m, xs, u0, u1, top, seed=cfg.seed), eps, target=top)
    r_even = propagate_full(m, plan(m, xs, u0, u1, even, seed=cfg.seed), eps, target=even)
    tol_pop, tol_mod = cfg.tol("c7_population", 0.95), cfg.tol("c7_moduli", 7e-2)
    pop2 = float(r_top.populations[2])
    dist = float(np.linalg.norm(r_even.overlaps - even.array))
    return {"values": {"epsilon": eps, "level2_population": pop2, "even_moduli": r_even.overlaps.tolist(),
                       "even_distance": dist},
            "tolerance": {"level2_population_min": tol_pop, "moduli_distance": tol_mod},
            "verdict": _verdict(pop2 >= tol_pop and dist <= tol_mod),
            "summary": f"level-2 population {pop2:.5f}, spread distance {dist:.2e}"}


def _crit8(cfg, models):
    """Full vs adiabatic effective dynamics on a full-transfer vertex path.

    The disagreement is the distance between overlap-modulus vectors.  On the
    emptied level the modulus is first order in epsilon, while its population is
    second order.
    """
    m = models["two_level"]
    x = _pauli_intersection(m, cfg.seed)
    beta = math.pi / 2
    path = two_level_vertex_path(m, x, beta, seed=cfg.seed)
    eps0 = cfg.tol("c8_eps0", 8e-3)
    epss = [eps0 / 2 ** k for k in range(4)]
    rows = []
    for e in epss:
        full = propagate_full(m, path, e)
        eff = propagate_effective(m, path, e, coupling=False)
        d = float(np.linalg.norm(full.overlaps[:2] - eff.overlaps))
        rows.append({"epsilon": e, "disagreement": d, "ratio": d / e})
    ratios = np.array([r["ratio"] for r in rows])
    spread = float(np.max(np.abs(ratios / ratios[-1] - 1.0)))
    tol = cfg.tol("c8_ratio_spread", 0.3)
    return {"values": {"beta": beta, "runs": rows, "ratio_spread": spread},
            "tolerance": {"ratio_spread": tol}, "verdict": _verdict(spread <= tol),
            "summary": f"C = disagreement/eps in [{ratios.min():.3e}, {ratios.max():.3e}], spread {spread:.2f}"}


def _crit9(cfg, models):
    m = models["two_level"]
    x = _pauli_intersection(m, cfg.seed)
    rep = stability_probe(m, x, 1e-3, 20, seed=cfg.seed)
    tol = cfg.tol("c9_displacement", 1e-2)
    ok = rep.success and rep.max_displacement <= tol
    return {"values": rep.to_json(), "tolerance": {"displacement": tol, "delta": 1e-3, "trials": 20},
            "verdict": _verdict(ok),
            "summary": f"{20 - len(rep.failures)}/20 relocated, max displacement {rep.max_displacement:.2e}"}


def _crit10(cfg, models):
    sub = AcceptanceConfig(cfg.two_level, cfg.three_level, cfg.flow_models, cfg.seed, (1, 2, 3, 9),
                           cfg.sabotage, cfg.sweep_scale, cfg.sweep_epsilons, 1, dict(cfg.tolerances))
    a = acceptance_suite(sub).dumps()
    b = acceptance_suite(sub).dumps()
    return {"values": {"rerun_criteria": [1, 2, 3, 9], "identical": a == b},
            "tolerance": {"identical": True}, "verdict": _verdict(a == b),
            "summary": "repeated runs identical" if a == b else "repeated runs differ"}


_RUNNERS = {1: _crit1, 2: _crit2, 3: _crit3, 4: _crit4, 5: _crit5, 6: _crit6, 7: _crit7, 8: _crit8,
            9: _crit9, 10: _crit10}
_NEEDS = {1: ("two_level",), 2: ("two_level",), 3: ("flow",), 4: ("two_level",), 5: ("two_level",),
          6: ("two_level",), 7: ("three_level",), 8: ("two_level",), 9: ("two_level",), 10: ("two_level",)}


def _load_models(cfg) -> tuple[dict, dict]:
    models, problems = {}, {}
    for key, ref in (("two_level", cfg.two_level), ("three_level", cfg.three_level)):
        try:
            models[key] = resolve(ref)
        except (ModelError, OSError, ValueError) as exc:
            problems[key] = f"model {ref!r} unavailable: {exc}"
    flow = {}
    for ref in cfg.flow_models:
        try:
            flow[ref] = resolve(ref)
        except (ModelError, OSError, ValueError) as exc:
            problems["flow"] = f"model {ref!r} unavailable: {exc}"
    if "flow" not in problems:
        models["flow"] = flow
    return models, problems


def acceptance_suite(config: AcceptanceConfig | None = None, progress=None) -> AcceptanceReport:
    """Run the acceptance criteria and collect per-criterion numbers and verdicts.

    Failures, including unexpected domain errors, become verdicts.  Timings go to
    ``report.timings`` only, so the JSON is reproducible.
    """
    cfg = AcceptanceConfig() if config is None else config
    ids = sorted(CRITERIA) if cfg.criteria is None else sorted(int(c) for c in cfg.criteria)
    models, problems = _load_models(cfg)
    records, timings = [], {}
    for cid in ids:
        if cid not in CRITERIA:
            raise ValueError(f"unknown criterion {cid}")
        name, limit = CRITERIA[cid]
        rec = {"id": cid, "name": name, "runtime_limit_s": None if math.isinf(limit) else limit}
        missing = [problems[k] for k in _NEEDS[cid] if k in problems]
        t0 = time.perf_counter()
        if missing:
            rec.update(verdict="not run", reason="; ".join(missing))
        else:
            try:
                rec.update(_RUNNERS[cid](cfg, models))
            except DOMAIN_ERRORS as exc:
                rec.update(verdict="fail", reason=f"{type(exc).__name__}: {exc}")
        timings[cid] = time.perf_counter() - t0
        records.append(_clean(rec))
        if progress is not None:
            progress(rec, timings[cid])
    return AcceptanceReport(records, cfg.seed, timings)
