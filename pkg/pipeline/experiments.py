"""
Experiment coordinators.

Each run_* function drives the core library for one experiment and returns a
result object; per-cell and per-trial failures are recorded in `notes` with an
ExperimentStatus instead of aborting the whole run.
"""

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.signal import find_peaks

from config.loader import get_experiment_defaults
from core.dynamics import DiscriminatorState, optimal_discriminator, simulate, step_explicit
from core.exceptions import (
    GdaKernelError,
    LinearizationError,
    NonPositiveCoefficientError,
    ScenarioValidationError,
    SimulationDivergedError,
)
from core.jacobian_oracle import report_to_dict as theorem_to_dict
from core.jacobian_oracle import verify_theorem
from core.kernel import KernelCheckReport, KernelSpec, check_assumptions
from core.scenario import (
    Scenario,
    build_scenario,
    equilibrium_points,
    offset_scenario,
    partition_isolated,
    with_overrides,
)
from core.spectrum import (
    Dominance,
    LocalLinearization,
    Phase,
    classify_phase,
    exact_stability_bound,
    generator_rate,
    linearize,
    make_linearization,
    oscillation_range_for,
    report_to_dict,
    rho_set,
    saturation,
    small_lr_report,
    stability_iff,
    sufficient_stability,
)
from tools.heatmap_svg import render_heatmap_svg
from tools.reports import write_rows_csv
from utils.logging import get_pipeline_logger, timed_operation

logger = get_pipeline_logger("experiments")


class ExperimentStatus(str, Enum):
    COMPLETED = "completed"
    PARTIAL = "partial"
    ERROR = "error"
    SKIPPED = "skipped"


def _defaults(name: str, **overrides) -> Dict[str, Any]:
    values = dict(get_experiment_defaults(name) or {})
    values.update({k: v for k, v in overrides.items() if v is not None})
    return values


def single_region(s: Scenario) -> LocalLinearization:
    part = partition_isolated(s)
    if part.n_regions != 1:
        raise LinearizationError(f"expected a single region, found {part.n_regions}")
    return linearize(s, part, 0)


# ===============================
# SPECTRUM OF A SCENARIO
# ===============================

def analyze_scenario(s: Scenario, eta_d: Optional[float] = None) -> Dict[str, Any]:
    """Closed-form analysis of every region with generated points."""
    eta_d = eta_d or s.hyper.eta_d
    part = partition_isolated(s)
    regions = []
    for i in range(part.n_regions):
        if not part.members(i):
            continue
        entry: Dict[str, Any] = {'region': i, 'notes': []}
        try:
            lin = linearize(s, part, i)
        except LinearizationError as e:
            entry['notes'].append(str(e))
            entry['status'] = ExperimentStatus.ERROR.value
            regions.append(entry)
            continue

        report = rho_set(lin, eta_d)
        phase, branch = classify_phase(lin, eta_d)
        entry.update({
            'coefficients': {'a': lin.a, 'b': lin.b, 'c': lin.c, 'm': lin.m,
                             'delta': lin.delta, 'n_gen': lin.n_gen},
            'spectrum': report_to_dict(report),
            'phase': phase.value,
            'branch': branch.value,
            'saturated': saturation(lin, eta_d) if report.stable else False,
            'generator_rate': generator_rate(lin, eta_d),
            'exact_bound': exact_stability_bound(lin),
            'small_step': small_lr_report(lin, eta_d),
            'oscillation_gamma': oscillation_range_for(lin),
            'status': ExperimentStatus.COMPLETED.value,
        })
        try:
            bound = stability_iff(lin)
            entry['bound'] = {'value': bound.bound, 'binding': bound.binding,
                              'stable_for_eta_d': bound.stable_for(eta_d)}
        except NonPositiveCoefficientError as e:
            entry['bound'] = None
            entry['notes'].append(str(e))
        regions.append(entry)

    return {
        'eta_d': eta_d,
        'separation_ok': part.separation_ok,
        'kernel_floor': part.kernel_floor,
        'sufficient_stability': sufficient_stability(s),
        'regions': regions,
    }


# ===============================
# PHASE DIAGRAM
# ===============================

def log_axis(lo: float, hi: float, n: int) -> List[float]:
    if lo <= 0 or hi <= lo or n < 2:
        raise ValueError(f"invalid log axis {lo}:{hi}:{n}")
    return np.logspace(math.log10(lo), math.log10(hi), int(n)).tolist()


class SweepGrid(BaseModel):
    """Log-spaced (sigma, lambda) axes around a fixed single-region template."""

    model_config = ConfigDict(frozen=True)

    sigma_axis: List[float]
    lambda_axis: List[float]
    fixed: Scenario

    @field_validator('sigma_axis', 'lambda_axis')
    @classmethod
    def _increasing(cls, v: List[float]) -> List[float]:
        if len(v) < 2:
            raise ValueError("an axis needs at least 2 entries")
        if any(x <= 0 for x in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("axis entries must be positive and strictly increasing")
        return v


@dataclass
class PhaseCell:
    sigma: float
    lam: float
    rho_max: float
    rho_max_sq: float
    phase: Phase
    complex_pair: bool
    saturated: bool
    dominant: str = ""
    bound: Optional[float] = None
    exact_bound: Optional[float] = None
    notes: str = ""

    def as_row(self) -> Dict[str, Any]:
        return {
            'sigma': self.sigma, 'lambda': self.lam, 'rho_max': self.rho_max,
            'rho_max_sq': self.rho_max_sq, 'phase': self.phase.value,
            'complex_pair': self.complex_pair, 'saturated': self.saturated,
            'dominant': self.dominant, 'bound': self.bound,
            'exact_bound': self.exact_bound, 'notes': self.notes,
        }


CELL_COLUMNS = ['sigma', 'lambda', 'rho_max', 'rho_max_sq', 'phase', 'complex_pair',
                'saturated', 'dominant', 'bound', 'exact_bound', 'notes']


@dataclass
class PhaseDiagramResult:
    cells: List[PhaseCell]
    status: ExperimentStatus
    csv_path: Optional[Path] = None
    svg_path: Optional[Path] = None

    def cell(self, sigma_index: int, lambda_index: int, n_sigma: int) -> PhaseCell:
        return self.cells[lambda_index * n_sigma + sigma_index]


def phase_cell(template: LocalLinearization, sigma: float, lam: float) -> PhaseCell:
    """One grid point, recomputed from the template's masses and step sizes."""
    lin = make_linearization(lam=lam, sigma=sigma, p_i=template.p_i, p_tilde=template.p_tilde,
                             n_gen=template.n_gen, eta_d=template.hyper.eta_d, mu=template.mu,
                             dimension=template.dimension, delta=template.delta)
    eta_d = template.hyper.eta_d
    report = rho_set(lin, eta_d)
    phase, _ = classify_phase(lin, eta_d)
    cell = PhaseCell(
        sigma=sigma, lam=lam, rho_max=report.rho_max, rho_max_sq=report.rho_max ** 2,
        phase=phase, complex_pair=report.complex_pair,
        saturated=phase != Phase.DIVERGENT and saturation(lin, eta_d),
        dominant=report.dominant.value, exact_bound=exact_stability_bound(lin),
    )
    try:
        cell.bound = stability_iff(lin).bound
    except NonPositiveCoefficientError as e:
        cell.notes = str(e)
    return cell


@timed_operation("phase_diagram")
def run_phase_diagram(grid: SweepGrid, out_prefix: Optional[Union[str, Path]] = None) -> PhaseDiagramResult:
    """
    Classify every (sigma, lambda) cell; cells are ordered lambda-major.

    With `out_prefix` the cells are written to <prefix>.csv and the |rho_max|^2
    heatmap to <prefix>.svg.
    """
    template = single_region(grid.fixed)
    cells: List[PhaseCell] = []
    failures = 0
    for lam in grid.lambda_axis:
        for sigma in grid.sigma_axis:
            try:
                cells.append(phase_cell(template, sigma, lam))
            except (GdaKernelError, ValueError) as e:
                failures += 1
                cells.append(PhaseCell(sigma=sigma, lam=lam, rho_max=float('nan'),
                                       rho_max_sq=float('nan'), phase=Phase.DIVERGENT,
                                       complex_pair=False, saturated=False, notes=str(e)))

    status = ExperimentStatus.PARTIAL if failures else ExperimentStatus.COMPLETED
    result = PhaseDiagramResult(cells=cells, status=status)
    logger.info("Phase diagram computed", cells=len(cells), failures=failures,
                divergent=sum(c.phase == Phase.DIVERGENT for c in cells))

    if out_prefix is not None:
        prefix = Path(out_prefix)
        result.csv_path = write_rows_csv([c.as_row() for c in cells],
                                         prefix.with_suffix('.csv'), CELL_COLUMNS)
        result.svg_path = prefix.with_suffix('.svg')
        result.svg_path.parent.mkdir(parents=True, exist_ok=True)
        result.svg_path.write_text(render_heatmap_svg(cells, "rho_max_sq"))
    return result


# ===============================
# RATE VALIDATION
# ===============================

@dataclass
class RateReport:
    r_fit: Optional[float]
    rho_max_theory: float
    rho_generator: float
    abs_err: Optional[float]
    abs_err_generator: Optional[float]
    dominant: str
    complex_pair: bool
    envelope: bool
    n_fit_points: int
    offset: float
    steps: int
    init: str
    status: ExperimentStatus
    notes: List[str] = field(default_factory=list)


def random_directions(n: int, d: int, seed: int) -> np.ndarray:
    """One unit vector per generated point, drawn from the CLI-level seed."""
    U = np.random.default_rng(seed).standard_normal((n, d))
    return U / np.linalg.norm(U, axis=1, keepdims=True)


def fit_contraction(t: np.ndarray, dist: np.ndarray, floor_relative: float, fit_fraction: float,
                    period: Optional[float] = None) -> Tuple[Optional[float], int, bool, List[str]]:
    """
    Per-step contraction from a distance sequence.

    Only the prefix above floor_relative * dist[0] is used, and of it the last
    fit_fraction. With a period the fit runs through local maxima spaced at
    least a quarter period apart.
    """
    notes: List[str] = []
    if dist[0] <= 0:
        return None, 0, False, ["starts at the fixed point; fit skipped"]
    # suffix maximum, so isolated near-zero crossings do not end the window
    envelope_ahead = np.maximum.accumulate(dist[::-1])[::-1]
    below = np.flatnonzero(envelope_ahead < floor_relative * dist[0])
    end = int(below[0]) if below.size else dist.size
    start = int(end * (1.0 - fit_fraction))
    tw, dw = t[start:end], dist[start:end]
    if below.size:
        notes.append(f"distance reached the fit floor at t={int(t[end])}")

    use_envelope = False
    if period is not None and np.isfinite(period):
        peaks, _ = find_peaks(dw, distance=max(1, int(period / 4.0)))
        if peaks.size >= 3:
            tw, dw = tw[peaks], dw[peaks]
            use_envelope = True
        else:
            notes.append(f"only {peaks.size} envelope peaks; plain fit used")

    positive = dw > 0
    if positive.sum() < 2:
        notes.append("fewer than 2 usable points")
        return None, int(positive.sum()), use_envelope, notes
    slope = np.polyfit(tw[positive].astype(float), np.log(dw[positive]), 1)[0]
    return float(math.exp(slope)), int(positive.sum()), use_envelope, notes


@timed_operation("rate_validation")
def run_rate_validation(s: Scenario, offset: Optional[float] = None, T: Optional[int] = None,
                        init: str = "auto", seed: int = 0) -> RateReport:
    """
    Simulate from x_i + offset * sigma * u and fit the observed contraction.

    `init` selects the starting discriminator: "zero" (f = 0), "optimal" (f* at
    the equilibrium) or "auto", which is "optimal" when the ambient mode a
    dominates and "zero" otherwise. A fit farther than `tolerance` from both
    rho_max and the generator rate is reported as PARTIAL.
    """
    opts = _defaults('rate_validation', offset=offset, steps=T)
    offset, T = float(opts.get('offset', 1e-3)), int(opts.get('steps', 20000))
    tolerance = float(opts.get('tolerance', 5e-3))
    if init not in ("auto", "zero", "optimal"):
        raise ValueError(f"unknown init {init!r}")

    lin = single_region(s)
    eta_d = s.hyper.eta_d
    report = rho_set(lin, eta_d)
    if init == "auto":
        # f = 0 excites the a mode, which never moves the generated points
        init = "optimal" if report.dominant == Dominance.A else "zero"
    rho_gen = generator_rate(lin, eta_d)
    result = RateReport(r_fit=None, rho_max_theory=report.rho_max, rho_generator=rho_gen,
                        abs_err=None, abs_err_generator=None, dominant=report.dominant.value,
                        complex_pair=report.complex_pair, envelope=False, n_fit_points=0,
                        offset=offset, steps=T, init=init, status=ExperimentStatus.COMPLETED)
    if not report.stable:
        result.notes.append(f"closed-form spectral radius {report.rho_max:.6f} >= 1")
    if offset == 0:
        result.status = ExperimentStatus.SKIPPED
        result.notes.append("offset 0 starts at the fixed point; fit skipped")
        return result

    part = partition_isolated(s)
    start = offset_scenario(s, part, offset, random_directions(s.generated.count, s.dimension, seed))
    f0 = optimal_discriminator(s, equilibrium_points(s, part)) if init == "optimal" else None
    record = simulate(start, T, "explicit", record_every=1, f0=f0, with_loss=False, strict=True)

    # the pair sets the observed rate unless b dominates the generator modes
    period = None
    pair_dominant = report.rho_b is None or report.rho_c >= report.rho_b
    if report.complex_pair and pair_dominant:
        rho_c = next(r for nu, r in zip(report.nus, report.rhos) if nu.label == "c+")
        angle = abs(math.atan2(rho_c.imag, rho_c.real))
        period = 2.0 * math.pi / angle if angle > 0 else None

    r_fit, n_points, envelope, notes = fit_contraction(
        record.times, record.max_dist, float(opts.get('floor_relative', 1e-8)),
        float(opts.get('fit_fraction', 0.8)), period)
    result.notes.extend(notes)
    result.r_fit, result.n_fit_points, result.envelope = r_fit, n_points, envelope
    if r_fit is None:
        result.status = ExperimentStatus.PARTIAL
    else:
        result.abs_err = abs(r_fit - report.rho_max)
        result.abs_err_generator = abs(r_fit - rho_gen)
        if min(result.abs_err, result.abs_err_generator) > tolerance:
            result.status = ExperimentStatus.PARTIAL
            result.notes.append(f"fit {r_fit:.6f} is more than {tolerance:g} from both rho_max "
                                f"and the generator rate; likely a transient")
    logger.info("Rate validation", r_fit=r_fit, rho_max=f"{report.rho_max:.7f}",
                rho_generator=f"{rho_gen:.7f}", envelope=envelope)
    return result


# ===============================
# STABILITY BISECTION
# ===============================

@dataclass
class BisectionReport:
    empirical: Optional[float]
    theory_bound: float
    target: str
    exact_bound: float
    rel_gap: Optional[float]
    trials: List[Tuple[float, bool]]
    status: ExperimentStatus
    notes: List[str] = field(default_factory=list)


def stays_bounded(s: Scenario, steps: int, escape_factor: float) -> bool:
    """Empirical stability proxy: every generated point stays within escape_factor x its start distance."""
    part = partition_isolated(s)
    targets = s.real.X[[part.assignments[j] for j in range(s.generated.count)]]
    X = s.generated.X
    limit = escape_factor * float(np.max(np.linalg.norm(X - targets, axis=1)))
    f = DiscriminatorState.zero(s.kernel)
    try:
        for t in range(1, steps + 1):
            f, X = step_explicit(f, X, s, t=t)
            if np.max(np.linalg.norm(X - targets, axis=1)) > limit:
                return False
    except SimulationDivergedError:
        return False
    return True


@timed_operation("stability_bisection")
def run_stability_bisection(s: Scenario, target: Optional[str] = None, steps: Optional[int] = None,
                            iterations: Optional[int] = None, seed: int = 0,
                            rel_tol: float = 1e-3) -> BisectionReport:
    """
    Bisect eta_d (mu held fixed) for the onset of instability and compare it with
    the step-size bound. `target` names the bound to compare against ("2/a",
    "2/b" or "(a+b)/c"); by default the binding one.
    """
    opts = _defaults('bisection', steps=steps, iterations=iterations)
    steps, iterations = int(opts.get('steps', 50000)), int(opts.get('iterations', 30))
    escape, offset = float(opts.get('escape_factor', 10.0)), float(opts.get('offset', 1e-3))

    lin = single_region(s)
    bound = stability_iff(lin)
    candidates = {"2/a": 2.0 / lin.a, "(a+b)/c": (lin.a + lin.b) / lin.c}
    if lin.n_gen > 1:
        candidates["2/b"] = 2.0 / lin.b
    target = target or bound.binding
    if target not in candidates:
        raise ValueError(f"unknown target {target!r}; choose from {sorted(candidates)}")
    reference = candidates[target]

    part = partition_isolated(s)
    directions = random_directions(s.generated.count, s.dimension, seed)
    mu = s.hyper.mu
    trials: List[Tuple[float, bool]] = []

    def trial(eta: float) -> bool:
        candidate = offset_scenario(with_overrides(s, eta_d=eta, mu=mu), part, offset, directions)
        stable = stays_bounded(candidate, steps, escape)
        trials.append((eta, stable))
        logger.debug("Bisection trial", eta_d=f"{eta:.6g}", stable=stable)
        return stable

    report = BisectionReport(empirical=None, theory_bound=reference, target=target,
                             exact_bound=exact_stability_bound(lin), rel_gap=None,
                             trials=trials, status=ExperimentStatus.COMPLETED)
    lo, hi = 0.5 * reference, 2.0 * reference
    for _ in range(8):
        if trial(lo):
            break
        lo *= 0.5
    else:
        report.status = ExperimentStatus.ERROR
        report.notes.append("no stable step size found below the bound")
        return report
    for _ in range(8):
        if not trial(hi):
            break
        hi *= 2.0
    else:
        report.status = ExperimentStatus.ERROR
        report.notes.append("no unstable step size found above the bound")
        return report

    for _ in range(iterations):
        if (hi - lo) / hi < rel_tol:
            break
        mid = 0.5 * (lo + hi)
        if trial(mid):
            lo = mid
        else:
            hi = mid

    report.empirical = 0.5 * (lo + hi)
    report.rel_gap = abs(report.empirical - reference) / reference
    logger.info("Stability bisection", empirical=f"{report.empirical:.6g}",
                theory=f"{reference:.6g}", target=target, trials=len(trials))
    return report


# ===============================
# ORACLE AND CONSISTENCY RUNS
# ===============================

def grid_scenario(n_gen: int, d: int, delta: float = 0.2, lam: float = 1.0, sigma: float = 1.0,
                  eta_d: float = 0.01, mu: float = 1.0, p: float = 1.0) -> Scenario:
    """One true point at the origin with n_gen equal-weight generated points on it."""
    return build_scenario(np.zeros((1, d)), [p], np.zeros((n_gen, d)),
                          [(p - delta) / n_gen] * n_gen, width=sigma,
                          eta_d=eta_d, eta_g=mu * eta_d, lam=lam)


@dataclass
class TheoremGridRow:
    n_gen: int
    d: int
    seed: int
    max_rel_err: Optional[float]
    ambient_count: Optional[int]
    expected_ambient: Optional[int]
    report: Optional[Dict[str, Any]]
    seconds: float
    status: ExperimentStatus
    notes: str = ""


@timed_operation("theorem_grid")
def run_theorem_grid(n_gens: Optional[Sequence[int]] = None, dims: Optional[Sequence[int]] = None,
                     D: Optional[int] = None, seeds: Sequence[int] = (0,), delta: float = 0.2,
                     sampler: Optional[str] = None, paired: Optional[bool] = None) -> List[TheoremGridRow]:
    opts = _defaults('theorem_grid', n_gens=n_gens, dims=dims, feature_dim=D)
    rows: List[TheoremGridRow] = []
    for n_gen in opts.get('n_gens', [1, 2, 3]):
        for d in opts.get('dims', [1, 2]):
            for seed in seeds:
                started = time.perf_counter()
                try:
                    check = verify_theorem(grid_scenario(n_gen, d, delta), D=opts.get('feature_dim'),
                                           seed=seed, sampler=sampler, paired=paired)
                    rows.append(TheoremGridRow(
                        n_gen=n_gen, d=d, seed=seed, max_rel_err=check.max_rel_err,
                        ambient_count=check.ambient_count, expected_ambient=check.expected_ambient,
                        report=theorem_to_dict(check), seconds=time.perf_counter() - started,
                        status=ExperimentStatus.COMPLETED))
                except GdaKernelError as e:
                    logger.log_error_with_context(e, operation="verify_theorem", n_gen=n_gen, d=d)
                    rows.append(TheoremGridRow(
                        n_gen=n_gen, d=d, seed=seed, max_rel_err=None, ambient_count=None,
                        expected_ambient=None, report=None, seconds=time.perf_counter() - started,
                        status=ExperimentStatus.ERROR, notes=str(e)))
    return rows


@dataclass
class SufficiencyReport:
    draws: int
    sufficient: int
    counterexamples: List[Dict[str, float]]
    exact_counterexamples: int
    seed: int

    @property
    def holds(self) -> bool:
        return not self.counterexamples


def _log_uniform(rng: np.random.Generator, lo: float, hi: float, name: str = "value") -> float:
    if not 0.0 < lo <= hi:
        raise ScenarioValidationError(name, f"log-uniform range needs 0 < lo <= hi, got [{lo}, {hi}]")
    return float(10.0 ** rng.uniform(math.log10(lo), math.log10(hi)))


@timed_operation("sufficiency_check")
def run_sufficiency_check(n_draws: Optional[int] = None, seed: int = 0) -> SufficiencyReport:
    """
    Random draws with 0 < Delta < p and pt * p < 1: whenever the sufficient
    condition holds, the step-size bound must hold too.

    exact_counterexamples counts draws where the sufficient condition holds but
    some |rho| >= 1 (informational).
    """
    n_draws = int(_defaults('sufficiency', draws=n_draws).get('draws', 1000))
    rng = np.random.default_rng(seed)
    report = SufficiencyReport(draws=0, sufficient=0, counterexamples=[], exact_counterexamples=0, seed=seed)
    while report.draws < n_draws:
        n_gen = int(rng.integers(1, 4))
        p = float(rng.uniform(0.05, 2.0))
        delta = float(rng.uniform(0.0, 1.0)) * p
        p_tilde = (p - delta) / n_gen
        if delta <= 0 or p_tilde <= 0 or p_tilde * p >= 1.0:
            continue
        lam, sigma = _log_uniform(rng, 1e-2, 1e1), _log_uniform(rng, 1e-2, 1e1)
        eta_d = _log_uniform(rng, 1e-4, max(1e-4, 3.0 / lam), "eta_d")
        eta_g = _log_uniform(rng, 1e-5, max(1e-5, 1.5 * lam * sigma ** 2), "eta_g")
        s = grid_scenario(n_gen, 1, delta=delta, lam=lam, sigma=sigma, eta_d=eta_d,
                          mu=eta_g / eta_d, p=p)
        report.draws += 1
        if not sufficient_stability(s):
            continue
        report.sufficient += 1
        lin = single_region(s)
        if not stability_iff(lin).stable_for(eta_d):
            report.counterexamples.append({'lam': lam, 'sigma': sigma, 'p': p, 'delta': delta,
                                           'n_gen': n_gen, 'eta_d': eta_d, 'eta_g': eta_g})
        if not rho_set(lin, eta_d).stable:
            report.exact_counterexamples += 1
    logger.info("Sufficiency check", draws=report.draws, sufficient=report.sufficient,
                counterexamples=len(report.counterexamples),
                exact_counterexamples=report.exact_counterexamples)
    return report


@timed_operation("kernel_check")
def run_kernel_check(k: KernelSpec, n_points: int = 20, seed: int = 0,
                     h: Optional[float] = None) -> KernelCheckReport:
    """check_assumptions on points drawn from N(0, sigma^2 I)."""
    points = np.random.default_rng(seed).standard_normal((n_points, k.dimension)) * k.width
    report = check_assumptions(k, points, h)
    if not report.passed:
        logger.warning("Kernel assumption check failed", failures=len(report.failures))
    return report
