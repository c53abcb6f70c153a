"""
Closed-form local linearization of the isolated-region GDA dynamics.

At the equilibrium where every generated point of region i sits on x_i, the
Jacobian of one GDA step has eigenvalues rho = 1 - eta_d * nu with

    a = lam
    b = mu pt Delta_i / (lam sigma^2)       (only when |N_i| > 1)
    m +- sqrt(m^2 - c),  m = (a + b) / 2,  c = mu pt p_i / sigma^2

This module computes that spectrum together with stability bounds, dominance
and phase classification, saturation, small step approximations and the
oscillation band in gamma = 1 / sigma^2.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from config.loader import get_numerics_config
from core.exceptions import LinearizationError, NonPositiveCoefficientError
from core.scenario import Hyperparams, NeighborhoodPartition, Scenario, delta_i
from utils.logging import get_core_logger

logger = get_core_logger("spectrum")


class Dominance(str, Enum):
    A = "A"
    B = "B"
    C = "C"


class Phase(str, Enum):
    DIVERGENT = "DIVERGENT"
    A_DOMINANT = "A_DOMINANT"
    B_DOMINANT = "B_DOMINANT"
    C_DOMINANT = "C_DOMINANT"


class Branch(str, Enum):
    REAL = "REAL"
    COMPLEX = "COMPLEX"


_PHASE_OF = {Dominance.A: Phase.A_DOMINANT, Dominance.B: Phase.B_DOMINANT, Dominance.C: Phase.C_DOMINANT}


# ===============================
# LINEARIZATION
# ===============================

class LocalLinearization(BaseModel):
    """Coefficient bundle of one region's equilibrium Jacobian."""

    model_config = ConfigDict(frozen=True)

    a: float
    b: float
    c: float
    m: float
    delta: float
    n_gen: int
    p_i: float
    p_tilde: float
    hyper: Hyperparams
    sigma: float
    dimension: int = 1

    @property
    def mu(self) -> float:
        return self.hyper.mu

    @property
    def discriminant(self) -> float:
        """m^2 - c; negative on the oscillatory branch."""
        return self.m * self.m - self.c


def make_linearization(lam: float, sigma: float, p_i: float, p_tilde: float, n_gen: int = 1,
                       eta_d: float = 0.01, mu: float = 1.0, dimension: int = 1,
                       delta: Optional[float] = None) -> LocalLinearization:
    """Linearization from raw parameters; Delta_i defaults to p_i - n_gen * p_tilde."""
    hyper = Hyperparams(eta_d=eta_d, eta_g=mu * eta_d, lam=lam)
    if delta is None:
        delta = p_i - n_gen * p_tilde
    a = lam
    b = hyper.mu * p_tilde * delta / (lam * sigma * sigma)
    c = hyper.mu * p_tilde * p_i / (sigma * sigma)
    return LocalLinearization(a=a, b=b, c=c, m=0.5 * (a + b), delta=delta, n_gen=n_gen,
                              p_i=p_i, p_tilde=p_tilde, hyper=hyper, sigma=sigma,
                              dimension=dimension)


def linearize(s: Scenario, part: NeighborhoodPartition, i: int) -> LocalLinearization:
    """Coefficients for region i; the generated weights in N_i must be equal."""
    members = part.members(i)
    if not members:
        raise LinearizationError(f"region {i} has no generated points")
    weights = np.array([s.generated.weights[j] for j in members])
    tol = get_numerics_config()['equal_weight_tol']
    if np.ptp(weights) > tol:
        raise LinearizationError(
            f"generated weights in region {i} are not equal: {weights.tolist()}")

    lin = make_linearization(
        lam=s.hyper.lam, sigma=s.sigma, p_i=s.real.weights[i], p_tilde=float(weights[0]),
        n_gen=len(members), eta_d=s.hyper.eta_d, mu=s.hyper.mu, dimension=s.dimension,
        delta=delta_i(s, part, i),
    )
    logger.debug("Linearized region", region=i, a=lin.a, b=f"{lin.b:.6g}", c=f"{lin.c:.6g}")
    return lin


# ===============================
# EIGENVALUES
# ===============================

@dataclass(frozen=True)
class Eigenvalue:
    """One distinct nu with its label and multiplicity (None for the ambient a)."""

    label: str
    value: complex
    multiplicity: Optional[int]

    @property
    def ambient(self) -> bool:
        return self.multiplicity is None


def _pair(lin: LocalLinearization) -> Tuple[complex, complex]:
    root = np.sqrt(complex(lin.discriminant))
    if lin.discriminant >= 0:
        root = complex(root.real, 0.0)
    return complex(lin.m) + root, complex(lin.m) - root


def eigenvalues(lin: LocalLinearization) -> List[Eigenvalue]:
    """The nu set: a (ambient), b when n_gen > 1, and the quadratic pair."""
    d = lin.dimension
    nus = [Eigenvalue("a", complex(lin.a), None)]
    if lin.n_gen > 1:
        nus.append(Eigenvalue("b", complex(lin.b), (lin.n_gen - 1) * d))
    plus, minus = _pair(lin)
    nus.append(Eigenvalue("c+", plus, d))
    nus.append(Eigenvalue("c-", minus, d))
    return nus


@dataclass
class SpectrumReport:
    eta_d: float
    nus: List[Eigenvalue]
    rhos: List[complex]
    rho_max: float
    rho_a: float
    rho_b: Optional[float]
    rho_c: float
    dominant: Dominance
    tied: List[Dominance] = field(default_factory=list)
    complex_pair: bool = False

    @property
    def stable(self) -> bool:
        return self.rho_max < 1.0


def rho_set(lin: LocalLinearization, eta_d: float) -> SpectrumReport:
    """Map every nu to rho = 1 - eta_d nu and pick the dominant label (A < B < C on ties)."""
    if eta_d <= 0:
        raise ValueError("eta_d must be positive")
    nus = eigenvalues(lin)
    rhos = [1.0 - eta_d * nu.value for nu in nus]
    mags = {nu.label: abs(r) for nu, r in zip(nus, rhos)}

    by_label = {
        Dominance.A: mags["a"],
        Dominance.B: mags.get("b"),
        Dominance.C: max(mags["c+"], mags["c-"]),
    }
    rho_max = max(v for v in by_label.values() if v is not None)
    tied = [lab for lab in Dominance if by_label[lab] is not None and by_label[lab] == rho_max]

    return SpectrumReport(
        eta_d=eta_d, nus=nus, rhos=rhos, rho_max=rho_max,
        rho_a=by_label[Dominance.A], rho_b=by_label[Dominance.B], rho_c=by_label[Dominance.C],
        dominant=tied[0], tied=tied, complex_pair=lin.discriminant < 0,
    )


def generator_rate(lin: LocalLinearization, eta_d: float) -> float:
    """
    Spectral radius over the modes that move generated points (b and the pair).

    The a mode lives in the discriminator directions orthogonal to the kernel
    derivatives at x_i, so distances of generated points decay at this rate.
    """
    report = rho_set(lin, eta_d)
    return max(report.rho_c, report.rho_b if report.rho_b is not None else 0.0)


def delta_zero_pair(lin: LocalLinearization) -> Tuple[complex, complex]:
    """nu pair for a balanced region: (lam/2)(1 +- sqrt(1 - 4c/lam^2))."""
    if abs(lin.delta) > get_numerics_config()['equal_weight_tol']:
        raise LinearizationError(f"mass gap is {lin.delta}, not zero")
    root = np.sqrt(complex(1.0 - 4.0 * lin.c / (lin.a * lin.a)))
    return 0.5 * lin.a * (1.0 + root), 0.5 * lin.a * (1.0 - root)


# ===============================
# STABILITY
# ===============================

@dataclass(frozen=True)
class StabilityBound:
    bound: float
    binding: str

    def stable_for(self, eta_d: float) -> bool:
        return 0.0 < eta_d < self.bound


def stability_iff(lin: LocalLinearization) -> StabilityBound:
    """
    Step-size bound min{2/a, 2/b, (a+b)/c}, with 2/b only when n_gen > 1.

    Needs a, b, c > 0. For n_gen = 1 on the real branch the exact bound is
    2 / (m + sqrt(m^2 - c)), which can be smaller; see exact_stability_bound.
    """
    if lin.a <= 0:
        raise NonPositiveCoefficientError("lambda <= 0")
    if lin.delta <= 0 or lin.b <= 0:
        raise NonPositiveCoefficientError(f"Delta <= 0 (Delta = {lin.delta})")
    if lin.c <= 0:
        raise NonPositiveCoefficientError("c <= 0")

    candidates = [("2/a", 2.0 / lin.a)]
    if lin.n_gen > 1:
        candidates.append(("2/b", 2.0 / lin.b))
    candidates.append(("(a+b)/c", (lin.a + lin.b) / lin.c))
    binding, bound = min(candidates, key=lambda item: item[1])
    return StabilityBound(bound=bound, binding=binding)


def exact_stability_bound(lin: LocalLinearization) -> float:
    """Supremum of eta_d with every |1 - eta_d nu| < 1: min over nu of 2 Re(nu) / |nu|^2."""
    bound = math.inf
    for nu in eigenvalues(lin):
        if nu.value.real <= 0:
            return 0.0
        bound = min(bound, 2.0 * nu.value.real / abs(nu.value) ** 2)
    return bound


def sufficient_stability(s: Scenario) -> bool:
    """eta_d < 2 / lam and eta_g < lam sigma^2."""
    return s.hyper.eta_d < 2.0 / s.hyper.lam and s.hyper.eta_g < s.hyper.lam * s.sigma ** 2


# ===============================
# PHASES
# ===============================

def classify_phase(lin: LocalLinearization, eta_d: float) -> Tuple[Phase, Branch]:
    report = rho_set(lin, eta_d)
    branch = Branch.COMPLEX if report.complex_pair else Branch.REAL
    if report.rho_max >= 1.0:
        return Phase.DIVERGENT, branch
    return _PHASE_OF[report.dominant], branch


def saturation(lin: LocalLinearization, eta_d: float) -> bool:
    """True when the sigma-independent a mode sets the rate, so shrinking sigma cannot help."""
    disc = lin.discriminant
    if disc > 0:
        return lin.a < min(lin.b, lin.m - math.sqrt(disc))
    if disc < 0:
        return lin.a < min(lin.b, 2.0 * lin.m - eta_d * lin.c)
    return False


@dataclass(frozen=True)
class SmallStepApprox:
    """First-order squared magnitudes and the approximate rate (squared scale)."""

    mag_a_sq: float
    mag_b_sq: float
    mag_c_sq: float
    approx_rate: float

    @property
    def decays(self) -> bool:
        return self.approx_rate < 1.0


def small_lr_report(lin: LocalLinearization, eta_d: float) -> SmallStepApprox:
    return SmallStepApprox(
        mag_a_sq=1.0 - 2.0 * eta_d * lin.a,
        mag_b_sq=1.0 - 2.0 * eta_d * lin.b,
        mag_c_sq=1.0 - eta_d * (lin.a + lin.b),
        approx_rate=1.0 - 2.0 * eta_d * min(lin.a, lin.b),
    )


def exact_squared_magnitudes(lin: LocalLinearization, eta_d: float) -> Tuple[float, float, float]:
    """|rho_a|^2, |rho_b|^2 and |rho_+ rho_-| (equal to |rho_c|^2 on the complex branch)."""
    plus, minus = _pair(lin)
    return (
        (1.0 - eta_d * lin.a) ** 2,
        (1.0 - eta_d * lin.b) ** 2,
        abs((1.0 - eta_d * plus) * (1.0 - eta_d * minus)),
    )


@dataclass(frozen=True)
class GammaRange:
    """Set of gamma = 1/sigma^2 with m^2 < c, as open intervals (hi may be inf)."""

    intervals: List[Tuple[float, float]]
    diagnostic: Optional[str] = None

    def contains(self, gamma: float) -> bool:
        return any(lo < gamma < hi for lo, hi in self.intervals)

    def sigma_intervals(self) -> List[Tuple[float, float]]:
        return [(0.0 if math.isinf(hi) else 1.0 / math.sqrt(hi), 1.0 / math.sqrt(lo))
                for lo, hi in self.intervals]


def oscillation_gamma_range(lam: float, mu: float, p_tilde: float, p: float, delta: float) -> GammaRange:
    """
    Solve B^2 g^2 + (2 lam B - 4C) g + lam^2 < 0 with B = mu pt Delta / lam, C = mu pt p.
    """
    if min(lam, mu, p_tilde, p) <= 0:
        raise ValueError("lam, mu, p_tilde and p must be positive")
    B = mu * p_tilde * delta / lam
    C = mu * p_tilde * p
    if delta == 0:
        return GammaRange([(lam * lam / (4.0 * C), math.inf)])
    if delta > p:
        return GammaRange([], diagnostic=f"Delta = {delta} exceeds p = {p}: no real roots")

    qa, qb, qc = B * B, 2.0 * lam * B - 4.0 * C, lam * lam
    disc = qb * qb - 4.0 * qa * qc
    if disc <= 0:
        return GammaRange([], diagnostic="non-positive discriminant: m^2 >= c for every gamma")
    q = -0.5 * (qb + math.copysign(math.sqrt(disc), qb))
    lo, hi = sorted((q / qa, qc / q))
    lo = max(lo, 0.0)
    if hi <= lo:
        return GammaRange([], diagnostic="no positive roots")
    return GammaRange([(lo, hi)])


def oscillation_range_for(lin: LocalLinearization) -> GammaRange:
    return oscillation_gamma_range(lin.a, lin.mu, lin.p_tilde, lin.p_i, lin.delta)


# ===============================
# EXPORT
# ===============================

def report_to_dict(report: SpectrumReport) -> Dict[str, Any]:
    return {
        'eta_d': report.eta_d,
        'labels': [nu.label for nu in report.nus],
        'multiplicities': [nu.multiplicity if nu.multiplicity is not None else "ambient"
                           for nu in report.nus],
        'nu_re': [nu.value.real for nu in report.nus],
        'nu_im': [nu.value.imag for nu in report.nus],
        'rho_re': [r.real for r in report.rhos],
        'rho_im': [r.imag for r in report.rhos],
        'rho_max': report.rho_max,
        'dominant': report.dominant.value,
        'tied': [lab.value for lab in report.tied],
        'complex_pair': report.complex_pair,
        'stable': report.stable,
    }
