"""
Brute-force check of the closed-form spectrum.

The discriminator is represented with random Fourier features,
f(x; theta) = <theta, a(x)> with a(x)_k = scale * cos(w_k . x + phi_k), so a
GDA step becomes a map on the finite state (theta, X). Its Jacobian at the
equilibrium is taken by central differences and eigendecomposed densely; the
resulting nu = (1 - rho) / eta_d are compared with spectrum.eigenvalues.

Paired features use the phases (phi, phi + pi/2) for every frequency, which
makes a(x).a(x) = 1 and keeps the equilibrium an exact fixed point. The qmc
sampler draws Halton frequencies mapped through the normal quantile and
rescales them so their second moment is exactly I / sigma^2.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.stats import norm, qmc

from config.loader import config, get_numerics_config
from core.exceptions import EigenSolverError, LinearizationError
from core.kernel import KernelSpec
from core.scenario import Scenario, equilibrium_points, partition_isolated
from core.spectrum import LocalLinearization, eigenvalues, linearize
from utils.logging import get_core_logger

logger = get_core_logger("jacobian_oracle")


# ===============================
# FEATURES
# ===============================

@dataclass(frozen=True)
class FeatureMap:
    """a(x)_k = scale * cos(frequencies[k] . x + phases[k]), k < dim."""

    kernel: KernelSpec
    frequencies: np.ndarray
    phases: np.ndarray
    scale: float
    sampler: str = "qmc"
    paired: bool = True
    seed: int = 0

    @property
    def dim(self) -> int:
        return int(self.phases.shape[0])

    def features(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.scale * np.cos(X @ self.frequencies.T + self.phases)

    def implied_kernel(self, x, y) -> float:
        return float(self.features(x)[0] @ self.features(y)[0])

    def value(self, theta: np.ndarray, X) -> np.ndarray:
        return self.features(X) @ theta

    def gradient(self, theta: np.ndarray, X) -> np.ndarray:
        """Row j is grad_x <theta, a(x)> at x_j."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        sines = np.sin(X @ self.frequencies.T + self.phases)
        return -self.scale * (sines * theta) @ self.frequencies


def _moment_matched(Z: np.ndarray) -> np.ndarray:
    second = Z.T @ Z / Z.shape[0]
    vals, vecs = np.linalg.eigh(second)
    return Z @ (vecs @ np.diag(vals ** -0.5) @ vecs.T)


def build_features(k: KernelSpec, D: Optional[int] = None, seed: int = 0,
                   sampler: Optional[str] = None, paired: Optional[bool] = None) -> FeatureMap:
    """Deterministic random Fourier features approximating the RBF kernel k."""
    oracle = config.get_oracle_config()
    D = int(D if D is not None else oracle.get('feature_dim', 2000))
    sampler = sampler or oracle.get('sampler', 'qmc')
    paired = bool(oracle.get('paired', True) if paired is None else paired)
    if D < 1:
        raise ValueError("D must be >= 1")
    if paired and D % 2:
        raise ValueError("paired features need an even D")
    if sampler not in ("mc", "qmc"):
        raise ValueError(f"unknown sampler {sampler!r}")

    d = k.dimension
    n_freq = D // 2 if paired else D
    rng = np.random.default_rng(seed)
    if sampler == "qmc":
        u = qmc.Halton(d=d, scramble=True, seed=rng).random(n_freq)
        Z = norm.ppf(np.clip(u, 1e-12, 1.0 - 1e-12))
        if n_freq >= d:
            Z = _moment_matched(Z)
    else:
        Z = rng.standard_normal((n_freq, d))
    W = Z / k.width
    phi = rng.uniform(0.0, 2.0 * np.pi, n_freq)

    if paired:
        W = np.repeat(W, 2, axis=0)
        phi = np.column_stack([phi, phi + 0.5 * np.pi]).reshape(-1)
    return FeatureMap(kernel=k, frequencies=W, phases=phi, scale=math.sqrt(2.0 / D),
                      sampler=sampler, paired=paired, seed=seed)


# ===============================
# FINITE STATE AND UPDATE MAP
# ===============================

@dataclass(frozen=True)
class FiniteState:
    """(theta, points); flattened as theta first, then points row-major."""

    theta: np.ndarray
    points: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.theta, self.points.reshape(-1)])

    @classmethod
    def from_flat(cls, z: np.ndarray, D: int, shape) -> 'FiniteState':
        return cls(z[:D].copy(), z[D:].reshape(shape).copy())


def optimal_theta(s: Scenario, fm: FeatureMap, Xt=None) -> np.ndarray:
    """Feature coefficients of the optimal discriminator for generated points Xt."""
    Xt = s.generated.X if Xt is None else np.atleast_2d(Xt)
    return (fm.features(s.real.X).T @ s.real.w - fm.features(Xt).T @ s.generated.w) / s.hyper.lam


def update_map(z: FiniteState, s: Scenario, fm: FeatureMap) -> FiniteState:
    """One GDA step in (theta, X) coordinates; the generator reads the old theta."""
    eta_d, eta_g, lam = s.hyper.eta_d, s.hyper.eta_g, s.hyper.lam
    theta = (1.0 - lam * eta_d) * z.theta + eta_d * (
        fm.features(s.real.X).T @ s.real.w - fm.features(z.points).T @ s.generated.w)
    points = z.points + eta_g * s.generated.w[:, None] * fm.gradient(z.theta, z.points)
    return FiniteState(theta, points)


def numerical_jacobian(z0: FiniteState, s: Scenario, fm: FeatureMap, h: Optional[float] = None) -> np.ndarray:
    """Central-difference Jacobian of update_map, one column per flattened coordinate."""
    flat = z0.flatten()
    if h is None:
        h = float(config.get('oracle.jacobian_step', 1e-5)) * max(1.0, float(np.max(np.abs(flat))))
    if h <= 0:
        raise ValueError("h must be positive")
    D, shape = fm.dim, z0.points.shape
    n = flat.shape[0]

    def phi(v: np.ndarray) -> np.ndarray:
        return update_map(FiniteState.from_flat(v, D, shape), s, fm).flatten()

    J = np.empty((n, n))
    for col in range(n):
        step = np.zeros(n)
        step[col] = h
        J[:, col] = (phi(flat + step) - phi(flat - step)) / (2.0 * h)
    return J


def eigs(M) -> np.ndarray:
    """All eigenvalues of a dense real square matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise EigenSolverError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise EigenSolverError("matrix has non-finite entries")
    try:
        return scipy.linalg.eigvals(M, overwrite_a=False, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigenSolverError(f"eigenvalue iteration did not converge for size {M.shape[0]}: {e}") from e


# ===============================
# THEOREM CHECK
# ===============================

@dataclass
class TheoremCheck:
    labels: List[str]
    nu_theory: List[complex]
    nu_numeric: List[complex]
    rel_err: List[float]
    multiplicity_theory: List[Optional[int]]
    multiplicity_numeric: List[int]
    ambient_count: int
    expected_ambient: int
    D: int
    seed: int
    h: float
    sampler: str
    paired: bool
    fixed_point_residual: float = 0.0
    notes: List[str] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max(self.rel_err) if self.rel_err else 0.0

    def passed(self, tol: float = 2e-2) -> bool:
        return self.max_rel_err <= tol


def equilibrium_state(s: Scenario, fm: FeatureMap) -> FiniteState:
    X_star = equilibrium_points(s, partition_isolated(s))
    return FiniteState(optimal_theta(s, fm, X_star), X_star)


def verify_theorem(s: Scenario, D: Optional[int] = None, h: Optional[float] = None, seed: int = 0,
                   sampler: Optional[str] = None, paired: Optional[bool] = None) -> TheoremCheck:
    """
    Compare the numerical equilibrium spectrum of a single-region scenario with
    the closed-form nu set.
    """
    part = partition_isolated(s)
    if part.n_regions != 1:
        raise LinearizationError("the oracle handles single-region scenarios only")
    lin = linearize(s, part, 0)
    fm = build_features(s.kernel, D, seed, sampler=sampler, paired=paired)
    oracle = config.get_oracle_config()
    cluster_tol = float(oracle.get('cluster_tol', 1e-3))
    ambient_tol = float(oracle.get('ambient_tol', 1e-3))

    op = logger.start_operation("verify_theorem")
    z_star = equilibrium_state(s, fm)
    residual = float(np.max(np.abs(update_map(z_star, s, fm).flatten() - z_star.flatten())))
    if h is None:
        h = float(oracle.get('jacobian_step', 1e-5)) * max(1.0, float(np.max(np.abs(z_star.flatten()))))
    J = numerical_jacobian(z_star, s, fm, h)
    nu = (1.0 - eigs(J)) / s.hyper.eta_d

    ambient = int(np.sum(np.abs(nu - lin.a) <= ambient_tol * max(1.0, abs(lin.a))))
    check = TheoremCheck(
        labels=[], nu_theory=[], nu_numeric=[], rel_err=[], multiplicity_theory=[],
        multiplicity_numeric=[], ambient_count=ambient, expected_ambient=fm.dim - s.dimension,
        D=fm.dim, seed=seed, h=h, sampler=fm.sampler, paired=fm.paired,
        fixed_point_residual=residual,
    )
    for ev in eigenvalues(lin):
        if ev.ambient:
            continue
        nearest = nu[np.argmin(np.abs(nu - ev.value))]
        scale = max(abs(ev.value), cluster_tol)
        check.labels.append(ev.label)
        check.nu_theory.append(ev.value)
        check.nu_numeric.append(complex(nearest))
        check.rel_err.append(float(abs(nearest - ev.value) / scale))
        check.multiplicity_theory.append(ev.multiplicity)
        check.multiplicity_numeric.append(int(np.sum(np.abs(nu - ev.value) <= cluster_tol * max(1.0, abs(ev.value)))))
        if abs(ev.value - lin.a) <= ambient_tol * max(1.0, abs(lin.a)):
            check.notes.append(f"{ev.label} coincides with the ambient value a")

    logger.end_operation(op, D=fm.dim, n_gen=lin.n_gen, d=s.dimension,
                         max_rel_err=f"{check.max_rel_err:.3e}", ambient=ambient)
    return check


def hessian_identity(s: Scenario, fm: FeatureMap, h: Optional[float] = None) -> float:
    """
    Max deviation of the finite-difference Hessian of theta* . a(x) at x_i from
    -(Delta / (lam sigma^2)) I. Single-region scenarios only.
    """
    part = partition_isolated(s)
    if part.n_regions != 1:
        raise LinearizationError("the oracle handles single-region scenarios only")
    lin = linearize(s, part, 0)
    h = float(h if h is not None else get_numerics_config()['fd_step'])
    theta = equilibrium_state(s, fm).theta
    x = s.real.X[0]
    d = s.dimension

    def g(v: np.ndarray) -> float:
        return float(fm.value(theta, v)[0])

    basis = np.eye(d) * h
    H = np.empty((d, d))
    for a in range(d):
        for b in range(d):
            ea, eb = basis[a], basis[b]
            H[a, b] = (g(x + ea + eb) - g(x + ea - eb) - g(x - ea + eb) + g(x - ea - eb)) / (4.0 * h * h)
    expected = -(lin.delta / (lin.a * s.sigma ** 2)) * np.eye(d)
    return float(np.max(np.abs(H - expected)))


# ===============================
# CHARACTERISTIC POLYNOMIAL
# ===============================

DEFAULT_SAMPLES = (0.0, 1.0, 1.0 + 1.0j, -0.3 + 2.0j, 2.0 - 1.0j,
                   0.5j, 3.0, -2.0 + 0.5j, 1.5 + 1.5j, -1.0 - 1.0j)


@dataclass
class CharPolyCheck:
    max_rel_err: float
    errors: List[float]
    samples: List[complex]
    skipped: List[str] = field(default_factory=list)


def char_poly_matrix(lin: LocalLinearization, d: int, s_val: complex) -> np.ndarray:
    """(s + lam)(s I + Q) + R for equal generated weights."""
    n = lin.n_gen
    pt = np.full(n, lin.p_tilde)
    scale = lin.mu / lin.sigma ** 2
    Q = np.kron(np.diag(scale * lin.delta / lin.a * pt), np.eye(d))
    R = np.kron(scale * np.outer(pt, pt), np.eye(d))
    I = np.eye(n * d)
    return (s_val + lin.a) * (s_val * I + Q) + R


def closed_form_char_poly(lin: LocalLinearization, d: int, s_val: complex) -> complex:
    n = lin.n_gen
    return (((s_val + lin.a) * (s_val + lin.b)) ** ((n - 1) * d)
            * (s_val * s_val + (lin.a + lin.b) * s_val + lin.c) ** d)


def verify_char_poly(lin: LocalLinearization, d: Optional[int] = None,
                     samples: Optional[Sequence[complex]] = None) -> CharPolyCheck:
    """Relative error between the dense determinant and its factored form at each sample."""
    d = int(d if d is not None else lin.dimension)
    if lin.n_gen * d > 50:
        raise ValueError("n_gen * d must be <= 50 for dense determinants")
    samples = list(DEFAULT_SAMPLES if samples is None else samples)
    check = CharPolyCheck(max_rel_err=0.0, errors=[], samples=[])
    for s_val in samples:
        closed = closed_form_char_poly(lin, d, complex(s_val))
        if abs(closed) < 1e-12:
            check.skipped.append(f"s = {s_val} is (numerically) a root")
            continue
        numeric = scipy.linalg.det(char_poly_matrix(lin, d, complex(s_val)))
        err = float(abs(numeric - closed) / abs(closed))
        check.samples.append(complex(s_val))
        check.errors.append(err)
    check.max_rel_err = max(check.errors) if check.errors else 0.0
    return check


def report_to_dict(report: TheoremCheck) -> Dict[str, Any]:
    return {
        'labels': report.labels,
        'nu_theory': [[v.real, v.imag] for v in report.nu_theory],
        'nu_numeric': [[v.real, v.imag] for v in report.nu_numeric],
        'rel_err': report.rel_err,
        'max_rel_err': report.max_rel_err,
        'multiplicity_theory': report.multiplicity_theory,
        'multiplicity_numeric': report.multiplicity_numeric,
        'ambient_count': report.ambient_count,
        'expected_ambient': report.expected_ambient,
        'fixed_point_residual': report.fixed_point_residual,
        'D': report.D,
        'seed': report.seed,
        'h': report.h,
        'sampler': report.sampler,
        'paired': report.paired,
        'notes': report.notes,
    }
