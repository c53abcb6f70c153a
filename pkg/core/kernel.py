"""
RBF kernel calculus.

K(x, y) = exp(-|x - y|^2 / (2 sigma^2)) together with its first and second
derivatives, vectorized Gram/gradient helpers used by the simulation engines,
the MMD between weighted point masses, and a finite-difference check of the
smoothness assumptions the local analysis rests on:

    grad_1 K(x, x) = 0,    -d2K/dx2 (x, x) = d2K/dxdy (x, x) = I / sigma^2

All functions are pure.
"""

from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt
from scipy.spatial.distance import cdist

from config.loader import get_numerics_config
from core.exceptions import DimensionMismatchError


class KernelFamily(str, Enum):
    RBF = "RBF"


class KernelSpec(BaseModel):
    """Kernel family, width sigma (data-space units) and data dimension d."""

    model_config = ConfigDict(frozen=True)

    family: KernelFamily = KernelFamily.RBF
    width: PositiveFloat
    dimension: PositiveInt

    @property
    def gamma(self) -> float:
        """Inverse squared width, 1 / sigma^2."""
        return 1.0 / (self.width * self.width)


def _vector(k: KernelSpec, x, what: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape[0] != k.dimension:
        raise DimensionMismatchError(k.dimension, v.shape[0], what)
    return v


def _matrix(k: KernelSpec, X, what: str = "matrix") -> np.ndarray:
    M = np.asarray(X, dtype=float)
    if M.ndim == 1:
        M = M.reshape(-1, k.dimension) if M.size % k.dimension == 0 and M.size else M.reshape(1, -1)
    if M.ndim != 2 or M.shape[1] != k.dimension:
        raise DimensionMismatchError(k.dimension, M.shape[-1] if M.ndim else 0, what)
    return M


# ===============================
# POINTWISE OPERATIONS
# ===============================

def eval(k: KernelSpec, x, y) -> float:  # noqa: A001 - mirrors the kernel's mathematical name
    """K(x, y), a value in (0, 1]."""
    diff = _vector(k, x, "x") - _vector(k, y, "y")
    return float(np.exp(-0.5 * k.gamma * diff.dot(diff)))


def grad1(k: KernelSpec, x, y) -> np.ndarray:
    """dK(x, y)/dx = -(x - y) / sigma^2 * K(x, y)."""
    diff = _vector(k, x, "x") - _vector(k, y, "y")
    return -k.gamma * diff * np.exp(-0.5 * k.gamma * diff.dot(diff))


def hess11(k: KernelSpec, x, y) -> np.ndarray:
    """d2K(x, y)/dx2 = (1/sigma^2) ((x-y)(x-y)^T / sigma^2 - I) K(x, y)."""
    diff = _vector(k, x, "x") - _vector(k, y, "y")
    value = np.exp(-0.5 * k.gamma * diff.dot(diff))
    return k.gamma * (k.gamma * np.outer(diff, diff) - np.eye(k.dimension)) * value


def cross_hess(k: KernelSpec, x, y) -> np.ndarray:
    """d2K(x, y)/dxdy = (1/sigma^2) (I - (x-y)(x-y)^T / sigma^2) K(x, y)."""
    diff = _vector(k, x, "x") - _vector(k, y, "y")
    value = np.exp(-0.5 * k.gamma * diff.dot(diff))
    return k.gamma * (np.eye(k.dimension) - k.gamma * np.outer(diff, diff)) * value


# ===============================
# VECTORIZED HELPERS
# ===============================

def gram(k: KernelSpec, X, Y) -> np.ndarray:
    """K(X, Y): the |X| x |Y| matrix of kernel values."""
    A = _matrix(k, X, "X")
    B = _matrix(k, Y, "Y")
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    return np.exp(-0.5 * k.gamma * cdist(A, B, 'sqeuclidean'))


def grad1_sum(k: KernelSpec, X, Z, w) -> np.ndarray:
    """Row i is sum_j w_j grad_1 K(x_i, z_j), i.e. grad_1 K(X, Z) w."""
    A = _matrix(k, X, "X")
    B = _matrix(k, Z, "Z")
    weights = np.asarray(w, dtype=float).reshape(-1)
    if B.shape[0] == 0:
        return np.zeros_like(A)
    G = gram(k, A, B) * weights[None, :]
    return -k.gamma * (G.sum(axis=1)[:, None] * A - G @ B)


def mmd_squared(k: KernelSpec, X, p, Y, q) -> float:
    """|mu_r - mu_g|^2 in the RKHS for weighted point masses (X, p) and (Y, q)."""
    p = np.asarray(p, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    value = p @ gram(k, X, X) @ p - 2.0 * p @ gram(k, X, Y) @ q + q @ gram(k, Y, Y) @ q
    return float(max(value, 0.0))


# ===============================
# ASSUMPTION CHECK
# ===============================

class PointCheck(BaseModel):
    """Finite-difference deviations at one (x, y) pair."""

    point_index: int
    pair: str  # "coincident" or "offset"
    grad_dev: float
    hess_dev: float
    cross_dev: float


class KernelCheckReport(BaseModel):
    """Outcome of check_assumptions."""

    step: float
    tolerance: float
    checks: List[PointCheck] = Field(default_factory=list)
    max_grad_dev: float = 0.0
    max_hess_dev: float = 0.0
    max_cross_dev: float = 0.0
    failures: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def _fd_gradient(k: KernelSpec, x: np.ndarray, y: np.ndarray, h: float) -> np.ndarray:
    basis = np.eye(k.dimension) * h
    return np.array([(eval(k, x + e, y) - eval(k, x - e, y)) / (2.0 * h) for e in basis])


def _fd_mixed(k: KernelSpec, x: np.ndarray, y: np.ndarray, h: float, cross: bool) -> np.ndarray:
    """Central mixed second differences; `cross` moves y for the second index."""
    d = k.dimension
    basis = np.eye(d) * h
    out = np.empty((d, d))
    for a in range(d):
        for b in range(d):
            ea, eb = basis[a], basis[b]
            if cross:
                vals = (eval(k, x + ea, y + eb) - eval(k, x + ea, y - eb)
                        - eval(k, x - ea, y + eb) + eval(k, x - ea, y - eb))
            else:
                vals = (eval(k, x + ea + eb, y) - eval(k, x + ea - eb, y)
                        - eval(k, x - ea + eb, y) + eval(k, x - ea - eb, y))
            out[a, b] = vals / (4.0 * h * h)
    return out


def check_assumptions(k: KernelSpec, points: Sequence, h: Optional[float] = None) -> KernelCheckReport:
    """
    Compare grad1/hess11/cross_hess against central finite differences of eval.

    Every point is checked at the coincident pair (x, x) and at the offset pair
    (x, next point). A deviation above tolerance_factor * h^2 is a failure.
    """
    numerics = get_numerics_config()
    h = float(h if h is not None else numerics['fd_step'])
    tolerance = numerics['fd_tolerance_factor'] * h * h
    P = _matrix(k, points, "points")

    report = KernelCheckReport(step=h, tolerance=tolerance)
    n = P.shape[0]
    for i in range(n):
        x = P[i]
        pairs = [("coincident", x)]
        if n > 1:
            pairs.append(("offset", P[(i + 1) % n]))
        for label, y in pairs:
            check = PointCheck(
                point_index=i,
                pair=label,
                grad_dev=float(np.max(np.abs(_fd_gradient(k, x, y, h) - grad1(k, x, y)))),
                hess_dev=float(np.max(np.abs(_fd_mixed(k, x, y, h, cross=False) - hess11(k, x, y)))),
                cross_dev=float(np.max(np.abs(_fd_mixed(k, x, y, h, cross=True) - cross_hess(k, x, y)))),
            )
            report.checks.append(check)
            for name in ("grad_dev", "hess_dev", "cross_dev"):
                if getattr(check, name) > tolerance:
                    report.failures.append(f"{name} at point {i} ({label}): {getattr(check, name):.3e}")

    if report.checks:
        report.max_grad_dev = max(c.grad_dev for c in report.checks)
        report.max_hess_dev = max(c.hess_dev for c in report.checks)
        report.max_cross_dev = max(c.cross_dev for c in report.checks)
    return report
