"""
GDA simulation engines for point-mass GANs with a kernel discriminator.

The discriminator is kept as a finite kernel expansion f = sum_k c_k K(., z_k).
One simultaneous GDA step reads

    f'   = (1 - lam eta_d) f + eta_d (sum_i p_i K(., x_i) - sum_j pt_j K(., xt_j))
    xt_j' = xt_j + eta_g pt_j grad f(xt_j)

with the generator using the pre-update f. Three engines are provided: the
explicit recursion above, the eliminated form that replaces f by a geometric
memory of past generated iterates, and the local engine restricted to one
isolated region.
"""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config.loader import get_numerics_config
from core.exceptions import DimensionMismatchError, SimulationDivergedError
from core.kernel import KernelSpec, gram, grad1_sum, mmd_squared
from core.scenario import (
    NeighborhoodPartition,
    Scenario,
    partition_isolated,
    region_scenario,
)
from utils.logging import get_core_logger

logger = get_core_logger("dynamics")


class SimulationMode(str, Enum):
    EXPLICIT = "explicit"
    ELIMINATED = "eliminated"
    LOCAL = "local"


class TrajectoryStatus(str, Enum):
    COMPLETED = "completed"
    DIVERGED = "diverged"


# ===============================
# DISCRIMINATOR STATE
# ===============================

@dataclass(frozen=True)
class DiscriminatorState:
    """f(.) = sum_k coefs[k] * K(., centers[k])."""

    kernel: KernelSpec
    centers: np.ndarray
    coefs: np.ndarray

    @classmethod
    def zero(cls, kernel: KernelSpec) -> 'DiscriminatorState':
        return cls(kernel, np.zeros((0, kernel.dimension)), np.zeros(0))

    @property
    def size(self) -> int:
        return int(self.coefs.shape[0])

    def evaluate(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.size == 0:
            return np.zeros(X.shape[0])
        return gram(self.kernel, X, self.centers) @ self.coefs

    def gradient(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return grad1_sum(self.kernel, X, self.centers, self.coefs)

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        d = self.kernel.dimension
        if x.shape[0] != d:
            raise DimensionMismatchError(d, x.shape[0], "x")
        if self.size == 0:
            return np.zeros((d, d))
        g = self.kernel.gamma
        diff = x[None, :] - self.centers
        weighted = self.coefs * np.exp(-0.5 * g * (diff * diff).sum(axis=1))
        return g * (g * (diff.T * weighted) @ diff - weighted.sum() * np.eye(d))

    def norm_sq(self) -> float:
        """RKHS norm squared, sum_kl c_k c_l K(z_k, z_l)."""
        if self.size == 0:
            return 0.0
        return float(self.coefs @ gram(self.kernel, self.centers, self.centers) @ self.coefs)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.coefs)) and np.all(np.isfinite(self.centers)))

    def scaled(self, factor: float) -> 'DiscriminatorState':
        return DiscriminatorState(self.kernel, self.centers, self.coefs * factor)

    def plus(self, centers, coefs, merge_tol: Optional[float] = None,
             prune_tol: Optional[float] = None) -> 'DiscriminatorState':
        """Add kernel terms, merging coincident centers and pruning tiny coefficients."""
        numerics = get_numerics_config()
        merge_tol = numerics['merge_tol'] if merge_tol is None else merge_tol
        prune_tol = numerics['prune_tol'] if prune_tol is None else prune_tol

        new_centers = np.atleast_2d(np.asarray(centers, dtype=float))
        new_coefs = np.atleast_1d(np.asarray(coefs, dtype=float))
        if new_centers.shape[1] != self.kernel.dimension:
            raise DimensionMismatchError(self.kernel.dimension, new_centers.shape[1], "center")

        merged = self.coefs.copy()
        extra_c: List[np.ndarray] = []
        extra_w: List[float] = []
        for center, coef in zip(new_centers, new_coefs):
            if self.size:
                hits = np.flatnonzero(np.max(np.abs(self.centers - center), axis=1) <= merge_tol)
                if hits.size:
                    merged[hits[0]] += coef
                    continue
            for k, other in enumerate(extra_c):
                if np.max(np.abs(other - center)) <= merge_tol:
                    extra_w[k] += coef
                    break
            else:
                extra_c.append(center)
                extra_w.append(float(coef))

        all_centers = np.vstack([self.centers] + [c[None, :] for c in extra_c])
        all_coefs = np.concatenate([merged, np.asarray(extra_w, dtype=float)])
        keep = np.abs(all_coefs) >= prune_tol
        return DiscriminatorState(self.kernel, all_centers[keep], all_coefs[keep])


def discriminator_gradient(f: DiscriminatorState, X) -> np.ndarray:
    """Row j is grad f(x_j)."""
    return f.gradient(X)


def discriminator_hessian(f: DiscriminatorState, x) -> np.ndarray:
    return f.hessian(x)


# ===============================
# SINGLE STEPS
# ===============================

def _check_finite(f: DiscriminatorState, X: np.ndarray, t: int):
    if not (f.is_finite() and np.all(np.isfinite(X))):
        raise SimulationDivergedError("non-finite state", step=t)


def step_explicit(f: DiscriminatorState, Xt, s: Scenario, t: int = 0) -> Tuple[DiscriminatorState, np.ndarray]:
    """One simultaneous GDA step; the generator moves along grad f^t (old f)."""
    Xt = np.asarray(Xt, dtype=float)
    if Xt.shape != (s.generated.count, s.dimension):
        raise DimensionMismatchError(s.generated.count * s.dimension, Xt.size, "generated points")
    eta_d, eta_g, lam = s.hyper.eta_d, s.hyper.eta_g, s.hyper.lam
    pt = s.generated.w

    X_next = Xt + eta_g * pt[:, None] * f.gradient(Xt)
    f_next = f.scaled(1.0 - lam * eta_d).plus(
        np.vstack([s.real.X, Xt]),
        np.concatenate([eta_d * s.real.w, -eta_d * pt]),
    )
    _check_finite(f_next, X_next, t)
    return f_next, X_next


def step_eliminated(history: Sequence[np.ndarray], s: Scenario) -> np.ndarray:
    """
    Next generated iterate from the iterate history alone (f^0 = 0).

    With w = 1 - lam eta_d the discriminator at time t is
    eta_d sum_{s=0}^{t-1} w^{t-1-s} (K(., X) p - K(., X^s) pt), so the memory
    runs over X^0..X^{t-1} and the current iterate X^t enters only through the
    evaluation point.
    """
    if not len(history):
        raise ValueError("history must contain at least X^0")
    Xt = np.asarray(history[-1], dtype=float)
    t = len(history) - 1
    w = 1.0 - s.hyper.lam * s.hyper.eta_d
    if t == 0:
        return Xt.copy()

    weights = np.array([w ** (t - 1 - k) for k in range(t)])
    drift_scale = weights.sum()
    memory = np.vstack([np.asarray(history[k], dtype=float) for k in range(t)])
    memory_w = np.concatenate([weights[k] * s.generated.w for k in range(t)])

    grad = s.hyper.eta_d * (drift_scale * grad1_sum(s.kernel, Xt, s.real.X, s.real.w)
                            - grad1_sum(s.kernel, Xt, memory, memory_w))
    X_next = Xt + s.hyper.eta_g * s.generated.w[:, None] * grad
    _check_finite(DiscriminatorState.zero(s.kernel), X_next, t)
    return X_next


class EliminatedEngine:
    """
    Running form of step_eliminated.

    Keeps the scalar geometric drift sum S_t = sum_{s<t} w^{t-1-s} and a buffer
    of past iterates with their decay factors; entries whose contribution falls
    below prune_tol are dropped.
    """

    def __init__(self, s: Scenario, X0):
        self.scenario = s
        self.X = np.asarray(X0, dtype=float).copy()
        self.t = 0
        self.drift_sum = 0.0
        self.memory: List[np.ndarray] = []
        self.decay: List[float] = []
        self._w = 1.0 - s.hyper.lam * s.hyper.eta_d
        self._prune = get_numerics_config()['prune_tol']
        self._scale = s.hyper.eta_d * float(np.max(s.generated.w))

    def step(self) -> np.ndarray:
        s = self.scenario
        grad = self.drift_sum * grad1_sum(s.kernel, self.X, s.real.X, s.real.w)
        if self.memory:
            grad = grad - grad1_sum(
                s.kernel, self.X, np.vstack(self.memory),
                np.concatenate([c * s.generated.w for c in self.decay]),
            )
        X_next = self.X + s.hyper.eta_g * s.generated.w[:, None] * (s.hyper.eta_d * grad)

        self.decay = [c * self._w for c in self.decay]
        self.memory.append(self.X)
        self.decay.append(1.0)
        keep = [k for k, c in enumerate(self.decay) if self._scale * abs(c) >= self._prune]
        if len(keep) != len(self.decay):
            self.memory = [self.memory[k] for k in keep]
            self.decay = [self.decay[k] for k in keep]
        self.drift_sum = self._w * self.drift_sum + 1.0

        self.t += 1
        if not np.all(np.isfinite(X_next)):
            raise SimulationDivergedError("non-finite state", step=self.t)
        self.X = X_next
        return X_next

    def discriminator(self) -> DiscriminatorState:
        """The discriminator f^t implied by the current memory."""
        s = self.scenario
        f = DiscriminatorState.zero(s.kernel)
        if self.t == 0:
            return f
        eta_d = s.hyper.eta_d
        centers = [s.real.X] + self.memory
        coefs = [eta_d * self.drift_sum * s.real.w] + [-eta_d * c * s.generated.w for c in self.decay]
        return f.plus(np.vstack(centers), np.concatenate(coefs))


def step_local(f_i: DiscriminatorState, Xt_i, i: int, s: Scenario,
               part: Optional[NeighborhoodPartition] = None, t: int = 0) -> Tuple[DiscriminatorState, np.ndarray]:
    """step_explicit restricted to x_i and the generated points of N_i."""
    part = part or partition_isolated(s)
    return step_explicit(f_i, Xt_i, region_scenario(s, part, i), t=t)


# ===============================
# EQUILIBRIUM AND LOSS
# ===============================

def equilibrium_residual(Xt, s: Scenario) -> float:
    """Max-norm of grad_1 K(Xt, X) p - grad_1 K(Xt, Xt) pt; zero at an equilibrium."""
    Xt = np.atleast_2d(np.asarray(Xt, dtype=float))
    r = grad1_sum(s.kernel, Xt, s.real.X, s.real.w) - grad1_sum(s.kernel, Xt, Xt, s.generated.w)
    return float(np.max(np.abs(r)))


def loss_eval(f: DiscriminatorState, Xt, s: Scenario) -> float:
    """sum p f(x) - sum pt f(xt) - lam/2 |f|^2_H."""
    Xt = np.atleast_2d(np.asarray(Xt, dtype=float))
    return float(s.real.w @ f.evaluate(s.real.X) - s.generated.w @ f.evaluate(Xt)
                 - 0.5 * s.hyper.lam * f.norm_sq())


def optimal_discriminator(s: Scenario, Xt=None) -> DiscriminatorState:
    """Maximizer of the loss for fixed generated points (defaults to s.generated)."""
    Xt = s.generated.X if Xt is None else np.atleast_2d(np.asarray(Xt, dtype=float))
    lam = s.hyper.lam
    return DiscriminatorState.zero(s.kernel).plus(
        np.vstack([s.real.X, Xt]),
        np.concatenate([s.real.w / lam, -s.generated.w / lam]),
    )


# ===============================
# TRAJECTORIES
# ===============================

@dataclass(frozen=True)
class TrajectoryStep:
    t: int
    points: np.ndarray
    loss: float
    disc_norm_sq: float
    max_dist: float
    mmd_sq: float


@dataclass(frozen=True)
class TrajectoryRecord:
    """Recorded evolution of one simulation run."""

    mode: SimulationMode
    steps: Tuple[TrajectoryStep, ...] = ()
    status: TrajectoryStatus = TrajectoryStatus.COMPLETED
    diverged_at: Optional[int] = None

    @property
    def times(self) -> np.ndarray:
        return np.array([st.t for st in self.steps], dtype=int)

    @property
    def max_dist(self) -> np.ndarray:
        return np.array([st.max_dist for st in self.steps])

    @property
    def final_points(self) -> np.ndarray:
        return self.steps[-1].points


def _max_dist(X: np.ndarray, s: Scenario, part: NeighborhoodPartition) -> float:
    targets = s.real.X[[part.assignments[j] for j in range(X.shape[0])]]
    return float(np.max(np.linalg.norm(X - targets, axis=1)))


def _escaped(X: np.ndarray, s: Scenario, limit: float) -> bool:
    sq = ((X[:, None, :] - s.real.X[None, :, :]) ** 2).sum(axis=2)
    return bool(np.any(np.min(sq, axis=1) > limit * limit))


def simulate(s: Scenario, T: int, mode: Union[SimulationMode, str] = SimulationMode.EXPLICIT,
             record_every: int = 1, f0: Optional[DiscriminatorState] = None,
             X0=None, with_loss: bool = True, strict: bool = False) -> TrajectoryRecord:
    """
    Run T GDA steps from (f0, X0), by default (0, s.generated).

    Records t = 0, every `record_every` steps and the final step. When `with_loss`
    is false the loss/norm/MMD columns are NaN (distance-only runs). A
    non-finite state or a generated point farther than divergence_factor * sigma
    from every true point stops the run with DIVERGED status; with `strict` a
    SimulationDivergedError carrying the record is raised instead.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    mode = SimulationMode(mode)
    if mode == SimulationMode.ELIMINATED and f0 is not None and f0.size:
        raise ValueError("the eliminated engine starts from f0 = 0")

    limit = get_numerics_config()['divergence_factor'] * s.sigma
    part = partition_isolated(s)
    X = s.generated.X if X0 is None else np.asarray(X0, dtype=float).copy()
    steps: List[TrajectoryStep] = []

    engine = None
    local_states = []
    f = f0 if f0 is not None else DiscriminatorState.zero(s.kernel)
    if mode == SimulationMode.ELIMINATED:
        engine = EliminatedEngine(s, X)
    elif mode == SimulationMode.LOCAL:
        local_states = [
            (i, region_scenario(s, part, i), part.members(i), _restrict(f, s, part, i))
            for i in range(part.n_regions) if part.members(i)
        ]

    def current_f() -> DiscriminatorState:
        if engine is not None:
            return engine.discriminator()
        if local_states:
            merged = DiscriminatorState.zero(s.kernel)
            for _, _, _, fi in local_states:
                merged = merged.plus(fi.centers, fi.coefs) if fi.size else merged
            return merged
        return f

    def record_step(t: int):
        if with_loss:
            fc = current_f()
            loss, norm = loss_eval(fc, X, s), fc.norm_sq()
            mmd = mmd_squared(s.kernel, s.real.X, s.real.w, X, s.generated.w)
        else:
            loss = norm = mmd = float('nan')
        steps.append(TrajectoryStep(t, X.copy(), loss, norm, _max_dist(X, s, part), mmd))

    op = logger.start_operation(f"simulate_{mode.value}")
    record_step(0)
    for t in range(1, T + 1):
        try:
            if mode == SimulationMode.EXPLICIT:
                f, X = step_explicit(f, X, s, t=t)
            elif mode == SimulationMode.ELIMINATED:
                X = engine.step()
            else:
                X = X.copy()
                for k, (i, sub, members, fi) in enumerate(local_states):
                    fi, X[members] = step_explicit(fi, X[members], sub, t=t)
                    local_states[k] = (i, sub, members, fi)
            diverged = _escaped(X, s, limit)
        except SimulationDivergedError:
            diverged = True

        if diverged:
            record = TrajectoryRecord(mode, tuple(steps), TrajectoryStatus.DIVERGED, diverged_at=t)
            logger.end_operation(op, success=False, steps=t, status="diverged")
            if strict:
                raise SimulationDivergedError("simulation diverged", step=t, record=record)
            return record
        if t % record_every == 0 or t == T:
            record_step(t)

    logger.end_operation(op, steps=T, final_max_dist=f"{steps[-1].max_dist:.3e}")
    return TrajectoryRecord(mode, tuple(steps))


def _restrict(f: DiscriminatorState, s: Scenario, part: NeighborhoodPartition, i: int) -> DiscriminatorState:
    """Terms of f whose centers lie nearest to x_i."""
    if f.size == 0:
        return f
    sq = ((f.centers[:, None, :] - s.real.X[None, :, :]) ** 2).sum(axis=2)
    mask = np.argmin(sq, axis=1) == i
    return DiscriminatorState(f.kernel, f.centers[mask], f.coefs[mask])


def export_trajectory_csv(record: TrajectoryRecord, path: Union[str, Path]) -> Path:
    """Write one row per recorded step: t, loss, disc_norm_sq, max_dist, x_j_k..., mmd_sq"""
    path = Path(path)
    if not record.steps:
        raise ValueError("record has no steps")
    n_gen, d = record.steps[0].points.shape
    columns = ['t', 'loss', 'disc_norm_sq', 'max_dist'] + [
        f"x_{j + 1}_{k + 1}" for j in range(n_gen) for k in range(d)
    ] + ['mmd_sq']
    rows = [[st.t, st.loss, st.disc_norm_sq, st.max_dist, *st.points.reshape(-1), st.mmd_sq]
            for st in record.steps]
    frame = pd.DataFrame(rows, columns=columns)
    frame['t'] = frame['t'].astype(int)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.17g')
    logger.info("Exported trajectory", path=str(path), rows=len(frame), status=record.status.value)
    return path
