"""Centralized and distributed dual averaging with runtime bound auditors.

Time indexing follows the convergence analysis: a fresh state sits at
t = 1 with z_i(1) = 0 and x_i(1) = Pi(0, alpha(0)).  One round at time t
takes subgradients g_i(t) evaluated at x_i(t) and produces

    z_i(t+1) = sum_j P_ij z_j(t) + g_i(t),   x_i(t+1) = Pi(z_i(t+1), alpha(t)).

The state keeps the running sums that the Theorem-1 style bounds need, so
the auditors can be evaluated at any round without replaying history.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mixing import MixingMatrix, ProtocolSpec, gram_lambda2, sample_protocol_entries
from .proximal import ProximalSetup, Regularizer, composite_project, project

NO_REG = Regularizer("none")


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class StepSchedule:
    """Non-increasing positive step sizes alpha(t).

    ``theorem2``: R sqrt(gap) / (4 L sqrt(t)), with alpha(0) := alpha(1).
    ``constant``: ``constant`` at every round.
    ``custom``: ``func(t)``; the caller is responsible for monotonicity.
    """

    kind: str = "theorem2"
    R: float = 1.0
    L: float = 1.0
    gap: float = 1.0
    constant: float | None = None
    func: Callable[[int], float] | None = None

    def __post_init__(self):
        if self.kind not in ("theorem2", "constant", "custom"):
            raise ScheduleError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "theorem2" and not self.gap > 0:
            raise ScheduleError(f"spectral gap must be positive (got {self.gap})")
        if self.kind == "constant" and not (self.constant and self.constant > 0):
            raise ScheduleError("constant schedule needs a positive constant")
        if self.kind == "custom" and self.func is None:
            raise ScheduleError("custom schedule needs func")

    def __call__(self, t: int) -> float:
        return step_size(t, self)

    def alphas(self, T: int) -> np.ndarray:
        """alpha(0), ..., alpha(T)."""
        return np.array([step_size(t, self) for t in range(T + 1)])


def step_size(t: int, schedule: StepSchedule) -> float:
    if t < 0:
        raise ScheduleError("round index must be non-negative")
    if schedule.kind == "theorem2":
        t = max(t, 1)
        return schedule.R * math.sqrt(schedule.gap) / (4.0 * schedule.L * math.sqrt(t))
    if schedule.kind == "constant":
        return float(schedule.constant)
    a = float(schedule.func(t))
    if not a > 0:
        raise ScheduleError(f"custom schedule returned non-positive step {a} at t={t}")
    return a


# -- state -------------------------------------------------------------------

@dataclass(eq=False)
class NetworkState:
    setup: ProximalSetup
    z: np.ndarray
    x: np.ndarray
    t: int
    running_sum: np.ndarray
    zbar: np.ndarray
    deviation: np.ndarray
    y: np.ndarray
    y_sum: np.ndarray
    reg: Regularizer = NO_REG
    # sum_{s<=t} alpha(s-1), and per node sum_{s<=t} alpha(s) dev_j(s) / alpha(s-1) dev_j(s)
    sum_alpha_prev: float = 0.0
    weighted_dev: np.ndarray | None = None
    weighted_dev_prev: np.ndarray | None = None
    max_deviation: float = 0.0
    # averaged-sequence regret bookkeeping over the rounds s = 1 .. t-1
    g_sum: np.ndarray | None = None
    gy_sum: float = 0.0
    phi_y_sum: float = 0.0
    alpha_g2_sum: float = 0.0
    mean_residual: float = 0.0
    norm_violations: int = 0
    complete_history: bool = True

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def d(self) -> int:
        return self.z.shape[1]

    @property
    def x_hat(self) -> np.ndarray:
        """Running local averages (1/t) sum_{s<=t} x_i(s)."""
        return self.running_sum / self.t

    @property
    def y_hat(self) -> np.ndarray:
        return self.y_sum / self.t

    def copy(self) -> "NetworkState":
        out = NetworkState(**self.__dict__)
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                setattr(out, k, v.copy())
        return out


def _primal(z, t, alpha, setup, reg):
    if reg.kind == "none":
        return project(z, alpha, setup)
    return composite_project(z, t, alpha, setup, reg)


def init_state(setup: ProximalSetup, n: int, schedule: StepSchedule,
               reg: Regularizer = NO_REG) -> NetworkState:
    d = setup.dim
    a0 = step_size(0, schedule)
    z = np.zeros((n, d))
    x = _primal(z, 0, a0, setup, reg)
    y = _primal(np.zeros(d), 0, a0, setup, reg)
    return NetworkState(
        setup=setup, z=z, x=x, t=1, running_sum=x.copy(), zbar=np.zeros(d),
        deviation=np.zeros(n), y=y, y_sum=y.copy(), reg=reg, sum_alpha_prev=a0,
        weighted_dev=np.zeros(n), weighted_dev_prev=np.zeros(n), g_sum=np.zeros(d))


def _advance(state: NetworkState, p: np.ndarray, g: np.ndarray, schedule: StepSchedule,
             reg: Regularizer, bounded: bool = True) -> NetworkState:
    g = np.asarray(g, dtype=float).reshape(state.z.shape)
    if p.shape != (state.n, state.n):
        raise ValueError(f"mixing matrix is {p.shape}, state has {state.n} nodes")
    setup = state.setup
    t = state.t
    a_prev = step_size(t - 1, schedule)
    a_t = step_size(t, schedule)

    # noisy oracles only bound the second moment, so single draws may exceed L
    bad = int(np.sum(setup.dual_norm(g) > schedule.L * (1 + 1e-9) + 1e-12)) if bounded else 0
    if bad:
        if not state.norm_violations:
            warnings.warn(f"{bad} subgradient(s) exceed L={schedule.L} at t={t} "
                          "(further violations are only counted)", RuntimeWarning, stacklevel=3)
        state.norm_violations += bad

    gbar = g.mean(axis=0)
    state.g_sum += gbar
    state.gy_sum += float(gbar @ state.y)
    state.phi_y_sum += float(reg(state.y))
    state.alpha_g2_sum += a_prev * float(setup.dual_norm(gbar)) ** 2

    z_new = p @ state.z + g
    zbar_new = z_new.mean(axis=0)
    resid = float(np.abs(zbar_new - state.zbar - gbar).max())
    state.mean_residual = max(state.mean_residual, resid)

    state.z = z_new
    state.zbar = zbar_new
    state.x = _primal(z_new, t, a_t, setup, reg)
    state.y = _primal(zbar_new, t, a_t, setup, reg)
    state.t = t + 1
    state.running_sum += state.x
    state.y_sum += state.y

    dev = setup.dual_norm(zbar_new[None, :] - z_new)
    state.deviation = dev
    state.max_deviation = max(state.max_deviation, float(dev.max()))
    state.sum_alpha_prev += a_t
    state.weighted_dev += step_size(t + 1, schedule) * dev
    state.weighted_dev_prev += a_t * dev
    return state


def _entries(p) -> np.ndarray:
    return p.entries if isinstance(p, MixingMatrix) else np.asarray(p, dtype=float)


def distributed_step(state: NetworkState, p, subgradients, schedule: StepSchedule) -> NetworkState:
    """One synchronous round of distributed dual averaging (in place)."""
    if state.reg.kind != "none":
        raise ValueError("state carries a regularizer; use composite_distributed_step")
    return _advance(state, _entries(p), subgradients, schedule, NO_REG)


def stochastic_gradient_step(state: NetworkState, p, noisy_gradients,
                             schedule: StepSchedule) -> NetworkState:
    """Same update as `distributed_step`, fed by an unbiased gradient oracle.

    Individual noisy draws are not checked against ``schedule.L``.
    """
    if state.reg.kind != "none":
        raise ValueError("state carries a regularizer; use composite_distributed_step")
    return _advance(state, _entries(p), noisy_gradients, schedule, NO_REG, bounded=False)


def composite_distributed_step(state: NetworkState, p, subgradients, schedule: StepSchedule,
                               reg: Regularizer) -> NetworkState:
    """Distributed step whose primal map is the composite (l1) projection."""
    if reg != state.reg:
        raise ValueError("regularizer differs from the one the state was initialised with")
    return _advance(state, _entries(p), subgradients, schedule, reg)


def centralized_step(state: NetworkState, g, schedule: StepSchedule) -> NetworkState:
    """Standard dual averaging: z += g; x = Pi(z, alpha(t))."""
    if state.n != 1:
        raise ValueError("centralized state must have a single node")
    return _advance(state, np.ones((1, 1)), np.reshape(g, (1, -1)), schedule, state.reg)


# -- bounds and auditors ---------------------------------------------------------

def theorem1_rhs(state: NetworkState, schedule: StepSchedule, psi_xstar: float,
                 node: int | None = None) -> float:
    """Upper bound on f(x_hat_i(T)) - f(x*) at T = state.t.

    ``node=None`` uses the worst node's deviation term.
    """
    if not state.complete_history:
        raise ValueError("deviation history incomplete; bound needs every round from t=1")
    T = state.t
    L = schedule.L
    own = state.weighted_dev.max() if node is None else state.weighted_dev[node]
    return (psi_xstar / (T * step_size(T, schedule))
            + L * L / (2 * T) * state.sum_alpha_prev
            + 2 * L / (state.n * T) * state.weighted_dev.sum()
            + L / T * own)


def deviation_bound_static(T: int, n: int, sigma2: float, L: float) -> float:
    """2 L log(T sqrt(n)) / (1 - sigma2) + 3 L."""
    if not 0 <= sigma2 < 1:
        raise ValueError(f"need 0 <= sigma2 < 1 (got {sigma2})")
    return 2 * L * math.log(T * math.sqrt(n)) / (1 - sigma2) + 3 * L


def deviation_bound_stochastic(T: int, n: int, lambda2: float, L: float) -> float:
    """6 L log(T^2 n) / (1 - lambda2) + L / (T sqrt(n)) + 2 L."""
    if not lambda2 < 1:
        raise ValueError(f"need lambda2 < 1 (got {lambda2})")
    return 6 * L * math.log(T * T * n) / (1 - lambda2) + L / (T * math.sqrt(n)) + 2 * L


def theorem4_expectation_rhs(T: int, n: int, sigma2: float, L: float,
                             schedule: StepSchedule, psi_xstar: float) -> float:
    a = schedule.alphas(T)
    return (psi_xstar / (T * a[T])
            + 8 * L * L / T * a[:T].sum()
            + 3 * L * L / T * math.log(T * math.sqrt(n)) / (1 - sigma2) * a[1:].sum())


def transfer_audit(state: NetworkState, objective, f_star: float, L: float,
                   node: int) -> dict:
    """Compare f(x_hat_i) - f* with f(y_hat) - f* + (L/T) sum alpha dev_i.

    Reports both the alpha(t)-weighted sum and the alpha(t-1)-weighted one
    (the latter matches the step actually used to form x_i(t)).
    """
    T = state.t
    lhs = objective.value(state.x_hat[node]) - f_star
    base = objective.value(state.y_hat) - f_star
    return {"lhs": lhs,
            "rhs": base + L / T * state.weighted_dev[node],
            "rhs_prev_step": base + L / T * state.weighted_dev_prev[node]}


def regret_audit(state: NetworkState, schedule: StepSchedule, x_star) -> tuple[float, float]:
    """Linearised regret of the averaged sequence against its dual-averaging bound.

    lhs = sum_s <gbar(s), y(s) - x*> + phi(y(s)) - phi(x*), over s = 1 .. t-1;
    rhs = psi(x*) / alpha(t-1) + 0.5 sum_s alpha(s-1) ||gbar(s)||_*^2.
    With one node this is exactly the follow-the-regularized-leader lemma.
    """
    rounds = state.t - 1
    if rounds < 1:
        return 0.0, float(state.setup.psi(x_star)) / step_size(0, schedule)
    x_star = np.asarray(x_star, dtype=float)
    lhs = (state.gy_sum - float(state.g_sum @ x_star)
           + state.phi_y_sum - rounds * float(state.reg(x_star)))
    rhs = float(state.setup.psi(x_star)) / step_size(rounds, schedule) + 0.5 * state.alpha_g2_sum
    return lhs, rhs


# -- run records ------------------------------------------------------------------

@dataclass
class RunRecord:
    eval_t: list = field(default_factory=list)
    max_error: list = field(default_factory=list)
    max_deviation: list = field(default_factory=list)
    node_deviation: list = field(default_factory=list)
    bound: list = field(default_factory=list)
    deviation_bound: float | None = None
    deviation_violation_rounds: int = 0
    rounds: int = 0
    hit_eps_at: int | None = None
    metadata: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def final_error(self) -> float:
        return self.max_error[-1] if self.max_error else float("nan")

    @property
    def violation_frequency(self) -> float:
        return self.deviation_violation_rounds / self.rounds if self.rounds else 0.0

    def to_csv(self) -> str:
        lines = ["t,max_error,max_deviation,bound"]
        for row in zip(self.eval_t, self.max_error, self.max_deviation, self.bound):
            lines.append(",".join(repr(float(v)) if v is not None else "" for v in row))
        return "\n".join(lines) + "\n"


def _gradients(objective, oracle, x):
    return (oracle or objective).local_subgradients(x)


def run_dda(objective, comm, schedule: StepSchedule, T: int, f_star: float | None = None,
            eval_every: int = 10, rng=None, oracle=None, reg: Regularizer = NO_REG,
            epsilon: float | None = None, psi_xstar: float | None = None,
            deviation_bound: float | None = None, state: NetworkState | None = None,
            seed: int | None = None) -> tuple[RunRecord, NetworkState]:
    """Run T rounds of distributed dual averaging.

    Parameters
    ----------
    objective : DistributedObjective
    comm : MixingMatrix or ProtocolSpec
        Fixed matrix, or protocol sampled afresh each round from `rng`.
    schedule : StepSchedule
    T : int
        Number of rounds.
    f_star : float, optional
        Reference optimum of f + phi; enables error tracking every
        `eval_every` rounds.
    oracle : NoisyOracle, optional
        Replaces exact subgradients.
    epsilon : float, optional
        Stop at the first evaluation whose worst-node error is <= epsilon.
    psi_xstar : float, optional
        If given, the Theorem-1 bound is recorded at every evaluation.
    deviation_bound : float, optional
        Per-round ceiling on max_i ||zbar - z_i||_*; violations are counted.
    """
    rng = np.random.default_rng(rng)
    if state is None:
        state = init_state(objective.setup, objective.n, schedule, reg)
    rec = RunRecord(seed=seed, deviation_bound=deviation_bound)
    static = isinstance(comm, MixingMatrix)
    p_fixed = comm.entries if static else None

    def evaluate():
        rec.eval_t.append(state.t)
        xh = state.x_hat
        err = float((objective.values(xh) + reg(xh)).max() - f_star)
        rec.max_error.append(err)
        rec.max_deviation.append(state.max_deviation)
        rec.node_deviation.append(state.deviation.copy())
        rec.bound.append(theorem1_rhs(state, schedule, psi_xstar) if psi_xstar is not None else None)
        return err

    for _ in range(T):
        g = _gradients(objective, oracle, state.x)
        p = p_fixed if static else sample_protocol_entries(comm, rng)
        _advance(state, p, g, schedule, reg, bounded=oracle is None)
        rec.rounds += 1
        if deviation_bound is not None and state.deviation.max() > deviation_bound:
            rec.deviation_violation_rounds += 1
        if f_star is not None and state.t % eval_every == 0:
            if evaluate() <= (epsilon if epsilon is not None else -np.inf):
                rec.hit_eps_at = state.t
                break
    return rec, state


def stochastic_comm_run(spec: ProtocolSpec, objective, schedule: StepSchedule, T: int,
                        rng=None, f_star: float | None = None, eval_every: int = 10,
                        lambda2: float | None = None, seed: int | None = None) -> RunRecord:
    """Distributed dual averaging with i.i.d. random communication matrices.

    Audits the high-probability deviation ceiling every round using
    lambda_2(E[P^T P]) (exact for gossip, Monte-Carlo otherwise).
    """
    rng = np.random.default_rng(rng)
    if lambda2 is None:
        lambda2 = gram_lambda2(spec, np.random.default_rng(0))
    bound = deviation_bound_stochastic(T, objective.n, lambda2, schedule.L)
    rec, _ = run_dda(objective, spec, schedule, T, f_star=f_star, eval_every=eval_every,
                     rng=rng, deviation_bound=bound, seed=seed)
    rec.metadata.update(protocol=spec.kind, lazy=spec.lazy, lambda2=lambda2,
                        failure_prob=spec.failure_prob)
    return rec


def theorem2_schedule(objective, p: MixingMatrix | None = None, gap: float | None = None) -> StepSchedule:
    """Theorem-2 schedule with R from the constraint set and L from the objective."""
    if gap is None:
        if p is None:
            raise ValueError("pass the mixing matrix or its spectral gap")
        gap = p.gap
    return StepSchedule("theorem2", R=objective.setup.constraint.diameter_bound,
                        L=objective.L, gap=gap)
