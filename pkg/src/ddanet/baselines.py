"""Comparison algorithms: Markov incremental gradient descent and the
distributed projected subgradient method.

Both use plain Euclidean projection onto the constraint set, whatever the
proximal setup attached to the objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RunRecord
from .mixing import MixingError, MixingMatrix, return_time_matrix


@dataclass(eq=False)
class MIGDState:
    """Single iterate carried around the network by a random-walk token."""

    x: np.ndarray
    token: int
    transition: MixingMatrix
    t: int = 1
    running_sum: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).copy()
        if self.running_sum is None:
            self.running_sum = self.x.copy()
        if not 0 <= self.token < self.transition.n:
            raise ValueError(f"token {self.token} outside 0..{self.transition.n - 1}")

    @property
    def x_hat(self) -> np.ndarray:
        return self.running_sum / self.t


@dataclass(eq=False)
class DPGState:
    """Per-node iterates of the consensus-plus-subgradient method."""

    x: np.ndarray
    transition: MixingMatrix
    t: int = 1
    running_sum: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).copy()
        if self.running_sum is None:
            self.running_sum = self.x.copy()

    @property
    def x_hat(self) -> np.ndarray:
        return self.running_sum / self.t


def _euclid(objective, x):
    return objective.setup.constraint.euclidean_projection(x)


def migd_step(state: MIGDState, objective, alpha_t: float, rng: np.random.Generator) -> MIGDState:
    """Subgradient step on the token holder's function, then move the token.

    The token jumps to j with probability P[j, token], drawn by inverting
    the column's cumulative sum with one uniform variate.
    """
    i = state.token
    g = objective.component_subgradient(i, state.x)
    state.x = _euclid(objective, state.x - alpha_t * g)
    cum = np.cumsum(state.transition.entries[:, i])
    j = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    state.token = min(j, cum.size - 1)
    state.t += 1
    state.running_sum += state.x
    return state


def dpg_step(state: DPGState, objective, alpha_t: float) -> DPGState:
    """x_i <- Proj(sum_j P_ji x_j - alpha_t g_i) for every node at once."""
    g = objective.local_subgradients(state.x)
    mixed = state.transition.entries.T @ state.x
    state.x = _euclid(objective, mixed - alpha_t * g)
    state.t += 1
    state.running_sum += state.x
    return state


def migd_rate_constant(p: MixingMatrix) -> float:
    """n * max_i Gamma_ii, with Gamma the return-time matrix of `p`.

    Raises if the result violates n max_i Gamma_ii >= 1 / (1 - sigma_2).
    """
    gamma = return_time_matrix(p)
    const = p.n * float(np.max(np.diag(gamma)))
    if p.n > 1 and p.sigma2 < 1 and const < (1.0 / (1.0 - p.sigma2)) * (1 - 1e-9):
        raise MixingError(f"n max Gamma_ii = {const:.6g} below 1/(1 - sigma_2) = {1 / (1 - p.sigma2):.6g}")
    return const


def migd_step_size(t: int, R: float, L: float, rate_constant: float) -> float:
    """alpha(t) = R / (L sqrt(n max_i Gamma_ii * t)), with alpha(0) := alpha(1)."""
    return R / (L * math.sqrt(rate_constant * max(t, 1)))


def dpg_step_size(n: int, R: float, L: float, T: int) -> float:
    """Horizon-aware constant step L / (n^{3/2} R sqrt(T))."""
    return L / (n ** 1.5 * R * math.sqrt(T))


def run_migd(objective, p: MixingMatrix, T: int, f_star: float | None = None, rng=None,
             eval_every: int = 10, epsilon: float | None = None, seed: int | None = None,
             alpha: float | None = None) -> RunRecord:
    """Run T MIGD steps; errors are measured on the shared running average.

    ``alpha`` overrides the decaying schedule with a constant step.
    """
    rng = np.random.default_rng(rng)
    R = objective.setup.constraint.diameter_bound
    const = migd_rate_constant(p)
    state = MIGDState(objective.setup.anchor.copy(), int(rng.integers(p.n)), p)
    rec = RunRecord(seed=seed, metadata={"algo": "migd", "rate_constant": const})
    for _ in range(T):
        a = alpha if alpha is not None else migd_step_size(state.t, R, objective.L, const)
        migd_step(state, objective, a, rng)
        rec.rounds += 1
        if f_star is not None and state.t % eval_every == 0:
            err = objective.value(state.x_hat) - f_star
            rec.eval_t.append(state.t)
            rec.max_error.append(err)
            if epsilon is not None and err <= epsilon:
                rec.hit_eps_at = state.t
                break
    return rec


def run_dpg(objective, p: MixingMatrix, T: int, f_star: float | None = None,
            eval_every: int = 10, epsilon: float | None = None, seed: int | None = None,
            alpha: float | None = None) -> RunRecord:
    """Run T rounds of the distributed projected subgradient method."""
    R = objective.setup.constraint.diameter_bound
    a = alpha if alpha is not None else dpg_step_size(p.n, R, objective.L, T)
    state = DPGState(np.tile(objective.setup.anchor, (p.n, 1)), p)
    rec = RunRecord(seed=seed, metadata={"algo": "dpg", "alpha": a})
    for _ in range(T):
        dpg_step(state, objective, a)
        rec.rounds += 1
        if f_star is not None and state.t % eval_every == 0:
            err = float(objective.values(state.x_hat).max() - f_star)
            rec.eval_t.append(state.t)
            rec.max_error.append(err)
            if epsilon is not None and err <= epsilon:
                rec.hit_eps_at = state.t
                break
    return rec
