"""Problem instances f = (1/n) sum_i f_i and their subgradient oracles.

Every objective evaluates node-local values/subgradients on a stack of
per-node points (row i belongs to node i) and the global average on any
batch of points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .mixing import MixingMatrix
from .proximal import ProximalSetup, Regularizer, quadratic_setup


class ObjectiveError(ValueError):
    pass


class DistributedObjective:
    """Base class; subclasses fill in the four vectorized oracles."""

    kind = "abstract"

    def __init__(self, n: int, d: int, lipschitz: float, setup: ProximalSetup):
        self.n = n
        self.d = d
        self.L = float(lipschitz)
        self.setup = setup

    def local_values(self, X) -> np.ndarray:
        """f_i(X[i]) for every node i."""
        raise NotImplementedError

    def local_subgradients(self, X) -> np.ndarray:
        """A subgradient of f_i at X[i] for every node i."""
        raise NotImplementedError

    def component_values(self, X) -> np.ndarray:
        """Matrix F with F[m, i] = f_i(X[m]) for a batch of points X."""
        raise NotImplementedError

    def component_subgradient(self, i: int, x) -> np.ndarray:
        raise NotImplementedError

    def values(self, X) -> np.ndarray:
        """Global objective f at each row of X."""
        return self.component_values(np.atleast_2d(X)).mean(axis=1)

    def value(self, x) -> float:
        return float(self.values(np.reshape(x, (1, -1)))[0])

    def subgradient(self, x) -> np.ndarray:
        x = np.reshape(np.asarray(x, float), (1, -1))
        return self.local_subgradients(np.repeat(x, self.n, axis=0)).mean(axis=0)

    def params(self) -> dict:
        return {"kind": self.kind, "n": self.n, "d": self.d}


class HingeObjective(DistributedObjective):
    """f_i(x) = max(0, 1 - y_i <b_i, x>); subgradient 0 at the kink."""

    kind = "hinge"

    def __init__(self, features, labels, setup: ProximalSetup, meta: dict | None = None):
        self.features = np.asarray(features, dtype=float)
        self.labels = np.asarray(labels, dtype=float)
        n, d = self.features.shape
        super().__init__(n, d, np.linalg.norm(self.features, axis=1).max(), setup)
        self._signed = self.labels[:, None] * self.features
        self.meta = meta or {}

    def local_values(self, X):
        return np.maximum(0.0, 1.0 - np.einsum("ij,ij->i", self._signed, X))

    def local_subgradients(self, X):
        active = np.einsum("ij,ij->i", self._signed, X) < 1.0
        return np.where(active[:, None], -self._signed, 0.0)

    def component_values(self, X):
        return np.maximum(0.0, 1.0 - np.atleast_2d(X) @ self._signed.T)

    def component_subgradient(self, i, x):
        s = self._signed[i]
        return -s if s @ x < 1.0 else np.zeros(self.d)

    def params(self):
        return {**super().params(), **self.meta}


class AbsObjective(DistributedObjective):
    """f_i(x) = |x - y_i| in one dimension; subgradient sign(x - y_i), 0 at y_i."""

    kind = "median"

    def __init__(self, targets, setup: ProximalSetup):
        self.targets = np.asarray(targets, dtype=float).ravel()
        super().__init__(self.targets.size, 1, 1.0, setup)

    def local_values(self, X):
        return np.abs(np.asarray(X)[:, 0] - self.targets)

    def local_subgradients(self, X):
        return np.sign(np.asarray(X)[:, 0] - self.targets)[:, None]

    def component_values(self, X):
        return np.abs(np.atleast_2d(X)[:, :1] - self.targets[None, :])

    def component_subgradient(self, i, x):
        return np.sign(np.asarray(x, float) - self.targets[i]).reshape(1)

    def params(self):
        return {**super().params(), "targets": self.targets.tolist()}


class LinearObjective(DistributedObjective):
    """f_i(x) = s_i * x on an interval."""

    kind = "linear"

    def __init__(self, slopes, setup: ProximalSetup):
        self.slopes = np.asarray(slopes, dtype=float).ravel()
        super().__init__(self.slopes.size, 1, np.abs(self.slopes).max(), setup)

    def local_values(self, X):
        return self.slopes * np.asarray(X)[:, 0]

    def local_subgradients(self, X):
        return self.slopes[:, None].copy()

    def component_values(self, X):
        return np.atleast_2d(X)[:, :1] * self.slopes[None, :]

    def component_subgradient(self, i, x):
        return np.array([self.slopes[i]])


# -- instance builders ------------------------------------------------------

def make_svm_instance(n: int, d: int = 5, flip_prob: float = 0.05, seed=None,
                      setup: ProximalSetup | None = None) -> HingeObjective:
    """Hinge-loss ensemble: unit-sphere features, Gaussian separator, label flips."""
    if d < 2:
        raise ObjectiveError("feature dimension must be at least 2")
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((n, d))
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    w = rng.standard_normal(d)
    y = np.where(b @ w >= 0, 1.0, -1.0)
    flips = rng.random(n) < flip_prob
    y[flips] *= -1
    if setup is None:
        setup = quadratic_setup(d, "ball", radius=5.0)
    meta = {"seed": seed, "flip_prob": flip_prob}
    return HingeObjective(b, y, setup, meta)


def make_median_instance(values, setup: ProximalSetup | None = None) -> AbsObjective:
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 1:
        raise ObjectiveError("need at least one node")
    if setup is None:
        setup = quadratic_setup(1, "ball", radius=float(np.abs(values).max()) + 1.0)
    return AbsObjective(values, setup)


@dataclass
class HardInstance:
    """Linear functions (c + w_i) x on [-1, 1] driven by a second eigenvector."""

    c: float
    w: np.ndarray
    i_star: int
    sigma2: float
    objective: LinearObjective
    eigvec_choice: dict = field(default_factory=dict)

    @property
    def x_star(self) -> float:
        return -1.0

    @property
    def f_star(self) -> float:
        return -self.c

    def predicted_z(self, t: int) -> float:
        """z_{i*}(t + 1) after t rounds starting from z = 0."""
        s = self.sigma2
        geo = float(t) if s == 1.0 else (1.0 - s ** t) / (1.0 - s)
        return self.c * t - geo

    def predicted_z_shifted(self, t: int) -> float:
        """Variant with exponent t - 1; equals predicted_z(t - 1) + c, one round behind."""
        s = self.sigma2
        return self.c * t - (1.0 - s ** (t - 1)) / (1.0 - s)

    def predicted_first_positive(self, shifted_form: bool = False, t_max: int = 10**7) -> int:
        """Smallest t with predicted z_{i*}(t + 1) > 0."""
        f, start = (self.predicted_z_shifted, 2) if shifted_form else (self.predicted_z, 1)
        for t in range(start, t_max):
            if f(t) > 0:
                return t
        raise ObjectiveError("closed form never turns positive")


def make_hard_instance(p: MixingMatrix, c: float = 1.0 / 3.0, tol: float = 1e-8) -> HardInstance:
    if not 0 < c <= 1.0 / 3.0:
        raise ObjectiveError("slope offset c must lie in (0, 1/3]")
    if not p.is_symmetric:
        raise ObjectiveError("hard instance needs a symmetric chain")
    n = p.n
    vals, vecs = np.linalg.eigh(0.5 * (p.entries + p.entries.T))
    vals, vecs = vals[::-1], vecs[:, ::-1]
    lam2 = vals[1]
    if vals[-1] < -tol and abs(vals[-1]) > lam2 + tol:
        raise ObjectiveError("lambda_2 != sigma_2; pass a lazy chain")
    block = np.flatnonzero(np.abs(vals[1:] - lam2) <= 1e-9) + 1
    basis = vecs[:, block]
    choice = {"multiplicity": int(block.size)}
    if block.size == 1:
        v = basis[:, 0]
        choice["rule"] = "unique"
    else:
        # deterministic pick: projection of the first basis vector e_k with a
        # non-negligible component in the eigenspace
        for k in range(n):
            v = basis @ basis[k]
            if np.linalg.norm(v) > 1e-8:
                break
        choice.update(rule="projected standard basis vector", index=k)
    w = v / np.abs(v).max()
    if w.min() > -1.0 + 1e-12:
        w = -w
    i_star = int(np.argmin(w))
    w[i_star] = -1.0
    setup = quadratic_setup(1, "ball", radius=1.0)
    obj = LinearObjective(c + w, setup)
    return HardInstance(c=c, w=w, i_star=i_star, sigma2=float(lam2), objective=obj,
                        eigvec_choice=choice)


# -- stochastic oracles ---------------------------------------------------------

class NoisyOracle:
    """Unbiased perturbation of an objective's exact subgradients.

    ``additive-uniform`` adds U[-scale, scale]^d noise.  ``additive-sign-flip``
    multiplies the subgradient by 1 - scale or 1 + scale with equal
    probability (scale = 1 gives the {0, 2} multiplier).
    """

    def __init__(self, base: DistributedObjective, noise_kind: str = "additive-uniform",
                 noise_scale: float = 0.0, rng=None):
        if noise_kind not in ("additive-uniform", "additive-sign-flip"):
            raise ObjectiveError(f"unknown noise kind {noise_kind!r}")
        if noise_scale < 0:
            raise ObjectiveError("noise scale must be non-negative")
        if noise_kind == "additive-sign-flip" and noise_scale > 1:
            raise ObjectiveError("sign-flip scale must be at most 1")
        self.base = base
        self.noise_kind = noise_kind
        self.noise_scale = float(noise_scale)
        self.rng = np.random.default_rng(rng)

    @property
    def L_noisy(self) -> float:
        L, s, d = self.base.L, self.noise_scale, self.base.d
        if self.noise_kind == "additive-sign-flip":
            return L * np.sqrt(1.0 + s * s)
        if self.base.setup.kind == "quadratic":
            return float(np.sqrt(L * L + d * s * s / 3.0))
        return L + s

    def local_subgradients(self, X) -> np.ndarray:
        g = self.base.local_subgradients(X)
        if self.noise_scale == 0.0:
            return g
        s = self.noise_scale
        if self.noise_kind == "additive-uniform":
            return g + self.rng.uniform(-s, s, size=g.shape)
        mult = np.where(self.rng.random(g.shape[0]) < 0.5, 1.0 - s, 1.0 + s)
        return g * mult[:, None]


def wrap_noisy(base: DistributedObjective, noise_kind: str, noise_scale: float, rng=None) -> NoisyOracle:
    return NoisyOracle(base, noise_kind, noise_scale, rng)


# -- reference optimum -----------------------------------------------------------

class ReferenceOptimumError(ObjectiveError):
    pass


def _kernel_problem(objective):
    from . import _kernels as K

    if isinstance(objective, HingeObjective):
        return K.HINGE, objective._signed
    if isinstance(objective, AbsObjective):
        return K.ABS, objective.targets[:, None].copy()
    if isinstance(objective, LinearObjective):
        return K.LINEAR, objective.slopes[:, None].copy()
    raise ReferenceOptimumError(f"no reference solver for {type(objective).__name__}")


def _hinge_cutting_plane(obj: HingeObjective, radius: float, tol: float, l1: float = 0.0,
                         max_cuts: int = 500):
    """Slack LP with the ball replaced by tangent cuts added on demand.

    Minimizes f(x) + l1 * ||x||_1.  Returns (x, upper, lower): x feasible
    with objective value `upper`, and a certified lower bound from the
    relaxed LP.
    """
    n, d = obj.n, obj.d
    # variables (x, s, u); minimize mean(s) + l1 sum(u)
    # s.t. s_i >= 1 - <a_i, x>, s >= 0, -u <= x <= u
    c = np.concatenate([np.zeros(d), np.full(n, 1.0 / n), np.full(d, l1)])
    eye = np.eye(d)
    a_ub = np.vstack([np.hstack([-obj._signed, -np.eye(n), np.zeros((n, d))]),
                      np.hstack([eye, np.zeros((d, n)), -eye]),
                      np.hstack([-eye, np.zeros((d, n)), -eye])])
    b_ub = np.concatenate([-np.ones(n), np.zeros(2 * d)])
    bounds = [(-radius, radius)] * d + [(0, None)] * n + [(0, None)] * d
    cuts = []

    def total(x):
        return obj.value(x) + l1 * float(np.abs(x).sum())

    best_x, upper, lower = np.zeros(d), total(np.zeros(d)), -np.inf
    for _ in range(max_cuts):
        A = a_ub if not cuts else np.vstack([a_ub] + cuts)
        b = b_ub if not cuts else np.concatenate([b_ub, np.full(len(cuts), radius)])
        res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        if res.status != 0:
            raise ReferenceOptimumError(f"LP solver failed: {res.message}")
        lower = max(lower, float(res.fun))
        x = res.x[:d]
        nrm = np.linalg.norm(x)
        feas = x if nrm <= radius else x * (radius / nrm)
        val = total(feas)
        if val < upper:
            best_x, upper = feas, val
        if nrm <= radius * (1 + 1e-12) or upper - lower <= tol:
            break
        cuts.append(np.concatenate([x / nrm, np.zeros(n + d)])[None, :])
    return best_x, upper, lower


def reference_optimum(objective, tolerance: float = 1e-3, iterations: int = 10**6,
                      check_every: int = 1000, reg: Regularizer | None = None
                      ) -> tuple[np.ndarray, float]:
    """Minimum of the global objective (plus optional l1 term) over its constraint set.

    The primary estimate is a long centralized dual-averaging run (step
    R / (4 L sqrt(t))) keeping the best checkpointed running average.  It is
    cross-checked by an exhaustive grid (plus kinks) in one dimension and by
    a cutting-plane linear program for hinge objectives; the smaller value is
    reported.  With an l1 regularizer only the grid / LP estimate is used.

    Raises
    ------
    ReferenceOptimumError
        If the estimates disagree by more than ``10 * tolerance``.
    """
    if isinstance(objective, HardInstance):
        objective = objective.objective
    from . import _kernels as K

    setup = objective.setup
    con = setup.constraint
    if setup.kind != "quadratic" or con.kind != "ball":
        raise ReferenceOptimumError("reference optimum supports quadratic psi on a ball")
    kind, data = _kernel_problem(objective)
    l1 = reg.weight if reg is not None and reg.kind == "l1" else 0.0
    candidates = []
    if l1 == 0.0:
        x_da, f_da = K.centralized_da(kind, np.ascontiguousarray(data), con.radius,
                                      con.diameter_bound, objective.L, iterations, check_every)
        candidates.append((float(f_da), np.asarray(x_da)))
    if objective.d == 1:
        r = con.radius
        step = tolerance / 10
        grid = np.linspace(-r, r, int(math.ceil(2 * r / step)) + 1)
        kinks = objective.targets if isinstance(objective, AbsObjective) else np.zeros(0)
        pts = np.concatenate([grid, np.clip(kinks, -r, r)])
        vals = np.concatenate([objective.values(chunk[:, None]) + l1 * np.abs(chunk)
                               for chunk in np.array_split(pts, max(1, pts.size // 50_000))])
        k = int(np.argmin(vals))
        candidates.append((float(vals[k]), np.array([pts[k]])))
    elif kind == K.HINGE:
        x_lp, f_lp, _ = _hinge_cutting_plane(objective, con.radius, tolerance * 1e-3, l1)
        candidates.append((f_lp, x_lp))
    vals = [f for f, _ in candidates]
    if max(vals) - min(vals) > 10 * tolerance:
        raise ReferenceOptimumError(
            f"reference estimates disagree: {vals} (tolerance {tolerance})")
    f_star, x_star = min(candidates, key=lambda c: c[0])
    return x_star, f_star
