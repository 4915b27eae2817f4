"""Proximal functions, constraint sets and the dual-to-primal projection.

``project(z, alpha, setup)`` returns argmin_{x in X} <z, x> + psi(x) / alpha.
It is applied to the accumulated dual vector directly, so for the
quadratic unconstrained setup the result is ``-alpha * z``.  All functions
accept a single vector or a stack of row vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CONSTRAINT_KINDS = ("unconstrained", "ball", "box", "simplex")


class ProximalError(ValueError):
    pass


@dataclass(frozen=True)
class ConstraintSet:
    kind: str
    dim: int
    radius: float = 1.0
    lo: float | np.ndarray = -1.0
    hi: float | np.ndarray = 1.0

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise ProximalError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "ball" and self.radius <= 0:
            raise ProximalError("ball radius must be positive")
        if self.kind == "box" and (np.any(np.asarray(self.lo) > 0) or np.any(np.asarray(self.hi) < 0)):
            raise ProximalError("box must contain the origin")

    @property
    def anchor(self) -> np.ndarray:
        if self.kind == "simplex":
            return np.full(self.dim, 1.0 / self.dim)
        return np.zeros(self.dim)

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.atleast_2d(x)
        if self.kind == "unconstrained":
            return bool(np.all(np.isfinite(x)))
        if self.kind == "ball":
            return bool(np.all(np.linalg.norm(x, axis=-1) <= self.radius * (1 + tol) + tol))
        if self.kind == "box":
            return bool(np.all(x >= np.asarray(self.lo) - tol) and np.all(x <= np.asarray(self.hi) + tol))
        return bool(np.all(x >= -tol) and np.allclose(x.sum(axis=-1), 1.0, atol=tol))

    def euclidean_projection(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "unconstrained":
            return x.copy()
        if self.kind == "ball":
            return _scale_into_ball(x, self.radius)
        if self.kind == "box":
            return np.clip(x, self.lo, self.hi)
        return simplex_projection(x)

    @property
    def diameter_bound(self) -> float:
        """Bound on sqrt(psi(x)) over the set, used as the radius R in schedules."""
        if self.kind == "ball":
            return self.radius / np.sqrt(2)
        if self.kind == "box":
            far = np.maximum(np.abs(np.asarray(self.lo, float)), np.abs(np.asarray(self.hi, float)))
            return float(np.sqrt(0.5 * np.sum(np.broadcast_to(far, (self.dim,)) ** 2)))
        if self.kind == "simplex":
            return 1.0
        raise ProximalError("unconstrained set has no radius bound")


def _scale_into_ball(x: np.ndarray, radius: float) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    scale = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
    return x * scale


def simplex_projection(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    flat = np.atleast_2d(v)
    d = flat.shape[1]
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    idx = np.arange(1, d + 1)
    cond = u - css / idx > 0
    rho = d - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(flat.shape[0]), rho] / (rho + 1)
    out = np.maximum(flat - theta[:, None], 0.0)
    return out.reshape(v.shape)


@dataclass(frozen=True)
class ProximalSetup:
    """Proximal function psi plus constraint set.

    ``quadratic``: psi(x) = 0.5 ||x - anchor||_2^2, norm pair (l2, l2).
    ``entropic``: psi(x) = sum x log x + log d on the simplex (zero at the
    uniform point), norm pair (l1, l_inf).
    """

    kind: str
    constraint: ConstraintSet

    def __post_init__(self):
        if self.kind not in ("quadratic", "entropic"):
            raise ProximalError(f"unknown proximal kind {self.kind!r}")
        if self.kind == "entropic" and self.constraint.kind != "simplex":
            raise ProximalError("entropic proximal function requires the simplex")

    @property
    def dim(self) -> int:
        return self.constraint.dim

    @property
    def anchor(self) -> np.ndarray:
        return self.constraint.anchor

    def psi(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        if self.kind == "quadratic":
            return 0.5 * np.sum((x - self.anchor) ** 2, axis=-1)
        safe = np.where(x > 0, x, 1.0)
        return np.sum(np.where(x > 0, x * np.log(safe), 0.0), axis=-1) + np.log(self.dim)

    def grad_psi(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "quadratic":
            return x - self.anchor
        return np.log(x) + 1.0

    def norm(self, x) -> np.ndarray | float:
        ord_ = 2 if self.kind == "quadratic" else 1
        return np.linalg.norm(np.asarray(x, dtype=float), ord=ord_, axis=-1)

    def dual_norm(self, v) -> np.ndarray | float:
        ord_ = 2 if self.kind == "quadratic" else np.inf
        return np.linalg.norm(np.asarray(v, dtype=float), ord=ord_, axis=-1)


def quadratic_setup(dim: int, kind: str = "ball", **kw) -> ProximalSetup:
    return ProximalSetup("quadratic", ConstraintSet(kind, dim, **kw))


def entropic_setup(dim: int) -> ProximalSetup:
    return ProximalSetup("entropic", ConstraintSet("simplex", dim))


def _check(z, alpha):
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ProximalError("non-finite dual vector")
    if not alpha > 0:
        raise ProximalError(f"step size must be positive (got {alpha})")
    return z


def project(z, alpha: float, setup: ProximalSetup) -> np.ndarray:
    """argmin_{x in X} <z, x> + psi(x) / alpha."""
    z = _check(z, alpha)
    c = setup.constraint
    if setup.kind == "entropic":
        s = -alpha * z
        s = s - s.max(axis=-1, keepdims=True)
        e = np.exp(s)
        return e / e.sum(axis=-1, keepdims=True)
    x = setup.anchor - alpha * z
    if c.kind == "simplex":
        return simplex_projection(x)
    return c.euclidean_projection(x)


@dataclass(frozen=True)
class Regularizer:
    kind: str = "none"
    weight: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "l1"):
            raise ProximalError(f"unknown regularizer {self.kind!r}")
        if self.weight < 0:
            raise ProximalError("regularizer weight must be non-negative")

    def __call__(self, x) -> np.ndarray | float:
        if self.kind == "none":
            return np.zeros(np.shape(x)[:-1]) if np.ndim(x) > 1 else 0.0
        return self.weight * np.sum(np.abs(x), axis=-1)


def soft_threshold(v, tau):
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def composite_project(z, t: int, alpha: float, setup: ProximalSetup,
                      reg: Regularizer) -> np.ndarray:
    """argmin_{x in X} <z, x> + t * phi(x) + psi(x) / alpha.

    Closed form for the quadratic proximal function on an unconstrained or
    ball domain with an l1 regularizer: soft-threshold then scale into the
    ball.
    """
    if reg.kind == "none":
        return project(z, alpha, setup)
    z = _check(z, alpha)
    if t < 0:
        raise ProximalError("round index must be non-negative")
    if setup.kind != "quadratic" or setup.constraint.kind not in ("unconstrained", "ball"):
        raise ProximalError(
            f"composite projection supports quadratic psi on unconstrained/ball domains, "
            f"not {setup.kind}/{setup.constraint.kind}")
    x = -alpha * soft_threshold(z, t * reg.weight)
    if setup.constraint.kind == "ball":
        x = _scale_into_ball(x, setup.constraint.radius)
    return x


def lipschitz_audit(setup: ProximalSetup, alpha: float, u, v,
                    slack: float = 1e-8) -> tuple[bool, float]:
    """Check ||P(u) - P(v)|| <= alpha ||u - v||_*; returns (passed, ratio)."""
    lhs = float(setup.norm(project(u, alpha, setup) - project(v, alpha, setup)))
    rhs = float(alpha * setup.dual_norm(np.asarray(u, float) - np.asarray(v, float)))
    if rhs == 0.0:
        return lhs <= slack, 0.0 if lhs == 0.0 else np.inf
    ratio = lhs / rhs
    return ratio <= 1.0 + slack, ratio
