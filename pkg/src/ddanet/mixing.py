"""Doubly stochastic communication matrices and their spectral quantities.

Static chains come from the max-degree construction; random protocols
(gossip, random edge inclusion, random edge failure) are sampled one round
at a time from an explicit generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .graphs import Graph

STOCH_TOL = 1e-10

PROTOCOL_KINDS = ("static", "gossip", "edge-inclusion", "edge-failure")


class MixingError(ValueError):
    pass


def check_doubly_stochastic(p: np.ndarray, tol: float = STOCH_TOL) -> None:
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise MixingError("matrix must be square")
    if np.any(p < -tol):
        raise MixingError(f"negative entry {p.min():.3g}")
    rows = np.abs(p.sum(axis=1) - 1).max()
    cols = np.abs(p.sum(axis=0) - 1).max()
    if max(rows, cols) > tol:
        raise MixingError(f"not doubly stochastic (row err {rows:.3g}, col err {cols:.3g})")


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Doubly stochastic matrix respecting the edges of `graph` (if given)."""

    entries: np.ndarray
    graph: Graph | None = None

    def __post_init__(self):
        p = np.array(self.entries, dtype=float)
        check_doubly_stochastic(p)
        if self.graph is not None:
            if self.graph.n != p.shape[0]:
                raise MixingError("graph and matrix sizes differ")
            off = (p > 0) & (self.graph.adjacency == 0)
            np.fill_diagonal(off, False)
            if off.any():
                i, j = np.argwhere(off)[0]
                raise MixingError(f"P[{i},{j}] > 0 but ({i},{j}) is not an edge")
        p.setflags(write=False)
        object.__setattr__(self, "entries", p)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def is_symmetric(self) -> bool:
        return bool(np.allclose(self.entries, self.entries.T, atol=1e-12, rtol=0))

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Descending eigenvalues; symmetric matrices only."""
        if not self.is_symmetric:
            raise MixingError("eigenvalues requested for a non-symmetric matrix")
        p = self.entries
        return np.linalg.eigvalsh(0.5 * (p + p.T))[::-1].copy()

    @cached_property
    def singular_values(self) -> np.ndarray:
        if self.is_symmetric:
            return np.sort(np.abs(self.eigenvalues))[::-1]
        return np.linalg.svd(self.entries, compute_uv=False)

    @property
    def sigma2(self) -> float:
        if self.n == 1:
            return 0.0
        return float(min(max(self.singular_values[1], 0.0), 1.0))

    @property
    def lambda2(self) -> float:
        if self.n == 1:
            return 0.0
        return float(self.eigenvalues[1])

    @property
    def gap(self) -> float:
        return 1.0 - self.sigma2

    def to_text(self) -> str:
        rows = [" ".join(repr(float(v)) for v in row) for row in self.entries]
        return f"{self.n}\n" + "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str, graph: Graph | None = None) -> "MixingMatrix":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        n = int(lines[0])
        p = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
        if p.shape != (n, n):
            raise MixingError(f"expected {n}x{n} matrix, got {p.shape}")
        return cls(p, graph)


def max_degree_chain(g: Graph) -> MixingMatrix:
    """P = I - (D - A) / (delta_max + 1)."""
    lap = np.diag(g.degrees.astype(float)) - g.adjacency
    return MixingMatrix(np.eye(g.n) - lap / (g.max_degree + 1), g)


def lazy(p: MixingMatrix) -> MixingMatrix:
    return MixingMatrix(0.5 * (np.eye(p.n) + p.entries), p.graph)


def laplacian_sigma2_bound(g: Graph) -> float:
    """Upper bound on sigma_2 of the max-degree chain from the Laplacian spectrum."""
    from .graphs import normalized_laplacian

    eig = normalized_laplacian(g).eigenvalues
    dmax, dmin = g.max_degree, g.min_degree
    return max(1 - dmin / (dmax + 1) * eig[-2], dmax / (dmax + 1) * eig[0] - 1)


# -- random protocols ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProtocolSpec:
    kind: str
    graph: Graph
    base: MixingMatrix | None = None
    failure_prob: float = 0.0
    lazy: bool = True

    def __post_init__(self):
        if self.kind not in PROTOCOL_KINDS:
            raise MixingError(f"unknown protocol kind {self.kind!r}")
        if not 0.0 <= self.failure_prob <= 1.0:
            raise MixingError("failure probability must lie in [0, 1]")
        if self.kind in ("static", "edge-failure") and self.base is None:
            object.__setattr__(self, "base", max_degree_chain(self.graph))

    @property
    def is_random(self) -> bool:
        return self.kind != "static"

    @cached_property
    def _edge_array(self) -> np.ndarray:
        return np.array(self.graph.edges, dtype=int).reshape(-1, 2)

    @cached_property
    def _neighbors(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.graph.adjacency]


def _chain_from_active(adj_t: np.ndarray, dmax: int) -> np.ndarray:
    lap = np.diag(adj_t.sum(axis=1)) - adj_t
    return np.eye(adj_t.shape[0]) - lap / (dmax + 1)


def sample_protocol_entries(spec: ProtocolSpec, rng: np.random.Generator) -> np.ndarray:
    """One round's communication matrix as a raw array (see sample_protocol_matrix)."""
    g = spec.graph
    n = g.n
    if spec.kind == "static":
        p = spec.base.entries.copy()
    elif spec.kind == "gossip":
        i, j = spec._edge_array[rng.integers(g.num_edges)]
        p = np.eye(n)
        p[i, i] = p[j, j] = p[i, j] = p[j, i] = 0.5
    elif spec.kind == "edge-inclusion":
        dmax = g.max_degree
        talk = rng.random(n) < g.degrees / (dmax + 1)
        adj_t = np.zeros((n, n))
        for i in np.flatnonzero(talk):
            nbrs = spec._neighbors[i]
            j = nbrs[rng.integers(nbrs.size)]
            adj_t[i, j] = adj_t[j, i] = 1.0
        p = _chain_from_active(adj_t, dmax)
    else:  # edge-failure
        e = spec._edge_array
        keep = rng.random(len(e)) >= spec.failure_prob
        adj_t = np.zeros((n, n))
        adj_t[e[keep, 0], e[keep, 1]] = 1.0
        adj_t[e[keep, 1], e[keep, 0]] = 1.0
        p = _chain_from_active(adj_t, g.max_degree)
    if spec.lazy and spec.is_random:
        p = 0.5 * (np.eye(n) + p)
    return p


def sample_protocol_matrix(spec: ProtocolSpec, rng: np.random.Generator) -> MixingMatrix:
    """Draw P(t) for one round of the protocol described by `spec`.

    Parameters
    ----------
    spec : ProtocolSpec
        Protocol kind, underlying graph and (for edge failure) the drop
        probability. Random kinds pass through the lazy transform when
        ``spec.lazy`` is set.
    rng : numpy.random.Generator
        Source of randomness; the only state consumed.

    Returns
    -------
    MixingMatrix
        Symmetric doubly stochastic matrix supported on the graph.
    """
    return MixingMatrix(sample_protocol_entries(spec, rng), spec.graph)


def _expected_entries(spec: ProtocolSpec) -> np.ndarray:
    g = spec.graph
    n = g.n
    lap = np.diag(g.degrees.astype(float)) - g.adjacency
    if spec.kind == "static":
        return spec.base.entries.copy()
    if spec.kind == "gossip":
        p = np.eye(n) - lap / g.adjacency.sum()
    elif spec.kind == "edge-inclusion":
        dmax = g.max_degree
        p_static = max_degree_chain(g).entries
        p = (dmax / (dmax + 1)) ** 2 * np.eye(n) + (2 * dmax + 1) / (dmax + 1) ** 2 * p_static
    else:
        rho = spec.failure_prob
        p = rho * np.eye(n) + (1 - rho) * spec.base.entries
    if spec.lazy:
        p = 0.5 * (np.eye(n) + p)
    return p


def expected_protocol_matrix(spec: ProtocolSpec) -> MixingMatrix:
    """Closed-form E[P(t)] of a protocol; lambda2 is exposed on the result."""
    return MixingMatrix(_expected_entries(spec), spec.graph)


def expected_gram(spec: ProtocolSpec, rng: np.random.Generator | None = None,
                  samples: int = 10_000) -> np.ndarray:
    """E[P(t)^T P(t)].

    Exact for static and gossip protocols (a gossip matrix is a projection,
    and its lazy version satisfies Q^T Q = (I + 3P) / 4); Monte-Carlo
    otherwise.
    """
    n = spec.graph.n
    if spec.kind == "static":
        p = spec.base.entries
        return p.T @ p
    if spec.kind == "gossip":
        ep = expected_protocol_matrix(ProtocolSpec("gossip", spec.graph, lazy=False)).entries
        return 0.25 * np.eye(n) + 0.75 * ep if spec.lazy else ep
    if rng is None:
        rng = np.random.default_rng(0)
    acc = np.zeros((n, n))
    for _ in range(samples):
        p = sample_protocol_entries(spec, rng)
        acc += p.T @ p
    return acc / samples


def gram_lambda2(spec: ProtocolSpec, rng: np.random.Generator | None = None,
                 samples: int = 10_000) -> float:
    """lambda_2(E[P^T P]), the quantity controlling random-protocol mixing."""
    m = expected_gram(spec, rng, samples)
    eig = np.linalg.eigvalsh(0.5 * (m + m.T))
    return float(eig[-2]) if eig.size > 1 else 0.0


# -- products and mixing diagnostics ---------------------------------------

@dataclass(eq=False)
class MatrixChain:
    """Running product Phi(t, s) = P(s) P(s+1) ... P(t)."""

    n: int
    mode: str = "time-varying"
    factors: list = field(default_factory=list)
    product: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("static", "time-varying"):
            raise MixingError(f"unknown chain mode {self.mode!r}")
        if self.product is None:
            self.product = np.eye(self.n)

    def extend(self, p: MixingMatrix) -> "MatrixChain":
        if p.n != self.n:
            raise MixingError(f"dimension mismatch: chain {self.n}, matrix {p.n}")
        if self.mode == "static" and self.factors and p is not self.factors[0]:
            raise MixingError("static chain must repeat the same matrix")
        self.factors.append(p)
        self.product = self.product @ p.entries
        check_doubly_stochastic(self.product, tol=1e-8)
        return self


def chain_extend(chain: MatrixChain, p: MixingMatrix) -> MatrixChain:
    return chain.extend(p)


def tv_to_uniform(x) -> float:
    """Total variation distance 0.5 * ||x - 1/n||_1 of a probability vector."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise MixingError("probability vector has negative entries")
    if abs(x.sum() - 1) > 1e-8:
        raise MixingError(f"probability vector sums to {x.sum():.10g}")
    return 0.5 * float(np.abs(x - 1.0 / x.size).sum())


def tv_bound(n: int, sigma2: float, t: int) -> float:
    return 0.5 * np.sqrt(n) * sigma2 ** t


def return_time_matrix(p: MixingMatrix) -> np.ndarray:
    """Gamma = (I - P + 11^T / n)^{-1}."""
    n = p.n
    m = np.eye(n) - p.entries + np.ones((n, n)) / n
    if np.linalg.cond(m) > 1e12:
        raise MixingError("return-time system is singular (reducible chain)")
    return np.linalg.solve(m, np.eye(n))
