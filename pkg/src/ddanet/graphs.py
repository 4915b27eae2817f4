"""Graph families and Laplacian / Cheeger quantities.

All graphs are undirected, simple and connected, stored as dense 0/1
adjacency matrices (desk scale, n up to about a thousand).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse.csgraph import connected_components

ZERO_EIG_TOL = 1e-9


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected connected graph backed by a dense adjacency matrix."""

    adjacency: np.ndarray
    name: str = "graph"

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphError("adjacency must be square")
        if not np.all((a == 0) | (a == 1)):
            raise GraphError("adjacency must be 0/1")
        if not np.array_equal(a, a.T):
            raise GraphError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise GraphError("self-loops are not allowed")
        if a.shape[0] > 1 and not is_connected(a):
            raise GraphError("graph is disconnected")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @cached_property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(int)

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max())

    @property
    def min_degree(self) -> int:
        return int(self.degrees.min())

    @cached_property
    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def to_edgelist(self) -> str:
        lines = [f"{self.n} {self.num_edges}"]
        lines += [f"{i} {j}" for i, j in self.edges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edgelist(cls, text: str, name: str = "graph") -> "Graph":
        rows = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
        n, m = int(rows[0][0]), int(rows[0][1])
        if len(rows) - 1 != m:
            raise GraphError(f"header announces {m} edges, found {len(rows) - 1}")
        return cls(_adjacency_from_edges(n, ((int(i), int(j)) for i, j in rows[1:])), name)


@dataclass(frozen=True)
class NormalizedLaplacian:
    matrix: np.ndarray
    eigenvalues: np.ndarray  # descending

    @property
    def fiedler(self) -> float:
        """Second-smallest eigenvalue lambda_{n-1}."""
        return float(self.eigenvalues[-2])


def is_connected(adjacency: np.ndarray) -> bool:
    ncomp, _ = connected_components(np.asarray(adjacency), directed=False)
    return ncomp == 1


def _adjacency_from_edges(n, edges) -> np.ndarray:
    a = np.zeros((n, n))
    for i, j in edges:
        if i == j:
            raise GraphError(f"self-loop at node {i}")
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge ({i}, {j}) out of range for n={n}")
        a[i, j] = a[j, i] = 1.0
    return a


def build_complete(n: int) -> Graph:
    if n < 2:
        raise GraphError("complete graph needs n >= 2")
    return Graph(np.ones((n, n)) - np.eye(n), name=f"complete{n}")


def build_cycle(n: int, k: int = 1) -> Graph:
    """k-connected cycle: node i joined to i+-1, ..., i+-k (mod n)."""
    if n < 3:
        raise GraphError("cycle needs n >= 3")
    if k < 1 or 2 * k >= n:
        raise GraphError(f"need 1 <= k and 2k < n (got n={n}, k={k})")
    edges = [(i, (i + s) % n) for i in range(n) for s in range(1, k + 1)]
    return Graph(_adjacency_from_edges(n, edges), name=f"cycle{n}k{k}")


def build_path(n: int, k: int = 1) -> Graph:
    """k-connected path: node i joined to every j with 0 < |i - j| <= k."""
    if n < 2:
        raise GraphError("path needs n >= 2")
    if k < 1 or k >= n:
        raise GraphError(f"need 1 <= k < n (got n={n}, k={k})")
    edges = [(i, i + s) for i in range(n) for s in range(1, k + 1) if i + s < n]
    return Graph(_adjacency_from_edges(n, edges), name=f"path{n}k{k}")


def build_grid(side: int, k: int = 1, toroidal: bool = False) -> Graph:
    """side x side grid; node (a, b) has index a * side + b.

    Nodes are joined when they differ along one axis by at most k steps
    (cyclically when `toroidal`).
    """
    if side < 2:
        raise GraphError("grid needs side >= 2")
    if k < 1:
        raise GraphError("k must be positive")
    if toroidal and 2 * k >= side:
        raise GraphError(f"toroidal grid needs 2k < side (got side={side}, k={k})")
    n = side * side
    edges = []
    for a in range(side):
        for b in range(side):
            u = a * side + b
            for s in range(1, k + 1):
                if toroidal:
                    edges.append((u, ((a + s) % side) * side + b))
                    edges.append((u, a * side + (b + s) % side))
                else:
                    if a + s < side:
                        edges.append((u, (a + s) * side + b))
                    if b + s < side:
                        edges.append((u, a * side + b + s))
    return Graph(_adjacency_from_edges(n, edges), name=f"grid{side}k{k}{'t' if toroidal else ''}")


def default_rgg_radius(n: int, exponent: float = 1.0) -> float:
    """Connectivity radius sqrt(log^{1+exponent}(n) / n)."""
    return math.sqrt(math.log(n) ** (1.0 + exponent) / n)


def build_random_geometric(n: int, radius: float | None = None, seed=None,
                           exponent: float = 1.0, max_attempts: int = 100) -> Graph:
    """Random geometric graph on the unit square, resampled until connected."""
    if n < 2:
        raise GraphError("random geometric graph needs n >= 2")
    if radius is None:
        radius = default_rgg_radius(n, exponent)
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        pts = rng.random((n, 2))
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        a = (dist < radius).astype(float)
        np.fill_diagonal(a, 0.0)
        if is_connected(a):
            return Graph(a, name=f"rgg{n}")
    raise GraphError(f"no connected sample in {max_attempts} attempts (radius={radius:.4g} too small)")


def _pair_stubs(n: int, d: int, rng) -> np.ndarray | None:
    # Incremental pairing: a clashing pair (loop / repeated edge) is redrawn;
    # if only clashing pairs remain the whole sample is rejected.
    stubs = np.repeat(np.arange(n), d)
    a = np.zeros((n, n))
    while stubs.size:
        ok = False
        for _ in range(50):
            i, j = rng.choice(stubs.size, 2, replace=False)
            u, v = stubs[i], stubs[j]
            if u != v and a[u, v] == 0:
                ok = True
                break
        if not ok:
            # exhaustive check before giving up on this sample
            pairs = [(i, j) for i, j in itertools.combinations(range(stubs.size), 2)
                     if stubs[i] != stubs[j] and a[stubs[i], stubs[j]] == 0]
            if not pairs:
                return None
            i, j = pairs[rng.integers(len(pairs))]
            u, v = stubs[i], stubs[j]
        a[u, v] = a[v, u] = 1.0
        stubs = np.delete(stubs, [i, j])
    return a


def build_random_regular(n: int, d: int, seed=None, max_rejections: int = 1000) -> Graph:
    """Simple connected d-regular graph from the pairing model."""
    if d < 3 or d >= n or (n * d) % 2:
        raise GraphError(f"need 3 <= d < n and n*d even (got n={n}, d={d})")
    rng = np.random.default_rng(seed)
    for _ in range(max_rejections):
        a = _pair_stubs(n, d, rng)
        if a is not None and is_connected(a):
            return Graph(a, name=f"regular{n}d{d}")
    raise GraphError(f"pairing model rejected {max_rejections} samples")


def normalized_laplacian(g: Graph) -> NormalizedLaplacian:
    """I - D^{-1/2} A D^{-1/2} with eigenvalues sorted in descending order."""
    inv_sqrt = 1.0 / np.sqrt(g.degrees)
    lap = np.eye(g.n) - inv_sqrt[:, None] * g.adjacency * inv_sqrt[None, :]
    lap = 0.5 * (lap + lap.T)
    eig = np.linalg.eigvalsh(lap)[::-1].copy()
    if abs(eig[-1]) > ZERO_EIG_TOL or eig[-1] < -ZERO_EIG_TOL:
        raise GraphError(f"smallest Laplacian eigenvalue {eig[-1]:.3g} is not zero")
    return NormalizedLaplacian(lap, eig)


def circulant_laplacian_eigenvalues(n: int, k: int) -> np.ndarray:
    """Closed-form normalized Laplacian spectrum of the k-connected cycle."""
    m = np.arange(n)[:, None]
    j = np.arange(1, k + 1)[None, :]
    return 1.0 - np.cos(2 * np.pi * j * m / n).sum(axis=1) / k


def cheeger_constant_exact(g: Graph) -> float:
    """min over proper nonempty S of |E(S, S^c)| / min(vol S, vol S^c)."""
    n = g.n
    if n > 20:
        raise GraphError(f"exhaustive Cheeger enumeration limited to n <= 20 (got {n})")
    a = g.adjacency
    deg = g.degrees.astype(float)
    total = deg.sum()
    # every subset containing node n-1 is the complement of one that does not
    masks = np.arange(1, 2 ** (n - 1), dtype=np.int64)
    member = ((masks[:, None] >> np.arange(n)[None, :]) & 1).astype(float)
    vol = member @ deg
    cut = vol - np.einsum("si,ij,sj->s", member, a, member)
    return float(np.min(cut / np.minimum(vol, total - vol)))
