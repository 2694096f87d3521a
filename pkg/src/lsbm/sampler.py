"""Sampling community assignments and labeled graphs, plus their text formats."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import LsbmError
from .model import LsbmParams
from .rng import stream


def _frozen_int(a) -> np.ndarray:
    a = np.array(a, dtype=np.int64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CommunityAssignment:
    sigma: np.ndarray
    sizes: np.ndarray
    k: int

    @classmethod
    def from_sigma(cls, sigma, k: int) -> "CommunityAssignment":
        sigma = np.asarray(sigma, dtype=np.int64)
        if sigma.ndim != 1:
            raise LsbmError("BAD_SHAPE", "sigma must be one-dimensional")
        if sigma.size and (sigma.min() < 0 or sigma.max() >= k):
            raise LsbmError("INDEX_OUT_OF_RANGE", f"community labels must lie in [0, {k})")
        return cls(sigma=_frozen_int(sigma), sizes=_frozen_int(np.bincount(sigma, minlength=k)), k=k)

    @property
    def n(self) -> int:
        return int(self.sigma.size)

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.sigma == j)

    def to_text(self) -> str:
        return "".join(f"{int(s)}\n" for s in self.sigma)

    @classmethod
    def from_text(cls, text: str, k: int) -> "CommunityAssignment":
        return cls.from_sigma([int(tok) for tok in text.split()], k)


def sample_assignment(params: LsbmParams, seed: int) -> CommunityAssignment:
    """Draw each vertex's community independently from ``params.pi``."""
    rng = stream(seed, "assignment")
    sigma = rng.choice(params.k, size=params.n, p=params.pi)
    return CommunityAssignment.from_sigma(sigma, params.k)


def is_balanced(assignment: CommunityAssignment, params: LsbmParams) -> bool:
    """True iff every community size is within n^(2/3) of its expectation."""
    n = assignment.n
    slack = np.cbrt(n) ** 2
    return bool(np.all(np.abs(assignment.sizes - n * params.pi) <= slack))


@dataclass(frozen=True, eq=False)
class LabeledGraph:
    """Nonzero labels on unordered vertex pairs.

    Pairs are stored canonically: ``u < v``, sorted by ``(u, v)``, labels in
    ``1..L``.  Pairs that are not stored carry label 0.  ``assignment`` is
    the generating ground truth, kept for diagnostics only.
    """

    n: int
    k: int
    L: int
    u: np.ndarray
    v: np.ndarray
    label: np.ndarray
    assignment: CommunityAssignment | None = field(default=None, compare=False, repr=False)

    @classmethod
    def from_pairs(cls, n, k, L, u, v, label, assignment=None) -> "LabeledGraph":
        u = np.asarray(u, dtype=np.int64).ravel()
        v = np.asarray(v, dtype=np.int64).ravel()
        label = np.asarray(label, dtype=np.int64).ravel()
        if not (u.size == v.size == label.size):
            raise LsbmError("BAD_SHAPE", "pair arrays differ in length")
        if u.size:
            if min(u.min(), v.min()) < 0 or max(u.max(), v.max()) >= n:
                raise LsbmError("INDEX_OUT_OF_RANGE", f"vertex outside [0, {n})")
            if label.min() < 1 or label.max() > L:
                raise LsbmError("BAD_LABEL", f"stored labels must lie in [1, {L}]")
        if np.any(u == v):
            raise LsbmError("SELF_PAIR", "self pairs carry no label")
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        key = lo * n + hi
        order = np.argsort(key, kind="stable")
        key = key[order]
        if key.size > 1 and np.any(key[1:] == key[:-1]):
            raise LsbmError("DUPLICATE_PAIR", "a vertex pair appears twice")
        return cls(
            n=int(n), k=int(k), L=int(L),
            u=_frozen_int(lo[order]), v=_frozen_int(hi[order]), label=_frozen_int(label[order]),
            assignment=assignment,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledGraph):
            return NotImplemented
        return (
            (self.n, self.k, self.L) == (other.n, other.k, other.L)
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.v, other.v)
            and np.array_equal(self.label, other.label)
        )

    __hash__ = None

    @property
    def num_pairs(self) -> int:
        return int(self.u.size)

    def label_of(self, a: int, b: int) -> int:
        if a == b:
            return 0
        lo, hi = min(a, b), max(a, b)
        key = self.u * self.n + self.v
        pos = np.searchsorted(key, lo * self.n + hi)
        if pos < key.size and key[pos] == lo * self.n + hi:
            return int(self.label[pos])
        return 0

    def without_assignment(self) -> "LabeledGraph":
        return LabeledGraph(self.n, self.k, self.L, self.u, self.v, self.label)

    def dense_labels(self) -> np.ndarray:
        """n x n integer label matrix (small graphs only)."""
        out = np.zeros((self.n, self.n), dtype=np.int64)
        out[self.u, self.v] = self.label
        out[self.v, self.u] = self.label
        return out

    def to_text(self) -> str:
        lines = [f"{self.n} {self.k} {self.L}"]
        lines += [f"{a} {b} {c}" for a, b, c in zip(self.u.tolist(), self.v.tolist(), self.label.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LabeledGraph":
        rows = [line.split() for line in text.splitlines() if line.strip()]
        if not rows or len(rows[0]) != 3:
            raise LsbmError("BAD_FORMAT", "expected header 'n k L'")
        n, k, L = map(int, rows[0])
        body = np.array([list(map(int, r)) for r in rows[1:]], dtype=np.int64).reshape(-1, 3)
        return cls.from_pairs(n, k, L, body[:, 0], body[:, 1], body[:, 2])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "LabeledGraph":
        return cls.from_text(Path(path).read_text())


def _triangle_pairs(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map linear indices in [0, m(m-1)/2) to pairs (x, y) with x < y."""
    y = np.floor((1.0 + np.sqrt(1.0 + 8.0 * r)) / 2.0).astype(np.int64)
    y -= (y * (y - 1) // 2 > r).astype(np.int64)
    y += ((y + 1) * y // 2 <= r).astype(np.int64)
    x = r - y * (y - 1) // 2
    return x, y


def sample_labels(assignment: CommunityAssignment, params: LsbmParams, seed: int) -> LabeledGraph:
    """Sample pair labels conditioned on ``assignment``.

    For each block of community pairs the number of labeled pairs is drawn
    binomially, those pairs are placed uniformly without replacement, and
    each gets a label from ``q[a, b]``.  This matches per-pair sampling in
    distribution at O(expected labeled pairs) cost.
    """
    if assignment.n != params.n:
        raise LsbmError("BAD_SHAPE", f"assignment has {assignment.n} vertices, params say {params.n}")
    rng = stream(seed, "labels")
    p = min(1.0, params.edge_prob)
    members = [assignment.members(j) for j in range(params.k)]
    us, vs, ls = [], [], []
    for a in range(params.k):
        for b in range(a, params.k):
            na, nb = members[a].size, members[b].size
            total = na * (na - 1) // 2 if a == b else na * nb
            if total == 0:
                continue
            m = int(rng.binomial(total, p))
            if m == 0:
                continue
            idx = rng.choice(total, size=m, replace=False)
            if a == b:
                x, y = _triangle_pairs(idx)
                pu, pv = members[a][x], members[a][y]
            else:
                pu, pv = members[a][idx // nb], members[b][idx % nb]
            us.append(pu)
            vs.append(pv)
            ls.append(rng.choice(params.L, size=m, p=params.q[a, b]) + 1)
    cat = lambda parts: np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    return LabeledGraph.from_pairs(params.n, params.k, params.L, cat(us), cat(vs), cat(ls), assignment=assignment)


def label_matrix(graph: LabeledGraph, label: int) -> sp.csr_matrix:
    """Symmetric 0/1 adjacency of the pairs carrying ``label`` (1..L)."""
    if not 1 <= label <= graph.L:
        raise LsbmError("INDEX_OUT_OF_RANGE", f"label {label} not in [1, {graph.L}]")
    sel = graph.label == label
    r = np.concatenate([graph.u[sel], graph.v[sel]])
    c = np.concatenate([graph.v[sel], graph.u[sel]])
    return sp.csr_matrix((np.ones(r.size), (r, c)), shape=(graph.n, graph.n))


def label_matrices(graph: LabeledGraph) -> list[sp.csr_matrix]:
    return [label_matrix(graph, l) for l in range(1, graph.L + 1)]


def sample_graph(params: LsbmParams, seed: int) -> LabeledGraph:
    """Assignment and labels from independent sub-streams of ``seed``."""
    return sample_labels(sample_assignment(params, seed), params, seed)
