"""Top-k eigenpairs of label matrices and the weights that combine them.

The reference matrices B^(l) are block-constant, so their nonzero spectrum
is obtained from a k x k symmetric reduction and lifted back to length-n
block vectors.  Observed matrices go through ARPACK (dense LAPACK for small n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import LsbmError
from .model import LsbmParams

DENSE_BELOW = 500
EIGSH_TOL = 1e-10
EIGSH_MAXITER = 5000
SPAN_TOL = 1e-6


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: np.ndarray


@dataclass(frozen=True)
class SpectralBasis:
    """k eigenpairs sorted by descending |value|; ``vectors[:, a]`` pairs with ``values[a]``."""

    values: np.ndarray
    vectors: np.ndarray

    @property
    def k(self) -> int:
        return int(self.values.size)

    @property
    def n(self) -> int:
        return int(self.vectors.shape[0])

    def pairs(self) -> list[EigenPair]:
        return [EigenPair(float(self.values[a]), self.vectors[:, a]) for a in range(self.k)]

    def flipped(self, signs) -> "SpectralBasis":
        return SpectralBasis(self.values, _frozen(self.vectors * np.asarray(signs, dtype=float)[None, :]))


def magnitude_order(values: np.ndarray) -> np.ndarray:
    """Indices sorting by |value| descending, positive before negative on ties, then by index."""
    values = np.asarray(values, dtype=float)
    idx = np.arange(values.size)
    return np.lexsort((idx, values < 0, -np.abs(values)))


def normalize_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry (first on ties) is positive."""
    vectors = np.array(vectors, dtype=float)
    if vectors.size == 0:
        return vectors
    rows = np.argmax(np.abs(vectors), axis=0)
    signs = np.where(vectors[rows, np.arange(vectors.shape[1])] < 0, -1.0, 1.0)
    return vectors * signs[None, :]


def _make_basis(values: np.ndarray, vectors: np.ndarray, k: int) -> SpectralBasis:
    order = magnitude_order(values)[:k]
    return SpectralBasis(_frozen(values[order]), _frozen(normalize_signs(vectors[:, order])))


def _start_vector(n: int) -> np.ndarray:
    # fixed start keeps ARPACK output reproducible across calls and processes
    return np.random.default_rng(n).uniform(0.5, 1.5, size=n)


def top_k_eigenpairs(M, k: int, *, dense_below: int = DENSE_BELOW, tol: float = EIGSH_TOL,
                     maxiter: int = EIGSH_MAXITER) -> SpectralBasis:
    """The k eigenpairs of the symmetric matrix ``M`` with largest |eigenvalue|."""
    n = M.shape[0]
    if M.shape != (n, n):
        raise LsbmError("BAD_SHAPE", f"matrix is {M.shape}, not square")
    if not 1 <= k <= n:
        raise LsbmError("BAD_VALUE", f"k={k} outside [1, {n}]")
    if n < dense_below or k >= n - 1:
        dense = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
        w, V = np.linalg.eigh(dense)
    else:
        try:
            w, V = eigsh(sp.csr_matrix(M, dtype=float), k=k, which="LM", tol=tol,
                         maxiter=maxiter, v0=_start_vector(n))
        except ArpackNoConvergence as exc:
            raise LsbmError("CONVERGENCE_FAILURE", str(exc)) from exc
    return _make_basis(w, V, k)


def reference_partition(params: LsbmParams) -> np.ndarray:
    """Block sizes |V_1|..|V_k| by cumulative rounding of n * cumsum(pi).

    The blocks are contiguous: V_m = range(bounds[m], bounds[m+1]).
    """
    bounds = np.rint(params.n * np.concatenate([[0.0], np.cumsum(params.pi)])).astype(np.int64)
    bounds[-1] = params.n
    return np.diff(bounds)


def block_index(sizes) -> np.ndarray:
    """Community of each vertex for contiguous blocks of the given sizes."""
    sizes = np.asarray(sizes, dtype=np.int64)
    return np.repeat(np.arange(sizes.size), sizes)


def block_eigenpairs(scale: float, Q: np.ndarray, sizes, block_of: np.ndarray,
                     zero_diagonal: bool = False) -> SpectralBasis:
    """Nonzero eigenpairs of the n x n matrix with entry ``scale * Q[block(u), block(v)]``.

    Works through the symmetric k x k reduction ``scale * D^1/2 Q D^1/2``
    (minus ``scale * diag(Q)`` when the diagonal of the big matrix is zero),
    whose eigenvectors ``w`` lift to unit block vectors ``w_m / sqrt(|V_m|)``.
    """
    sizes = np.asarray(sizes, dtype=float)
    k = sizes.size
    root = np.sqrt(sizes)
    S = scale * (root[:, None] * Q * root[None, :])
    if zero_diagonal:
        S = S - scale * np.diag(np.diag(Q))
    w, W = np.linalg.eigh(S)
    mag = np.abs(w)
    cutoff = 1e-10 * max(float(mag.max()), np.finfo(float).tiny)
    if np.count_nonzero(mag > cutoff) < k or np.any(sizes == 0):
        raise LsbmError("RANK_DEFICIENT", f"reduced matrix has fewer than {k} nonzero eigenvalues")
    safe = np.where(root > 0, root, 1.0)
    lifted = (W / safe[:, None])[block_of]
    return _make_basis(w, lifted, k)


@dataclass(frozen=True)
class ReferenceModel:
    sizes: np.ndarray
    block_of: np.ndarray
    block_probs: np.ndarray
    bases: tuple[SpectralBasis, ...]
    z: np.ndarray

    @property
    def partition(self) -> list[range]:
        bounds = np.concatenate([[0], np.cumsum(self.sizes)])
        return [range(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def reference_eigenpairs(params: LsbmParams, label: int, sizes=None) -> SpectralBasis:
    """Top-k eigenpairs of B^(label) (label index 0..L-1)."""
    if sizes is None:
        sizes = reference_partition(params)
    return block_eigenpairs(params.edge_prob, params.label_matrix(label), sizes, block_index(sizes))


def z_vector(params: LsbmParams, block_of: np.ndarray, i: int, label: int) -> np.ndarray:
    """Block vector with value log q[i, j, label] on block j."""
    row = params.q[i, :, label]
    if np.any(row <= 0):
        raise LsbmError("LOG_OF_ZERO", f"q[{i}][:][{label}] has a zero entry")
    return np.log(row)[block_of]


def build_reference(params: LsbmParams) -> ReferenceModel:
    sizes = reference_partition(params)
    block_of = block_index(sizes)
    bases = tuple(reference_eigenpairs(params, l, sizes) for l in range(params.L))
    z = np.stack([np.stack([z_vector(params, block_of, i, l) for l in range(params.L)])
                  for i in range(params.k)])
    z.setflags(write=False)
    return ReferenceModel(
        sizes=sizes, block_of=block_of, block_probs=_frozen(params.edge_prob * params.q),
        bases=bases, z=z,
    )


@dataclass(frozen=True)
class WeightSet:
    """``c[i, j, l]`` weights eigenvector j of label l when scoring community i."""

    c: np.ndarray
    residuals: np.ndarray

    def scaled(self, factor: float) -> "WeightSet":
        return WeightSet(_frozen(self.c * factor), self.residuals)


def project_weights(basis: SpectralBasis, z: np.ndarray, n: int, check: bool = True):
    """Weights ``c_j = gamma_j <v_j, z> / (sqrt(n) log n)`` and the reconstruction residual.

    Raises SPAN_VIOLATION when ``z`` is not in the span of the basis vectors.
    """
    scale = math.sqrt(n) * math.log(n)
    coords = basis.vectors.T @ z
    c = basis.values * coords / scale
    rebuilt = scale * (basis.vectors @ (c / basis.values))
    residual = float(np.linalg.norm(rebuilt - z))
    if check and residual > SPAN_TOL * float(np.linalg.norm(z)):
        raise LsbmError("SPAN_VIOLATION", f"residual {residual:.3g} vs |z| {np.linalg.norm(z):.3g}")
    return c, residual


def solve_weights(reference: ReferenceModel, params: LsbmParams) -> WeightSet:
    k, L = params.k, params.L
    c = np.zeros((k, k, L))
    res = np.zeros((k, L))
    for l in range(L):
        for i in range(k):
            c[i, :, l], res[i, l] = project_weights(reference.bases[l], reference.z[i, l], params.n)
    return WeightSet(_frozen(c), _frozen(res))


def dump_basis(basis: SpectralBasis, path: str | Path) -> None:
    """Debug dump: eigenvalues on the first line, then one eigenvector per column."""
    with open(path, "w") as fh:
        fh.write(" ".join(f"{x:.17g}" for x in basis.values) + "\n")
        np.savetxt(fh, basis.vectors, fmt="%.17g")
