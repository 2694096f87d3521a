"""Spectral recovery: eigenvector scores, sign enumeration and posterior selection."""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import LsbmError
from .model import LsbmParams, spectral_condition_holds
from .sampler import LabeledGraph, label_matrices
from .spectral import SpectralBasis, WeightSet, build_reference, solve_weights, top_k_eigenpairs

# upper bound on patterns * n * k floats materialized at once
_CHUNK_FLOATS = 4_000_000


def sign_patterns(k: int, L: int):
    """All patterns as (L, k) arrays of +-1, lexicographic with +1 before -1."""
    for flat in itertools.product((1.0, -1.0), repeat=k * L):
        yield np.array(flat).reshape(L, k)


def _pattern_matrix(k: int, L: int) -> np.ndarray:
    return np.array(list(itertools.product((1.0, -1.0), repeat=k * L))).reshape(-1, k * L)


@dataclass(frozen=True)
class CandidateLabeling:
    sigma_hat: np.ndarray
    pattern: np.ndarray
    log_posterior: float = float("nan")
    ties: int = 0
    pattern_index: int = -1

    def summary(self) -> dict:
        return {
            "pattern_index": self.pattern_index,
            "pattern": self.pattern.astype(int).tolist(),
            "log_posterior": self.log_posterior,
            "tied_vertices": self.ties,
        }


def _contributions(bases: Sequence[SpectralBasis], weights: WeightSet) -> np.ndarray:
    """Array T[v, l*k + j, i] = u_j^(l)(v) * c[i, j, l]."""
    L = len(bases)
    k = weights.c.shape[0]
    if weights.c.shape != (k, k, L) or any(b.k != k for b in bases):
        raise LsbmError("DIMENSION_MISMATCH", "bases and weights disagree on (k, L)")
    n = bases[0].n
    T = np.empty((n, L * k, k))
    for l, basis in enumerate(bases):
        # U (n, j) times c[:, :, l].T (j, i)
        T[:, l * k:(l + 1) * k, :] = basis.vectors[:, :, None] * weights.c[:, :, l].T[None, :, :]
    return T


def spectral_scores(bases: Sequence[SpectralBasis], weights: WeightSet, pattern) -> np.ndarray:
    """n x k matrix with column i equal to sum_l U^(l) diag(s^(l)) c_i^(l)."""
    pattern = np.asarray(pattern, dtype=float)
    L, k = len(bases), weights.c.shape[0]
    if pattern.shape != (L, k):
        raise LsbmError("DIMENSION_MISMATCH", f"pattern shape {pattern.shape}, expected ({L}, {k})")
    n = bases[0].n
    scores = np.zeros((n, k))
    for l, basis in enumerate(bases):
        scores += basis.vectors @ np.diag(pattern[l]) @ weights.c[:, :, l].T
    return scores


def candidate_labeling(scores: np.ndarray, pattern) -> CandidateLabeling:
    """Row-wise argmax; ties go to the smallest community index and are counted."""
    scores = np.asarray(scores, dtype=float)
    sigma = np.argmax(scores, axis=1)
    ties = int(np.count_nonzero((scores == scores.max(axis=1, keepdims=True)).sum(axis=1) > 1))
    return CandidateLabeling(sigma_hat=sigma, pattern=np.asarray(pattern), ties=ties)


def log_posterior(sigma, graph: LabeledGraph, params: LsbmParams) -> float:
    """Log posterior of ``sigma`` up to a constant that does not depend on ``sigma``.

    Label-0 pairs contribute the same factor under every labeling and are dropped.
    """
    sigma = np.asarray(sigma, dtype=np.int64)
    if sigma.shape != (graph.n,):
        raise LsbmError("BAD_SHAPE", f"labeling has shape {sigma.shape}, expected ({graph.n},)")
    if sigma.size and (sigma.min() < 0 or sigma.max() >= params.k):
        raise LsbmError("INDEX_OUT_OF_RANGE", "labels outside [0, k)")
    k, L = params.k, params.L
    cell = (sigma[graph.u] * k + sigma[graph.v]) * L + (graph.label - 1)
    counts = np.bincount(cell, minlength=k * k * L).astype(float)
    q = params.q.ravel()
    hit = counts > 0
    if np.any(q[hit] == 0):
        if params.allow_zero:
            return float("-inf")
        raise LsbmError("LOG_OF_ZERO", "a labeled pair has probability zero under this labeling")
    prior = np.bincount(sigma, minlength=k) @ np.log(params.pi)
    return float(prior + counts[hit] @ np.log(q[hit]))


@dataclass(frozen=True)
class SpectralFit:
    """Everything the spectral algorithm computed on one graph."""

    best: CandidateLabeling
    bases: tuple[SpectralBasis, ...]
    weights: WeightSet
    n_patterns: int
    n_distinct: int
    posteriors: np.ndarray = field(repr=False)


def enumerate_candidates(bases, weights, k: int, L: int, n: int):
    """Yield (pattern_index, labels, tie_count) for every sign pattern in order."""
    T = _contributions(bases, weights)
    S = _pattern_matrix(k, L)
    chunk = max(1, _CHUNK_FLOATS // max(1, n * k))
    for start in range(0, S.shape[0], chunk):
        block = np.einsum("pm,vmi->pvi", S[start:start + chunk], T, optimize=True)
        labels = np.argmax(block, axis=2)
        ties = ((block == block.max(axis=2, keepdims=True)).sum(axis=2) > 1).sum(axis=1)
        for off in range(block.shape[0]):
            yield start + off, labels[off], int(ties[off])


def fit(graph: LabeledGraph, params: LsbmParams) -> SpectralFit:
    """Run the full spectral algorithm, keeping intermediate objects.

    Only the label data of ``graph`` is used; the generating assignment is
    stripped before anything else happens.
    """
    graph = graph.without_assignment()
    if (graph.n, graph.k, graph.L) != (params.n, params.k, params.L):
        raise LsbmError("DIMENSION_MISMATCH", "graph and params disagree on (n, k, L)")
    if not spectral_condition_holds(params):
        warnings.warn("Q^(l) diag(pi) lacks k distinct nonzero eigenvalues for some label", stacklevel=2)
    k, L = params.k, params.L
    bases = tuple(top_k_eigenpairs(A, k) for A in label_matrices(graph))
    weights = solve_weights(build_reference(params), params)

    patterns = _pattern_matrix(k, L)
    posteriors = np.empty(patterns.shape[0])
    cache: dict[bytes, float] = {}
    best = None
    for idx, labels, ties in enumerate_candidates(bases, weights, k, L, graph.n):
        key = labels.astype(np.int8 if k < 128 else np.int64).tobytes()
        if key not in cache:
            cache[key] = log_posterior(labels, graph, params)
        lp = cache[key]
        posteriors[idx] = lp
        if best is None or lp > best.log_posterior:
            best = CandidateLabeling(labels, patterns[idx].reshape(L, k), lp, ties, idx)
    posteriors.setflags(write=False)
    return SpectralFit(best, bases, weights, patterns.shape[0], len(cache), posteriors)


def spectral_recover(graph: LabeledGraph, params: LsbmParams) -> CandidateLabeling:
    """Community labels chosen by the spectral algorithm (first maximum on posterior ties)."""
    return fit(graph, params).best


def labels_to_text(sigma) -> str:
    return "".join(f"{int(s)}\n" for s in sigma)


def summary_json(candidate: CandidateLabeling) -> str:
    return json.dumps(candidate.summary(), indent=2)
