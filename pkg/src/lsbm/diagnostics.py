"""Genie estimator, degree-profile separation margins and eigenvector alignment residuals.

All of these read the true community assignment and exist to explain why the
spectral algorithm succeeds or fails on a given instance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import LsbmError
from .model import LsbmParams
from .sampler import CommunityAssignment, LabeledGraph
from .spectral import SpectralBasis, block_eigenpairs


def _both_directions(graph: LabeledGraph):
    """(center, neighbor, label index) for every labeled pair in both orientations."""
    center = np.concatenate([graph.u, graph.v])
    nbr = np.concatenate([graph.v, graph.u])
    lab = np.concatenate([graph.label, graph.label]) - 1
    return center, nbr, lab


def degree_profiles(graph: LabeledGraph, assignment: CommunityAssignment) -> np.ndarray:
    """(n, k, L) counts: entry [v, j, l] = #{u : sigma(u) = j, label(u, v) = l + 1}."""
    center, nbr, lab = _both_directions(graph)
    k, L = assignment.k, graph.L
    flat = (center * k + assignment.sigma[nbr]) * L + lab
    return np.bincount(flat, minlength=graph.n * k * L).reshape(graph.n, k, L)


def degree_profile(graph: LabeledGraph, assignment: CommunityAssignment, v: int) -> np.ndarray:
    if not 0 <= v < graph.n:
        raise LsbmError("INDEX_OUT_OF_RANGE", f"vertex {v} not in [0, {graph.n})")
    center, nbr, lab = _both_directions(graph)
    sel = center == v
    out = np.zeros((assignment.k, graph.L), dtype=np.int64)
    np.add.at(out, (assignment.sigma[nbr[sel]], lab[sel]), 1)
    return out


def genie_weights(params: LsbmParams) -> np.ndarray:
    """W[i] is the k x L matrix of log q[i, j, l]; zero probabilities map to -inf."""
    with np.errstate(divide="ignore"):
        return np.log(params.q)


def profile_scores(graph: LabeledGraph, assignment: CommunityAssignment, params: LsbmParams) -> np.ndarray:
    """(n, k) matrix of <W(i), d(v)>, summed pair by pair so that -inf entries stay exact."""
    center, nbr, lab = _both_directions(graph)
    W = genie_weights(params)
    out = np.empty((graph.n, params.k))
    for i in range(params.k):
        out[:, i] = np.bincount(center, weights=W[i][assignment.sigma[nbr], lab], minlength=graph.n)
    return out


def genie_labels(graph: LabeledGraph, assignment: CommunityAssignment, params: LsbmParams) -> np.ndarray:
    """Per-vertex MAP community given everyone else's true community; ties to the lowest index."""
    scores = np.log(params.pi)[None, :] + profile_scores(graph, assignment, params)
    return np.argmax(scores, axis=1)


def genie_estimate(graph: LabeledGraph, assignment: CommunityAssignment, params: LsbmParams, v: int) -> int:
    W = genie_weights(params)
    d = degree_profile(graph, assignment, v)
    scores = np.log(params.pi).copy()
    for i in range(params.k):
        terms = np.where(d > 0, W[i] * np.maximum(d, 1), 0.0)
        scores[i] += terms.sum()
    return int(np.argmax(scores))


def separation_margins(graph: LabeledGraph, assignment: CommunityAssignment, params: LsbmParams) -> np.ndarray:
    """Per-vertex <W(sigma(v)), d(v)> - max_{j != sigma(v)} <W(j), d(v)>; +inf when k = 1."""
    if params.k == 1:
        return np.full(graph.n, np.inf)
    S = profile_scores(graph, assignment, params)
    rows = np.arange(graph.n)
    own = S[rows, assignment.sigma]
    others = S.copy()
    others[rows, assignment.sigma] = -np.inf
    with np.errstate(invalid="ignore"):
        return own - others.max(axis=1)


def expectation_bases(params: LsbmParams, assignment: CommunityAssignment) -> tuple[SpectralBasis, ...]:
    """Top-k eigenpairs of E[A^(l) | sigma], zero diagonal, in the true vertex order."""
    return tuple(
        block_eigenpairs(params.edge_prob, params.label_matrix(l), assignment.sizes,
                         assignment.sigma, zero_diagonal=True)
        for l in range(params.L)
    )


def expectation_matrix(params: LsbmParams, assignment: CommunityAssignment, label: int) -> np.ndarray:
    """Dense E[A^(label) | sigma] for label index 0..L-1 (small n only)."""
    s = assignment.sigma
    M = params.edge_prob * params.q[s[:, None], s[None, :], label]
    np.fill_diagonal(M, 0.0)
    return M


def alignment_residuals(bases: Sequence[SpectralBasis], star: Sequence[SpectralBasis], matrices) -> np.ndarray:
    """(k, L) array of min_s || s u_i - A u*_i / lambda*_i ||_inf."""
    L = len(bases)
    k = bases[0].k
    out = np.empty((k, L))
    for l in range(L):
        A = matrices[l]
        for i in range(k):
            lam = star[l].values[i]
            if lam == 0:
                raise LsbmError("RANK_DEFICIENT", f"expected eigenvalue {i} of label {l + 1} is zero")
            target = A @ star[l].vectors[:, i] / lam
            u = bases[l].vectors[:, i]
            out[i, l] = min(np.max(np.abs(u - target)), np.max(np.abs(u + target)))
    return out


@dataclass(frozen=True)
class DiagnosticsReport:
    min_margin: float
    margin_over_logn: float
    residuals: np.ndarray
    genie_labels: np.ndarray = field(repr=False)
    genie_agreement: float = float("nan")

    def to_dict(self) -> dict:
        fin = lambda x: float(x) if math.isfinite(x) else None
        return {
            "minMargin": fin(self.min_margin),
            "marginOverLogN": fin(self.margin_over_logn),
            "residuals": self.residuals.tolist(),
            "genieAgreementRate": fin(self.genie_agreement),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def separation_report(graph: LabeledGraph, assignment: CommunityAssignment, params: LsbmParams):
    """(minMargin, minMargin / log n)."""
    m = float(separation_margins(graph, assignment, params).min())
    return m, m / math.log(graph.n)


def diagnose(graph: LabeledGraph, params: LsbmParams, bases: Sequence[SpectralBasis], matrices,
             sigma_hat=None, assignment: CommunityAssignment | None = None) -> DiagnosticsReport:
    """Full report for one instance; ``assignment`` defaults to the one stored in ``graph``."""
    assignment = assignment if assignment is not None else graph.assignment
    if assignment is None:
        raise LsbmError("MISSING_FIELD", "diagnostics need the true assignment")
    margin, scaled = separation_report(graph, assignment, params)
    residuals = alignment_residuals(bases, expectation_bases(params, assignment), matrices)
    genie = genie_labels(graph, assignment, params)
    agree = float("nan") if sigma_hat is None else float(np.mean(np.asarray(sigma_hat) == genie))
    return DiagnosticsReport(margin, scaled, residuals, genie, agree)
