"""Model parameters, the Chernoff-Hellinger divergence and the recovery threshold.

Community and label indices are 0-based in code and in JSON files.  A label
index ``l`` in ``q[i, j, l]`` stands for the nonzero label ``l + 1``; the
uninformative label 0 is never stored.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .errors import LsbmError

SUM_TOL = 1e-12
DEGENERATE_TOL = 1e-12
LAMBDA_TOL = 1e-10

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LsbmParams:
    """Validated LSBM parameterization.

    Build instances through :func:`validate_params`; the constructor itself
    does not check invariants.

    Attributes
    ----------
    k, L : community count and nonzero-label count.
    pi : (k,) community prior.
    q : (k, k, L) array, ``q[i, j, l]`` = P(label l+1 | a label is revealed,
        endpoints in communities i and j).
    t : signal-strength multiplier.
    n : vertex count.
    allow_zero : permit zero entries in ``q`` (fully informative labels).
    """

    k: int
    L: int
    pi: np.ndarray
    q: np.ndarray
    t: float
    n: int
    allow_zero: bool = False

    @property
    def edge_prob(self) -> float:
        """Probability that a vertex pair carries a nonzero label."""
        return self.t * math.log(self.n) / self.n

    @property
    def has_zeros(self) -> bool:
        return bool(np.any(self.q == 0.0))

    def label_matrix(self, l: int) -> np.ndarray:
        """The k x k matrix Q for label index ``l``."""
        return self.q[:, :, l]

    def with_t(self, t: float) -> "LsbmParams":
        return validate_params({**self.to_dict(), "t": t})

    def with_n(self, n: int) -> "LsbmParams":
        return validate_params({**self.to_dict(), "n": n})

    def permuted(self, perm) -> "LsbmParams":
        """Relabel communities: new community ``a`` is old ``perm[a]``."""
        perm = np.asarray(perm)
        return replace(
            self,
            pi=_frozen(self.pi[perm]),
            q=_frozen(self.q[np.ix_(perm, perm)]),
        )

    def to_dict(self) -> dict[str, Any]:
        d = {
            "k": self.k,
            "L": self.L,
            "pi": self.pi.tolist(),
            "q": self.q.tolist(),
            "t": self.t,
            "n": self.n,
        }
        if self.allow_zero:
            d["allow_zero"] = True
        return d


def validate_params(raw: Mapping[str, Any]) -> LsbmParams:
    """Check a raw parameter bundle and return an immutable :class:`LsbmParams`.

    Raises :class:`LsbmError` with one of the codes ``MISSING_FIELD``,
    ``BAD_VALUE``, ``BAD_SHAPE``, ``BAD_PI``, ``NON_STOCHASTIC``,
    ``ZERO_ENTRY``, ``ASYMMETRIC_Q`` or ``SIGNAL_TOO_LARGE``.
    """
    for name in ("k", "L", "pi", "q", "t", "n"):
        if name not in raw:
            raise LsbmError("MISSING_FIELD", f"parameter bundle lacks {name!r}")

    k, L, n = raw["k"], raw["L"], raw["n"]
    for name, val, lo in (("k", k, 1), ("L", L, 1), ("n", n, 2)):
        if isinstance(val, bool) or not isinstance(val, (int, np.integer)) or val < lo:
            raise LsbmError("BAD_VALUE", f"{name} must be an integer >= {lo}, got {val!r}")
    k, L, n = int(k), int(L), int(n)
    t = float(raw["t"])
    if not (t > 0 and math.isfinite(t)):
        raise LsbmError("BAD_VALUE", f"t must be positive and finite, got {t!r}")
    allow_zero = bool(raw.get("allow_zero", False))

    pi = np.asarray(raw["pi"], dtype=float)
    if pi.shape != (k,):
        raise LsbmError("BAD_SHAPE", f"pi has shape {pi.shape}, expected ({k},)")
    if np.any(~np.isfinite(pi)) or np.any(pi <= 0):
        raise LsbmError("BAD_PI", "pi entries must be strictly positive")
    if abs(pi.sum() - 1.0) > SUM_TOL:
        raise LsbmError("BAD_PI", f"pi sums to {pi.sum()!r}")

    q = np.asarray(raw["q"], dtype=float)
    if q.shape != (k, k, L):
        raise LsbmError("BAD_SHAPE", f"q has shape {q.shape}, expected ({k}, {k}, {L})")
    if np.any(~np.isfinite(q)) or np.any(q < 0) or np.any(q > 1):
        raise LsbmError("NON_STOCHASTIC", "q entries must lie in [0, 1]")
    sums = q.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > SUM_TOL)
    if bad.size:
        i, j = bad[0]
        raise LsbmError("NON_STOCHASTIC", f"q[{i}][{j}] sums to {sums[i, j]!r}")
    if not allow_zero and np.any(q == 0):
        raise LsbmError("ZERO_ENTRY", "q has zero entries; set allow_zero to permit them")
    if not np.array_equal(q, q.transpose(1, 0, 2)):
        i, j = np.argwhere(np.any(q != q.transpose(1, 0, 2), axis=2))[0]
        raise LsbmError("ASYMMETRIC_Q", f"q[{i}][{j}] != q[{j}][{i}]")

    if t * math.log(n) / n > 1.0:
        raise LsbmError("SIGNAL_TOO_LARGE", f"t*log(n)/n = {t * math.log(n) / n:.6g} > 1")

    return LsbmParams(k=k, L=L, pi=_frozen(pi), q=_frozen(q), t=t, n=n, allow_zero=allow_zero)


def load_params(path: str | Path) -> LsbmParams:
    with open(path) as fh:
        return validate_params(json.load(fh))


def save_params(params: LsbmParams, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(params.to_dict(), fh, indent=2)
        fh.write("\n")


def theta_matrix(params: LsbmParams, i: int) -> np.ndarray:
    """k x L matrix with entry (j, l) = pi_j * q[i, j, l]."""
    if not 0 <= i < params.k:
        raise LsbmError("INDEX_OUT_OF_RANGE", f"community {i} not in [0, {params.k})")
    return params.pi[:, None] * params.q[i]


@dataclass(frozen=True)
class DivergenceResult:
    value: float
    lambda_star: float
    evaluations: int


def hellinger_objective(x: np.ndarray, y: np.ndarray, lam: float) -> float:
    """f(lam) = sum x^lam * y^(1-lam), with 0^0 = 1 and 0^a = 0 for a > 0."""
    return float(np.sum(np.power(x, lam) * np.power(y, 1.0 - lam)))


def _golden_section(f: Callable[[float], float], a: float, b: float, tol: float):
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    evals = 2
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
        evals += 1
    return 0.5 * (a + b), evals


def _polish(x: np.ndarray, y: np.ndarray, lam: float, width: float) -> float:
    """Refine a minimizer of the convex objective by bisection on its derivative.

    Golden-section search stalls once objective differences fall below
    rounding; the derivative keeps its sign well past that point.
    """
    mask = (x > 0) & (y > 0)
    if not mask.any():
        return lam
    xs, ys = x[mask], y[mask]
    logratio = np.log(xs) - np.log(ys)

    def deriv(s: float) -> float:
        return float(np.sum(np.power(xs, s) * np.power(ys, 1.0 - s) * logratio))

    lo, hi = max(0.0, lam - width), min(1.0, lam + width)
    glo, ghi = deriv(lo), deriv(hi)
    if not (glo < 0.0 < ghi):
        return lam
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if deriv(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ch_divergence(x, y) -> DivergenceResult:
    """Chernoff-Hellinger divergence between two normalized theta matrices.

    Returns ``1 - min_{lam in [0,1]} sum x^lam y^(1-lam)``.  The minimizer is
    located by golden-section search to ``LAMBDA_TOL`` and then refined on the
    derivative.  When 1/2 is among the minimizers it is reported, which keeps
    ``lambda_star(x, y) == 1 - lambda_star(y, x)`` on flat objectives.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise LsbmError("DIMENSION_MISMATCH", f"{x.shape} vs {y.shape}")

    counter = [0]

    def f(lam: float) -> float:
        counter[0] += 1
        return hellinger_objective(x, y, lam)

    lam, _ = _golden_section(f, 0.0, 1.0, LAMBDA_TOL)
    lam = _polish(x, y, lam, width=1e-6)
    best = f(lam)
    for cand in (0.0, 1.0):
        fc = f(cand)
        if fc < best:
            lam, best = cand, fc
    f_half = f(0.5)
    if f_half <= best + 4 * np.finfo(float).eps:
        lam, best = 0.5, f_half
    return DivergenceResult(value=max(0.0, 1.0 - best), lambda_star=lam, evaluations=counter[0])


def pairwise_divergences(params: LsbmParams) -> dict[tuple[int, int], DivergenceResult]:
    thetas = [theta_matrix(params, i) for i in range(params.k)]
    return {(i, j): ch_divergence(thetas[i], thetas[j]) for i, j in combinations(range(params.k), 2)}


def critical_t(params: LsbmParams) -> float:
    """Information-theoretic threshold ``1 / min_{i != j} D_+(theta_i, theta_j)``.

    With a single community there is nothing to separate and the threshold is 0.
    """
    divs = pairwise_divergences(params)
    if not divs:
        return 0.0
    (i, j), worst = min(divs.items(), key=lambda kv: kv[1].value)
    if worst.value <= DEGENERATE_TOL:
        raise LsbmError(
            "DEGENERATE_PARAMS",
            f"communities {i} and {j} are indistinguishable (D_+ = {worst.value:.3g})",
        )
    return 1.0 / worst.value


@dataclass(frozen=True)
class LabelSpectrum:
    label: int
    eigenvalues: np.ndarray = field(repr=False)
    distinct_nonzero: bool
    real: bool

    def to_dict(self) -> dict[str, Any]:
        ev = self.eigenvalues
        return {
            "label": self.label + 1,
            "eigenvalues": ev.real.tolist() if self.real else [[z.real, z.imag] for z in ev],
            "real": self.real,
            "distinct_nonzero": self.distinct_nonzero,
        }


def spectral_condition_check(params: LsbmParams, tol_abs: float = 1e-9, tol_gap: float = 1e-9) -> list[LabelSpectrum]:
    """Eigenvalues of Q^(l) diag(pi) for each label, and whether they are distinct and nonzero."""
    reports = []
    for l in range(params.L):
        m = params.label_matrix(l) * params.pi[None, :]
        ev = np.linalg.eigvals(m)
        scale = max(1.0, float(np.max(np.abs(ev))))
        real = bool(np.all(np.abs(ev.imag) <= 1e-12 * scale))
        vals = np.sort(ev.real)[::-1]
        if real:
            gaps = np.diff(np.sort(vals))
            ok = bool(np.all(np.abs(vals) > tol_abs) and (gaps.size == 0 or gaps.min() > tol_gap))
            ev = vals.astype(complex)
        else:
            ok = False
        reports.append(LabelSpectrum(label=l, eigenvalues=ev, distinct_nonzero=ok, real=real))
    return reports


def spectral_condition_holds(params: LsbmParams) -> bool:
    return all(r.distinct_nonzero for r in spectral_condition_check(params))
