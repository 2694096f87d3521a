import json
from pathlib import Path

import numpy as np
import pytest

from lsbm.model import validate_params

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

_acceptance_lines: list[str] = []


def csbm_raw(xi=0.1, t=3.75, n=2000):
    """Symmetric censored block model: two equal communities, two labels."""
    q_in = [1 - xi, xi]
    q_out = [xi, 1 - xi]
    return {"k": 2, "L": 2, "pi": [0.5, 0.5], "q": [[q_in, q_out], [q_out, q_in]], "t": t, "n": n}


def csbm(xi=0.1, t=3.75, n=2000):
    return validate_params(csbm_raw(xi, t, n))


def three_label(t=None, n=3000):
    raw = json.loads((CONFIGS / "three_label.json").read_text())
    raw["n"] = n
    if t is not None:
        raw["t"] = t
    return validate_params(raw)


def random_params(rng: np.random.Generator, k: int, L: int, n: int, t: float | None = None):
    """Random valid parameters with strictly positive q."""
    pi = rng.dirichlet(np.full(k, 4.0))
    pi = pi / pi.sum()
    q = np.empty((k, k, L))
    for i in range(k):
        for j in range(i, k):
            row = rng.dirichlet(np.full(L, 2.0)) * 0.98 + 0.02 / L
            q[i, j] = q[j, i] = row / row.sum()
    if t is None:
        t = rng.uniform(0.5, 0.9) * n / np.log(n)
    raw = {"k": k, "L": L, "pi": pi.tolist(), "q": q.tolist(), "t": float(t), "n": n}
    # renormalize after the JSON float round trip
    raw["pi"][-1] = 1.0 - sum(raw["pi"][:-1])
    return validate_params(raw)


@pytest.fixture
def csbm_params():
    return csbm()


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
