"""Command-line entry point: ``lsbm threshold | sample | recover | sweep | diagnose``."""

from __future__ import annotations

import functools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from .errors import LsbmError
from .harness import load_config, record_to_dict, run_sweep, run_trial
from .inference import fit, labels_to_text
from .model import critical_t, load_params, pairwise_divergences, spectral_condition_check
from .rng import derive_seed
from .sampler import LabeledGraph, label_matrices, sample_graph
from .diagnostics import diagnose as diagnose_instance

EXIT_CONFIG = 1
EXIT_IO = 2


def _guard(fn):
    """Map failures to exit codes: 1 for bad input, 2 for filesystem trouble."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except LsbmError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_IO if exc.code == "IO_ERROR" else EXIT_CONFIG)
        except json.JSONDecodeError as exc:
            click.echo(f"error: malformed JSON: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_IO)

    return wrapper


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Exact community recovery in the labeled stochastic block model."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--params", "params_path", required=True, type=click.Path(), help="Parameter JSON file.")
@_guard
def threshold(params_path: str):
    """Print the critical t and the per-label spectral condition report."""
    params = load_params(params_path)
    divs = pairwise_divergences(params)
    out = {
        "critical_t": critical_t(params),
        "t": params.t,
        "above_threshold": params.t > critical_t(params),
        "divergences": [
            {"i": i + 1, "j": j + 1, "value": d.value, "lambda_star": d.lambda_star}
            for (i, j), d in divs.items()
        ],
        "spectral_condition": [r.to_dict() for r in spectral_condition_check(params)],
    }
    click.echo(json.dumps(out, indent=2))


@main.command()
@click.option("--params", "params_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(), help="Graph file to write.")
@click.option("--assignment-out", type=click.Path(), default=None, help="Also write the true assignment.")
@_guard
def sample(params_path: str, seed: int, out: str, assignment_out: str | None):
    """Sample a labeled graph from the model."""
    params = load_params(params_path)
    graph = sample_graph(params, seed)
    graph.save(out)
    if assignment_out:
        Path(assignment_out).write_text(graph.assignment.to_text())


@main.command()
@click.option("--params", "params_path", required=True, type=click.Path())
@click.option("--graph", "graph_path", required=True, type=click.Path())
@click.option("--out", type=click.Path(), default=None, help="Labels file (default: stdout).")
@click.option("--summary", type=click.Path(), default=None, help="Write the selection summary as JSON.")
@_guard
def recover(params_path: str, graph_path: str, out: str | None, summary: str | None):
    """Recover community labels for a graph file."""
    params = load_params(params_path)
    graph = LabeledGraph.load(graph_path)
    if (graph.n, graph.k, graph.L) != (params.n, params.k, params.L):
        params = params.with_n(graph.n)
    result = fit(graph, params)
    _emit(labels_to_text(result.best.sigma_hat), out)
    if summary:
        doc = {**result.best.summary(), "patterns": result.n_patterns, "distinct_labelings": result.n_distinct}
        Path(summary).write_text(json.dumps(doc, indent=2) + "\n")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override masterSeed.")
@click.option("--out", type=click.Path(), default=None, help="Override the CSV output path.")
@click.option("--jobs", type=int, default=None, help="Override parallelism.")
@_guard
def sweep(config_path: str, seed: int | None, out: str | None, jobs: int | None):
    """Run a t/n sweep and write CSV plus JSON summary."""
    cfg = load_config(config_path)
    overrides = {}
    if seed is not None:
        overrides["master_seed"] = seed
    if out is not None:
        overrides["output"] = out
    if jobs is not None:
        overrides["parallelism"] = max(1, jobs)
    cfg = replace(cfg, **overrides)
    result = run_sweep(cfg)
    for cell in result.summary["cells"]:
        click.echo(
            f"t={cell['t']:.4g} n={cell['n']} labeled={cell['labeled_exact']['rate']:.3f} "
            f"partition={cell['partition_exact']['rate']:.3f}"
        )
    click.echo(f"wrote {result.csv_path} and {result.json_path}")


@main.command()
@click.option("--params", "params_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True, type=int, help="Master seed.")
@click.option("--trial", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(), default=None, help="Write the JSON report here instead of stdout.")
@_guard
def diagnose(params_path: str, seed: int, trial: int, out: str | None):
    """Run one seeded trial and report every diagnostic."""
    params = load_params(params_path)
    record = run_trial(params, trial, seed)
    graph = sample_graph(params, derive_seed(seed, "trial", trial))
    result = fit(graph, params)
    report = diagnose_instance(graph, params, result.bases, label_matrices(graph), result.best.sigma_hat)
    doc = {
        "record": record_to_dict(record),
        "diagnostics": report.to_dict(),
        "selection": result.best.summary(),
    }
    _emit(json.dumps(doc, indent=2) + "\n", out)


if __name__ == "__main__":
    main()
