"""Command-line entry point.

Subcommands: ``fit`` (two views), ``fit-multi`` (m views), ``fit-directed``
(two views + accessory columns), ``tune`` (permutation-test grid search),
``simulate`` (one planted instance) and ``sweep`` (noise-grid study).

Every command writes its artifacts atomically into --out and prints
nothing on success. Failures print one line, ``Category: detail``, to
stderr and exit with status 1. Outputs carry no timestamps, so a rerun
with identical inputs and seeds reproduces byte-identical files.
"""

from __future__ import annotations

import functools
import os
import sys

import click
import numpy as np

from .errors import BlockCCAError, ConfigError
from .estimators import BlockCCA, DirectedBlockCCA, MultiViewBlockCCA
from .io import load_matrix, write_json, write_table
from .simgen import SimConfig, generate_views, sweep_sigma
from .tune import tune_grid

__all__ = ["main"]


def _parse_vector(text, flag):
    """Comma-joined floats; a single value stays scalar for broadcasting."""
    parts = [p.strip() for p in text.split(",")]
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-joined numbers, got {text!r}")
    return values[0] if len(values) == 1 else np.array(values)


def _parse_gamma_grid(text):
    """Pairs like ``0.1:0.2,0.3:0.3`` -> [(0.1, 0.2), (0.3, 0.3)]."""
    grid = []
    for part in text.split(","):
        pieces = part.split(":")
        if len(pieces) != 2:
            raise ConfigError(
                f"--gamma-grid expects comma-joined gamma1:gamma2 pairs, "
                f"got {part.strip()!r}"
            )
        try:
            grid.append((float(pieces[0]), float(pieces[1])))
        except ValueError:
            raise ConfigError(f"--gamma-grid pair {part.strip()!r} is not numeric")
    return grid


def _parse_sigma_grid(text):
    """``lo:hi:count`` -> evenly spaced grid endpoints included."""
    pieces = text.split(":")
    if len(pieces) != 3:
        raise ConfigError(f"--sigma-grid expects lo:hi:count, got {text!r}")
    try:
        lo, hi = float(pieces[0]), float(pieces[1])
        count = int(pieces[2])
    except ValueError:
        raise ConfigError(f"--sigma-grid expects lo:hi:count, got {text!r}")
    if count < 1 or lo <= 0 or hi < lo:
        raise ConfigError(
            f"--sigma-grid needs 0 < lo <= hi and count >= 1, got {text!r}"
        )
    return np.linspace(lo, hi, count)


def _vector_out(value, d):
    """Resolved per-direction list for the summary file."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(d, float(arr))
    return [float(v) for v in arr]


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except BlockCCAError as e:
            click.echo(f"{e.category}: {e}", err=True)
            sys.exit(1)

    return wrapper


def _direction_names(d):
    return [f"d{j + 1}" for j in range(d)]


def _write_fit_outputs(out, result, feature_names):
    d = result.d
    cols = _direction_names(d)
    for i, (z, pattern) in enumerate(zip(result.directions, result.patterns)):
        write_table(os.path.join(out, f"Z{i + 1}.csv"), z, cols,
                    row_labels=feature_names[i])
        write_table(os.path.join(out, f"T{i + 1}.csv"),
                    pattern.mask.astype(np.float64), cols,
                    row_labels=feature_names[i])


def _fit_summary(command, result, config):
    return {
        "command": command,
        "config": config,
        "canonical_correlations": [float(v) for v in result.canonical_correlations],
        "correlation_defined": [bool(v) for v in result.correlation_defined],
        "stage1": {
            "final_objectives": [t[-1] for t in result.stage1_traces],
            "iterations": list(result.stage1_iterations),
            "converged": list(result.stage1_converged),
            "stop": list(result.stage1_stop),
            "trace_resets": [list(r) for r in result.stage1_trace_resets],
        },
        "stage2": {
            "final_objective": (result.stage2_trace[-1]
                                if result.stage2_trace else None),
            "iterations": result.stage2_iterations,
            "converged": result.stage2_converged,
            "stop": result.stage2_stop,
            "oscillated": result.stage2_oscillated,
            "trace_resets": list(result.stage2_trace_resets),
        },
        "dead_directions": list(result.dead_directions),
        "orthonormality": {f"Z{i + 1}": v for i, v in result.orthonormality.items()},
        "estimation_order": list(result.order),
        "restart_scores": [s if np.isfinite(s) else None
                           for s in result.restart_scores],
        "selected_restart": result.selected_restart,
        "seeds": result.seeds,
    }


def _common_fit_options(fn):
    for deco in reversed([
        click.option("--d", default=1, show_default=True,
                     help="Number of direction pairs estimated jointly."),
        click.option("--mu", default=None,
                     help="Comma-joined decreasing positive weights, one per direction."),
        click.option("--seed", default=0, show_default=True,
                     help="Master seed for all random initialization."),
        click.option("--restarts", default=1, show_default=True,
                     help="Random restarts; the best final objective wins."),
        click.option("--tol", default=1e-7, show_default=True,
                     help="Relative objective change declaring stage-1 convergence."),
        click.option("--max-iters", default=500, show_default=True,
                     help="Stage-1 iteration cap per phase."),
        click.option("--out", required=True,
                     help="Output directory (created if missing)."),
        click.option("--no-standardize", is_flag=True,
                     help="Use input columns as-is instead of standardizing."),
    ]):
        fn = deco(fn)
    return fn


@click.group()
def main():
    """Block sparse canonical correlation analysis."""


@main.command("fit")
@click.option("--x1", required=True, help="First view (delimited text).")
@click.option("--x2", required=True, help="Second view (delimited text).")
@click.option("--penalty", type=click.Choice(["l1", "l0"]), default="l1",
              show_default=True, help="Stage-1 hinge family.")
@click.option("--gamma1", default="0", show_default=True,
              help="Sparsity thresholds for view 1 (scalar or comma-joined per direction).")
@click.option("--gamma2", default="0", show_default=True,
              help="Sparsity thresholds for view 2.")
@_common_fit_options
@_guard
def fit(x1, x2, penalty, gamma1, gamma2, d, mu, seed, restarts, tol,
        max_iters, out, no_standardize):
    """Two-view fit: patterns, refined directions, correlations."""
    vm1 = load_matrix(x1, standardize=False)
    vm2 = load_matrix(x2, standardize=False)
    est = BlockCCA(
        d=d,
        penalty=penalty,
        gamma1=_parse_vector(gamma1, "--gamma1"),
        gamma2=_parse_vector(gamma2, "--gamma2"),
        mu=None if mu is None else _parse_vector(mu, "--mu"),
        seed=seed,
        restarts=restarts,
        tol=tol,
        max_iters=max_iters,
        standardize=not no_standardize,
    ).fit(vm1, vm2)
    result = est.result_
    _write_fit_outputs(out, result, est.feature_names_)
    config = {
        "penalty": penalty, "d": int(d),
        "gamma1": _vector_out(est.gamma1, result.d),
        "gamma2": _vector_out(est.gamma2, result.d),
        "mu": [float(v) for v in est.weights_.mu],
        "seed": int(seed), "restarts": int(restarts), "tol": tol,
        "max_iters": int(max_iters),
        "refine_tol": est.refine_tol, "refine_max_iters": est.refine_max_iters,
        "standardize": not no_standardize,
    }
    write_json(os.path.join(out, "summary.json"),
               _fit_summary("fit", result, config))


@main.command("fit-multi")
@click.option("--views", required=True,
              help="Comma-joined paths, one delimited file per view.")
@click.option("--gamma", default="0", show_default=True,
              help="Sparsity thresholds shared by every view pair (scalar or per direction).")
@_common_fit_options
@_guard
def fit_multi(views, gamma, d, mu, seed, restarts, tol, max_iters, out,
              no_standardize):
    """Multi-view fit over two or more views."""
    paths = [p.strip() for p in views.split(",") if p.strip()]
    if len(paths) < 2:
        raise ConfigError(f"--views needs at least two paths, got {views!r}")
    vms = [load_matrix(p, standardize=False) for p in paths]
    est = MultiViewBlockCCA(
        d=d,
        gamma=_parse_vector(gamma, "--gamma"),
        mu=None if mu is None else _parse_vector(mu, "--mu"),
        seed=seed,
        restarts=restarts,
        tol=tol,
        max_iters=max_iters,
        standardize=not no_standardize,
    ).fit(vms)
    result = est.result_
    _write_fit_outputs(out, result, est.feature_names_)
    config = {
        "n_views": len(paths), "d": int(d),
        "gamma": _vector_out(est.gamma, result.d),
        "mu": [float(v) for v in est.weights_.mu],
        "seed": int(seed), "restarts": int(restarts), "tol": tol,
        "max_iters": int(max_iters),
        "refine_tol": est.refine_tol, "refine_max_iters": est.refine_max_iters,
        "standardize": not no_standardize,
    }
    summary = _fit_summary("fit-multi", result, config)
    summary["pairwise_correlations"] = {
        f"{r + 1},{s + 1}": {
            "values": [float(v) for v in vals],
            "defined": [bool(b) for b in defined],
        }
        for (r, s), (vals, defined) in result.pairwise_correlations.items()
    }
    write_json(os.path.join(out, "summary.json"), summary)


@main.command("fit-directed")
@click.option("--x1", required=True, help="First view (delimited text).")
@click.option("--x2", required=True, help="Second view (delimited text).")
@click.option("--y", "y_path", required=True,
              help="Accessory columns, one per direction (or a single shared column).")
@click.option("--gamma1", default="0", show_default=True,
              help="Sparsity thresholds for view 1.")
@click.option("--gamma2", default="0", show_default=True,
              help="Sparsity thresholds for view 2.")
@click.option("--eps1", default="0", show_default=True,
              help="Accessory pull on view 1 (scalar or comma-joined per direction).")
@click.option("--eps2", default="0", show_default=True,
              help="Accessory pull on view 2.")
@_common_fit_options
@_guard
def fit_directed(x1, x2, y_path, gamma1, gamma2, eps1, eps2, d, mu, seed,
                 restarts, tol, max_iters, out, no_standardize):
    """Two-view fit steered toward accessory columns."""
    vm1 = load_matrix(x1, standardize=False)
    vm2 = load_matrix(x2, standardize=False)
    y = load_matrix(y_path, standardize=False).data
    est = DirectedBlockCCA(
        d=d,
        gamma1=_parse_vector(gamma1, "--gamma1"),
        gamma2=_parse_vector(gamma2, "--gamma2"),
        eps1=_parse_vector(eps1, "--eps1"),
        eps2=_parse_vector(eps2, "--eps2"),
        mu=None if mu is None else _parse_vector(mu, "--mu"),
        seed=seed,
        restarts=restarts,
        tol=tol,
        max_iters=max_iters,
        standardize=not no_standardize,
    ).fit(vm1, vm2, y)
    result = est.result_
    _write_fit_outputs(out, result, est.feature_names_)
    config = {
        "d": int(d),
        "gamma1": _vector_out(est.gamma1, result.d),
        "gamma2": _vector_out(est.gamma2, result.d),
        "eps1": _vector_out(est.eps1, result.d),
        "eps2": _vector_out(est.eps2, result.d),
        "mu": [float(v) for v in est.weights_.mu],
        "seed": int(seed), "restarts": int(restarts), "tol": tol,
        "max_iters": int(max_iters),
        "refine_tol": est.refine_tol, "refine_max_iters": est.refine_max_iters,
        "standardize": not no_standardize,
    }
    write_json(os.path.join(out, "summary.json"),
               _fit_summary("fit-directed", result, config))


@main.command("tune")
@click.option("--x1", required=True, help="First view (delimited text).")
@click.option("--x2", required=True, help="Second view (delimited text).")
@click.option("--gamma-grid", required=True,
              help="Comma-joined gamma1:gamma2 pairs to score.")
@click.option("--perms", default=100, show_default=True,
              help="Permutations per grid cell.")
@click.option("--alpha", default=0.05, show_default=True,
              help="Significance level recorded with the table.")
@click.option("--penalty", type=click.Choice(["l1", "l0"]), default="l1",
              show_default=True, help="Stage-1 hinge family.")
@click.option("--d", default=1, show_default=True,
              help="Number of direction pairs in each fit.")
@click.option("--seed", default=0, show_default=True,
              help="Master seed for fits and permutations.")
@click.option("--restarts", default=1, show_default=True,
              help="Random restarts per fit.")
@click.option("--out", required=True, help="Output directory.")
@click.option("--no-standardize", is_flag=True,
              help="Use input columns as-is instead of standardizing.")
@_guard
def tune(x1, x2, gamma_grid, perms, alpha, penalty, d, seed, restarts, out,
         no_standardize):
    """Permutation-test p-values over a threshold grid; pick the winner."""
    vm1 = load_matrix(x1, standardize=False)
    vm2 = load_matrix(x2, standardize=False)
    grid = _parse_gamma_grid(gamma_grid)
    result = tune_grid(
        vm1, vm2, grid, perms, d=d, alpha=alpha, seed=seed,
        penalty=penalty, restarts=restarts,
        standardize=not no_standardize,
    )
    table = np.array([
        [
            c.gamma[0],
            c.gamma[1],
            c.report.p_value if c.ok else np.nan,
            c.report.rho_observed if c.ok else np.nan,
            float(c.report.n_failures) if c.ok else np.nan,
            0.0 if c.ok else 1.0,
        ]
        for c in result.cells
    ])
    write_table(os.path.join(out, "table.csv"), table,
                ["gamma1", "gamma2", "p_value", "rho_observed",
                 "n_failures", "failed"])
    write_json(os.path.join(out, "summary.json"), {
        "command": "tune",
        "config": {
            "penalty": penalty, "d": int(d),
            "perms": int(perms), "alpha": float(alpha), "seed": int(seed),
            "restarts": int(restarts), "standardize": not no_standardize,
            "grid": [[g1, g2] for g1, g2 in grid],
        },
        "selected_index": result.selected_index,
        "selected_gamma": list(result.selected),
        "selected_p_value": result.selected_report.p_value,
        "cell_errors": {
            str(i): c.error for i, c in enumerate(result.cells) if not c.ok
        },
    })


@main.command("simulate")
@click.option("--n", required=True, type=int, help="Sample count.")
@click.option("--p", required=True, type=int,
              help="Features per view (multiple of 10).")
@click.option("--sigma", required=True, type=float,
              help="Noise eigenvalue of the generator.")
@click.option("--sigma1", default=2.0, show_default=True,
              help="Leading planted eigenvalue.")
@click.option("--sigma2", default=1.0, show_default=True,
              help="Second planted eigenvalue.")
@click.option("--seed", default=0, show_default=True, help="Generator seed.")
@click.option("--out", required=True, help="Output directory.")
@_guard
def simulate(n, p, sigma, sigma1, sigma2, seed, out):
    """Write one planted instance: X1.csv, X2.csv, truth.csv, summary.json."""
    config = SimConfig(n=n, p=p, sigma=sigma, sigma1=sigma1, sigma2=sigma2,
                       seed=int(seed))
    instance = generate_views(config)
    write_table(os.path.join(out, "X1.csv"), instance.x1.data,
                instance.x1.feature_names)
    write_table(os.path.join(out, "X2.csv"), instance.x2.data,
                instance.x2.feature_names)
    truth = np.column_stack([
        instance.truth.v11, instance.truth.v12,
        instance.truth.v21, instance.truth.v22,
    ])
    write_table(os.path.join(out, "truth.csv"), truth,
                ["v11", "v12", "v21", "v22"],
                row_labels=instance.x1.feature_names)
    write_json(os.path.join(out, "summary.json"), {
        "command": "simulate",
        "config": {
            "n": int(n), "p": int(p), "sigma": float(sigma),
            "sigma1": float(sigma1), "sigma2": float(sigma2),
            "seed": int(seed),
        },
        "sigma_ratio": instance.sigma_ratio,
        "planted_block": config.block,
    })


@main.command("sweep")
@click.option("--n", required=True, type=int, help="Sample count per cell.")
@click.option("--p", required=True, type=int,
              help="Features per view (multiple of 10).")
@click.option("--sigma-grid", required=True,
              help="Noise grid as lo:hi:count (linear spacing).")
@click.option("--reps", default=10, show_default=True,
              help="Instances per grid value.")
@click.option("--sigma1", default=2.0, show_default=True,
              help="Leading planted eigenvalue.")
@click.option("--sigma2", default=1.0, show_default=True,
              help="Second planted eigenvalue.")
@click.option("--seed", default=0, show_default=True, help="Master seed.")
@click.option("--out", required=True, help="Output directory.")
@_guard
def sweep(n, p, sigma_grid, reps, sigma1, sigma2, seed, out):
    """Recovery metrics across a noise grid: raw and running-median tables."""
    grid = _parse_sigma_grid(sigma_grid)
    base = SimConfig(n=n, p=p, sigma=float(grid[0]), sigma1=sigma1,
                     sigma2=sigma2, seed=int(seed))
    result = sweep_sigma(base, grid, reps)
    raw = np.array([
        [r.sigma_index, r.rep, r.sigma, r.sigma_ratio,
         r.truth_corr_1, r.truth_corr_2, r.within_corr]
        for r in result.rows
    ]).reshape(-1, 7)
    write_table(os.path.join(out, "raw.csv"), raw,
                ["sigma_index", "rep", "sigma", "sigma_ratio",
                 "truth_corr_1", "truth_corr_2", "within_corr"])
    write_table(os.path.join(out, "running_median.csv"), result.median_table,
                ["sigma_ratio", "truth_corr_1", "truth_corr_2", "within_corr"])
    write_json(os.path.join(out, "summary.json"), {
        "command": "sweep",
        "config": {
            "n": int(n), "p": int(p),
            "sigma_grid": [float(s) for s in grid], "reps": int(reps),
            "sigma1": float(sigma1), "sigma2": float(sigma2),
            "seed": int(seed), "median_window": result.window,
        },
        "rows": len(result.rows),
        "failures": [
            {"sigma_index": i, "rep": j, "error": msg}
            for i, j, msg in result.failures
        ],
    })


if __name__ == "__main__":
    main()
