"""Command-line front end: fit, infer, screen, and simulate subcommands.

Every command is a deterministic function of its inputs and seed; numeric
output is serialized with 17 significant digits so reruns are
byte-identical. Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import os
import sys
from dataclasses import asdict

import click
import numpy as np

from .data import Cluster, ClusteredDataset, ColumnSpec, load_csv
from .errors import DataError, HdgeeError, NumericalError
from .families import get_family
from .inference import fit_pipeline, infer_target, make_cv_context, screen_dataset
from .serialize import write_csv_table, write_json
from .simulate import (
    format_report,
    preset,
    report_rows,
    run_monte_carlo,
)

_RULES = ("1se", "min")


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("HDGEE_THREADS", "1")))
    except ValueError:
        return 1


def _schema_options(fn):
    fn = click.option(
        "--cluster-col", default="cluster", show_default=True,
        help="Name of the cluster id column.",
    )(fn)
    fn = click.option(
        "--response-col", default="y", show_default=True,
        help="Name of the response column.",
    )(fn)
    fn = click.option(
        "--covariates", default=None,
        help="Comma-separated covariate column names (default: all others).",
    )(fn)
    fn = click.option(
        "--intercept", is_flag=True,
        help="Append a constant covariate column named 'const'.",
    )(fn)
    return fn


def _load(input_path, cluster_col, response_col, covariates, intercept):
    spec = ColumnSpec(
        cluster=cluster_col,
        response=response_col,
        covariates=[c.strip() for c in covariates.split(",")] if covariates else None,
    )
    ds = load_csv(input_path, spec)
    names = (
        list(spec.covariates)
        if spec.covariates
        else [f"x{j + 1}" for j in range(ds.p)]
    )
    if intercept:
        ds = ClusteredDataset(
            [
                Cluster(cl.id, np.hstack([cl.X, np.ones((cl.m, 1))]), cl.y)
                for cl in ds.clusters
            ]
        )
        names = names + ["const"]
    return ds, names


def _correlation_payload(corr):
    payload = {"kind": corr.kind}
    if corr.kind == "unstructured":
        payload["gamma"] = corr.gamma
    elif corr.kind != "independence":
        payload["gamma"] = float(corr.gamma)
    else:
        payload["gamma"] = None
    m_max = corr.gamma.shape[0] if corr.kind == "unstructured" else None
    if m_max is not None:
        payload["matrix"] = corr.gamma
    return payload


def _parse_grid(text):
    if text is None:
        return None
    try:
        grid = np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise click.BadParameter(f"could not parse grid {text!r}") from None
    if grid.size == 0:
        raise click.BadParameter("grid is empty")
    return grid


def _parse_targets(coef, xi_file, p):
    """Loading vectors from a 1-based index list or a dense vector file."""
    if (coef is None) == (xi_file is None):
        raise click.UsageError("provide exactly one of --coef or --xi-file")
    targets = []
    if coef is not None:
        try:
            indices = [int(v) for v in coef.split(",") if v.strip()]
        except ValueError:
            raise click.BadParameter(f"could not parse --coef {coef!r}") from None
        for idx in indices:
            if not 1 <= idx <= p:
                raise click.BadParameter(f"--coef index {idx} outside 1..{p}")
            xi = np.zeros(p)
            xi[idx - 1] = 1.0
            targets.append((f"coef_{idx}", xi))
        return targets
    with open(xi_file, "r", encoding="utf-8") as fh:
        raw = fh.read().replace(",", " ").split()
    try:
        xi = np.array([float(v) for v in raw])
    except ValueError:
        raise DataError(f"{xi_file}: non-numeric loading entry") from None
    if xi.shape != (p,):
        raise DataError(f"{xi_file}: expected {p} entries, found {xi.size}")
    if not np.any(xi):
        raise DataError(f"{xi_file}: loading vector is identically zero")
    return [("loading", xi)]


@click.group()
def cli():
    """De-biased inference for high-dimensional clustered regression."""


@cli.command("fit")
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@_schema_options
@click.option("--family", default="gaussian", show_default=True)
@click.option("--corr", default="ar1", show_default=True,
              type=click.Choice(["independence", "ar1", "exchangeable", "unstructured"]))
@click.option("--cv-folds", default=10, show_default=True)
@click.option("--path-length", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, help="Output prefix.")
def cmd_fit(input_path, cluster_col, response_col, covariates, intercept,
            family, corr, cv_folds, path_length, seed, out):
    """Penalized initial fit with cross-validated penalty."""
    ds, names = _load(input_path, cluster_col, response_col, covariates, intercept)
    fam = get_family(family)
    if fam.name == "logit":
        fam.validate_response(ds.stacked()[1])
    pipe = fit_pipeline(
        ds, fam, corr_kind=corr, lasso_folds=cv_folds,
        lasso_path_length=path_length, seed=seed,
    )
    path = pipe.lambda_path
    payload = {
        "command": "fit",
        "family": fam.name,
        "seed": seed,
        "n": ds.n,
        "p": ds.p,
        "n_obs": ds.n_obs,
        "lambda": pipe.lasso_fit.lam,
        "beta": {"names": names, "values": pipe.beta_hat},
        "objective": pipe.lasso_fit.objective,
        "converged": pipe.lasso_fit.converged,
        "kkt_residual": pipe.lasso_fit.kkt_residual,
        "n_iterations": pipe.lasso_fit.n_iterations,
        "gamma": _correlation_payload(pipe.corr),
        "lambda_path": {
            "values": path.values,
            "cv_mean": path.cv_mean,
            "cv_se": path.cv_se,
            "selected_index": path.selected,
        },
    }
    write_json(f"{out}.fit.json", payload)
    write_csv_table(
        f"{out}.path.csv",
        ["lambda", "cv_mean", "cv_se", "selected"],
        [
            [lam, mu, se, i == path.selected]
            for i, (lam, mu, se) in enumerate(
                zip(path.values, path.cv_mean, path.cv_se)
            )
        ],
    )
    click.echo(f"wrote {out}.fit.json and {out}.path.csv")


@cli.command("infer")
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@_schema_options
@click.option("--family", default="gaussian", show_default=True)
@click.option("--corr", default="ar1", show_default=True,
              type=click.Choice(["independence", "ar1", "exchangeable", "unstructured"]))
@click.option("--coef", default=None,
              help="1-based coefficient index or comma-separated list.")
@click.option("--xi-file", default=None, type=click.Path(exists=True, dir_okay=False),
              help="File with a dense loading vector (p numbers).")
@click.option("--alpha", default=0.05, show_default=True)
@click.option("--cv-folds", default=5, show_default=True,
              help="Folds for the slack cross-validation.")
@click.option("--lasso-folds", default=10, show_default=True)
@click.option("--grid", default=None, help="Comma-separated slack grid override.")
@click.option("--rule", default="1se", show_default=True,
              type=click.Choice(["1se", "min", "both"]))
@click.option("--data-split", is_flag=True,
              help="Estimate the initial fit on half the clusters, infer on the rest.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, help="Output prefix.")
def cmd_infer(input_path, cluster_col, response_col, covariates, intercept,
              family, corr, coef, xi_file, alpha, cv_folds, lasso_folds, grid,
              rule, data_split, seed, out):
    """Confidence interval and test for one or more coefficient loadings."""
    ds, names = _load(input_path, cluster_col, response_col, covariates, intercept)
    fam = get_family(family)
    if fam.name == "logit":
        fam.validate_response(ds.stacked()[1])
    targets = _parse_targets(coef, xi_file, ds.p)
    grid = _parse_grid(grid)
    rules = _RULES if rule == "both" else (rule,)
    pipe = fit_pipeline(
        ds, fam, corr_kind=corr, lasso_folds=lasso_folds, seed=seed,
        data_split=data_split,
    )
    context = make_cv_context(pipe, K=cv_folds, seed=seed, lasso_folds=lasso_folds)
    entries = []
    for label, xi in targets:
        t = infer_target(
            pipe, xi, alpha=alpha, grid=grid, rules=rules, context=context
        )
        entry = {
            "target": label,
            "xi": xi,
            "cv": {
                "grid": t.curve.grid,
                "cv_value": t.curve.cv_value,
                "se_at_min": t.curve.se_at_min,
                "selected_index": t.curve.selected,
                "min_index": t.curve.min_index,
            },
            "results": {},
        }
        for r in rules:
            res = t.result(r)
            entry["results"][r] = {
                "theta_hat": res.theta_hat,
                "theta_tilde": res.theta_tilde,
                "se": res.se,
                "ci_low": res.ci[0],
                "ci_high": res.ci[1],
                "z": res.z,
                "p_value": res.p_value,
                "lambda_prime": res.lambda_prime_used,
            }
        entries.append(entry)
    payload = {
        "command": "infer",
        "family": fam.name,
        "correlation": _correlation_payload(pipe.corr),
        "alpha": alpha,
        "seed": seed,
        "data_split": data_split,
        "n": ds.n,
        "p": ds.p,
        "targets": entries,
    }
    write_json(f"{out}.infer.json", payload)
    click.echo(f"wrote {out}.infer.json")


@cli.command("screen")
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@_schema_options
@click.option("--family", default="gaussian", show_default=True)
@click.option("--corr", default="ar1", show_default=True,
              type=click.Choice(["independence", "ar1", "exchangeable", "unstructured"]))
@click.option("--alpha", default=0.05, show_default=True,
              help="False discovery rate level for flagging.")
@click.option("--cv-folds", default=5, show_default=True)
@click.option("--lasso-folds", default=10, show_default=True)
@click.option("--grid", default=None, help="Comma-separated slack grid override.")
@click.option("--rule", default="1se", show_default=True,
              type=click.Choice(["1se", "min"]))
@click.option("--data-split", is_flag=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, help="Output prefix.")
def cmd_screen(input_path, cluster_col, response_col, covariates, intercept,
               family, corr, alpha, cv_folds, lasso_folds, grid, rule,
               data_split, seed, out):
    """Per-covariate tests with false-discovery-rate adjusted p-values."""
    ds, names = _load(input_path, cluster_col, response_col, covariates, intercept)
    fam = get_family(family)
    if fam.name == "logit":
        fam.validate_response(ds.stacked()[1])
    pipe = fit_pipeline(
        ds, fam, corr_kind=corr, lasso_folds=lasso_folds, seed=seed,
        data_split=data_split,
    )
    rows = screen_dataset(
        pipe, alpha=alpha, grid=_parse_grid(grid), rule=rule, K=cv_folds,
        seed=seed, names=names,
    )
    header = [
        "name", "index", "estimate", "se", "ci_low", "ci_high", "z", "p",
        "p_adjusted", "significant", "lambda_prime",
    ]
    write_csv_table(
        f"{out}.screen.csv", header, [[r[k] for k in header] for r in rows]
    )
    n_sig = sum(r["significant"] for r in rows)
    click.echo(f"wrote {out}.screen.csv ({n_sig} flagged at FDR {alpha:g})")


@cli.command("simulate")
@click.option("--preset", "preset_name", required=True,
              type=click.Choice(["table1", "table2", "ribo-style"]))
@click.option("--reps", default=None, type=int, help="Replicate count override.")
@click.option("--n", default=None, type=int)
@click.option("--p", default=None, type=int)
@click.option("--s0", default=None, type=int)
@click.option("--m", default=None, type=int, help="Fixed cluster size override.")
@click.option("--family", default=None,
              type=click.Choice(["gaussian", "logit"]))
@click.option("--corr", default=None,
              type=click.Choice(["independence", "ar1", "exchangeable", "unstructured"]),
              help="Working correlation used by the method.")
@click.option("--rule", default="1se", show_default=True,
              type=click.Choice(["1se", "min", "both"]))
@click.option("--alpha", default=None, type=float)
@click.option("--seed", default=None, type=int)
@click.option("--threads", default=None, type=int,
              help="Worker processes (default: HDGEE_THREADS or 1).")
@click.option("--raw-dump", is_flag=True, help="Also write per-replicate rows.")
@click.option("--out", required=True, help="Output prefix.")
def cmd_simulate(preset_name, reps, n, p, s0, m, family, corr, rule, alpha,
                 seed, threads, raw_dump, out):
    """Monte Carlo coverage study on a named synthetic design."""
    overrides = {}
    if reps is not None:
        overrides["reps"] = reps
    if n is not None:
        overrides["n"] = n
    if p is not None:
        overrides["p"] = p
    if s0 is not None:
        overrides["s0"] = s0
    if m is not None:
        overrides["cluster_sizes"] = m
    if family is not None:
        overrides["family"] = family
    if corr is not None:
        overrides["corr_kind"] = corr
    if alpha is not None:
        overrides["alpha"] = alpha
    if seed is not None:
        overrides["seed"] = seed
    cfg = preset(preset_name, **overrides)
    rules = _RULES if rule == "both" else (rule,)
    workers = threads if threads is not None else _default_threads()
    report = run_monte_carlo(
        cfg, rules=rules, workers=max(1, workers), keep_raw=raw_dump
    )
    header, rows = report_rows(report)
    write_csv_table(f"{out}.mc.csv", header, rows)
    cfg_dict = asdict(cfg)
    if isinstance(cfg_dict.get("true_corr_param"), np.ndarray):
        cfg_dict["true_corr_param"] = cfg_dict["true_corr_param"].tolist()
    write_json(
        f"{out}.mc.json",
        {
            "command": "simulate",
            "preset": preset_name,
            "config": cfg_dict,
            "targets": [j + 1 for j in report.targets],
            "aggregates": report.aggregates,
            "n_replicates_used": report.n_replicates_used,
            "failures": [
                {"replicate": r, "error": msg} for r, msg in report.failures
            ],
        },
    )
    if raw_dump:
        for r in rules:
            recs = report.raw[r]
            if recs:
                hdr = list(recs[0].keys())
                write_csv_table(
                    f"{out}.raw.{r}.csv", hdr, [[rec[k] for k in hdr] for rec in recs]
                )
    click.echo(format_report(report))
    click.echo(f"wrote {out}.mc.csv and {out}.mc.json")


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except OSError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return 3
    except HdgeeError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
