"""Command-line surface: simulate-prior, simulate-data, fit, summarize, compare.

Exit codes: 0 on success, 2 for configuration errors, 3 for data errors,
4 for numerical failures.
"""

import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import click
import numpy as np

from . import dataio, summaries
from .errors import ConfigError, DataError, NumericalError
from .grid import build_grid
from .model import scenario_by_name, simulate_dataset
from .partitions import PriorSpec, sample_prior
from .sampler import run_chain

_EXIT_CODES = ((ConfigError, 2), (DataError, 3), (NumericalError, 4),
               (np.linalg.LinAlgError, 4))


def _run(body):
    try:
        body()
    except tuple(exc for exc, _ in _EXIT_CODES) as err:
        for exc, code in _EXIT_CODES:
            if isinstance(err, exc):
                click.echo(f"error: {err}", err=True)
                sys.exit(code)
        raise


@click.group()
def main():
    """Regime-switching spatial clustering of areal time series."""


def _write_manifest(path, command, params, input_hashes=None):
    doc = {"package": "arealclust-0.1.0", "command": command, "params": params}
    if input_hashes:
        doc["input_hashes"] = input_hashes
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _parse_grid(text):
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError as exc:
        raise ConfigError(f"grid must look like 14x13, got {text!r}") from exc


@main.command("simulate-prior")
@click.option("--grid", "grid_text", required=True, help="grid shape, e.g. 14x13")
@click.option("--kappa", type=float, default=1.0, show_default=True)
@click.option("--xi", type=float, default=0.0, show_default=True)
@click.option("--variant", type=click.Choice(["full", "dp", "boundary"]), default="full",
              show_default=True)
@click.option("--iters", type=int, default=1000, show_default=True)
@click.option("--burn-in", type=int, default=0, show_default=True)
@click.option("--thin", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "outdir", required=True, type=click.Path())
def simulate_prior_cmd(grid_text, kappa, xi, variant, iters, burn_in, thin, seed, outdir):
    """Gibbs-sample partitions from the prior and write draw + K-count CSVs."""

    def body():
        rows, cols = _parse_grid(grid_text)
        topo = build_grid(rows, cols)
        if variant == "dp":
            prior = PriorSpec(kappa, 0.0, "dp")
        elif variant == "boundary":
            prior = PriorSpec(1.0, xi, "boundary")
        else:
            prior = PriorSpec(kappa, xi, "full")
        draws = sample_prior(topo, prior, iters, seed, burn_in=burn_in,
                             thinning=thin)
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "partitions.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"s_{i + 1}" for i in range(topo.n_cells)])
            for p in draws:
                writer.writerow([int(v) + 1 for v in p.labels])
        ks = np.array([p.n_clusters for p in draws])
        counts = np.bincount(ks)
        with open(os.path.join(outdir, "k_histogram.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n_clusters", "count"])
            for k in range(1, counts.size):
                if counts[k]:
                    writer.writerow([k, int(counts[k])])
        _write_manifest(os.path.join(outdir, "manifest.json"), "simulate-prior",
                        {"grid": grid_text, "kappa": kappa, "xi": xi,
                         "variant": variant, "iters": iters, "burn_in": burn_in,
                         "thin": thin, "seed": seed})
        click.echo(f"{len(draws)} draws; mean clusters {ks.mean():.3f}")

    _run(body)


@main.command("simulate-data")
@click.option("--scenario", required=True,
              type=click.Choice(["single-regime", "single-regime-missing", "multi-regime"]))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--n-lambda", type=int, default=5, show_default=True,
              help="change-point window half-width (multi-regime)")
@click.option("--sigma2-eps", type=float, default=0.1, show_default=True,
              help="observation variance (multi-regime)")
@click.option("--out", "outdir", required=True, type=click.Path())
def simulate_data_cmd(scenario, seed, n_lambda, sigma2_eps, outdir):
    """Generate a synthetic dataset and write data, design and truth files."""

    def body():
        spec = scenario_by_name(scenario, n_lambda=n_lambda, sigma2_eps=sigma2_eps)
        data, truth = simulate_dataset(spec, seed)
        os.makedirs(outdir, exist_ok=True)
        dataio.write_long_csv(data.values, data.mask, os.path.join(outdir, "data.csv"))
        dataio.write_design_csv(data.design, os.path.join(outdir, "design.csv"))
        with open(os.path.join(outdir, "grid.json"), "w") as fh:
            json.dump(data.topology.to_json_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")
        with open(os.path.join(outdir, "schedule.json"), "w") as fh:
            json.dump(data.schedule.to_json_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")
        missing = [[int(f) // data.n_times + 1, int(f) % data.n_times + 1]
                   for f in data.missing_flat_index()]
        truth_doc = {
            "scenario": spec.name,
            "seed": seed,
            "partitions": [[int(v) + 1 for v in reg.partition.labels]
                           for reg in truth.regimes],
            "beta_star": [[[float(x) for x in row] for row in reg.beta_star]
                          for reg in truth.regimes],
            "u": [[float(x) for x in reg.u] for reg in truth.regimes],
            "tau2": [reg.tau2 for reg in truth.regimes],
            "sigma2_eps": [reg.sigma2_eps for reg in truth.regimes],
            "zeta": [reg.zeta for reg in truth.regimes],
            "tbar": [int(v) for v in truth.tbar],
            "missing": missing,
            "y_mis": [float(v) for v in truth.y_mis],
        }
        with open(os.path.join(outdir, "truth.json"), "w") as fh:
            json.dump(truth_doc, fh, sort_keys=True, indent=1)
            fh.write("\n")
        _write_manifest(os.path.join(outdir, "manifest.json"), "simulate-data",
                        {"scenario": scenario, "seed": seed, "n_lambda": n_lambda,
                         "sigma2_eps": sigma2_eps})
        click.echo(f"wrote scenario {spec.name!r} to {outdir}")

    _run(body)


def _fit_one(args):
    run_cfg, hyper, data, outdir, hashes = args
    chain = run_chain(run_cfg, hyper, data)
    dataio.write_chain(chain, outdir, input_hashes=hashes)
    return outdir, chain.n_draws, chain.elapsed_seconds


@main.command("fit")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "outdir", required=True, type=click.Path())
@click.option("--chains", type=int, default=1, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True,
              help="process-parallel chains; each chain stays single-threaded")
def fit_cmd(data_path, config_path, outdir, chains, workers):
    """Run the Gibbs sampler on a data CSV under a JSON config."""

    def body():
        try:
            with open(config_path) as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: {exc}") from exc
        topo, schedule, (design, design_path), hyper_kwargs, run_cfg = (
            dataio.parse_fit_config(cfg, base_dir=os.path.dirname(config_path) or ".")
        )
        if design is None:
            design = dataio.read_design_csv(design_path)

        table = dataio.read_long_csv(data_path)
        record = None
        if cfg.get("standardize", False):
            table, record = dataio.standardize(table)
        if table.n_cells != topo.n_cells:
            raise DataError(
                f"data has {table.n_cells} cells but the grid is "
                f"{topo.rows}x{topo.cols} = {topo.n_cells}"
            )
        if table.n_times != schedule.n_times:
            raise DataError(
                f"data has {table.n_times} time points (after any padding) but "
                f"the schedule expects T = {schedule.n_times}"
            )
        if design.shape[0] != schedule.n_times:
            raise DataError(
                f"design has {design.shape[0]} rows but the schedule expects "
                f"T = {schedule.n_times}"
            )
        data = dataio.build_dataset(table, topo, schedule, design)
        hyper = dataio.make_hyper(design.shape[1], hyper_kwargs)
        hashes = {
            "data": dataio.file_sha256(data_path),
            "config": dataio.file_sha256(config_path),
        }

        os.makedirs(outdir, exist_ok=True)
        if record is not None:
            with open(os.path.join(outdir, "standardization.json"), "w") as fh:
                json.dump(record.to_json_dict(), fh, sort_keys=True, indent=1)
                fh.write("\n")

        jobs = []
        for c in range(chains):
            sub = outdir if chains == 1 else os.path.join(outdir, f"chain_{c:02d}")
            cfg_c = run_cfg if c == 0 else _reseeded(run_cfg, run_cfg.seed + c)
            jobs.append((cfg_c, hyper, data, sub, hashes))
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_fit_one, jobs))
        else:
            results = [_fit_one(job) for job in jobs]
        for sub, n_draws, elapsed in results:
            click.echo(f"{sub}: {n_draws} draws in {elapsed:.1f}s")

    _run(body)


def _reseeded(run_cfg, seed):
    from dataclasses import replace

    return replace(run_cfg, seed=seed)


@main.command("summarize")
@click.option("--chain", "chaindir", required=True, type=click.Path(exists=True))
@click.option("--out", "outdir", required=True, type=click.Path())
@click.option("--cells", default="", help="comma-separated 1-based cells for fitted bands")
@click.option("--level", type=float, default=0.95, show_default=True)
def summarize_cmd(chaindir, outdir, cells, level):
    """Point-estimate partitions, co-clustering, Rand posteriors, bands, scores."""

    def body():
        chain = dataio.read_chain(chaindir)
        os.makedirs(outdir, exist_ok=True)
        n_regimes = chain.n_regimes

        vi_parts = []
        for r in range(n_regimes):
            vi_parts.append(summaries.vi_point_estimate(chain.partitions_for_regime(r)))
        with open(os.path.join(outdir, "vi_partitions.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["regime"] + [f"s_{i + 1}" for i in range(vi_parts[0].n_cells)])
            for r, p in enumerate(vi_parts):
                writer.writerow([r + 1] + [int(v) + 1 for v in p.labels])

        for r in range(n_regimes):
            co = summaries.coclustering(chain.partitions_for_regime(r))
            np.savetxt(os.path.join(outdir, f"coclustering_regime{r + 1}.csv"),
                       co, delimiter=",", fmt="%.17g")

        if n_regimes > 1:
            with open(os.path.join(outdir, "rand_posterior.csv"), "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["regime_i", "regime_j", "draw", "rand_index"])
                for i in range(n_regimes):
                    for j in range(i + 1, n_regimes):
                        seq = summaries.rand_index_posterior(
                            chain.partitions_for_regime(i), chain.partitions_for_regime(j)
                        )
                        for d, v in enumerate(seq):
                            writer.writerow([i + 1, j + 1, d + 1, dataio.np_format(v)])

        for cell_text in [c for c in cells.split(",") if c.strip()]:
            cell = int(cell_text) - 1
            mean, lo, hi = summaries.fitted_band(chain, cell, level=level)
            with open(os.path.join(outdir, f"band_cell{cell + 1}.csv"), "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["time", "mean", "lower", "upper"])
                for t in range(mean.size):
                    writer.writerow([t + 1, dataio.np_format(mean[t]),
                                     dataio.np_format(lo[t]), dataio.np_format(hi[t])])

        scores = summaries.fit_scores(chain)
        doc = {
            "lpml": scores.lpml,
            "waic": scores.waic,
            "per_regime_K_mode": summaries.modal_cluster_counts(chain),
            "cpo_estimator": "harmonic-mean",
        }
        with open(os.path.join(outdir, "scores.json"), "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")
        _write_manifest(os.path.join(outdir, "manifest.json"), "summarize",
                        {"chain": str(chaindir), "cells": cells, "level": level},
                        input_hashes={"chain_manifest": dataio.file_sha256(
                            os.path.join(chaindir, "manifest.json"))})
        click.echo(f"lpml={scores.lpml:.3f} waic={scores.waic:.3f}")

    _run(body)


@main.command("compare")
@click.option("--chains", "chaindirs", required=True, multiple=True,
              type=click.Path(exists=True))
@click.option("--out", "outpath", required=True, type=click.Path())
def compare_cmd(chaindirs, outpath):
    """Tabulate modal cluster counts, LPML and WAIC across chain directories."""

    def body():
        rows = []
        max_regimes = 0
        for d in chaindirs:
            chain = dataio.read_chain(d)
            scores = summaries.fit_scores(chain)
            modes = summaries.modal_cluster_counts(chain)
            if chain.config.model_variant == "parametric":
                modes = ["" for _ in modes]
            rows.append((d, chain.config.model_variant, modes,
                         scores.lpml, scores.waic))
            max_regimes = max(max_regimes, len(modes))
        with open(outpath, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["chain", "model_variant"]
                            + [f"K_mode_regime{r + 1}" for r in range(max_regimes)]
                            + ["lpml", "waic"])
            for d, variant, modes, lp, wa in rows:
                padded = list(modes) + [""] * (max_regimes - len(modes))
                writer.writerow([d, variant] + padded
                                + [dataio.np_format(lp), dataio.np_format(wa)])
        _write_manifest(f"{outpath}.manifest.json", "compare",
                        {"chains": [str(d) for d in chaindirs]},
                        input_hashes={str(d): dataio.file_sha256(
                            os.path.join(d, "manifest.json")) for d in chaindirs})
        click.echo(f"wrote {outpath}")

    _run(body)


if __name__ == "__main__":
    main()
