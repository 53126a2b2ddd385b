"""Ingestion, standardization, configuration, and chain persistence.

External formats (all time and cell indices 1-based):

* data CSV: columns ``cell_id,time,value,missing``; a missing entry has
  ``missing=1`` and an empty (or ignored) value field.
* design CSV: ``time,x1,...,xK``.
* chain directory: one CSV per parameter block, ``loglik.npy``, the design,
  grid and schedule descriptors, and ``manifest.json`` carrying the full run
  configuration and content hashes of the inputs (timing is kept out of the
  manifest so reruns are byte-identical).
"""

import csv
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .grid import build_grid
from .model import Dataset, Hyperparameters, elicit_inverse_gamma
from .partitions import Partition
from .sampler import ChainOutput, SamplerConfig
from .timeline import HarmonicDesign, RegimeSchedule

__all__ = [
    "RawSeriesTable",
    "StandardizationRecord",
    "read_long_csv",
    "write_long_csv",
    "standardize",
    "build_dataset",
    "parse_fit_config",
    "partition_to_json_dict",
    "partition_from_json_dict",
    "write_chain",
    "read_chain",
    "file_sha256",
]


def _fmt(x):
    return repr(float(x))


def np_format(x):
    return _fmt(x)


@dataclass
class RawSeriesTable:
    """Wide value/mask matrices assembled from long-format records."""

    values: np.ndarray
    mask: np.ndarray

    @property
    def n_cells(self):
        return self.values.shape[0]

    @property
    def n_times(self):
        return self.values.shape[1]


@dataclass
class StandardizationRecord:
    """Invertible transform ``v -> (log(v + shift) - mean) / sd`` fitted on
    the observed entries; ``shift`` is the smallest nonzero raw value."""

    shift: float
    mean: float
    sd: float

    def apply(self, values):
        return (np.log(values + self.shift) - self.mean) / self.sd

    def invert(self, values):
        return np.exp(values * self.sd + self.mean) - self.shift

    def to_json_dict(self):
        return {"shift": self.shift, "mean": self.mean, "sd": self.sd}


def read_long_csv(path):
    """Read a long-format data CSV into wide value/mask matrices.

    Raises DataError with the offending line number on malformed input.
    """
    records = {}
    max_cell = 0
    max_time = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:4]] != ["cell_id", "time", "value", "missing"]:
            raise DataError(f"{path}: line 1: expected header cell_id,time,value,missing")
        for ln, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) < 4:
                raise DataError(f"{path}: line {ln}: expected 4 fields, got {len(row)}")
            try:
                cell = int(row[0])
                t = int(row[1])
                missing = int(row[3])
            except ValueError as exc:
                raise DataError(f"{path}: line {ln}: {exc}") from exc
            if cell < 1 or t < 1:
                raise DataError(f"{path}: line {ln}: cell_id and time must be >= 1")
            if missing not in (0, 1):
                raise DataError(f"{path}: line {ln}: missing flag must be 0 or 1")
            if missing:
                value = np.nan
            else:
                try:
                    value = float(row[2])
                except ValueError as exc:
                    raise DataError(f"{path}: line {ln}: bad value {row[2]!r}") from exc
            key = (cell, t)
            if key in records:
                raise DataError(f"{path}: line {ln}: duplicate (cell_id, time) = {key}")
            records[key] = value
            max_cell = max(max_cell, cell)
            max_time = max(max_time, t)
    if not records:
        raise DataError(f"{path}: no data records")
    values = np.full((max_cell, max_time), np.nan)
    mask = np.ones((max_cell, max_time), dtype=bool)
    for (cell, t), v in records.items():
        if not np.isnan(v):
            values[cell - 1, t - 1] = v
            mask[cell - 1, t - 1] = False
    n_given = len(records)
    if n_given != max_cell * max_time:
        raise DataError(
            f"{path}: expected {max_cell * max_time} records for a "
            f"{max_cell} x {max_time} table, got {n_given}"
        )
    return RawSeriesTable(values=values, mask=mask)


def write_long_csv(values, mask, path):
    values = np.asarray(values)
    mask = np.asarray(mask, dtype=bool)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell_id", "time", "value", "missing"])
        for i in range(values.shape[0]):
            for t in range(values.shape[1]):
                if mask[i, t]:
                    writer.writerow([i + 1, t + 1, "", 1])
                else:
                    writer.writerow([i + 1, t + 1, _fmt(values[i, t]), 0])


def standardize(table):
    """Log-shift-standardize the observed entries of a raw table.

    The shift is the smallest observed nonzero value (zeros sit below the
    detection threshold rather than meaning no signal, so the log transform
    must not blow up on them).  An odd-length series is padded to even
    length with one fully-missing trailing time point.

    Returns the transformed table and the invertible record.
    """
    values = table.values.copy()
    mask = table.mask.copy()
    obs = values[~mask]
    if obs.size == 0:
        raise DataError("cannot standardize an all-missing table")
    nonzero = obs[obs != 0]
    if nonzero.size == 0:
        raise DataError("cannot standardize an all-zero table")
    shift = float(np.abs(nonzero).min())
    logged = np.log(obs + shift)
    mean = float(logged.mean())
    sd = float(logged.std())
    if sd == 0.0:
        raise DataError("observed values are constant; standardization is degenerate")
    record = StandardizationRecord(shift=shift, mean=mean, sd=sd)
    out = np.full_like(values, np.nan)
    out[~mask] = (logged - mean) / sd
    if values.shape[1] % 2 == 1:
        pad_v = np.full((values.shape[0], 1), np.nan)
        out = np.hstack([out, pad_v])
        mask = np.hstack([mask, np.ones((values.shape[0], 1), dtype=bool)])
    return RawSeriesTable(values=out, mask=mask), record


def build_dataset(table, topology, schedule, design):
    return Dataset(values=table.values, mask=table.mask, design=design,
                   topology=topology, schedule=schedule)


def partition_to_json_dict(partition):
    """JSON form of a partition: 1-based labels under a "labels" key."""
    return {"labels": [int(v) + 1 for v in partition.labels]}


def partition_from_json_dict(d):
    try:
        labels = np.asarray(d["labels"], dtype=np.int64) - 1
    except KeyError as exc:
        raise DataError("partition JSON needs a 'labels' key") from exc
    return Partition(labels)


# ---------------------------------------------------------------------------
# Fit configuration
# ---------------------------------------------------------------------------

def _ig_pair(spec, name):
    if "a" in spec and "b" in spec:
        return float(spec["a"]), float(spec["b"])
    if "mean" in spec and "variance" in spec:
        return elicit_inverse_gamma(float(spec["mean"]), float(spec["variance"]))
    raise ConfigError(f"prior {name!r} needs either a/b or mean/variance")


def parse_fit_config(cfg, base_dir="."):
    """Turn a fit-config dict into (topology, schedule, design, hyper, run).

    ``design`` is either a matrix (harmonic designs are expanded here) or
    None when the config points at a CSV, in which case the second element
    of the returned design tuple is the path.
    """
    try:
        grid_cfg = cfg["grid"]
        topology = build_grid(int(grid_cfg["rows"]), int(grid_cfg["cols"]))
    except KeyError as exc:
        raise ConfigError(f"fit config is missing {exc}") from exc

    if "schedule" not in cfg:
        raise ConfigError("fit config is missing 'schedule' (need at least T)")
    schedule = RegimeSchedule.from_json_dict(cfg["schedule"])

    design_cfg = cfg.get("design", {})
    design = None
    design_path = None
    if "csv" in design_cfg:
        design_path = os.path.join(base_dir, design_cfg["csv"])
    elif "frequencies" in design_cfg:
        design = HarmonicDesign(schedule.n_times,
                                tuple(design_cfg["frequencies"])).design_matrix()
    elif "periods" in design_cfg:
        design = HarmonicDesign.from_periods(
            schedule.n_times, tuple(design_cfg["periods"])).design_matrix()
    else:
        raise ConfigError("fit config 'design' needs csv, frequencies or periods")

    model_cfg = cfg.get("model", {})
    variant = model_cfg.get("variant", "full")
    kappa = float(model_cfg.get("kappa", 1.0))
    xi = float(model_cfg.get("xi", 0.0))
    if variant == "boundary":
        kappa = 1.0
    if variant == "dp":
        xi = 0.0

    priors = cfg.get("priors", {})
    a_tau, b_tau = _ig_pair(priors.get("tau2", {"mean": 1.0, "variance": 0.1}), "tau2")
    a_eps, b_eps = _ig_pair(priors.get("sigma2_eps", {"mean": 1.0, "variance": 0.1}),
                            "sigma2_eps")
    a_sb, b_sb = _ig_pair(priors.get("sigma2_beta", {"mean": 1.0, "variance": 0.1}),
                          "sigma2_beta")

    zeta_cfg = cfg.get("zeta", {"fixed": 0.95})
    zeta_prior = None
    zeta = 0.95
    zeta_step = 0.8
    if "beta" in zeta_cfg:
        zeta_prior = (float(zeta_cfg["beta"][0]), float(zeta_cfg["beta"][1]))
        zeta_step = float(zeta_cfg.get("step", 0.8))
    elif "fixed" in zeta_cfg:
        zeta = float(zeta_cfg["fixed"])
    else:
        raise ConfigError("zeta config needs 'fixed' or 'beta'")

    run_cfg = cfg.get("run", {})
    try:
        iterations = int(run_cfg["iterations"])
    except KeyError as exc:
        raise ConfigError("fit config run section needs 'iterations'") from exc
    run = SamplerConfig(
        iterations=iterations,
        burn_in=int(run_cfg.get("burn_in", 0)),
        thinning=int(run_cfg.get("thinning", 1)),
        allocation=run_cfg.get("allocation", "collapsed"),
        allocation_prior=run_cfg.get("allocation_prior", "exact"),
        model_variant=variant,
        changepoints=run_cfg.get("changepoints", "fixed"),
        changepoint_update=run_cfg.get("changepoint_update", "marginalized"),
        init_partition=run_cfg.get("init_partition", "one"),
        zeta_step=zeta_step,
        seed=int(run_cfg.get("seed", 0)),
        store_loglik=bool(run_cfg.get("store_loglik", True)),
    )
    run.validate()

    hyper_kwargs = dict(
        a_sigma_beta=a_sb, b_sigma_beta=b_sb,
        a_tau2=a_tau, b_tau2=b_tau,
        a_sigma_eps=a_eps, b_sigma_eps=b_eps,
        kappa=kappa, xi=xi, zeta=zeta, zeta_prior=zeta_prior,
    )
    if "m_beta" in priors:
        hyper_kwargs["m_beta"] = np.asarray(priors["m_beta"], dtype=float)
    return topology, schedule, (design, design_path), hyper_kwargs, run


def make_hyper(n_features, hyper_kwargs):
    kwargs = dict(hyper_kwargs)
    m_beta = kwargs.pop("m_beta", None)
    return Hyperparameters(n_features=n_features, m_beta=m_beta, **kwargs)


# ---------------------------------------------------------------------------
# Design matrices
# ---------------------------------------------------------------------------

def write_design_csv(design, path):
    design = np.asarray(design)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + [f"x{k + 1}" for k in range(design.shape[1])])
        for t in range(design.shape[0]):
            writer.writerow([t + 1] + [_fmt(v) for v in design[t]])


def read_design_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip() != "time":
            raise DataError(f"{path}: line 1: expected a 'time,x1,...' header")
        rows = []
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}: line {ln}: {exc}") from exc
            rows.append((t, vals))
    rows.sort(key=lambda r: r[0])
    if [r[0] for r in rows] != list(range(1, len(rows) + 1)):
        raise DataError(f"{path}: time column must cover 1..T exactly once")
    return np.array([r[1] for r in rows])


# ---------------------------------------------------------------------------
# Chain persistence
# ---------------------------------------------------------------------------

def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_chain(chain, outdir, input_hashes=None):
    """Persist a chain as one CSV per parameter block plus a manifest.

    Wall-clock metadata goes to ``timing.txt`` (excluded from the manifest
    so identical-seed reruns produce byte-identical artifacts).
    """
    os.makedirs(outdir, exist_ok=True)
    n_cells = chain.u.shape[2]
    K = chain.mu_beta.shape[2]

    _write_rows(
        os.path.join(outdir, "partitions.csv"),
        ["draw", "regime"] + [f"s_{i + 1}" for i in range(n_cells)],
        ([d + 1, r + 1] + [int(v) + 1 for v in chain.partitions[d][r].labels]
         for d in range(chain.n_draws) for r in range(chain.n_regimes)),
    )
    _write_rows(
        os.path.join(outdir, "beta_star.csv"),
        ["draw", "regime", "cluster"] + [f"b_{k + 1}" for k in range(K)],
        ([d + 1, r + 1, j + 1] + [_fmt(v) for v in chain.beta_star[d][r][j]]
         for d in range(chain.n_draws) for r in range(chain.n_regimes)
         for j in range(chain.beta_star[d][r].shape[0])),
    )
    _write_rows(
        os.path.join(outdir, "u.csv"),
        ["draw", "regime"] + [f"u_{i + 1}" for i in range(n_cells)],
        ([d + 1, r + 1] + [_fmt(v) for v in chain.u[d, r]]
         for d in range(chain.n_draws) for r in range(chain.n_regimes)),
    )
    for name, arr in (("tau2", chain.tau2), ("sigma2_eps", chain.sigma2_eps),
                      ("zeta", chain.zeta)):
        _write_rows(
            os.path.join(outdir, f"{name}.csv"),
            ["draw", "regime", "value"],
            ([d + 1, r + 1, _fmt(arr[d, r])]
             for d in range(chain.n_draws) for r in range(chain.n_regimes)),
        )
    for name, arr in (("mu_beta", chain.mu_beta), ("sigma2_beta", chain.sigma2_beta)):
        _write_rows(
            os.path.join(outdir, f"{name}.csv"),
            ["draw", "regime"] + [f"v_{k + 1}" for k in range(K)],
            ([d + 1, r + 1] + [_fmt(v) for v in arr[d, r]]
             for d in range(chain.n_draws) for r in range(chain.n_regimes)),
        )
    _write_rows(
        os.path.join(outdir, "tbar.csv"),
        ["draw"] + [f"tbar_{m}" for m in range(chain.tbar.shape[1])],
        ([d + 1] + [int(v) for v in chain.tbar[d]] for d in range(chain.n_draws)),
    )
    if chain.y_mis.shape[1]:
        _write_rows(
            os.path.join(outdir, "y_mis.csv"),
            ["draw"] + [f"m_{j + 1}" for j in range(chain.y_mis.shape[1])],
            ([d + 1] + [_fmt(v) for v in chain.y_mis[d]]
             for d in range(chain.n_draws)),
        )
    n_times = chain.mask.shape[1]
    _write_rows(
        os.path.join(outdir, "observed_index.csv"),
        ["cell_id", "time"],
        ([int(f) // n_times + 1, int(f) % n_times + 1] for f in chain.observed_index),
    )
    _write_rows(
        os.path.join(outdir, "missing_index.csv"),
        ["cell_id", "time"],
        ([int(f) // n_times + 1, int(f) % n_times + 1] for f in chain.missing_index),
    )
    if chain.loglik is not None:
        np.save(os.path.join(outdir, "loglik.npy"), chain.loglik)
    write_design_csv(chain.design, os.path.join(outdir, "design.csv"))
    with open(os.path.join(outdir, "schedule.json"), "w") as fh:
        json.dump(chain.schedule.to_json_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(os.path.join(outdir, "grid.json"), "w") as fh:
        json.dump({"n_cells": int(n_cells), "n_times": int(n_times)}, fh,
                  sort_keys=True, indent=1)
        fh.write("\n")

    cfg = chain.config
    manifest = {
        "package": "arealclust-0.1.0",
        "seed": cfg.seed,
        "iterations": cfg.iterations,
        "burn_in": cfg.burn_in,
        "thinning": cfg.thinning,
        "allocation": cfg.allocation,
        "allocation_prior": cfg.allocation_prior,
        "model_variant": cfg.model_variant,
        "changepoints": cfg.changepoints,
        "changepoint_update": cfg.changepoint_update,
        "init_partition": cfg.init_partition,
        "zeta_step": cfg.zeta_step,
        "n_draws": chain.n_draws,
        "zeta_accept": [float(a) for a in chain.zeta_accept],
        "input_hashes": input_hashes or {},
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(os.path.join(outdir, "timing.txt"), "w") as fh:
        fh.write(f"elapsed_seconds={chain.elapsed_seconds:.3f}\n")


def _read_table(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    return header, rows


def read_chain(chaindir):
    """Rebuild a ChainOutput from a chain directory written by write_chain."""
    with open(os.path.join(chaindir, "manifest.json")) as fh:
        manifest = json.load(fh)
    with open(os.path.join(chaindir, "schedule.json")) as fh:
        schedule = RegimeSchedule.from_json_dict(json.load(fh))
    with open(os.path.join(chaindir, "grid.json")) as fh:
        dims = json.load(fh)
    n_cells, n_times = int(dims["n_cells"]), int(dims["n_times"])
    design = read_design_csv(os.path.join(chaindir, "design.csv"))

    _, rows = _read_table(os.path.join(chaindir, "missing_index.csv"))
    missing_flat = np.array(
        sorted((int(c) - 1) * n_times + int(t) - 1 for c, t in rows), dtype=np.int64
    )
    mask = np.zeros(n_cells * n_times, dtype=bool)
    mask[missing_flat] = True
    mask = mask.reshape(n_cells, n_times)
    observed_flat = np.flatnonzero(~mask.ravel())

    _, rows = _read_table(os.path.join(chaindir, "partitions.csv"))
    n_regimes = schedule.n_regimes
    by_draw = {}
    for row in rows:
        d, r = int(row[0]) - 1, int(row[1]) - 1
        by_draw.setdefault(d, {})[r] = Partition(np.array(row[2:], dtype=np.int64) - 1)
    n_draws = len(by_draw)
    partitions = [[by_draw[d][r] for r in range(n_regimes)] for d in range(n_draws)]

    _, rows = _read_table(os.path.join(chaindir, "beta_star.csv"))
    beta_map = {}
    for row in rows:
        d, r, j = int(row[0]) - 1, int(row[1]) - 1, int(row[2]) - 1
        beta_map.setdefault((d, r), {})[j] = np.array(row[3:], dtype=float)
    beta_star = [
        [np.array([beta_map[(d, r)][j] for j in range(len(beta_map[(d, r)]))])
         for r in range(n_regimes)]
        for d in range(n_draws)
    ]

    def scalar_block(name):
        _, rows = _read_table(os.path.join(chaindir, f"{name}.csv"))
        out = np.empty((n_draws, n_regimes))
        for row in rows:
            out[int(row[0]) - 1, int(row[1]) - 1] = float(row[2])
        return out

    def vector_block(name, width):
        _, rows = _read_table(os.path.join(chaindir, f"{name}.csv"))
        out = np.empty((n_draws, n_regimes, width))
        for row in rows:
            out[int(row[0]) - 1, int(row[1]) - 1] = np.array(row[2:], dtype=float)
        return out

    u = vector_block("u", n_cells)
    K = design.shape[1]
    mu_beta = vector_block("mu_beta", K)
    sigma2_beta = vector_block("sigma2_beta", K)

    _, rows = _read_table(os.path.join(chaindir, "tbar.csv"))
    tbar = np.empty((n_draws, schedule.n_intervals + 1), dtype=np.int64)
    for row in rows:
        tbar[int(row[0]) - 1] = np.array(row[1:], dtype=np.int64)

    y_path = os.path.join(chaindir, "y_mis.csv")
    if os.path.exists(y_path):
        _, rows = _read_table(y_path)
        y_mis = np.empty((n_draws, len(rows[0]) - 1))
        for row in rows:
            y_mis[int(row[0]) - 1] = np.array(row[1:], dtype=float)
    else:
        y_mis = np.zeros((n_draws, 0))

    ll_path = os.path.join(chaindir, "loglik.npy")
    loglik = np.load(ll_path) if os.path.exists(ll_path) else None

    config = SamplerConfig(
        iterations=int(manifest["iterations"]),
        burn_in=int(manifest["burn_in"]),
        thinning=int(manifest["thinning"]),
        allocation=manifest["allocation"],
        allocation_prior=manifest["allocation_prior"],
        model_variant=manifest["model_variant"],
        changepoints=manifest["changepoints"],
        changepoint_update=manifest["changepoint_update"],
        init_partition=manifest["init_partition"],
        zeta_step=float(manifest["zeta_step"]),
        seed=int(manifest["seed"]),
        store_loglik=loglik is not None,
    )
    return ChainOutput(
        config=config,
        schedule=schedule,
        design=design,
        mask=mask,
        observed_index=observed_flat,
        missing_index=missing_flat,
        partitions=partitions,
        beta_star=beta_star,
        u=u,
        tau2=scalar_block("tau2"),
        sigma2_eps=scalar_block("sigma2_eps"),
        zeta=scalar_block("zeta"),
        mu_beta=mu_beta,
        sigma2_beta=sigma2_beta,
        tbar=tbar,
        y_mis=y_mis,
        loglik=loglik,
        zeta_accept=np.array(manifest.get("zeta_accept", [])),
        elapsed_seconds=0.0,
    )
