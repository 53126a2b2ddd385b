"""Model state, hyperparameters, likelihood and prior densities, data generators.

The observation model is, per cell ``i`` and time ``t`` with active regime
``r = r_t``,

    y_it = x_t' beta*_{s_i^r, r} + u_{i r} + eps_it,   eps_it ~ N(0, sigma2_eps_r)

with one partition, one coefficient table, one spatial-effect vector and one
pair of variances per regime, plus regime-level hyperparameters
``(mu_beta_r, Sigma_beta_r)`` for the coefficient base distribution.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from .errors import ConfigError, DataError
from .grid import build_grid
from .partitions import Partition, PriorSpec, log_prior_unnormalized
from .timeline import HarmonicDesign, RegimeSchedule

__all__ = [
    "Hyperparameters",
    "Dataset",
    "RegimeState",
    "ModelState",
    "ScenarioSpec",
    "elicit_inverse_gamma",
    "log_likelihood",
    "log_prior",
    "simulate_dataset",
    "sample_observations",
    "single_regime_scenario",
    "multi_regime_scenario",
    "scenario_by_name",
]

LOG_2PI = float(np.log(2.0 * np.pi))


def elicit_inverse_gamma(mean, variance):
    """Shape/rate pair of the inverse-Gamma with the requested moments.

    Solves ``mean = b / (a - 1)`` and ``variance = b^2 / ((a-1)^2 (a-2))``,
    giving ``a = mean^2 / variance + 2``; the shape always exceeds 2 so both
    moments exist.
    """
    if mean <= 0 or variance <= 0:
        raise ConfigError("inverse-Gamma elicitation needs positive mean and variance")
    a = mean * mean / variance + 2.0
    b = mean * (a - 1.0)
    return a, b


def invgamma_logpdf(x, a, b):
    return a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(x) - b / x


def beta_logpdf(x, a, b):
    if not 0.0 < x < 1.0:
        return -np.inf
    return (
        gammaln(a + b) - gammaln(a) - gammaln(b)
        + (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x)
    )


def car_logpdf(u, tau2, zeta, topology):
    """Log-density of ``u ~ N(0, tau2 * Q(zeta)^-1)`` on the topology.

    Improper at ``zeta = 1`` (the precision is singular), in which case
    ``-inf`` is returned.
    """
    lam, vec = topology.laplacian_eigh()
    q = zeta * lam + (1.0 - zeta)
    if q.min() <= 0.0:
        return -np.inf
    w = vec.T @ u
    quad = float(np.sum(w * w * q))
    n = topology.n_cells
    return 0.5 * np.log(q).sum() - 0.5 * n * np.log(tau2) - 0.5 * n * LOG_2PI - quad / (2.0 * tau2)


@dataclass
class Hyperparameters:
    """Prior constants for every regime.

    All inverse-Gamma pairs use the ``mean = b / (a - 1)`` parameterization.
    ``zeta_prior`` set to a ``(a, b)`` Beta pair makes the spatial-dependence
    parameter random; ``None`` keeps it fixed at ``zeta``.
    """

    n_features: int
    m_beta: np.ndarray = None
    a_sigma_beta: float = 12.0
    b_sigma_beta: float = 11.0
    a_tau2: float = 12.0
    b_tau2: float = 11.0
    a_sigma_eps: float = 12.0
    b_sigma_eps: float = 11.0
    kappa: float = 1.0
    xi: float = 0.0
    zeta: float = 0.95
    zeta_prior: tuple = None

    def __post_init__(self):
        if self.m_beta is None:
            self.m_beta = np.zeros(self.n_features)
        self.m_beta = np.asarray(self.m_beta, dtype=float)
        if self.m_beta.shape != (self.n_features,):
            raise ConfigError("m_beta must have one entry per design column")
        for name in ("a_sigma_beta", "b_sigma_beta", "a_tau2", "b_tau2",
                     "a_sigma_eps", "b_sigma_eps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.kappa <= 0 or self.xi < 0:
            raise ConfigError("kappa must be positive and xi nonnegative")
        if self.zeta_prior is not None:
            a, b = self.zeta_prior
            if a <= 0 or b <= 0:
                raise ConfigError("zeta Beta prior parameters must be positive")
            self.zeta_prior = (float(a), float(b))
        elif not 0.0 <= self.zeta <= 1.0:
            raise ConfigError("fixed zeta must lie in [0, 1]")

    def partition_prior(self, variant="full"):
        if variant in ("full", "parametric"):
            return PriorSpec(self.kappa, self.xi, "full")
        if variant == "dp":
            return PriorSpec(self.kappa, 0.0, "dp")
        if variant == "boundary":
            return PriorSpec(1.0, self.xi, "boundary")
        raise ConfigError(f"unknown model variant {variant!r}")


@dataclass
class Dataset:
    """Observed grid series: an ``(n_cells, n_times)`` value array with a
    missingness mask, the design matrix and the spatial/temporal structure.

    Missing entries are NaN in ``values`` and True in ``mask``; the flat
    ordering of missing entries (row-major over cells then times) is the
    storage order of imputations everywhere.
    """

    values: np.ndarray
    mask: np.ndarray
    design: np.ndarray
    topology: object
    schedule: RegimeSchedule

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).copy()
        self.mask = np.asarray(self.mask, dtype=bool)
        self.design = np.asarray(self.design, dtype=float)
        I, T = self.topology.n_cells, self.schedule.n_times
        if self.values.shape != (I, T):
            raise DataError(
                f"values must be {I} cells x {T} times, got {self.values.shape}"
            )
        if self.mask.shape != (I, T):
            raise DataError("mask shape must match values")
        if self.design.ndim != 2 or self.design.shape[0] != T:
            raise DataError(f"design must have {T} rows")
        if not np.isfinite(self.values[~self.mask]).all():
            raise DataError("observed entries must be finite")
        self.values[self.mask] = np.nan

    @property
    def n_cells(self):
        return self.values.shape[0]

    @property
    def n_times(self):
        return self.values.shape[1]

    @property
    def n_features(self):
        return self.design.shape[1]

    @property
    def n_missing(self):
        return int(self.mask.sum())

    def missing_flat_index(self):
        return np.flatnonzero(self.mask.ravel())

    def observed_flat_index(self):
        return np.flatnonzero(~self.mask.ravel())


@dataclass
class RegimeState:
    partition: Partition
    beta_star: np.ndarray  # (n_clusters, n_features)
    u: np.ndarray          # (n_cells,)
    tau2: float
    sigma2_eps: float
    zeta: float
    mu_beta: np.ndarray    # (n_features,)
    sigma2_beta: np.ndarray  # diagonal of Sigma_beta, (n_features,)

    def validate(self):
        if self.beta_star.shape[0] != self.partition.n_clusters:
            raise ConfigError("one coefficient row per cluster is required")
        if self.tau2 <= 0 or self.sigma2_eps <= 0 or (self.sigma2_beta <= 0).any():
            raise ConfigError("variances must be strictly positive")
        if not 0.0 <= self.zeta <= 1.0:
            raise ConfigError("zeta must lie in [0, 1]")


@dataclass
class ModelState:
    """Full parameter vector: one RegimeState per regime, the realized
    change-points and the current imputations of missing responses."""

    regimes: list
    tbar: np.ndarray
    y_mis: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_regimes(self):
        return len(self.regimes)

    def completed_values(self, data):
        """Data matrix with missing entries replaced by current imputations."""
        out = data.values.copy()
        if data.n_missing:
            if self.y_mis.shape != (data.n_missing,):
                raise ConfigError("y_mis length must match the number of missing entries")
            out.ravel()[data.missing_flat_index()] = self.y_mis
        return out

    def cell_coefficients(self, r):
        """Per-cell coefficient matrix ``beta*_{s_i, r}`` of shape (I, K)."""
        reg = self.regimes[r]
        return reg.beta_star[reg.partition.labels]


def fitted_matrix(state, data):
    """Mean surface ``x_t' beta*_{s_i^{r_t}, r_t} + u_{i r_t}`` as (I, T)."""
    out = np.empty_like(data.values)
    ridx = data.schedule.regime_indices(state.tbar)
    for r in range(state.n_regimes):
        cols = np.flatnonzero(ridx == r)
        if cols.size == 0:
            continue
        B = state.cell_coefficients(r)
        out[:, cols] = B @ data.design[cols].T + state.regimes[r].u[:, None]
    return out


def observation_logpdf_matrix(state, data, values=None):
    """Per-entry Gaussian log-density of the (completed) data, as (I, T)."""
    if values is None:
        values = state.completed_values(data)
    fitted = fitted_matrix(state, data)
    ridx = data.schedule.regime_indices(state.tbar)
    s2 = np.array([state.regimes[r].sigma2_eps for r in range(state.n_regimes)])
    col_var = s2[ridx]
    resid2 = (values - fitted) ** 2
    return -0.5 * (LOG_2PI + np.log(col_var)[None, :]) - resid2 / (2.0 * col_var[None, :])


def log_likelihood(state, data, include_missing=False):
    """Gaussian log-likelihood summed over observed entries.

    With ``include_missing=True`` the current imputations contribute their
    own likelihood terms as well.
    """
    ll = observation_logpdf_matrix(state, data)
    if include_missing:
        return float(ll.sum())
    return float(ll[~data.mask].sum())


def log_prior(state, hyper, data, partition_prior=None):
    """Joint log-prior of the full state.

    The partition factor is the unnormalized cohesion (its normalizing
    constant is intractable beyond enumeration scale and cancels in every
    conditional this package computes).  Change-points outside their
    supports give ``-inf``.
    """
    topo = data.topology
    sched = data.schedule
    total = 0.0
    for reg in state.regimes:
        reg.validate()
        total += car_logpdf(reg.u, reg.tau2, reg.zeta, topo)
        for l in range(hyper.n_features):
            s2 = reg.sigma2_beta[l]
            dev = reg.beta_star[:, l] - reg.mu_beta[l]
            total += -0.5 * (LOG_2PI + np.log(s2)) * dev.size - (dev ** 2).sum() / (2 * s2)
            md = reg.mu_beta[l] - hyper.m_beta[l]
            total += -0.5 * (LOG_2PI + np.log(s2)) - md * md / (2 * s2)
            total += invgamma_logpdf(s2, hyper.a_sigma_beta, hyper.b_sigma_beta)
        if partition_prior is not None:
            total += log_prior_unnormalized(reg.partition, partition_prior, topo)
        total += invgamma_logpdf(reg.tau2, hyper.a_tau2, hyper.b_tau2)
        total += invgamma_logpdf(reg.sigma2_eps, hyper.a_sigma_eps, hyper.b_sigma_eps)
        if hyper.zeta_prior is not None:
            total += beta_logpdf(reg.zeta, *hyper.zeta_prior)
    for m in range(1, sched.n_intervals):
        support = sched.changepoint_support(m)
        if state.tbar[m] < support[0] or state.tbar[m] > support[-1]:
            return -np.inf
        total -= np.log(support.size)
    return float(total)


def sample_car(tau2, zeta, topology, rng):
    """Draw ``u ~ N(0, tau2 * Q(zeta)^-1)`` through the Laplacian eigenbasis."""
    lam, vec = topology.laplacian_eigh()
    q = zeta * lam + (1.0 - zeta)
    if q.min() <= 0.0:
        raise ConfigError("the spatial prior is improper at zeta = 1; use zeta < 1")
    z = rng.standard_normal(topology.n_cells)
    return vec @ (z * np.sqrt(tau2 / q))


def sample_observations(state, data, rng):
    """Fresh data matrix drawn from the likelihood at the current state."""
    fitted = fitted_matrix(state, data)
    ridx = data.schedule.regime_indices(state.tbar)
    s2 = np.array([state.regimes[r].sigma2_eps for r in range(state.n_regimes)])
    sd = np.sqrt(s2[ridx])
    return fitted + rng.standard_normal(fitted.shape) * sd[None, :]


# ---------------------------------------------------------------------------
# Synthetic-data scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to generate one synthetic dataset with known truth."""

    name: str
    rows: int
    cols: int
    n_times: int
    partitions: tuple            # per-regime 0-based label arrays
    schedule: RegimeSchedule
    design_kind: str = "gaussian"   # "gaussian" draws x_t ~ N(t/T, 1) per column
    n_features: int = 5
    periods: tuple = ()
    beta_scale: float = 2.5
    tau2: tuple = (1.0,)
    sigma2_eps: tuple = (0.5,)
    zeta: tuple = (0.9,)
    missing_cells: tuple = ()
    missing_times: tuple = ()    # 1-based whole time points
    n_missing_points: int = 0


def _banded_partition(rows, cols, col_bands):
    labels = np.empty(rows * cols, dtype=np.int64)
    for c in range(cols):
        lab = next(j for j, (lo, hi) in enumerate(col_bands) if lo <= c <= hi)
        labels[c * rows:(c + 1) * rows] = lab
    return labels


def single_regime_scenario(missing=False):
    """One regime, 12 x 10 grid, T = 100, three clusters in vertical bands
    with one cell of each of the two adjacent bands swapped into the other
    (mutual contamination).  Truth: tau2 = 1, sigma2_eps = 0.5, zeta = 0.9,
    coefficients drawn from N(0, 2.5 I).
    """
    rows, cols = 12, 10
    labels = _banded_partition(rows, cols, [(0, 3), (4, 7), (8, 9)])
    labels[1 * rows + 5] = 1   # band-0 interior cell carrying label 1
    labels[6 * rows + 5] = 0   # band-1 interior cell carrying label 0
    name = "single-regime-missing" if missing else "single-regime"
    return ScenarioSpec(
        name=name,
        rows=rows,
        cols=cols,
        n_times=100,
        partitions=(labels,),
        schedule=RegimeSchedule(n_times=100),
        design_kind="gaussian",
        n_features=5,
        tau2=(1.0,),
        sigma2_eps=(0.5,),
        zeta=(0.9,),
        missing_cells=(1 * rows + 5, 6 * rows + 5, 8 * rows + 2) if missing else (),
        missing_times=(10, 35, 60, 85) if missing else (),
        n_missing_points=12 if missing else 0,
    )


def multi_regime_scenario(n_lambda=5, sigma2_eps=0.1):
    """Two alternating regimes over T = 100 with change-point windows around
    (25, 50, 75); harmonic design at periods (5, 10, 25); per-regime
    two-cluster truths (vertical halves, then a diagonal split)."""
    rows, cols = 12, 10
    halves = _banded_partition(rows, cols, [(0, 4), (5, 9)])
    r = np.arange(rows * cols) % rows
    c = np.arange(rows * cols) // rows
    diagonal = (r * cols + c * rows >= rows * cols).astype(np.int64)
    schedule = RegimeSchedule(
        n_times=100, pattern=(1, 2, 1, 2), centers=(25, 50, 75), n_lambda=n_lambda
    )
    return ScenarioSpec(
        name=f"multi-regime-nl{n_lambda}",
        rows=rows,
        cols=cols,
        n_times=100,
        partitions=(halves, diagonal),
        schedule=schedule,
        design_kind="harmonic",
        n_features=6,
        periods=(5, 10, 25),
        tau2=(1.0, 1.0),
        sigma2_eps=(float(sigma2_eps), float(sigma2_eps)),
        zeta=(0.75, 0.75),
    )


def scenario_by_name(name, n_lambda=5, sigma2_eps=0.1):
    if name == "single-regime":
        return single_regime_scenario(missing=False)
    if name == "single-regime-missing":
        return single_regime_scenario(missing=True)
    if name == "multi-regime":
        return multi_regime_scenario(n_lambda=n_lambda, sigma2_eps=sigma2_eps)
    raise ConfigError(f"unknown scenario {name!r}")


def simulate_dataset(spec, seed):
    """Generate a dataset and its ground-truth state from a scenario.

    Reproducible: identical seeds yield bit-identical outputs.
    """
    rng = np.random.default_rng(seed)
    topo = build_grid(spec.rows, spec.cols)
    T = spec.n_times
    sched = spec.schedule
    n_regimes = sched.n_regimes
    if len(spec.partitions) != n_regimes:
        raise ConfigError("one truth partition per regime is required")

    if spec.design_kind == "harmonic":
        X = HarmonicDesign.from_periods(T, spec.periods).design_matrix()
    elif spec.design_kind == "gaussian":
        loc = (np.arange(1, T + 1, dtype=float) / T)[:, None]
        X = rng.normal(loc=loc, scale=1.0, size=(T, spec.n_features))
    else:
        raise ConfigError(f"unknown design kind {spec.design_kind!r}")
    K = X.shape[1]

    regimes = []
    for r in range(n_regimes):
        part = Partition(spec.partitions[r])
        beta = rng.normal(0.0, np.sqrt(spec.beta_scale), size=(part.n_clusters, K))
        u = sample_car(spec.tau2[r], spec.zeta[r], topo, rng)
        regimes.append(RegimeState(
            partition=part,
            beta_star=beta,
            u=u,
            tau2=float(spec.tau2[r]),
            sigma2_eps=float(spec.sigma2_eps[r]),
            zeta=float(spec.zeta[r]),
            mu_beta=np.zeros(K),
            sigma2_beta=np.full(K, spec.beta_scale),
        ))
    truth = ModelState(regimes=regimes, tbar=sched.default_tbar())

    clean = Dataset(
        values=np.zeros((topo.n_cells, T)),
        mask=np.zeros((topo.n_cells, T), dtype=bool),
        design=X,
        topology=topo,
        schedule=sched,
    )
    full = sample_observations(truth, clean, rng)

    mask = np.zeros((topo.n_cells, T), dtype=bool)
    for i in spec.missing_cells:
        mask[int(i), :] = True
    for t in spec.missing_times:
        mask[:, int(t) - 1] = True
    if spec.n_missing_points:
        candidates = np.flatnonzero(~mask.ravel())
        extra = rng.choice(candidates, size=spec.n_missing_points, replace=False)
        mask.ravel()[np.sort(extra)] = True

    truth.y_mis = full.ravel()[np.flatnonzero(mask.ravel())].copy()
    values = full.copy()
    values[mask] = np.nan
    data = Dataset(values=values, mask=mask, design=X, topology=topo, schedule=sched)
    return data, truth
