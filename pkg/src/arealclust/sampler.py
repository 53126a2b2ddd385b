"""Metropolis-within-Gibbs sampler for the regime-switching partition model.

One iteration updates, in order: missing responses, cluster coefficients,
their base-measure hyperparameters, cell allocations, spatial effects, the
spatial scale, the spatial-dependence parameter (when random), the
observation variance, and the change-points (when random).

Each conjugate update is split into a ``*_conditional`` function returning
the exact conditional parameters (so tests can check them against
brute-force recomputations from the joint density) and an ``update_*``
function that draws from it.  All draws flow through one Generator, so a
chain is bit-reproducible for a given seed.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import logsumexp

from .errors import ConfigError, NumericalError
from .grid import leroux_precision
from .model import (
    LOG_2PI,
    ModelState,
    RegimeState,
    fitted_matrix,
    observation_logpdf_matrix,
)
from .partitions import (
    Partition,
    _allocation_log_weights_from_counts,
    canonical_labels,
)

__all__ = [
    "SamplerConfig",
    "ChainOutput",
    "run_chain",
    "gibbs_iteration",
    "initial_state",
    "update_missing",
    "update_beta_star",
    "update_mu_sigma_beta",
    "update_allocations",
    "update_u",
    "update_tau2",
    "update_zeta",
    "update_sigma2_eps",
    "update_changepoints",
    "missing_conditional",
    "beta_star_conditional",
    "sigma2_beta_conditional",
    "mu_beta_conditional",
    "u_conditional",
    "tau2_conditional",
    "sigma2_eps_conditional",
    "changepoint_conditional",
    "allocation_conditional",
]

_ALLOCATIONS = ("instantiated", "collapsed")
_PRIOR_SCHEMES = ("exact", "simplified")
_VARIANTS = ("full", "dp", "boundary", "parametric")
_CHANGEPOINTS = ("fixed", "random")
_CP_UPDATES = ("marginalized", "direct")


@dataclass
class SamplerConfig:
    """Run-control switches for one chain."""

    iterations: int
    burn_in: int = 0
    thinning: int = 1
    allocation: str = "collapsed"
    allocation_prior: str = "exact"
    model_variant: str = "full"
    changepoints: str = "fixed"
    changepoint_update: str = "marginalized"
    init_partition: str = "one"   # or "singletons"
    zeta_step: float = 0.8        # random-walk step on logit(zeta)
    seed: int = 0
    store_loglik: bool = True
    store_y_mis: bool = True

    def validate(self):
        if self.burn_in < 0 or self.iterations <= self.burn_in:
            raise ConfigError("need iterations > burn_in >= 0")
        if self.thinning < 1:
            raise ConfigError("thinning must be at least 1")
        if (self.iterations - self.burn_in) < self.thinning:
            raise ConfigError("no draws would be stored; lower thinning or burn_in")
        if self.allocation not in _ALLOCATIONS:
            raise ConfigError(f"allocation must be one of {_ALLOCATIONS}")
        if self.allocation_prior not in _PRIOR_SCHEMES:
            raise ConfigError(f"allocation_prior must be one of {_PRIOR_SCHEMES}")
        if self.model_variant not in _VARIANTS:
            raise ConfigError(f"model_variant must be one of {_VARIANTS}")
        if self.changepoints not in _CHANGEPOINTS:
            raise ConfigError(f"changepoints must be one of {_CHANGEPOINTS}")
        if self.changepoint_update not in _CP_UPDATES:
            raise ConfigError(f"changepoint_update must be one of {_CP_UPDATES}")
        if self.init_partition not in ("one", "singletons"):
            raise ConfigError("init_partition must be 'one' or 'singletons'")
        if self.zeta_step <= 0:
            raise ConfigError("zeta_step must be positive")

    @property
    def n_draws(self):
        return (self.iterations - self.burn_in) // self.thinning


@dataclass
class ChainOutput:
    """Thinned posterior draws plus everything summaries need.

    ``loglik`` holds one row per stored draw with the per-entry Gaussian
    log-density of every observed response, in row-major (cell, time) order
    as given by ``observed_index``.
    """

    config: SamplerConfig
    schedule: object
    design: np.ndarray
    mask: np.ndarray
    observed_index: np.ndarray
    missing_index: np.ndarray
    partitions: list              # [draw][regime] -> Partition
    beta_star: list               # [draw][regime] -> (n_clusters, K) array
    u: np.ndarray                 # (draws, regimes, cells)
    tau2: np.ndarray              # (draws, regimes)
    sigma2_eps: np.ndarray
    zeta: np.ndarray
    mu_beta: np.ndarray           # (draws, regimes, K)
    sigma2_beta: np.ndarray
    tbar: np.ndarray              # (draws, intervals + 1)
    y_mis: np.ndarray             # (draws, n_missing) or (draws, 0)
    loglik: np.ndarray            # (draws, n_observed) or None
    zeta_accept: np.ndarray       # per-regime acceptance rate
    elapsed_seconds: float

    @property
    def n_draws(self):
        return len(self.partitions)

    @property
    def n_regimes(self):
        return self.u.shape[1]

    def partitions_for_regime(self, r):
        return [draw[r] for draw in self.partitions]


class _Workspace:
    """Per-chain caches: completed data, per-regime design cross-products,
    and the Laplacian eigenbasis shared by every Leroux precision."""

    def __init__(self, data, state):
        self.data = data
        self.n_regimes = data.schedule.n_regimes
        self.missing_flat = data.missing_flat_index()
        self.ycomp = state.completed_values(data)
        lam, vec = data.topology.laplacian_eigh()
        self.lam = lam
        self.vec = vec
        self.vec_t_one = vec.T @ np.ones(data.n_cells)
        self.refresh_regimes(state)

    def refresh_regimes(self, state):
        ridx = self.data.schedule.regime_indices(state.tbar)
        self.t_idx = [np.flatnonzero(ridx == r) for r in range(self.n_regimes)]
        self.X = [self.data.design[cols] for cols in self.t_idx]
        self.G = [x.T @ x for x in self.X]
        self.xs = [x.sum(axis=0) for x in self.X]
        self.m = [cols.size for cols in self.t_idx]
        self.refresh_values()

    def refresh_values(self):
        self.P = []
        self.rowsum = []
        self.rowssq = []
        for r in range(self.n_regimes):
            Y = self.ycomp[:, self.t_idx[r]]
            self.P.append(Y @ self.X[r])
            self.rowsum.append(Y.sum(axis=1))
            self.rowssq.append((Y ** 2).sum(axis=1))

    def set_missing_values(self, values):
        self.ycomp.ravel()[self.missing_flat] = values
        self.refresh_values()

    def centered_stats(self, state, r):
        """Per-cell ``X_r'(y_i - u_i 1)`` and ``||y_i - u_i 1||^2``."""
        u = state.regimes[r].u
        cvec = self.P[r] - np.outer(u, self.xs[r])
        ssqres = self.rowssq[r] - 2.0 * u * self.rowsum[r] + self.m[r] * u * u
        return cvec, ssqres


def _workspace(state, data, ws):
    return ws if ws is not None else _Workspace(data, state)


def _draw_gaussian_from_precision(precision, rhs, rng):
    """Mean and one draw of N(precision^-1 rhs, precision^-1)."""
    try:
        c, low = cho_factor(precision, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"posterior precision not positive definite: {exc}") from exc
    mean = cho_solve((c, low), rhs)
    z = rng.standard_normal(len(rhs))
    return mean + solve_triangular(c, z, lower=True, trans=1), mean


def _draw_invgamma(a, b, rng):
    return b / rng.gamma(a)


def _categorical_from_logweights(logw, rng):
    w = np.exp(logw - logw.max())
    cum = np.cumsum(w)
    j = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(j, len(logw) - 1)


# ---------------------------------------------------------------------------
# Step 1: missing responses
# ---------------------------------------------------------------------------

def missing_conditional(state, data):
    """Means and variances of the conditional Gaussians of every missing
    entry, aligned with ``data.missing_flat_index()``."""
    flat = data.missing_flat_index()
    fitted = fitted_matrix(state, data)
    ridx = data.schedule.regime_indices(state.tbar)
    s2 = np.array([reg.sigma2_eps for reg in state.regimes])
    col_var = s2[ridx]
    t_of = flat % data.n_times
    return fitted.ravel()[flat], col_var[t_of]


def update_missing(state, data, rng, ws=None):
    """Redraw every masked response from its conditional Gaussian."""
    if data.n_missing == 0:
        return state
    mean, var = missing_conditional(state, data)
    state.y_mis = mean + np.sqrt(var) * rng.standard_normal(mean.size)
    if ws is not None:
        ws.set_missing_values(state.y_mis)
    return state


# ---------------------------------------------------------------------------
# Step 2: cluster coefficients
# ---------------------------------------------------------------------------

def beta_star_conditional(state, data, hyper, r, j, ws=None):
    """Gaussian conditional (mean, covariance) of cluster ``j``'s coefficients."""
    ws = _workspace(state, data, ws)
    reg = state.regimes[r]
    cvec, _ = ws.centered_stats(state, r)
    members = np.flatnonzero(reg.partition.labels == j)
    prec = np.diag(1.0 / reg.sigma2_beta) + (members.size / reg.sigma2_eps) * ws.G[r]
    rhs = reg.mu_beta / reg.sigma2_beta + cvec[members].sum(axis=0) / reg.sigma2_eps
    cov = np.linalg.inv(prec)
    return cov @ rhs, cov


def update_beta_star(state, data, hyper, rng, ws=None):
    """Redraw every cluster-regime coefficient vector from its conjugate
    Gaussian."""
    ws = _workspace(state, data, ws)
    for r, reg in enumerate(state.regimes):
        cvec, _ = ws.centered_stats(state, r)
        labels = reg.partition.labels
        sig2 = reg.sigma2_eps
        prior_prec = np.diag(1.0 / reg.sigma2_beta)
        prior_rhs = reg.mu_beta / reg.sigma2_beta
        new = np.empty_like(reg.beta_star)
        for j in range(reg.partition.n_clusters):
            members = labels == j
            prec = prior_prec + (members.sum() / sig2) * ws.G[r]
            rhs = prior_rhs + cvec[members].sum(axis=0) / sig2
            new[j], _ = _draw_gaussian_from_precision(prec, rhs, rng)
        reg.beta_star = new
    return state


# ---------------------------------------------------------------------------
# Step 3: coefficient base measure
# ---------------------------------------------------------------------------

def sigma2_beta_conditional(state, hyper, r, l):
    reg = state.regimes[r]
    k_r = reg.partition.n_clusters
    a = hyper.a_sigma_beta + 0.5 * (1 + k_r)
    dev_mu = reg.mu_beta[l] - hyper.m_beta[l]
    dev_b = reg.beta_star[:, l] - reg.mu_beta[l]
    b = hyper.b_sigma_beta + 0.5 * dev_mu ** 2 + 0.5 * (dev_b ** 2).sum()
    return a, b


def mu_beta_conditional(state, hyper, r):
    reg = state.regimes[r]
    k_r = reg.partition.n_clusters
    mean = (hyper.m_beta + reg.beta_star.sum(axis=0)) / (1.0 + k_r)
    var = reg.sigma2_beta / (1.0 + k_r)
    return mean, var


def update_mu_sigma_beta(state, hyper, rng):
    """Redraw the diagonal base covariance, then the base mean."""
    for r, reg in enumerate(state.regimes):
        for l in range(hyper.n_features):
            a, b = sigma2_beta_conditional(state, hyper, r, l)
            reg.sigma2_beta[l] = _draw_invgamma(a, b, rng)
        mean, var = mu_beta_conditional(state, hyper, r)
        reg.mu_beta = mean + np.sqrt(var) * rng.standard_normal(hyper.n_features)
    return state


# ---------------------------------------------------------------------------
# Step 4: allocations
# ---------------------------------------------------------------------------

class _MarginalCache:
    """Inverses and log-determinants of ``diag(1/s2b) + n G / sig2`` by n."""

    def __init__(self, prior_diag, G, sig2):
        self.prior_diag = prior_diag
        self.G = G
        self.sig2 = sig2
        self._store = {}

    def get(self, n):
        hit = self._store.get(n)
        if hit is None:
            M = np.diag(self.prior_diag) + (n / self.sig2) * self.G
            sign, ld = np.linalg.slogdet(M)
            if sign <= 0:
                raise NumericalError("coefficient posterior precision lost definiteness")
            hit = (np.linalg.inv(M), ld)
            self._store[n] = hit
        return hit


def _collapsed_logliks(cell_c, cell_ssq, stats, sizes, cache, G, sig2, b0, m_r):
    """Marginal log-likelihood of one cell's series under each existing
    cluster (coefficients integrated against their conditional posterior)
    and under a new cluster (integrated against the base measure)."""
    ns = [*sizes, 0]
    inv_n = np.stack([cache.get(n)[0] for n in ns])
    inv_n1 = np.stack([cache.get(n + 1)[0] for n in ns])
    ld_n = np.array([cache.get(n)[1] for n in ns])
    ld_n1 = np.array([cache.get(n + 1)[1] for n in ns])
    bmat = np.tile(b0, (len(ns), 1))
    if sizes:
        bmat[:-1] += np.asarray(stats) / sig2
    post_mean = np.einsum("jkl,jl->jk", inv_n, bmat)
    zz = cell_ssq - 2.0 * post_mean @ cell_c + np.einsum(
        "jk,kl,jl->j", post_mean, G, post_mean
    )
    w = cell_c[None, :] - post_mean @ G
    quad = zz / sig2 - np.einsum("jk,jkl,jl->j", w, inv_n1, w) / (sig2 * sig2)
    return -0.5 * (m_r * (LOG_2PI + np.log(sig2)) + ld_n1 - ld_n + quad)


def _instantiated_logliks(cell_c, cell_ssq, betas, cache, G, sig2, b0, m_r):
    """Likelihood of one cell's series at each cluster's current coefficients,
    plus the base-measure marginal for a new cluster."""
    if betas:
        B = np.asarray(betas)
        ssq = cell_ssq - 2.0 * B @ cell_c + ((B @ G) * B).sum(axis=1)
        existing = -0.5 * (m_r * (LOG_2PI + np.log(sig2)) + ssq / sig2)
    else:
        existing = np.zeros(0)
    new = _collapsed_logliks(cell_c, cell_ssq, [], [], cache, G, sig2, b0, m_r)
    return np.append(existing, new[-1])


def _sweep_allocations(state, data, hyper, rng, r, prior_spec, variant,
                       prior_scheme, ws, probe_cell=None):
    """One Gibbs scan over the cells of regime ``r``.

    With ``probe_cell`` set, no draw is made: the normalized log-weights of
    that single cell are returned (used for oracle checks).
    """
    reg = state.regimes[r]
    sig2 = reg.sigma2_eps
    G = ws.G[r]
    m_r = ws.m[r]
    cvec, ssqres = ws.centered_stats(state, r)
    b0 = reg.mu_beta / reg.sigma2_beta
    cache = _MarginalCache(1.0 / reg.sigma2_beta, G, sig2)
    nbrs = data.topology.neighbor_lists

    labels = reg.partition.labels.copy()
    sizes = list(np.bincount(labels, minlength=reg.partition.n_clusters))
    stats = [cvec[labels == j].sum(axis=0) for j in range(len(sizes))]
    betas = [row.copy() for row in reg.beta_star]

    cells = range(data.n_cells) if probe_cell is None else (probe_cell,)
    for i in cells:
        j0 = labels[i]
        sizes[j0] -= 1
        stats[j0] = stats[j0] - cvec[i]
        if sizes[j0] == 0:
            sizes.pop(j0)
            stats.pop(j0)
            betas.pop(j0)
            labels[labels > j0] -= 1
        labels[i] = -1

        nlab = labels[nbrs[i]]
        nlab = nlab[nlab >= 0]
        counts = np.bincount(nlab, minlength=len(sizes))
        lw_prior = _allocation_log_weights_from_counts(
            np.asarray(sizes), counts, nlab.size, prior_spec, prior_scheme
        )
        if variant == "collapsed":
            lw_lik = _collapsed_logliks(cvec[i], ssqres[i], stats, sizes,
                                        cache, G, sig2, b0, m_r)
        else:
            lw_lik = _instantiated_logliks(cvec[i], ssqres[i], betas,
                                           cache, G, sig2, b0, m_r)
        lw = lw_prior + lw_lik
        if probe_cell is not None:
            return lw - logsumexp(lw)

        j = _categorical_from_logweights(lw, rng)
        if j == len(sizes):
            sizes.append(1)
            stats.append(cvec[i].copy())
            prec = np.diag(1.0 / reg.sigma2_beta) + ws.G[r] / sig2
            rhs = b0 + cvec[i] / sig2
            draw, _ = _draw_gaussian_from_precision(prec, rhs, rng)
            betas.append(draw)
        else:
            sizes[j] += 1
            stats[j] = stats[j] + cvec[i]
        labels[i] = j

    order = canonical_labels(labels)
    remap = {}
    for pos, lab in enumerate(labels):
        remap.setdefault(int(lab), int(order[pos]))
    inverse = {new: old for old, new in remap.items()}
    reg.partition = Partition(labels)
    reg.beta_star = np.array([betas[inverse[k]] for k in range(len(sizes))])
    return None


def allocation_conditional(state, data, hyper, r, cell, variant="collapsed",
                           prior_scheme="exact", model_variant="full", ws=None):
    """Normalized allocation log-weights of one cell (existing clusters in
    canonical order, then a new cluster)."""
    ws = _workspace(state, data, ws)
    prior_spec = hyper.partition_prior(model_variant)
    return _sweep_allocations(state, data, hyper, None, r, prior_spec, variant,
                              prior_scheme, ws, probe_cell=cell)


def update_allocations(state, data, hyper, rng, variant="collapsed",
                       prior_scheme="exact", model_variant="full", ws=None):
    """Resample every cell's cluster label in every regime.

    The collapsed scan is a Gibbs pass over the model with the cluster
    coefficients integrated out, so it ends by redrawing all coefficient
    vectors from their conditionals (otherwise the stale instantiated values
    would leak into later steps and break the invariant distribution).
    """
    ws = _workspace(state, data, ws)
    prior_spec = hyper.partition_prior(model_variant)
    for r in range(state.n_regimes):
        _sweep_allocations(state, data, hyper, rng, r, prior_spec, variant,
                           prior_scheme, ws)
    if variant == "collapsed":
        update_beta_star(state, data, hyper, rng, ws=ws)
    return state


# ---------------------------------------------------------------------------
# Step 5: spatial effects
# ---------------------------------------------------------------------------

def _u_rhs(state, ws, r):
    reg = state.regimes[r]
    B = state.cell_coefficients(r)
    return (ws.rowsum[r] - B @ ws.xs[r]) / reg.sigma2_eps


def u_conditional(state, data, r, ws=None):
    """Mean and dense precision of the joint Gaussian conditional of the
    spatial effects of regime ``r``."""
    ws = _workspace(state, data, ws)
    reg = state.regimes[r]
    Q = leroux_precision(data.topology, reg.zeta).toarray()
    prec = Q / reg.tau2 + (ws.m[r] / reg.sigma2_eps) * np.eye(data.n_cells)
    rhs = _u_rhs(state, ws, r)
    mean = np.linalg.solve(prec, rhs)
    return mean, prec


def update_u(state, data, rng, ws=None):
    """Joint draw of every regime's spatial effects.

    Solved in the Laplacian eigenbasis: the posterior precision is
    ``V diag(q/tau2 + m/sig2) V'``, so no matrix is inverted or factorized
    per draw.
    """
    ws = _workspace(state, data, ws)
    for r, reg in enumerate(state.regimes):
        q = reg.zeta * ws.lam + (1.0 - reg.zeta)
        d = q / reg.tau2 + ws.m[r] / reg.sigma2_eps
        rhs = _u_rhs(state, ws, r)
        proj = ws.vec.T @ rhs
        z = rng.standard_normal(data.n_cells)
        reg.u = ws.vec @ (proj / d + z / np.sqrt(d))
    return state


# ---------------------------------------------------------------------------
# Steps 6-7: variances and spatial dependence
# ---------------------------------------------------------------------------

def tau2_conditional(state, data, hyper, r):
    reg = state.regimes[r]
    L = data.topology.laplacian()
    quad = reg.zeta * float(reg.u @ (L @ reg.u)) + (1.0 - reg.zeta) * float(reg.u @ reg.u)
    return hyper.a_tau2 + 0.5 * data.n_cells, hyper.b_tau2 + 0.5 * quad


def update_tau2(state, data, hyper, rng):
    for r, reg in enumerate(state.regimes):
        a, b = tau2_conditional(state, data, hyper, r)
        reg.tau2 = _draw_invgamma(a, b, rng)
    return state


def _zeta_log_target(zeta, u_lap_u, u_sq, lam, tau2, prior):
    q = zeta * lam + (1.0 - zeta)
    if q.min() <= 0.0:
        return -np.inf
    quad = zeta * u_lap_u + (1.0 - zeta) * u_sq
    a, b = prior
    return (0.5 * np.log(q).sum() - quad / (2.0 * tau2)
            + (a - 1.0) * np.log(zeta) + (b - 1.0) * np.log1p(-zeta))


def update_zeta(state, data, hyper, rng, step, ws=None):
    """Random-walk Metropolis on logit(zeta) against the spatial-effect
    density times the Beta prior.  No-op when zeta is fixed."""
    if hyper.zeta_prior is None:
        return np.zeros(state.n_regimes, dtype=bool)
    ws = _workspace(state, data, ws)
    L = data.topology.laplacian()
    accepted = np.zeros(state.n_regimes, dtype=bool)
    for r, reg in enumerate(state.regimes):
        u_lap_u = float(reg.u @ (L @ reg.u))
        u_sq = float(reg.u @ reg.u)
        x = np.log(reg.zeta) - np.log1p(-reg.zeta)
        x_new = x + step * rng.standard_normal()
        z_new = 1.0 / (1.0 + np.exp(-x_new))
        cur = (_zeta_log_target(reg.zeta, u_lap_u, u_sq, ws.lam, reg.tau2, hyper.zeta_prior)
               + np.log(reg.zeta) + np.log1p(-reg.zeta))
        prop = (_zeta_log_target(z_new, u_lap_u, u_sq, ws.lam, reg.tau2, hyper.zeta_prior)
                + np.log(z_new) + np.log1p(-z_new))
        if np.log(rng.random()) < prop - cur:
            reg.zeta = float(z_new)
            accepted[r] = True
    return accepted


def sigma2_eps_conditional(state, data, hyper, r, ws=None):
    """Inverse-Gamma conditional of the observation variance of regime ``r``,
    restricted to that regime's time points."""
    ws = _workspace(state, data, ws)
    reg = state.regimes[r]
    cvec, ssqres = ws.centered_stats(state, r)
    B = state.cell_coefficients(r)
    ssq = ssqres - 2.0 * (B * cvec).sum(axis=1) + ((B @ ws.G[r]) * B).sum(axis=1)
    a = hyper.a_sigma_eps + 0.5 * data.n_cells * ws.m[r]
    return a, hyper.b_sigma_eps + 0.5 * float(ssq.sum())


def update_sigma2_eps(state, data, hyper, rng, ws=None):
    ws = _workspace(state, data, ws)
    for r, reg in enumerate(state.regimes):
        a, b = sigma2_eps_conditional(state, data, hyper, r, ws=ws)
        reg.sigma2_eps = _draw_invgamma(a, b, rng)
    return state


# ---------------------------------------------------------------------------
# Step 8: change-points
# ---------------------------------------------------------------------------

def _marginal_column_logpdf(state, ws, r, t_cols):
    """Log-density of each data column in ``t_cols`` under regime ``r`` with
    coefficients and spatial effects integrated out: the covariance is
    ``(x_t' Sigma_beta x_t + sig2) I + tau2 Q^{-1}``, diagonalized by the
    shared Laplacian eigenbasis."""
    reg = state.regimes[r]
    if reg.zeta >= 1.0:
        raise NumericalError("marginalized change-point weights need zeta < 1")
    X = ws.data.design[t_cols]
    a = (X ** 2) @ reg.sigma2_beta + reg.sigma2_eps
    c = X @ reg.mu_beta
    q = reg.zeta * ws.lam + (1.0 - reg.zeta)
    proj = ws.vec.T @ ws.ycomp[:, t_cols]          # (I, len(t_cols))
    w = proj - np.outer(ws.vec_t_one, c)
    denom = a[None, :] + (reg.tau2 / q)[:, None]
    n = ws.data.n_cells
    return -0.5 * (n * LOG_2PI + np.log(denom).sum(axis=0) + (w * w / denom).sum(axis=0))


def _direct_column_logpdf(state, ws, r, t_cols):
    reg = state.regimes[r]
    B = state.cell_coefficients(r)
    fitted = B @ ws.data.design[t_cols].T + reg.u[:, None]
    resid2 = (ws.ycomp[:, t_cols] - fitted) ** 2
    n = ws.data.n_cells
    return -0.5 * (n * (LOG_2PI + np.log(reg.sigma2_eps))
                   + resid2.sum(axis=0) / reg.sigma2_eps)


def changepoint_conditional(state, data, hyper, m, method="marginalized", ws=None):
    """Candidates and normalized log-weights of the m-th change-point."""
    ws = _workspace(state, data, ws)
    sched = data.schedule
    support = sched.changepoint_support(m)
    window = support - 1  # 0-based data columns of the whole support
    r_left = sched.pattern[m - 1] - 1
    r_right = sched.pattern[m] - 1
    if method == "marginalized":
        g_left = _marginal_column_logpdf(state, ws, r_left, window)
        g_right = _marginal_column_logpdf(state, ws, r_right, window)
    else:
        g_left = _direct_column_logpdf(state, ws, r_left, window)
        g_right = _direct_column_logpdf(state, ws, r_right, window)
    cum_left = np.cumsum(g_left)
    cum_right = np.cumsum(g_right)
    total_right = cum_right[-1]
    logw = cum_left + (total_right - cum_right)
    return support, logw - logsumexp(logw)


def update_changepoints(state, data, hyper, rng, method="marginalized", ws=None):
    """Redraw every interior change-point from its discrete conditional.

    The per-window weights depend on the data columns inside the window and
    the two adjacent regimes' parameters only, so the regime-dependent
    caches are refreshed once after the sweep.
    """
    ws = _workspace(state, data, ws)
    moved = False
    for m in range(1, data.schedule.n_intervals):
        support, logw = changepoint_conditional(state, data, hyper, m,
                                                method=method, ws=ws)
        pick = support[_categorical_from_logweights(logw, rng)]
        if pick != state.tbar[m]:
            moved = True
            state.tbar[m] = pick
    if moved:
        ws.refresh_regimes(state)
    return state


# ---------------------------------------------------------------------------
# Chain driver
# ---------------------------------------------------------------------------

def initial_state(config, hyper, data, rng):
    """Deterministic-plus-seeded starting point for a chain."""
    n_regimes = data.schedule.n_regimes
    I = data.n_cells
    K = hyper.n_features
    regimes = []
    for _ in range(n_regimes):
        if config.model_variant == "parametric" or config.init_partition == "one":
            part = Partition(np.zeros(I, dtype=np.int64))
        else:
            part = Partition(np.arange(I, dtype=np.int64))
        sigma2_beta = np.full(K, hyper.b_sigma_beta / (hyper.a_sigma_beta - 1.0)
                              if hyper.a_sigma_beta > 1 else 1.0)
        mu_beta = hyper.m_beta.copy()
        beta = mu_beta + np.sqrt(sigma2_beta) * rng.standard_normal((part.n_clusters, K))
        if hyper.zeta_prior is None:
            zeta = hyper.zeta
        else:
            zeta = hyper.zeta_prior[0] / (hyper.zeta_prior[0] + hyper.zeta_prior[1])
        regimes.append(RegimeState(
            partition=part,
            beta_star=beta,
            u=np.zeros(I),
            tau2=hyper.b_tau2 / (hyper.a_tau2 - 1.0) if hyper.a_tau2 > 1 else 1.0,
            sigma2_eps=hyper.b_sigma_eps / (hyper.a_sigma_eps - 1.0)
            if hyper.a_sigma_eps > 1 else 1.0,
            zeta=float(zeta),
            mu_beta=mu_beta,
            sigma2_beta=sigma2_beta,
        ))
    return ModelState(
        regimes=regimes,
        tbar=data.schedule.default_tbar(),
        y_mis=np.zeros(data.n_missing),
    )


def gibbs_iteration(state, data, hyper, config, rng, ws=None):
    """One full sweep of all updates, in the fixed step order."""
    ws = _workspace(state, data, ws)
    update_missing(state, data, rng, ws=ws)
    update_beta_star(state, data, hyper, rng, ws=ws)
    update_mu_sigma_beta(state, hyper, rng)
    if config.model_variant != "parametric":
        update_allocations(state, data, hyper, rng,
                           variant=config.allocation,
                           prior_scheme=config.allocation_prior,
                           model_variant=config.model_variant, ws=ws)
    update_u(state, data, rng, ws=ws)
    update_tau2(state, data, hyper, rng)
    accepted = update_zeta(state, data, hyper, rng, config.zeta_step, ws=ws)
    update_sigma2_eps(state, data, hyper, rng, ws=ws)
    if config.changepoints == "random" and data.schedule.n_intervals > 1:
        update_changepoints(state, data, hyper, rng,
                            method=config.changepoint_update, ws=ws)
    return accepted


def _validate_run(config, hyper, data):
    config.validate()
    if data.n_features != hyper.n_features:
        raise ConfigError(
            f"design has {data.n_features} columns but hyperparameters expect "
            f"{hyper.n_features}"
        )
    if (config.changepoints == "random"
            and config.changepoint_update == "marginalized"
            and hyper.zeta_prior is None and hyper.zeta >= 1.0):
        raise ConfigError("marginalized change-point updates need zeta < 1")
    if config.changepoints == "random" and data.schedule.n_intervals < 2:
        raise ConfigError("random change-points need at least two intervals")


def run_chain(config, hyper, data):
    """Run one chain and return its thinned output.

    Deterministic for a given seed: identical inputs give bit-identical
    outputs in single-thread mode.
    """
    _validate_run(config, hyper, data)
    rng = np.random.default_rng(config.seed)
    state = initial_state(config, hyper, data, rng)
    ws = _Workspace(data, state)
    n_regimes = data.schedule.n_regimes
    I, K = data.n_cells, data.n_features
    n_draws = config.n_draws
    obs_flat = data.observed_flat_index()
    mis_flat = data.missing_flat_index()

    partitions = []
    betas = []
    u = np.empty((n_draws, n_regimes, I))
    tau2 = np.empty((n_draws, n_regimes))
    sigma2_eps = np.empty((n_draws, n_regimes))
    zeta = np.empty((n_draws, n_regimes))
    mu_beta = np.empty((n_draws, n_regimes, K))
    sigma2_beta = np.empty((n_draws, n_regimes, K))
    tbar = np.empty((n_draws, data.schedule.n_intervals + 1), dtype=np.int64)
    y_mis = np.empty((n_draws, mis_flat.size if config.store_y_mis else 0))
    loglik = np.empty((n_draws, obs_flat.size)) if config.store_loglik else None
    accept_count = np.zeros(n_regimes)

    t_start = time.perf_counter()
    kept = 0
    for it in range(1, config.iterations + 1):
        accepted = gibbs_iteration(state, data, hyper, config, rng, ws=ws)
        accept_count += accepted
        if it > config.burn_in and (it - config.burn_in) % config.thinning == 0:
            partitions.append([Partition(reg.partition.labels.copy())
                               for reg in state.regimes])
            betas.append([reg.beta_star.copy() for reg in state.regimes])
            for r, reg in enumerate(state.regimes):
                u[kept, r] = reg.u
                tau2[kept, r] = reg.tau2
                sigma2_eps[kept, r] = reg.sigma2_eps
                zeta[kept, r] = reg.zeta
                mu_beta[kept, r] = reg.mu_beta
                sigma2_beta[kept, r] = reg.sigma2_beta
            tbar[kept] = state.tbar
            if config.store_y_mis and mis_flat.size:
                y_mis[kept] = state.y_mis
            if config.store_loglik:
                ll = observation_logpdf_matrix(state, data, values=ws.ycomp)
                loglik[kept] = ll.ravel()[obs_flat]
            kept += 1
    elapsed = time.perf_counter() - t_start

    return ChainOutput(
        config=config,
        schedule=data.schedule,
        design=data.design.copy(),
        mask=data.mask.copy(),
        observed_index=obs_flat,
        missing_index=mis_flat,
        partitions=partitions,
        beta_star=betas,
        u=u,
        tau2=tau2,
        sigma2_eps=sigma2_eps,
        zeta=zeta,
        mu_beta=mu_beta,
        sigma2_beta=sigma2_beta,
        tbar=tbar,
        y_mis=y_mis,
        loglik=loglik,
        zeta_accept=accept_count / config.iterations,
        elapsed_seconds=elapsed,
    )
