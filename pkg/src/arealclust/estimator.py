"""Scikit-learn style estimator facade over the Gibbs sampler.

``ArealClusterer`` treats the rows of ``X`` as grid cells and the columns as
time points, fits the full hierarchical model, and exposes per-regime
partition point estimates through ``labels_`` so the clusterer composes with
the usual pipeline/grid-search machinery.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigError
from .grid import build_grid
from .model import Dataset, Hyperparameters, elicit_inverse_gamma
from .sampler import SamplerConfig, run_chain
from .summaries import coclustering, fit_scores, vi_point_estimate
from .timeline import HarmonicDesign, RegimeSchedule

__all__ = ["ArealClusterer"]


class ArealClusterer(BaseEstimator):
    """Bayesian spatial clustering of grid time series with temporal regimes.

    Parameters
    ----------
    rows, cols : int
        Grid shape; ``X`` must have ``rows * cols`` rows in column-major
        cell order.
    frequencies : sequence of int, optional
        Fourier frequency indices of the harmonic design.  Exactly one of
        ``frequencies`` and ``design`` must be given.
    design : ndarray of shape (n_times, n_features), optional
        Explicit design matrix.
    schedule : RegimeSchedule, optional
        Regime layout; defaults to a single regime spanning all of ``X``'s
        columns.
    kappa, xi : float
        Mass and boundary-penalty hyperparameters of the partition prior.
    variant : str
        "full", "dp", "boundary" or "parametric" (single forced cluster).
    tau2_prior, sigma2_eps_prior, sigma2_beta_prior : (mean, variance)
        Moments used to elicit the inverse-Gamma priors.
    zeta : float or (a, b) tuple
        Fixed spatial dependence, or a Beta prior making it random.
    iterations, burn_in, thinning : int
        Chain control.
    allocation : str
        "collapsed" or "instantiated" label updates.
    changepoints : str
        "fixed" keeps change-points at the window centres, "random" samples
        them.
    random_state : int
        Chain seed.

    Attributes
    ----------
    labels_ : ndarray
        VI-optimal cluster labels; shape (n_cells,) for a single regime,
        (n_regimes, n_cells) otherwise.
    chain_ : ChainOutput
        Raw thinned draws.
    coclustering_ : list of ndarray
        Per-regime posterior co-clustering matrices.
    scores_ : FitScores
        LPML and WAIC of the fitted chain.
    """

    def __init__(self, rows, cols, *, frequencies=None, design=None,
                 schedule=None, kappa=1.0, xi=1.0, variant="full",
                 tau2_prior=(1.0, 0.1), sigma2_eps_prior=(1.0, 0.1),
                 sigma2_beta_prior=(1.0, 0.1), zeta=0.95, zeta_step=0.8,
                 iterations=4000, burn_in=2000, thinning=2,
                 allocation="collapsed", allocation_prior="exact",
                 changepoints="fixed", changepoint_update="marginalized",
                 random_state=0):
        self.rows = rows
        self.cols = cols
        self.frequencies = frequencies
        self.design = design
        self.schedule = schedule
        self.kappa = kappa
        self.xi = xi
        self.variant = variant
        self.tau2_prior = tau2_prior
        self.sigma2_eps_prior = sigma2_eps_prior
        self.sigma2_beta_prior = sigma2_beta_prior
        self.zeta = zeta
        self.zeta_step = zeta_step
        self.iterations = iterations
        self.burn_in = burn_in
        self.thinning = thinning
        self.allocation = allocation
        self.allocation_prior = allocation_prior
        self.changepoints = changepoints
        self.changepoint_update = changepoint_update
        self.random_state = random_state

    def _build_design(self, n_times):
        if (self.design is None) == (self.frequencies is None):
            raise ConfigError("give exactly one of 'frequencies' and 'design'")
        if self.design is not None:
            design = check_array(self.design)
            if design.shape[0] != n_times:
                raise ConfigError(
                    f"design has {design.shape[0]} rows, X has {n_times} columns"
                )
            return design
        return HarmonicDesign(n_times, tuple(self.frequencies)).design_matrix()

    def fit(self, X, y=None):
        """Fit the model to an (n_cells, n_times) matrix; NaN marks missing."""
        X = check_array(X, ensure_all_finite="allow-nan")
        topology = build_grid(self.rows, self.cols)
        if X.shape[0] != topology.n_cells:
            raise ConfigError(
                f"X has {X.shape[0]} rows but the {self.rows}x{self.cols} grid "
                f"has {topology.n_cells} cells"
            )
        schedule = self.schedule or RegimeSchedule(n_times=X.shape[1])
        design = self._build_design(X.shape[1])

        a_tau, b_tau = elicit_inverse_gamma(*self.tau2_prior)
        a_eps, b_eps = elicit_inverse_gamma(*self.sigma2_eps_prior)
        a_sb, b_sb = elicit_inverse_gamma(*self.sigma2_beta_prior)
        zeta_prior = None
        zeta = 0.95
        if isinstance(self.zeta, tuple):
            zeta_prior = (float(self.zeta[0]), float(self.zeta[1]))
        else:
            zeta = float(self.zeta)
        hyper = Hyperparameters(
            n_features=design.shape[1],
            a_sigma_beta=a_sb, b_sigma_beta=b_sb,
            a_tau2=a_tau, b_tau2=b_tau,
            a_sigma_eps=a_eps, b_sigma_eps=b_eps,
            kappa=self.kappa, xi=self.xi, zeta=zeta, zeta_prior=zeta_prior,
        )
        config = SamplerConfig(
            iterations=self.iterations,
            burn_in=self.burn_in,
            thinning=self.thinning,
            allocation=self.allocation,
            allocation_prior=self.allocation_prior,
            model_variant=self.variant,
            changepoints=self.changepoints,
            changepoint_update=self.changepoint_update,
            zeta_step=self.zeta_step,
            seed=self.random_state,
        )
        data = Dataset(values=X, mask=np.isnan(X), design=design,
                       topology=topology, schedule=schedule)
        self.chain_ = run_chain(config, hyper, data)

        parts = []
        self.coclustering_ = []
        for r in range(self.chain_.n_regimes):
            draws = self.chain_.partitions_for_regime(r)
            parts.append(vi_point_estimate(draws))
            self.coclustering_.append(coclustering(draws))
        self.partitions_ = parts
        stacked = np.vstack([p.labels for p in parts])
        self.labels_ = stacked[0] if stacked.shape[0] == 1 else stacked
        self.scores_ = fit_scores(self.chain_)
        self.n_features_in_ = X.shape[1]
        return self

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_

    def predict(self, X=None):
        """Cluster labels of the training grid (the partition is a property
        of the fitted lattice, not of new samples)."""
        check_is_fitted(self, "labels_")
        return self.labels_
