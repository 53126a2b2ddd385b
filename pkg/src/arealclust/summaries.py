"""Posterior post-processing: co-clustering, partition point estimates,
Rand-index posteriors, fitted harmonic bands, and predictive fit scores."""

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.spatial.distance import squareform
from scipy.special import logsumexp

from .errors import ConfigError, NumericalError
from .partitions import MAX_ENUMERATION_CELLS, Partition, _iter_label_vectors, rand_index, vi_distance

__all__ = [
    "FitScores",
    "coclustering",
    "vi_point_estimate",
    "expected_vi",
    "rand_index_posterior",
    "fitted_band",
    "lpml",
    "waic",
    "fit_scores",
    "modal_cluster_counts",
]


@dataclass
class FitScores:
    """Predictive fit summaries of one chain.

    ``lpml`` is the sum of log conditional predictive ordinates (harmonic
    mean estimator); ``waic`` is -2 (lppd - p_waic) with the unbiased
    sample-variance penalty.  Higher LPML and lower WAIC mean better fit.
    """

    lpml: float
    waic: float
    cpo: np.ndarray
    lppd: float = None
    p_waic: float = None


def coclustering(draws):
    """Posterior co-assignment frequencies: entry (i, j) is the fraction of
    draws in which cells i and j share a cluster."""
    if len(draws) == 0:
        raise ConfigError("need at least one partition draw")
    n = draws[0].n_cells
    out = np.zeros((n, n))
    for p in draws:
        lab = p.labels
        out += lab[:, None] == lab[None, :]
    return out / len(draws)


def _unique_draws(draws):
    counts = {}
    for p in draws:
        key = p.key()
        if key in counts:
            counts[key][1] += 1
        else:
            counts[key] = [p, 1]
    reps = [v[0] for v in counts.values()]
    weights = np.array([v[1] for v in counts.values()], dtype=float)
    return reps, weights / weights.sum()


def expected_vi(candidate, draws):
    """Monte Carlo estimate of the expected variation of information
    between a candidate partition and the posterior draws."""
    reps, weights = _unique_draws(draws)
    return float(sum(w * vi_distance(candidate, p) for p, w in zip(reps, weights)))


def vi_point_estimate(draws, method="cuts"):
    """Partition minimizing the estimated posterior expected VI.

    method "cuts" searches the n_cells partitions obtained by cutting the
    average-linkage dendrogram built on 1 minus the co-clustering
    probabilities at every level.  method "exhaustive" searches all
    partitions (only for small cell counts) and is the oracle the cut
    search is validated against.

    Ties break toward fewer clusters, then lexicographically smaller
    canonical labels.
    """
    if len(draws) == 0:
        raise ConfigError("need at least one partition draw")
    n = draws[0].n_cells
    if method == "exhaustive":
        if n > MAX_ENUMERATION_CELLS:
            raise ConfigError("exhaustive search is limited to small cell counts")
        candidates = [Partition(np.array(lab)) for lab in _iter_label_vectors(n)]
    elif method == "cuts":
        if n == 1:
            return Partition(np.zeros(1, dtype=np.int64))
        co = coclustering(draws)
        dist = squareform(np.clip(1.0 - co, 0.0, None), checks=False)
        tree = linkage(dist, method="average")
        cuts = cut_tree(tree)
        candidates = [Partition(cuts[:, k]) for k in range(cuts.shape[1])]
    else:
        raise ConfigError(f"unknown method {method!r}")
    scored = [
        (expected_vi(cand, draws), cand.n_clusters, cand.key(), cand)
        for cand in candidates
    ]
    scored.sort(key=lambda rec: rec[:3])
    return scored[0][3]


def rand_index_posterior(draws_a, draws_b):
    """Per-draw Rand index between two aligned partition sequences."""
    if len(draws_a) != len(draws_b):
        raise ConfigError("the two draw sequences must have equal length")
    return np.array([rand_index(a, b) for a, b in zip(draws_a, draws_b)])


def fitted_band(chain, cell, level=0.95):
    """Pointwise posterior mean and credible band of the harmonic mean
    surface ``x_t' beta*`` of one cell (spatial effect excluded).

    Returns (mean, lower, upper), each of length n_times.
    """
    sched = chain.schedule
    design = chain.design
    n_times = design.shape[0]
    n_cells = chain.u.shape[2]
    if not 0 <= cell < n_cells:
        raise ConfigError(f"cell {cell} outside [0, {n_cells})")
    if not 0.0 <= level <= 1.0:
        raise ConfigError("level must lie in [0, 1]")
    fitted = np.empty((chain.n_draws, n_times))
    for d in range(chain.n_draws):
        ridx = sched.regime_indices(chain.tbar[d])
        for r in range(chain.n_regimes):
            cols = np.flatnonzero(ridx == r)
            if cols.size == 0:
                continue
            lab = chain.partitions[d][r].labels[cell]
            fitted[d, cols] = design[cols] @ chain.beta_star[d][r][lab]
    lo, hi = (1.0 - level) / 2.0, (1.0 + level) / 2.0
    return fitted.mean(axis=0), np.quantile(fitted, lo, axis=0), np.quantile(fitted, hi, axis=0)


def _require_loglik(chain_or_matrix):
    ll = getattr(chain_or_matrix, "loglik", chain_or_matrix)
    if ll is None:
        raise ConfigError("the chain was run without per-observation log-likelihoods")
    ll = np.asarray(ll)
    if ll.ndim != 2 or ll.shape[0] < 1:
        raise ConfigError("log-likelihood matrix must be draws x observations")
    return ll


def lpml(chain_or_matrix):
    """Log pseudo marginal likelihood from the per-draw per-observation
    log-likelihood matrix, computed stably in log space."""
    ll = _require_loglik(chain_or_matrix)
    if np.isneginf(ll).all(axis=0).any():
        raise NumericalError("an observation has zero likelihood under every draw")
    n_draws = ll.shape[0]
    log_cpo = np.log(n_draws) - logsumexp(-ll, axis=0)
    return FitScores(
        lpml=float(log_cpo.sum()),
        waic=np.nan,
        cpo=np.exp(log_cpo),
    )


def waic(chain_or_matrix):
    """Widely applicable information criterion with the sample-variance
    (n - 1 denominator) complexity penalty.  Needs at least two draws."""
    ll = _require_loglik(chain_or_matrix)
    n_draws = ll.shape[0]
    if n_draws < 2:
        raise ConfigError("WAIC needs at least two draws to estimate the variance")
    lppd = float((logsumexp(ll, axis=0) - np.log(n_draws)).sum())
    p_waic = float(ll.var(axis=0, ddof=1).sum())
    return FitScores(
        lpml=np.nan,
        waic=-2.0 * (lppd - p_waic),
        cpo=None,
        lppd=lppd,
        p_waic=p_waic,
    )


def fit_scores(chain):
    """LPML and WAIC of a chain in one record."""
    a = lpml(chain)
    b = waic(chain)
    return FitScores(lpml=a.lpml, waic=b.waic, cpo=a.cpo, lppd=b.lppd, p_waic=b.p_waic)


def modal_cluster_counts(chain):
    """Posterior mode of the number of clusters, per regime (ties break low)."""
    out = []
    for r in range(chain.n_regimes):
        ks = np.array([p.n_clusters for p in chain.partitions_for_regime(r)])
        counts = np.bincount(ks)
        out.append(int(counts.argmax()))
    return out
