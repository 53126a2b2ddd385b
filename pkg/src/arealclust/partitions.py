"""Random partitions of grid cells and the boundary-penalized partition prior.

The prior over a partition ``rho = {C_1, ..., C_K}`` of the cells is, up to
normalization,

    p(rho) propto kappa^K * prod_j Gamma(n_j) * exp(-xi * sum_{i in C_j} l_j(i))

where ``n_j`` is the size of cluster ``j`` and ``l_j(i)`` counts the
neighbors of cell ``i`` lying outside its own cluster.  Setting ``xi = 0``
recovers the Dirichlet-process partition distribution with mass ``kappa``;
dropping the ``kappa^K prod Gamma(n_j)`` factor leaves the pure
boundary-penalty prior.  The normalizing constant has no closed form and is
only ever computed here by exhaustive enumeration on small cell sets.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import ConfigError
from .grid import total_boundary

__all__ = [
    "Partition",
    "PriorSpec",
    "log_prior_unnormalized",
    "enumerate_prior",
    "allocation_log_weights",
    "sample_prior",
    "rand_index",
    "vi_distance",
]

UNASSIGNED = -1

#: Enumeration guard: Bell(10) = 115,975 partitions is the largest we enumerate.
MAX_ENUMERATION_CELLS = 10


class Partition:
    """A partition of ``n`` cells into labeled clusters, kept in canonical form.

    Labels are 0-based integers; canonical form numbers clusters by order of
    first appearance, so two partitions are equal exactly when they group the
    cells identically.  External CSV/JSON formats use 1-based labels.
    """

    __slots__ = ("labels", "sizes", "n_clusters")

    def __init__(self, labels):
        labels = canonical_labels(np.asarray(labels, dtype=np.int64))
        self.labels = labels
        self.n_clusters = int(labels.max()) + 1 if labels.size else 0
        self.sizes = np.bincount(labels, minlength=self.n_clusters)

    @classmethod
    def from_blocks(cls, blocks, n_cells):
        labels = np.full(n_cells, UNASSIGNED, dtype=np.int64)
        for j, block in enumerate(blocks):
            labels[list(block)] = j
        if (labels == UNASSIGNED).any():
            raise ConfigError("blocks do not cover every cell")
        return cls(labels)

    @property
    def n_cells(self):
        return self.labels.size

    def blocks(self):
        return [np.flatnonzero(self.labels == j) for j in range(self.n_clusters)]

    def key(self):
        return tuple(int(v) for v in self.labels)

    def __eq__(self, other):
        return isinstance(other, Partition) and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"Partition({list(self.labels)})"


def canonical_labels(labels):
    """Relabel clusters by order of first appearance (0, 1, 2, ...)."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.empty_like(labels)
    mapping = {}
    for pos, lab in enumerate(labels):
        lab = int(lab)
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[pos] = mapping[lab]
    return out


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters and variant of the partition prior.

    variant "full" is the full cohesion above, "dp" the Dirichlet-process
    special case (requires ``xi = 0``), "boundary" the pure boundary-penalty prior
    (the mass and size factors are dropped; ``kappa`` must be left at 1).
    """

    kappa: float = 1.0
    xi: float = 0.0
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in ("full", "dp", "boundary"):
            raise ConfigError(f"unknown prior variant {self.variant!r}")
        if self.kappa <= 0:
            raise ConfigError("kappa must be positive")
        if self.xi < 0:
            raise ConfigError("xi must be nonnegative")
        if self.variant == "dp" and self.xi != 0.0:
            raise ConfigError("the dp variant requires xi = 0")
        if self.variant == "boundary" and self.kappa != 1.0:
            raise ConfigError("the boundary variant drops the mass term; leave kappa = 1")


def log_prior_unnormalized(partition, prior, topology):
    """Log of the unnormalized partition prior.

    For the full prior this is
    ``K log kappa + sum_j [log Gamma(n_j) - xi * boundary(C_j)]``;
    the normalizing constant is deliberately excluded.
    """
    labels = partition.labels if isinstance(partition, Partition) else np.asarray(partition)
    boundary = total_boundary(topology, labels)
    out = -prior.xi * boundary
    if prior.variant != "boundary":
        sizes = np.bincount(labels)
        out += sizes.size * np.log(prior.kappa) + gammaln(sizes).sum()
    return float(out)


def _iter_label_vectors(n):
    """Yield every set partition of ``n`` items as a canonical label tuple."""
    labels = [0] * n
    maxes = [0] * n  # maxes[i] = max(labels[:i+1])
    while True:
        yield tuple(labels)
        i = n - 1
        while i > 0 and labels[i] == maxes[i - 1] + 1:
            i -= 1
        if i == 0:
            return
        labels[i] += 1
        maxes[i] = max(maxes[i - 1], labels[i])
        for k in range(i + 1, n):
            labels[k] = 0
            maxes[k] = maxes[i]


def enumerate_prior(topology, prior):
    """Exact partition prior by exhaustive enumeration.

    Returns
    -------
    dict mapping Partition -> probability, summing to one.  Refuses cell
    sets larger than ``MAX_ENUMERATION_CELLS`` (Bell-number growth).
    """
    n = topology.n_cells
    if n > MAX_ENUMERATION_CELLS:
        raise ConfigError(
            f"enumeration limited to {MAX_ENUMERATION_CELLS} cells, got {n}"
        )
    parts = []
    logw = []
    for labels in _iter_label_vectors(n):
        p = Partition(np.array(labels))
        parts.append(p)
        logw.append(log_prior_unnormalized(p, prior, topology))
    logw = np.array(logw)
    probs = np.exp(logw - logsumexp(logw))
    return {p: float(w) for p, w in zip(parts, probs)}


def _neighbor_counts(labels, nbrs, n_clusters):
    """Counts of allocated neighbors per cluster and the allocated total."""
    nlab = labels[nbrs]
    nlab = nlab[nlab != UNASSIGNED]
    return np.bincount(nlab, minlength=n_clusters), nlab.size


def allocation_log_weights(labels, cell, prior, topology, scheme="exact"):
    """Prior log-weights for allocating ``cell`` to each cluster or a new one.

    Parameters
    ----------
    labels : ndarray
        Current assignment over all cells with ``cell`` (and possibly
        others) marked ``UNASSIGNED``; clusters must be canonically
        numbered 0..K-1.
    scheme : str
        "exact" computes the exact difference of unnormalized log priors
        between the partition with ``cell`` in each candidate cluster and
        the partition without it; this is the correct Gibbs conditional.
        "simplified" reproduces the one-sided predictive weights
        ``n_j * exp(-xi * l_j(cell))`` (and ``kappa * exp(-xi * d)`` for a
        new cluster) which ignore the boundary reduction of the receiving
        cluster's members.

    Returns
    -------
    ndarray of length K+1; the last entry is the new-cluster weight.
    """
    labels = np.asarray(labels)
    if labels[cell] != UNASSIGNED:
        raise ConfigError("cell must be unassigned before computing its weights")
    n_clusters = int(labels.max()) + 1
    sizes = np.bincount(labels[labels != UNASSIGNED], minlength=n_clusters)
    counts, d_alloc = _neighbor_counts(labels, topology.neighbor_lists[cell], n_clusters)
    return _allocation_log_weights_from_counts(sizes, counts, d_alloc, prior, scheme)


def _allocation_log_weights_from_counts(sizes, counts, d_alloc, prior, scheme="exact"):
    factor = 2.0 if scheme == "exact" else 1.0
    if scheme not in ("exact", "simplified"):
        raise ConfigError(f"unknown allocation scheme {scheme!r}")
    cross = factor * prior.xi * (d_alloc - counts)
    if prior.variant == "boundary":
        existing = -cross
        new = -factor * prior.xi * d_alloc
    else:
        existing = np.log(sizes) - cross
        new = np.log(prior.kappa) - factor * prior.xi * d_alloc
    return np.append(existing, new)


class _LabelGibbs:
    """In-place Gibbs scan over cell labels under the partition prior alone.

    Cluster sizes live in a preallocated array indexed by label; the pure
    Dirichlet-process case (xi = 0, size/mass weights only) skips all
    neighbor bookkeeping.
    """

    def __init__(self, topology, prior, scheme="exact"):
        self.topology = topology
        self.prior = prior
        self.scheme = scheme
        self.nbrs = topology.neighbor_lists
        n = topology.n_cells
        self.labels = np.full(n, UNASSIGNED, dtype=np.int64)
        self.sizes = np.zeros(n + 1, dtype=np.int64)
        self.n_clusters = 0
        self._factor = 2.0 if scheme == "exact" else 1.0
        self._log_size = np.log(np.arange(1, n + 2, dtype=float))
        self._dp_path = prior.xi == 0.0 and prior.variant != "boundary"

    def _remove(self, i):
        j = self.labels[i]
        self.sizes[j] -= 1
        if self.sizes[j] == 0:
            k = self.n_clusters
            self.sizes[j:k - 1] = self.sizes[j + 1:k]
            self.sizes[k - 1] = 0
            self.n_clusters = k - 1
            self.labels[self.labels > j] -= 1
        self.labels[i] = UNASSIGNED

    def _assign(self, i, j):
        if j == self.n_clusters:
            self.n_clusters += 1
        self.sizes[j] += 1
        self.labels[i] = j

    def _draw(self, weights, rng):
        cum = np.cumsum(weights)
        j = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        return min(j, weights.size - 1)

    def step_cell(self, i, rng):
        if self.labels[i] != UNASSIGNED:
            self._remove(i)
        k = self.n_clusters
        if self._dp_path:
            w = np.empty(k + 1)
            w[:k] = self.sizes[:k]
            w[k] = self.prior.kappa
            self._assign(i, self._draw(w, rng))
            return
        nlab = self.labels[self.nbrs[i]]
        nlab = nlab[nlab != UNASSIGNED]
        counts = np.bincount(nlab, minlength=k)
        cross = self._factor * self.prior.xi * (nlab.size - counts)
        lw = np.empty(k + 1)
        if self.prior.variant == "boundary":
            lw[:k] = -cross
            lw[k] = -self._factor * self.prior.xi * nlab.size
        else:
            lw[:k] = self._log_size[self.sizes[:k] - 1] - cross
            lw[k] = np.log(self.prior.kappa) - self._factor * self.prior.xi * nlab.size
        self._assign(i, self._draw(np.exp(lw - lw.max()), rng))

    def sweep(self, rng):
        for i in range(self.topology.n_cells):
            self.step_cell(i, rng)

    def init_sequential(self, rng):
        # Allocating cells one at a time with the exact-ratio weights is an
        # exact draw from the xi = 0 prior and a sensible start otherwise.
        self.labels[:] = UNASSIGNED
        self.sizes[:] = 0
        self.n_clusters = 0
        for i in range(self.topology.n_cells):
            self.step_cell(i, rng)

    def partition(self):
        return Partition(self.labels)


def sample_prior(topology, prior, iterations, seed, burn_in=0, thinning=1,
                 scheme="exact"):
    """Gibbs-sample partitions from the prior alone.

    Starts from a sequential allocation (an exact prior draw when xi = 0),
    runs ``burn_in`` unrecorded sweeps, then records one partition every
    ``thinning``-th sweep until ``iterations`` draws are stored.
    Reproducible for a given seed.
    """
    if iterations < 1:
        raise ConfigError("iterations must be at least 1")
    if thinning < 1 or burn_in < 0:
        raise ConfigError("need thinning >= 1 and burn_in >= 0")
    rng = np.random.default_rng(seed)
    gibbs = _LabelGibbs(topology, prior, scheme)
    gibbs.init_sequential(rng)
    for _ in range(burn_in):
        gibbs.sweep(rng)
    draws = []
    for _ in range(iterations):
        for _ in range(thinning):
            gibbs.sweep(rng)
        draws.append(gibbs.partition())
    return draws


def _contingency(a, b):
    a_lab = a.labels if isinstance(a, Partition) else canonical_labels(a)
    b_lab = b.labels if isinstance(b, Partition) else canonical_labels(b)
    if a_lab.size != b_lab.size:
        raise ConfigError("partitions must cover the same number of cells")
    ka = int(a_lab.max()) + 1
    kb = int(b_lab.max()) + 1
    joint = np.bincount(a_lab * kb + b_lab, minlength=ka * kb).reshape(ka, kb)
    return joint


def rand_index(a, b):
    """Fraction of cell pairs on which two partitions agree (both together
    or both apart)."""
    joint = _contingency(a, b)
    n = joint.sum()
    if n < 2:
        raise ConfigError("Rand index needs at least two cells")

    def c2(x):
        return x * (x - 1) / 2.0

    pairs = c2(float(n))
    same_ab = c2(joint.astype(float)).sum()
    same_a = c2(joint.sum(axis=1).astype(float)).sum()
    same_b = c2(joint.sum(axis=0).astype(float)).sum()
    disagreements = same_a + same_b - 2.0 * same_ab
    return float((pairs - disagreements) / pairs)


def vi_distance(a, b):
    """Variation of information between two partitions, in nats.

    Computed cell-wise as ``sum_ij p_ij (log p_i + log p_j - 2 log p_ij)``
    (algebraically H(a) + H(b) - 2 MI), which makes the self-distance an
    exact zero.
    """
    joint = _contingency(a, b).astype(float)
    n = joint.sum()
    pa = joint.sum(axis=1) / n
    pb = joint.sum(axis=0) / n
    pj = joint / n
    nz = pj > 0
    terms = np.log(pa)[:, None] + np.log(pb)[None, :] - 2.0 * np.log(pj, where=nz)
    return float(max((pj[nz] * terms[nz]).sum(), 0.0))
