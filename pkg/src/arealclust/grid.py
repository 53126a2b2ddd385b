"""Rectangular areal lattices, 8-neighbor contiguity and Leroux-type precision matrices.

Cells of an ``rows x cols`` grid are linearized column-major: the cell in
(0-based) row ``r`` and column ``c`` has index ``c * rows + r``.  Two cells
are neighbors when they are distinct and within Chebyshev distance one of
each other, i.e. each interior cell touches the 8 cells surrounding it.
"""

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError

__all__ = [
    "GridTopology",
    "LerouxPrecision",
    "build_grid",
    "subgrid",
    "boundary_length",
    "total_boundary",
    "leroux_precision",
]


class GridTopology:
    """An areal lattice together with its contiguity structure.

    Parameters
    ----------
    rows, cols : int
        Shape of the bounding rectangular grid.
    adjacency : scipy.sparse.csr_matrix
        Symmetric 0/1 contiguity matrix with zero diagonal.

    Attributes
    ----------
    n_cells : int
        Number of cells (``rows * cols`` for a full grid).
    degrees : ndarray
        Neighbor count of every cell.
    """

    def __init__(self, rows, cols, adjacency):
        self.rows = int(rows)
        self.cols = int(cols)
        adjacency = adjacency.tocsr().astype(np.float64)
        adjacency.sort_indices()
        self.adjacency = adjacency
        self.n_cells = adjacency.shape[0]
        self.degrees = np.asarray(adjacency.sum(axis=1)).ravel().astype(np.int64)
        self._neighbor_lists = None
        self._laplacian_eigh = None

    @property
    def neighbor_lists(self):
        """Per-cell arrays of neighbor indices, in ascending order."""
        if self._neighbor_lists is None:
            A = self.adjacency
            self._neighbor_lists = [
                A.indices[A.indptr[i]:A.indptr[i + 1]].astype(np.int64)
                for i in range(self.n_cells)
            ]
        return self._neighbor_lists

    def laplacian(self):
        """Graph Laplacian ``diag(W 1) - W`` as a sparse CSR matrix."""
        D = sp.diags(self.degrees.astype(np.float64), format="csr")
        return (D - self.adjacency).tocsr()

    def laplacian_eigh(self):
        """Eigenvalues and eigenvectors of the Laplacian, cached.

        The same orthonormal basis diagonalizes every Leroux precision on
        this topology, which is what makes repeated Gaussian sampling and
        determinant evaluation cheap.
        """
        if self._laplacian_eigh is None:
            lam, vec = np.linalg.eigh(self.laplacian().toarray())
            lam = np.clip(lam, 0.0, None)
            self._laplacian_eigh = (lam, vec)
        return self._laplacian_eigh

    def to_json_dict(self):
        return {"rows": self.rows, "cols": self.cols, "order": "column-major"}

    def __repr__(self):
        return f"GridTopology(rows={self.rows}, cols={self.cols}, n_cells={self.n_cells})"


class LerouxPrecision:
    """Precision matrix ``Q(zeta) = zeta * (diag(W 1) - W) + (1 - zeta) * I``.

    Strictly positive definite for ``zeta`` in [0, 1); positive
    semi-definite with a single zero eigenvalue at ``zeta = 1`` on a
    connected grid.
    """

    def __init__(self, zeta, matrix):
        self.zeta = float(zeta)
        self.matrix = matrix

    def toarray(self):
        return self.matrix.toarray()


def build_grid(rows, cols):
    """Build the topology of a ``rows x cols`` grid with 8-neighbor contiguity.

    Parameters
    ----------
    rows, cols : int
        Positive grid dimensions.

    Returns
    -------
    GridTopology
    """
    rows = int(rows)
    cols = int(cols)
    if rows < 1 or cols < 1:
        raise ConfigError(f"grid dimensions must be positive, got {rows}x{cols}")
    n = rows * cols
    idx = np.arange(n).reshape(cols, rows).T  # idx[r, c] = c * rows + r
    src = []
    dst = []
    for dr, dc in ((1, 0), (0, 1), (1, 1), (1, -1)):
        r0 = max(0, -dr)
        r1 = rows - max(0, dr)
        c0 = max(0, -dc)
        c1 = cols - max(0, dc)
        if r0 >= r1 or c0 >= c1:
            continue
        a = idx[r0:r1, c0:c1].ravel()
        b = idx[r0 + dr:r1 + dr, c0 + dc:c1 + dc].ravel()
        src.append(a)
        dst.append(b)
    if src:
        a = np.concatenate(src)
        b = np.concatenate(dst)
        data = np.ones(2 * a.size)
        W = sp.coo_matrix(
            (data, (np.concatenate([a, b]), np.concatenate([b, a]))), shape=(n, n)
        ).tocsr()
    else:
        W = sp.csr_matrix((n, n))
    return GridTopology(rows, cols, W)


def subgrid(topology, cells):
    """Topology induced by a subset of cells of an existing grid.

    Useful for the small hand-checkable configurations (for example an
    L-shaped triple where all three cells are mutual neighbors).  The
    bounding ``rows``/``cols`` are kept for reference; degree invariants of
    full grids do not apply.
    """
    cells = np.asarray(cells, dtype=np.int64)
    if cells.size == 0:
        raise ConfigError("subgrid needs at least one cell")
    if np.unique(cells).size != cells.size:
        raise ConfigError("subgrid cells must be distinct")
    if cells.min() < 0 or cells.max() >= topology.n_cells:
        raise ConfigError("subgrid cell index out of range")
    W = topology.adjacency[np.ix_(cells, cells)].tocsr()
    return GridTopology(topology.rows, topology.cols, W)


def boundary_length(topology, labels, cell):
    """Number of neighbors of ``cell`` whose cluster differs from its own.

    Parameters
    ----------
    labels : ndarray or Partition
        Cluster assignment of every cell.
    cell : int
        0-based cell index.
    """
    labels = np.asarray(getattr(labels, "labels", labels))
    if cell < 0 or cell >= topology.n_cells:
        raise IndexError(f"cell index {cell} out of range [0, {topology.n_cells})")
    nbrs = topology.neighbor_lists[cell]
    return int(np.count_nonzero(labels[nbrs] != labels[cell]))


def total_boundary(topology, labels):
    """Sum of per-cell boundary lengths; every cross-cluster edge counts twice."""
    labels = np.asarray(getattr(labels, "labels", labels))
    W = topology.adjacency.tocoo()
    return int(np.count_nonzero(labels[W.row] != labels[W.col]))


def leroux_precision(topology, zeta):
    """Leroux precision ``Q(zeta)`` on a topology.

    ``zeta = 0`` gives the identity (independent effects); ``zeta = 1``
    gives the graph Laplacian (intrinsic autoregression).

    Returns
    -------
    LerouxPrecision
    """
    zeta = float(zeta)
    if not 0.0 <= zeta <= 1.0:
        raise ConfigError(f"zeta must lie in [0, 1], got {zeta}")
    n = topology.n_cells
    Q = (zeta * topology.laplacian() + (1.0 - zeta) * sp.identity(n, format="csr")).tocsr()
    Q.sort_indices()
    return LerouxPrecision(zeta, Q)
