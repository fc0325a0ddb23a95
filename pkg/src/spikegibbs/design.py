"""Design matrix, observation weights, and the dynamic cross-product cache.

The sampler only ever touches columns of the weighted Gram matrix for
coordinates that are (or recently were) in the active set, so those columns
are computed on demand, pooled in block-allocated storage, and freed once a
coordinate has been inactive long enough.  The residual-correlation vector
``X'W(y - X beta)`` is maintained incrementally from those cached columns.
"""

import numpy as np

from .errors import DimensionMismatch, MissingColumn


class DesignMatrix:
    """Dense n-by-p design held fully in memory.

    Rows are observations.  ``column_norms`` caches the unweighted
    sum of squares of every column.
    """

    def __init__(self, values):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionMismatch("design must be a 2-d array")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise DimensionMismatch("design needs at least one row and column")
        if not np.all(np.isfinite(values)):
            raise DimensionMismatch("design contains non-finite entries")
        self.values = values
        self.n, self.p = values.shape
        self.column_norms = np.einsum("ij,ij->j", values, values)

    def __repr__(self):
        return f"DesignMatrix(n={self.n}, p={self.p})"


class ObservationWeights:
    """Per-observation precision scales, with an epoch stamp.

    The epoch increments on every mutation so downstream caches can detect
    staleness lazily instead of refreshing eagerly.
    """

    def __init__(self, w):
        w = np.asarray(w, dtype=np.float64)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        self._w = w.copy()
        self.epoch = 0

    @property
    def w(self):
        return self._w

    def set(self, w_new):
        w_new = np.asarray(w_new, dtype=np.float64)
        if w_new.shape != self._w.shape:
            raise DimensionMismatch("weight vector length changed")
        if np.any(w_new < 0) or not np.all(np.isfinite(w_new)):
            raise ValueError("weights must be finite and nonnegative")
        self._w[:] = w_new
        self.epoch += 1

    @classmethod
    def ones(cls, n):
        return cls(np.ones(n))


class ActiveSet:
    """Ordered coordinate list of the currently nonzero coefficients."""

    def __init__(self, indices=()):
        self.indices = np.array(sorted(indices), dtype=np.int64)

    @property
    def size(self):
        return len(self.indices)

    def replace(self, indices):
        self.indices = np.asarray(np.sort(np.asarray(list(indices), dtype=np.int64)))

    def __contains__(self, j):
        pos = np.searchsorted(self.indices, j)
        return pos < len(self.indices) and self.indices[pos] == j

    def __iter__(self):
        return iter(self.indices)


class XtXCache:
    """Block-allocated pool of weighted Gram columns.

    Each pooled row r holds the full length-p weighted column
    ``sum_i X_ij X_ik w_i`` for the coordinate ``row_coord[r]``.  Columns
    carry the weights epoch at fill time; a stale column is refreshed in
    place the next time it is requested.  Capacity grows in blocks of
    ``block_size`` and columns unused for ``eviction_age`` iterations are
    released unless their coordinate is active.
    """

    def __init__(self, X, weights, block_size=16, eviction_age=100):
        self.X = X
        self.weights = weights
        self.block_size = int(block_size)
        self.eviction_age = int(eviction_age)
        p = X.p
        self.pool = np.zeros((self.block_size, p))
        self.col_row = np.full(p, -1, dtype=np.int64)
        self.row_coord = np.full(self.block_size, -1, dtype=np.int64)
        self.row_epoch = np.full(self.block_size, -1, dtype=np.int64)
        self.row_last_use = np.zeros(self.block_size, dtype=np.int64)
        self._free = list(range(self.block_size - 1, -1, -1))
        self._wssq = None
        self._wssq_epoch = -1

    @property
    def capacity(self):
        return self.pool.shape[0]

    @property
    def n_cached(self):
        return self.capacity - len(self._free)

    def grow(self):
        """Extend the pool by one allocation block."""
        old = self.capacity
        new_pool = np.zeros((old + self.block_size, self.X.p))
        new_pool[:old] = self.pool
        self.pool = new_pool
        self.row_coord = np.concatenate(
            [self.row_coord, np.full(self.block_size, -1, dtype=np.int64)]
        )
        self.row_epoch = np.concatenate(
            [self.row_epoch, np.full(self.block_size, -1, dtype=np.int64)]
        )
        self.row_last_use = np.concatenate(
            [self.row_last_use, np.zeros(self.block_size, dtype=np.int64)]
        )
        self._free.extend(range(old + self.block_size - 1, old - 1, -1))

    def _fill(self, row, j):
        X = self.X.values
        self.pool[row, :] = X.T @ (X[:, j] * self.weights.w)
        self.row_epoch[row] = self.weights.epoch

    def ensure_column(self, j, current_iter=0):
        """Return the weighted Gram column for j, filling or refreshing it."""
        if not 0 <= j < self.X.p:
            raise IndexError(f"coordinate {j} out of range")
        row = self.col_row[j]
        if row < 0:
            if not self._free:
                self.grow()
            row = self._free.pop()
            self.col_row[j] = row
            self.row_coord[row] = j
            self._fill(row, j)
        elif self.row_epoch[row] != self.weights.epoch:
            self._fill(row, j)
        self.row_last_use[row] = current_iter
        return self.pool[row]

    def has_fresh(self, j):
        row = self.col_row[j]
        return row >= 0 and self.row_epoch[row] == self.weights.epoch

    def column(self, j):
        """Cached column for j without filling; raises if absent."""
        row = self.col_row[j]
        if row < 0:
            raise MissingColumn(f"column {j} is not cached")
        return self.pool[row]

    def evict_stale(self, current_iter, active):
        """Free columns inactive for >= eviction_age iterations."""
        active_idx = set(int(a) for a in active)
        evicted = 0
        for row in range(self.capacity):
            j = self.row_coord[row]
            if j < 0 or j in active_idx:
                continue
            if current_iter - self.row_last_use[row] >= self.eviction_age:
                self.col_row[j] = -1
                self.row_coord[row] = -1
                self.row_epoch[row] = -1
                self._free.append(row)
                evicted += 1
        return evicted

    def weighted_ssq(self):
        """Vector of weighted column sums of squares, cached per epoch."""
        if self._wssq_epoch != self.weights.epoch:
            X = self.X.values
            self._wssq = np.einsum("ij,ij,i->j", X, X, self.weights.w)
            self._wssq_epoch = self.weights.epoch
        return self._wssq


class ResidCorrelation:
    """The vector X'W(y - X beta), maintained incrementally."""

    def __init__(self, xt_resid, stale=False):
        self.xt_resid = np.asarray(xt_resid, dtype=np.float64)
        self.stale = bool(stale)

    def update_after_coordinate(self, j, delta_beta, cache):
        """Apply xt_resid -= delta_beta * column(j) after a coordinate step."""
        if delta_beta == 0.0:
            return self
        row = cache.col_row[j]
        if row < 0 or cache.row_epoch[row] != cache.weights.epoch:
            raise MissingColumn(f"column {j} missing or stale during update")
        self.xt_resid -= delta_beta * cache.pool[row]
        return self


def rebuild_xt_resid(X, y, beta, weights):
    """Exact dense recomputation of X'W(y - X beta).

    Used at chain start, after any weight or response refresh, and as the
    oracle the incremental path is checked against.
    """
    y = np.asarray(y, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if y.shape[0] != X.n or beta.shape[0] != X.p:
        raise DimensionMismatch("response/coefficient lengths do not match design")
    resid = y - X.values @ beta
    return ResidCorrelation(X.values.T @ (weights.w * resid), stale=False)
