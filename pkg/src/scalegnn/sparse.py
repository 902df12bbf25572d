"""Compressed sparse row matrices for graph propagation.

Thin immutable wrapper over (indptr, indices, values) triples with scipy CSR
objects as the multiply kernel. Construction validates the structure:
indptr monotone from 0 to nnz, column indices strictly increasing inside each
row (which also rules out duplicate entries), all values finite.
"""

import numpy as np
import scipy.sparse as sps


class SparseFormatError(ValueError):
    """CSR structure is malformed (bad indptr, duplicates, out-of-range)."""


class SparseMatrix:
    """Immutable CSR matrix. Mutating the stored arrays is unsupported."""

    __slots__ = ("rows", "cols", "indptr", "indices", "values", "_scipy",
                 "_scipy_t", "_row_index")

    def __init__(self, rows, cols, indptr, indices, values):
        indptr = np.asarray(indptr, dtype=np.int64)
        indices = np.asarray(indices, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if rows < 0 or cols < 0:
            raise SparseFormatError("negative dimension")
        if indptr.ndim != 1 or indptr.size != rows + 1:
            raise SparseFormatError(f"indptr must have length rows+1={rows + 1}")
        if indptr[0] != 0 or indptr[-1] != indices.size:
            raise SparseFormatError("indptr must run from 0 to nnz")
        if np.any(np.diff(indptr) < 0):
            raise SparseFormatError("indptr must be non-decreasing")
        if indices.size != values.size:
            raise SparseFormatError("indices and values lengths differ")
        if indices.size and (indices.min() < 0 or indices.max() >= cols):
            raise SparseFormatError("column index out of range")
        for r in range(rows):
            seg = indices[indptr[r]:indptr[r + 1]]
            if seg.size > 1 and np.any(np.diff(seg) <= 0):
                raise SparseFormatError(
                    f"row {r}: column indices must be strictly increasing "
                    "(duplicates are rejected)"
                )
        if values.size and not np.all(np.isfinite(values)):
            raise SparseFormatError("values must be finite")
        self.rows = rows
        self.cols = cols
        self.indptr = indptr
        self.indices = indices
        self.values = values
        self._scipy = None
        self._scipy_t = None
        self._row_index = None

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_coo(cls, rows, cols, row_ids, col_ids, values):
        """Build from coordinate triples; duplicate (row, col) pairs raise."""
        row_ids = np.asarray(row_ids, dtype=np.int64)
        col_ids = np.asarray(col_ids, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not (row_ids.size == col_ids.size == values.size):
            raise SparseFormatError("coordinate array lengths differ")
        if row_ids.size and (row_ids.min() < 0 or row_ids.max() >= rows):
            raise SparseFormatError("row index out of range")
        order = np.lexsort((col_ids, row_ids))
        r, c, v = row_ids[order], col_ids[order], values[order]
        if r.size > 1:
            same = (np.diff(r) == 0) & (np.diff(c) == 0)
            if np.any(same):
                k = int(np.flatnonzero(same)[0])
                raise SparseFormatError(f"duplicate entry at ({r[k]}, {c[k]})")
        indptr = np.zeros(rows + 1, dtype=np.int64)
        np.add.at(indptr, r + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(rows, cols, indptr, c, v)

    @classmethod
    def from_dense(cls, arr, tol=0.0):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise SparseFormatError("from_dense expects a 2-D array")
        mask = np.abs(arr) > tol
        r, c = np.nonzero(mask)
        return cls.from_coo(arr.shape[0], arr.shape[1], r, c, arr[r, c])

    # -- views --------------------------------------------------------------

    @property
    def nnz(self):
        return self.indices.size

    def row_index(self):
        """Row id of each stored entry, aligned with indices/values."""
        if self._row_index is None:
            counts = np.diff(self.indptr)
            self._row_index = np.repeat(np.arange(self.rows, dtype=np.int64),
                                        counts)
        return self._row_index

    def to_scipy(self):
        if self._scipy is None:
            self._scipy = sps.csr_matrix(
                (self.values, self.indices, self.indptr),
                shape=(self.rows, self.cols))
        return self._scipy

    def to_scipy_t(self):
        if self._scipy_t is None:
            self._scipy_t = self.to_scipy().T.tocsr()
        return self._scipy_t

    def with_values(self, values):
        """scipy CSR sharing this pattern but carrying the given values."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.nnz,):
            raise SparseFormatError(f"expected {self.nnz} values")
        return sps.csr_matrix((values, self.indices, self.indptr),
                              shape=(self.rows, self.cols))

    def replace_values(self, values):
        """New SparseMatrix with the same pattern and different values."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.nnz,):
            raise SparseFormatError(f"expected {self.nnz} values")
        return SparseMatrix(self.rows, self.cols, self.indptr, self.indices,
                            values)

    def to_dense(self):
        return np.asarray(self.to_scipy().todense())

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.to_scipy() @ x

    def transpose(self):
        t = self.to_scipy().T.tocsr()
        t.sort_indices()
        return SparseMatrix(self.cols, self.rows, t.indptr.astype(np.int64),
                            t.indices.astype(np.int64), t.data)

    def row_sums(self):
        out = np.zeros(self.rows)
        np.add.at(out, self.row_index(), self.values)
        return out

    def col_sums(self):
        out = np.zeros(self.cols)
        np.add.at(out, self.indices, self.values)
        return out

    def column_normalized(self):
        """Divide every entry by its column sum; zero columns raise."""
        sums = self.col_sums()
        touched = np.zeros(self.cols, dtype=bool)
        touched[self.indices] = True
        if np.any(touched & (sums == 0.0)):
            raise SparseFormatError("column with entries sums to zero")
        safe = np.where(sums == 0.0, 1.0, sums)
        return self.replace_values(self.values / safe[self.indices])

    def __repr__(self):
        return f"SparseMatrix({self.rows}x{self.cols}, nnz={self.nnz})"
