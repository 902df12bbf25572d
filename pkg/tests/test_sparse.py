"""CSR container tests against dense-matrix oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scalegnn.sparse import SparseFormatError, SparseMatrix


def random_dense(seed, rows=7, cols=5, density=0.4):
    rng = np.random.default_rng(seed)
    return rng.uniform(-2, 2, size=(rows, cols)) \
        * (rng.random((rows, cols)) < density)


def test_from_coo_round_trip():
    sp = SparseMatrix.from_coo(3, 4, [2, 0, 0], [1, 3, 0], [5.0, 7.0, 1.0])
    dense = np.zeros((3, 4))
    dense[2, 1], dense[0, 3], dense[0, 0] = 5.0, 7.0, 1.0
    assert np.array_equal(sp.to_dense(), dense)
    assert sp.nnz == 3


def test_duplicate_coordinates_rejected():
    with pytest.raises(SparseFormatError):
        SparseMatrix.from_coo(2, 2, [0, 0], [1, 1], [1.0, 2.0])


def test_out_of_range_rejected():
    with pytest.raises(SparseFormatError):
        SparseMatrix.from_coo(2, 2, [0], [2], [1.0])
    with pytest.raises(SparseFormatError):
        SparseMatrix.from_coo(2, 2, [2], [0], [1.0])


def test_malformed_csr_rejected():
    with pytest.raises(SparseFormatError):
        SparseMatrix(2, 2, [0, 1], [0], [1.0])  # indptr too short
    with pytest.raises(SparseFormatError):
        SparseMatrix(2, 2, [0, 2, 1], [0, 1], [1.0, 1.0])  # decreasing
    with pytest.raises(SparseFormatError):
        SparseMatrix(1, 3, [0, 2], [1, 1], [1.0, 1.0])  # duplicate col
    with pytest.raises(SparseFormatError):
        SparseMatrix(1, 1, [0, 1], [0], [np.nan])  # non-finite


def test_transpose_matches_dense():
    dense = random_dense(1)
    sp = SparseMatrix.from_dense(dense)
    assert np.array_equal(sp.transpose().to_dense(), dense.T)


def test_row_and_col_sums():
    dense = random_dense(2)
    sp = SparseMatrix.from_dense(dense)
    assert np.allclose(sp.row_sums(), dense.sum(axis=1))
    assert np.allclose(sp.col_sums(), dense.sum(axis=0))


def test_column_normalized_is_stochastic():
    dense = np.abs(random_dense(3)) + np.full((7, 5), 0.0)
    dense[0, :] = 0.3  # make every column non-empty
    sp = SparseMatrix.from_dense(dense).column_normalized()
    assert np.allclose(sp.col_sums(), 1.0, atol=1e-12)


def test_column_normalized_zero_column_errors():
    sp = SparseMatrix.from_coo(2, 2, [0, 1], [0, 0], [1.0, -1.0])
    with pytest.raises(SparseFormatError):
        sp.column_normalized()


def test_matvec_matches_dense():
    dense = random_dense(4)
    sp = SparseMatrix.from_dense(dense)
    x = np.random.default_rng(5).normal(size=5)
    assert np.allclose(sp.matvec(x), dense @ x)


def test_replace_values_keeps_pattern():
    sp = SparseMatrix.from_dense(random_dense(6))
    new = sp.replace_values(np.ones(sp.nnz))
    assert np.array_equal(new.indices, sp.indices)
    assert np.array_equal(new.indptr, sp.indptr)
    assert np.all(new.values == 1.0)
    with pytest.raises(SparseFormatError):
        sp.replace_values(np.ones(sp.nnz + 1))


def test_row_index_alignment():
    dense = random_dense(7)
    sp = SparseMatrix.from_dense(dense)
    ri = sp.row_index()
    for pos in range(sp.nnz):
        assert dense[ri[pos], sp.indices[pos]] == sp.values[pos]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_dense_round_trip_property(seed):
    dense = random_dense(seed, rows=6, cols=6, density=0.5)
    sp = SparseMatrix.from_dense(dense)
    assert np.array_equal(sp.to_dense(), dense)
    assert np.array_equal(sp.transpose().transpose().to_dense(), dense)
