import numpy as np
import pytest
import scipy.sparse as sp

from ndlu.errors import ParseError
from ndlu.mmio import (
    read_coords_file,
    read_matrix_market_file,
    read_vector_file,
    write_coords_file,
    write_matrix_market_file,
    write_vector_file,
)


def test_identity_parses(tmp_path):
    p = tmp_path / "a.mtx"
    p.write_text(
        "%%MatrixMarket matrix coordinate real general\n"
        "% a comment\n"
        "2 2 2\n"
        "1 1 1.0\n"
        "2 2 1.0\n"
    )
    m = read_matrix_market_file(p)
    assert np.array_equal(m.toarray(), np.eye(2))


def test_nnz_mismatch_names_line(tmp_path):
    p = tmp_path / "bad.mtx"
    p.write_text(
        "%%MatrixMarket matrix coordinate real general\n"
        "2 2 3\n"
        "1 1 1.0\n"
        "2 2 1.0\n"
    )
    with pytest.raises(ParseError) as ei:
        read_matrix_market_file(p)
    assert ei.value.line == 4


def test_bad_header_line_one(tmp_path):
    p = tmp_path / "bad.mtx"
    p.write_text("MatrixMarket but wrong\n1 1 0\n")
    with pytest.raises(ParseError) as ei:
        read_matrix_market_file(p)
    assert ei.value.line == 1

def test_malformed_entry_names_line(tmp_path):
    p = tmp_path / "bad.mtx"
    p.write_text(
        "%%MatrixMarket matrix coordinate real general\n"
        "2 2 1\n"
        "1 x 1.0\n"
    )
    with pytest.raises(ParseError) as ei:
        read_matrix_market_file(p)
    assert ei.value.line == 3


def test_index_out_of_range_names_line(tmp_path):
    p = tmp_path / "bad.mtx"
    p.write_text(
        "%%MatrixMarket matrix coordinate real general\n"
        "2 2 1\n"
        "3 1 1.0\n"
    )
    with pytest.raises(ParseError) as ei:
        read_matrix_market_file(p)
    assert ei.value.line == 3


def test_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(42)
    m = sp.random(17, 17, density=0.2, random_state=np.random.RandomState(0), format="csr")
    m.data[:] = rng.standard_normal(m.nnz) * np.exp(rng.uniform(-30, 30, m.nnz))
    p = tmp_path / "rt.mtx"
    write_matrix_market_file(p, m)
    back = read_matrix_market_file(p)
    assert np.array_equal(back.indptr, m.indptr)
    assert np.array_equal(back.indices, m.indices)
    assert np.array_equal(back.data, m.data)


def test_symmetric_storage_mirrors(tmp_path):
    p = tmp_path / "s.mtx"
    p.write_text(
        "%%MatrixMarket matrix coordinate real symmetric\n"
        "2 2 3\n"
        "1 1 2.0\n"
        "2 1 -1.0\n"
        "2 2 2.0\n"
    )
    m = read_matrix_market_file(p).toarray()
    assert np.array_equal(m, [[2.0, -1.0], [-1.0, 2.0]])


def test_complex_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    dense = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    dense[rng.random((5, 5)) < 0.5] = 0
    m = sp.csr_matrix(dense)
    p = tmp_path / "c.mtx"
    write_matrix_market_file(p, m)
    back = read_matrix_market_file(p)
    assert np.array_equal(back.toarray(), dense)


def test_coords_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    xy = rng.standard_normal((20, 2))
    p = tmp_path / "xy.txt"
    write_coords_file(p, xy)
    back = read_coords_file(p)
    assert np.array_equal(back, xy)


def test_coords_malformed_names_line(tmp_path):
    p = tmp_path / "xy.txt"
    p.write_text("0.0 0.0\n1.0\n")
    with pytest.raises(ParseError) as ei:
        read_coords_file(p)
    assert ei.value.line == 2


def test_vector_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    v = rng.standard_normal(31)
    p = tmp_path / "b.txt"
    write_vector_file(p, v)
    assert np.array_equal(read_vector_file(p), v)
