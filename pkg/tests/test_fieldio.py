import numpy as np
import pytest

from cdii import fieldio
from cdii.fields import Grid2D, Matrix2Field, ScalarField2, VectorField2


@pytest.fixture
def g():
    return Grid2D(4, 3, 0.1, -0.2, 0.3)


def test_scalar_round_trip_is_bit_exact(g):
    rng = np.random.default_rng(3)
    f = ScalarField2(g, rng.normal(size=g.shape) * 1e-7 + np.pi)
    text = fieldio.dumps(f)
    assert text.splitlines()[0] == "FLD2 4 3 0.10000000000000001 -0.20000000000000001 0.29999999999999999"
    assert len(text.splitlines()) == 1 + g.ny
    back = fieldio.loads(text)
    assert isinstance(back, ScalarField2) and back.grid == g
    np.testing.assert_array_equal(back.values, f.values)
    assert fieldio.dumps(back) == text


def test_vector_and_matrix_round_trip(g, tmp_path):
    rng = np.random.default_rng(4)
    v = VectorField2(g, rng.normal(size=g.shape), rng.normal(size=g.shape))
    fieldio.save(tmp_path / "v.fld", v)
    assert (tmp_path / "v.fld").read_text().startswith("COMP cx\nFLD2")
    w = fieldio.load(tmp_path / "v.fld")
    np.testing.assert_array_equal(w.cx, v.cx)
    np.testing.assert_array_equal(w.cy, v.cy)
    m = Matrix2Field(g, *(rng.normal(size=g.shape) for _ in range(4)))
    m2 = fieldio.loads(fieldio.dumps(m))
    np.testing.assert_array_equal(m2.stack(), m.stack())


def test_row_order_is_increasing_y(g):
    f = ScalarField2.from_function(g, lambda x, y: y)
    rows = fieldio.dumps(f).splitlines()[1:]
    assert [float(r.split()[0]) for r in rows] == pytest.approx(list(g.y))


@pytest.mark.parametrize("text", [
    "",
    "FLD2 3 3 1 0\n0 0 0\n0 0 0\n0 0 0\n",
    "FLD2 3 3 1 0 0\n0 0 0\n0 0 0\n",
    "FLD2 3 3 1 0 0\n0 0\n0 0 0\n0 0 0\n",
    "COMP cx\nFLD2 3 3 1 0 0\n0 0 0\n0 0 0\n0 0 0\n",
])
def test_malformed_input(text):
    with pytest.raises(fieldio.FormatError):
        fieldio.loads(text)


def test_kv_round_trip():
    d = {"a": "1", "b.c": "x y"}
    assert fieldio.parse_kv("# c\n" + fieldio.dump_kv(d)) == d
    with pytest.raises(fieldio.FormatError):
        fieldio.parse_kv("novalue\n")
