import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from circaudit.data import Dataset, read_csv, split, write_csv


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_read_small_file(tmp_path):
    d = read_csv(write(tmp_path, "a,b,y\n1,0.5,2\n0,1.5,3\n1,2.5,4\n"), "y")
    assert d.n_rows == 3
    assert d.features == ["a", "b"]
    assert d.kinds == {"a": "binary", "b": "continuous", "y": "continuous"}
    np.testing.assert_array_equal(d.y, [2, 3, 4])


def test_binary_inference(tmp_path):
    d = read_csv(write(tmp_path, "z,y\n0,1\n1,2\n0,3\n"), "y")
    assert d.kinds["z"] == "binary"


def test_unparsable_cell_names_row_and_column(tmp_path):
    with pytest.raises(ValueError, match=r"row 2, column 'b'"):
        read_csv(write(tmp_path, "a,b\n1,2\n3,abc\n"))


def test_missing_target(tmp_path):
    with pytest.raises(KeyError, match="target"):
        read_csv(write(tmp_path, "a,b\n1,2\n"), "y")


def test_duplicate_header(tmp_path):
    with pytest.raises(ValueError, match="duplicate"):
        read_csv(write(tmp_path, "a,a\n1,2\n"))


def test_non_finite_rejected(tmp_path):
    with pytest.raises(ValueError, match="non-finite"):
        read_csv(write(tmp_path, "a,b\n1,nan\n"))


def test_ragged_row(tmp_path):
    with pytest.raises(ValueError, match="cells"):
        read_csv(write(tmp_path, "a,b\n1,2,3\n"))


def test_empty_file(tmp_path):
    with pytest.raises(ValueError, match="empty"):
        read_csv(write(tmp_path, ""))


@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.integers(0, 1)), min_size=1, max_size=30))
@settings(max_examples=40, deadline=None)
def test_round_trip_nine_digits(tmp_path_factory, rows):
    arr = np.array(rows, dtype=float)
    d = Dataset({"x": arr[:, 0], "b": arr[:, 1]}, "x")
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(d, path)
    back = read_csv(path, "x")
    np.testing.assert_allclose(back["x"], d["x"], rtol=1e-8, atol=1e-300)
    np.testing.assert_array_equal(back["b"], d["b"])
    assert back.names == d.names


def test_dataset_validation():
    with pytest.raises(ValueError, match="rows"):
        Dataset({"a": [1.0, 2.0], "b": [1.0]})
    with pytest.raises(ValueError, match="non-finite"):
        Dataset({"a": [1.0, np.inf]})
    with pytest.raises(ValueError, match="binary"):
        Dataset({"a": [0.0, 2.0]}, kinds={"a": "binary"})
    with pytest.raises(KeyError):
        Dataset({"a": [1.0]}, target="y")


def test_explicit_kind_overrides_inference():
    d = Dataset({"a": [0.0, 1.0, 1.0]}, kinds={"a": "continuous"})
    assert d.kinds["a"] == "continuous"


def test_select_keeps_target_and_order():
    d = Dataset({"a": [1.0], "b": [2.0], "y": [3.0], "c": [4.0]}, "y")
    s = d.select(["c", "a"])
    assert s.names == ["a", "y", "c"]
    with pytest.raises(KeyError):
        d.select(["zzz"])
    with pytest.raises(ValueError):
        d.drop(["y"])
    assert d.drop(["b"]).features == ["a", "c"]


def test_fingerprint_tracks_content():
    d = Dataset({"a": [1.0, 2.0], "y": [0.0, 1.0]}, "y")
    assert d.fingerprint() == Dataset({"a": [1.0, 2.0], "y": [0.0, 1.0]}, "y").fingerprint()
    assert d.fingerprint() != Dataset({"a": [1.0, 2.5], "y": [0.0, 1.0]}, "y").fingerprint()


class TestSplit:
    def make(self, n=1000):
        return Dataset({"x": np.arange(n, dtype=float), "y": np.zeros(n)}, "y", groups=np.arange(n) // 4)

    def test_sizes(self):
        tr, te = split(self.make(), 0.75, seed=1)
        assert (tr.n_rows, te.n_rows) == (750, 250)

    def test_deterministic(self):
        a, _ = split(self.make(), 0.75, seed=3)
        b, _ = split(self.make(), 0.75, seed=3)
        np.testing.assert_array_equal(a["x"], b["x"])

    def test_disjoint_and_exhaustive(self):
        tr, te = split(self.make(), 0.3, seed=2)
        together = np.sort(np.concatenate([tr["x"], te["x"]]))
        np.testing.assert_array_equal(together, np.arange(1000))

    def test_grouped_keeps_groups_whole(self):
        d = self.make()
        tr, te = split(d, 0.75, seed=0, by_group=True)
        assert not set(tr.groups) & set(te.groups)
        assert len(set(tr.groups)) == 188  # round(0.75 * 250)

    def test_query_design_proportions(self):
        # 2,000 queries split 1,500 / 500
        d = Dataset({"x": np.arange(8000.0)}, groups=np.arange(8000) // 4)
        tr, te = split(d, 0.75, seed=5, by_group=True)
        assert (len(set(tr.groups)), len(set(te.groups))) == (1500, 500)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1])
    def test_bad_fraction(self, fraction):
        with pytest.raises(ValueError):
            split(self.make(), fraction, 0)

    def test_empty_partition(self):
        with pytest.raises(ValueError, match="empty"):
            split(self.make(3), 0.1, 0)

    def test_grouped_without_groups(self):
        with pytest.raises(ValueError, match="groups"):
            split(Dataset({"x": np.arange(10.0)}), 0.5, 0, by_group=True)
