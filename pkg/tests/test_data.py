import numpy as np
import pytest

from copyshield.data import (
    DatasetFormatError,
    SyntheticSpec,
    class_means,
    gen_synthetic_dataset,
    load_csv_dataset,
    save_csv_dataset,
)


def test_synthetic_is_deterministic_and_balanced():
    spec = SyntheticSpec(4, 5, 30, separation=3.0, seed=9, test_count=41)
    a, at = gen_synthetic_dataset(spec)
    b, bt = gen_synthetic_dataset(spec)
    assert a.X.tobytes() == b.X.tobytes() and at.y.tobytes() == bt.y.tobytes()
    assert np.bincount(a.y).tolist() == [30] * 4
    assert len(at) == 41
    assert a.X.min() >= 0 and a.X.max() <= 1


def test_closest_means_at_separation():
    spec = SyntheticSpec(5, 7, 1, separation=2.5, seed=1)
    M = class_means(spec)
    d = [np.linalg.norm(M[i] - M[j]) for i in range(5) for j in range(i + 1, 5)]
    assert min(d) == pytest.approx(2.5)


def test_csv_round_trip(tmp_path):
    tr, _ = gen_synthetic_dataset(SyntheticSpec(3, 4, 5, separation=2.0, seed=2))
    path = tmp_path / "d.csv"
    save_csv_dataset(tr, path)
    back = load_csv_dataset(path, 3).dataset
    assert back.X.tobytes() == tr.X.tobytes()
    assert back.y.tolist() == tr.y.tolist()


def test_csv_without_header_and_clipping(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("0.5,1.5,1\n-0.5,0.25,0\n")
    res = load_csv_dataset(path)
    assert res.clipped == 2
    assert res.dataset.X.tolist() == [[0.5, 1.0], [0.0, 0.25]]
    assert res.dataset.num_classes == 2


@pytest.mark.parametrize("text,fragment", [
    ("a,b,label\n0.1,x,0\n", "row 1, column 1"),
    ("0.1,0.2,0\n0.1,0\n", "expected 2 values"),
    ("0.1,0.2,7\n", "out of range"),
    ("0.1,0.2,zz\n0.3,0.4,zz\n", "bad label"),
    ("0.1,nan,0\n", "non-finite"),
    ("", "no data rows"),
])
def test_csv_errors_locate_the_problem(tmp_path, text, fragment):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(DatasetFormatError, match=fragment):
        load_csv_dataset(path, 3)
