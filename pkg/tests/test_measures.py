import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from prwbcd.measures import (
    DiscreteMeasure,
    InstanceError,
    PointCloud,
    ProblemInstance,
    cost_sup,
    guess_format,
    load_instance,
    read_measure,
    save_instance,
    write_measure,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_uniform_measure():
    mu = DiscreteMeasure.uniform(np.arange(6.0).reshape(3, 2))
    assert mu.n == 3 and mu.d == 2
    np.testing.assert_allclose(mu.weights, 1 / 3)


def test_arrays_are_frozen():
    mu = DiscreteMeasure.uniform(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        mu.points[0, 0] = 1.0


@pytest.mark.parametrize(
    "weights, msg",
    [
        ([0.5, 0.5, 0.0], "zero weight in row 2"),
        ([0.6, 0.6, -0.2], "zero weight in row 2"),
        ([0.3, 0.3, 0.3], "off simplex"),
        ([0.5, np.nan, 0.5], "non-finite"),
        ([0.5, 0.5], "2 weights for 3 atoms"),
    ],
)
def test_bad_weights(weights, msg):
    with pytest.raises(InstanceError, match=msg):
        DiscreteMeasure(PointCloud(np.zeros((3, 2))), weights)


def test_simplex_tolerance_is_tight():
    w = np.full(4, 0.25)
    w[0] += 5e-13
    DiscreteMeasure(PointCloud(np.zeros((4, 1))), w)
    w[0] += 1e-11
    with pytest.raises(InstanceError, match="off simplex"):
        DiscreteMeasure(PointCloud(np.zeros((4, 1))), w)


def test_non_finite_points_rejected():
    pts = np.zeros((3, 2))
    pts[1, 1] = np.inf
    with pytest.raises(InstanceError, match="row 1"):
        PointCloud(pts)


def test_instance_mismatches():
    with pytest.raises(InstanceError, match="dimension mismatch"):
        ProblemInstance.from_arrays(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(InstanceError, match="unequal atom counts"):
        ProblemInstance.from_arrays(np.zeros((3, 2)), np.zeros((4, 2)))


def test_cost_sup_hand_example():
    X = np.array([[0.0, 0.0], [1.0, 0.0]])
    Y = np.array([[0.0, 2.0], [3.0, 0.0]])
    inst = ProblemInstance.from_arrays(X, Y)
    # (0,0)-(3,0) is the farthest pair: 9
    assert cost_sup(inst) == 9.0
    assert inst.metadata()["cost_sup"] == 9.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (7, 3), elements=finite), arrays(np.float64, (7, 3), elements=finite))
def test_cost_sup_matches_dense(X, Y):
    inst = ProblemInstance.from_arrays(X, Y)
    C = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(-1)
    assert math.isclose(inst.cost_sup, C.max(), rel_tol=1e-12, abs_tol=1e-9)
    np.testing.assert_allclose(inst.cost_matrix(), C, rtol=1e-12, atol=1e-9)


def test_cost_sup_is_blockwise_exact():
    rng = np.random.default_rng(3)
    X, Y = rng.normal(size=(2500, 2)), rng.normal(size=(2500, 2))
    X[1777] = [40.0, 40.0]
    inst = ProblemInstance.from_arrays(X, Y)
    assert inst.cost_sup == pytest.approx(((X[1777] - Y) ** 2).sum(1).max())


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_round_trip_is_bit_exact(tmp_path, fmt):
    rng = np.random.default_rng(0)
    w = rng.random(9)
    w /= w.sum()
    mu = DiscreteMeasure(PointCloud(rng.normal(size=(9, 4))), w)
    path = tmp_path / f"mu.{fmt}"
    write_measure(mu, path, fmt)
    back = read_measure(path, fmt)
    assert np.array_equal(back.points, mu.points)
    assert np.array_equal(back.weights, mu.weights)


def test_csv_header_and_comments(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("# a comment\nweight,x,y\n0.25,1,2\n\n0.75,3,4\n")
    mu = read_measure(path)
    np.testing.assert_array_equal(mu.points, [[1, 2], [3, 4]])
    np.testing.assert_array_equal(mu.weights, [0.25, 0.75])


def test_csv_without_header(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("0.5,1\n0.5,2\n")
    assert read_measure(path).d == 1


def test_jsonl_list_rows(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text("[0.5, 1, 2]\n" + json.dumps({"weight": 0.5, "coords": [3, 4]}) + "\n")
    np.testing.assert_array_equal(read_measure(path, "jsonl").points, [[1, 2], [3, 4]])


def test_normalize_counts(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("3,0\n1,1\n")
    with pytest.raises(InstanceError, match="off simplex"):
        read_measure(path)
    np.testing.assert_allclose(read_measure(path, normalize=True).weights, [0.75, 0.25])


@pytest.mark.parametrize(
    "text, msg",
    [
        ("0.5,1,2\n0.5,3\n", "row 1 has 1 coordinates, expected 2"),
        ("0.5,1\n0.5,abc\n", "parse failure"),
        ("", "no atoms"),
        ("1.0\n", "at least one coordinate"),
        ("0.5,1\n0.5,nan\n", "non-finite"),
    ],
)
def test_malformed_csv(tmp_path, text, msg):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(InstanceError, match=msg):
        read_measure(path)


def test_missing_file_names_path(tmp_path):
    missing = tmp_path / "nope.csv"
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        read_measure(missing)


def test_unknown_format(tmp_path):
    with pytest.raises(InstanceError, match="unknown format"):
        read_measure(tmp_path / "x", format="xml")


def test_save_and_load_instance(tmp_path):
    rng = np.random.default_rng(1)
    inst = ProblemInstance.from_arrays(rng.normal(size=(5, 3)), rng.normal(size=(5, 3)))
    save_instance(inst, tmp_path / "a.jsonl", tmp_path / "b.jsonl", "jsonl")
    back = load_instance(tmp_path / "a.jsonl", tmp_path / "b.jsonl", guess_format(tmp_path / "a.jsonl"))
    assert back.cost_sup == inst.cost_sup
    assert guess_format("x.csv") == "csv"
