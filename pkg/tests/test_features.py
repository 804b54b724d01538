import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import centroid_by_enumeration, random_affine_matrix
from polaffini.affine import AffineTransform, PointSet
from polaffini.errors import EmptyPointSet, InsufficientPoints
from polaffini.features import LabelSelection, extract_centroids, label_counts, pair_point_sets
from polaffini.volume_io import LabelVolume

seeds = st.integers(0, 2 ** 32 - 1)


def test_single_voxel():
    data = np.zeros((5, 5, 6), np.int32)
    data[2, 3, 4] = 7
    p = extract_centroids(LabelVolume(data, np.eye(4)))
    assert list(p.labels) == [7] and np.array_equal(p.points[0], [2, 3, 4])


def test_cube_two_mm():
    data = np.zeros((10, 10, 10), np.int32)
    data[4:7, 4:7, 4:7] = 5
    p = extract_centroids(LabelVolume(data, np.diag([2.0, 2, 2, 1])))
    assert np.allclose(p.points[0], [10, 10, 10], atol=1e-12)


def test_l_shape_matches_enumeration():
    data = np.zeros((8, 8, 8), np.int32)
    data[1:6, 1, 1] = 3
    data[1, 1:5, 1] = 3
    data[1, 1, 1:4] = 3
    aff = AffineTransform.from_matrix(random_affine_matrix(np.random.default_rng(0)))
    p = extract_centroids(LabelVolume(data, aff))
    assert np.abs(p.points[0] - centroid_by_enumeration(data, aff, 3)).max() <= 1e-12


@given(seeds)
def test_random_volume_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    data = rng.integers(0, 6, size=(6, 5, 7))
    aff = AffineTransform.from_matrix(random_affine_matrix(rng))
    p = extract_centroids(LabelVolume(data, aff))
    for label, point in p.as_dict().items():
        assert np.abs(point - centroid_by_enumeration(data, aff, label)).max() <= 1e-10


def test_background_and_empty():
    with pytest.raises(EmptyPointSet):
        extract_centroids(LabelVolume(np.zeros((3, 3, 3), np.int32), np.eye(4)))
    data = np.zeros((3, 3, 3), np.int32)
    data[0, 0, 0] = 2
    with pytest.raises(EmptyPointSet):
        extract_centroids(LabelVolume(data, np.eye(4)), LabelSelection({2}))


@given(seeds)
def test_centroid_equivariance(seed):
    rng = np.random.default_rng(seed)
    data = rng.integers(0, 10, size=(6, 6, 6))
    base = AffineTransform.from_matrix(random_affine_matrix(rng))
    a = AffineTransform.from_matrix(random_affine_matrix(rng))
    p0 = extract_centroids(LabelVolume(data, base))
    p1 = extract_centroids(LabelVolume(data, a @ base))
    assert np.abs(p1.points - a(p0.points)).max() <= 1e-10 * max(1.0, np.abs(p1.points).max())


@given(seeds)
def test_merge_equals_weighted_average(seed):
    rng = np.random.default_rng(seed)
    data = rng.integers(0, 8, size=(7, 7, 7))
    aff = np.diag([1.5, 2.0, 1.0, 1.0])
    sel = LabelSelection(frozenset(), {3: 50, 4: 50, 5: 51})
    merged = extract_centroids(LabelVolume(data, aff), sel).as_dict()
    plain = extract_centroids(LabelVolume(data, aff)).as_dict()
    labels, counts = label_counts(data)
    count = dict(zip(labels.tolist(), counts.tolist()))
    for group, members in ((50, [3, 4]), (51, [5])):
        present = [m for m in members if m in plain]
        if not present:
            continue
        w = np.array([count[m] for m in present], float)
        expected = (np.array([plain[m] for m in present]) * w[:, None]).sum(0) / w.sum()
        assert np.abs(merged[group] - expected).max() <= 1e-10
    assert not {3, 4, 5} & set(merged)


def test_selection_parse_and_format():
    text = "# comment\n2\n41  # trailing\nmerge 1002 3\n\n"
    sel = LabelSelection.parse(text)
    assert sel.excluded == {2, 41} and sel.merge_map == {1002: 3}
    assert LabelSelection.parse(sel.format()) == sel
    with pytest.raises(ValueError):
        LabelSelection.parse("merge 1\n")
    with pytest.raises(ValueError):
        LabelSelection({5}, {5: 6})


def test_dkt_default_excludes_four_regions():
    sel = LabelSelection.dkt_default()
    assert sel.excluded == {2, 41, 77, 24}


def test_pairing_identity():
    p = PointSet([1, 2, 3, 4], np.eye(4, 3))
    a, b = pair_point_sets(p, p)
    assert np.array_equal(a.labels, p.labels) and np.array_equal(b.points, p.points)


def test_pairing_drops_missing_label():
    r = PointSet([1, 2, 3, 4, 10], np.arange(15.0).reshape(5, 3))
    m = PointSet([1, 2, 3, 4], np.arange(12.0).reshape(4, 3) + 1)
    a, b = pair_point_sets(r, m)
    assert list(a.labels) == list(b.labels) == [1, 2, 3, 4]


@given(seeds)
def test_pairing_dictionary_oracle(seed):
    rng = np.random.default_rng(seed)
    la = rng.choice(100, size=30, replace=False)
    lb = rng.choice(100, size=30, replace=False)
    ra = PointSet(la, rng.normal(size=(30, 3)))
    rb = PointSet(lb, rng.normal(size=(30, 3)))
    da, db = ra.as_dict(), rb.as_dict()
    common = sorted(set(da) & set(db))
    if len(common) < 4:
        with pytest.raises(InsufficientPoints):
            pair_point_sets(ra, rb)
        return
    a, b = pair_point_sets(ra, rb)
    assert list(a.labels) == list(b.labels) == common
    for k, pa, pb in zip(common, a.points, b.points):
        assert np.array_equal(pa, da[k]) and np.array_equal(pb, db[k])
    # idempotent and symmetric in label content
    a2, b2 = pair_point_sets(a, b)
    assert np.array_equal(a2.points, a.points) and np.array_equal(b2.points, b.points)
    c, _ = pair_point_sets(rb, ra)
    assert np.array_equal(c.labels, a.labels)


def test_pairing_insufficient_message():
    p = PointSet([1, 2, 3], np.eye(3))
    with pytest.raises(InsufficientPoints, match="d\\+1"):
        pair_point_sets(p, p)
