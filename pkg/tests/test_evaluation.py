import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import dice_by_counting, random_affine_matrix
from polaffini.affine import AffineTransform
from polaffini.errors import GridMismatch, GridTooSmall
from polaffini.evaluation import dice, jacobian_determinant, jacobian_report
from polaffini.features import LabelSelection
from polaffini.polyaffine import affine_result
from polaffini.synth import fold_field
from polaffini.volume_io import Grid, LabelVolume, VectorField

seeds = st.integers(0, 2 ** 32 - 1)


def lab(data, spacing=1.0):
    return LabelVolume(np.asarray(data), np.diag([spacing] * 3 + [1.0]))


def test_dice_identical():
    data = np.random.default_rng(0).integers(0, 5, size=(6, 6, 6))
    r = dice(lab(data), lab(data))
    assert all(v == 1.0 for v in r.per_label.values()) and r.mean_dice == 1.0


def test_dice_disjoint():
    a = np.zeros((4, 4, 4), int)
    b = np.zeros((4, 4, 4), int)
    a[0], b[3] = 1, 1
    assert dice(lab(a), lab(b)).per_label == {1: 0.0}


def test_dice_half_overlap():
    a = np.zeros((6, 6, 6), int)
    b = np.zeros((6, 6, 6), int)
    a[1:3, 1:3, 1:3] = 4
    b[2:4, 1:3, 1:3] = 4
    assert dice(lab(a), lab(b)).per_label[4] == 0.5


@given(seeds)
def test_dice_matches_counting(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 5, size=(5, 4, 6))
    b = rng.integers(0, 5, size=(5, 4, 6))
    r = dice(lab(a), lab(b))
    labels = sorted(int(v) for v in (set(np.unique(a)) | set(np.unique(b))) - {0})
    assert sorted(r.per_label) == labels
    for k in labels:
        assert r.per_label[k] == dice_by_counting(a, b, k)
    assert r.mean_dice == pytest.approx(np.mean(list(r.per_label.values())), abs=1e-15)
    assert r.labels_evaluated == len(labels)
    assert all(0 <= v <= 1 for v in r.per_label.values())


@given(seeds)
def test_dice_symmetric_and_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 6, size=(5, 5, 5))
    b = rng.integers(0, 6, size=(5, 5, 5))
    assert dice(lab(a), lab(b)).per_label == dice(lab(b), lab(a)).per_label
    perm = np.concatenate([[0], rng.permutation(np.arange(1, 6)) + 10])
    pa, pb = dice(lab(perm[a]), lab(perm[b])).per_label, dice(lab(a), lab(b)).per_label
    assert {int(perm[k]): v for k, v in pb.items()} == pa


def test_dice_merge_and_exclude():
    a = np.zeros((4, 4, 4), int)
    b = np.zeros((4, 4, 4), int)
    a[0], a[1] = 1, 2
    b[0], b[1] = 2, 1
    sel = LabelSelection(frozenset({9}), {1: 3, 2: 3})
    assert dice(lab(a), lab(b), sel).per_label == {3: 1.0}
    assert dice(lab(a), lab(b), LabelSelection({2})).per_label == {1: 0.0}


def test_dice_grid_mismatch():
    with pytest.raises(GridMismatch):
        dice(lab(np.zeros((3, 3, 3), int)), lab(np.zeros((3, 3, 3), int), 2.0))


def test_dice_report_outputs():
    r = dice(lab(np.ones((2, 2, 2), int)), lab(np.ones((2, 2, 2), int)))
    assert '"mean_dice": 1.0' in r.to_json()
    assert r.table().splitlines()[-1].split() == ["mean", "1.0000"]
    assert r.weighted_mean_dice == 1.0


def grid(n=10, spacing=2.0):
    return Grid((n, n, n), AffineTransform(np.eye(3) * spacing, np.zeros(3)))


def test_jacobian_identity():
    rep = jacobian_report(VectorField.zeros(grid()))
    assert rep.negative_count == 0 and rep.min_det == rep.max_det == 1.0
    assert rep.interior_voxels == 8 ** 3


def test_jacobian_uniform_scaling():
    res = affine_result(AffineTransform(np.eye(3) * 2.0, [1, 2, 3]), grid())
    det = jacobian_determinant(res.full_displacement)
    assert np.abs(det - 8.0).max() <= 1e-6


@given(seeds)
def test_jacobian_affine_equals_det(seed):
    rng = np.random.default_rng(seed)
    a = AffineTransform.from_matrix(random_affine_matrix(rng))
    g = Grid((6, 7, 8), AffineTransform.from_matrix(random_affine_matrix(rng)))
    det = jacobian_determinant(affine_result(a, g).full_displacement)
    assert np.abs(det - np.linalg.det(a.linear)).max() <= 1e-6


def test_jacobian_fold_matches_analytic_count():
    g = Grid((64, 8, 8), AffineTransform(np.eye(3), [-32.0, 0, 0]))
    amp, period = 4.0, 16.0
    field = fold_field(g, amp, period)
    rep = jacobian_report(field)
    assert rep.negative_count > 0 and rep.negative_count <= rep.interior_voxels
    det = jacobian_determinant(field)
    x = g.world_coords()[:, 0].reshape(g.dims)[1:-1, 1:-1, 1:-1]
    k = 2 * np.pi / period
    analytic = 1 + amp * k * np.cos(k * x)
    # disagreements only where the analytic determinant changes sign within one voxel
    differ = (det < 0) != (analytic < 0)
    crossing = ((1 + amp * k * np.cos(k * (x - 1))) < 0) != ((1 + amp * k * np.cos(k * (x + 1))) < 0)
    assert np.all(crossing[differ])


def test_jacobian_grid_too_small():
    with pytest.raises(GridTooSmall):
        jacobian_report(VectorField.zeros(Grid((2, 5, 5), np.eye(4))))
