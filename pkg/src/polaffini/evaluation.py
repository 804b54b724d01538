"""Alignment quality: Dice overlap and Jacobian determinant statistics."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GridTooSmall
from .features import LabelSelection
from .volume_io import VectorField, check_same_grid


@dataclass
class OverlapReport:
    per_label: dict = field(default_factory=dict)
    mean_dice: float = float("nan")
    labels_evaluated: int = 0
    weighted_mean_dice: float = float("nan")

    def to_json(self):
        out = asdict(self)
        out["per_label"] = {str(k): v for k, v in self.per_label.items()}
        return json.dumps(out, indent=2, sort_keys=True)

    def table(self):
        rows = [f"{'label':>8}  {'dice':>8}"]
        rows += [f"{k:>8}  {v:8.4f}" for k, v in sorted(self.per_label.items())]
        rows.append(f"{'mean':>8}  {self.mean_dice:8.4f}")
        return "\n".join(rows)


def dice(reference, warped, sel=None):
    """Per-label Dice ``2|A & B| / (|A| + |B|)`` between two label volumes.

    Labels present in either volume are evaluated (background excluded),
    after the exclusions and merges of ``sel``. ``mean_dice`` is the
    unweighted mean over labels; ``weighted_mean_dice`` weights by
    ``|A| + |B|``.
    """
    check_same_grid(reference, warped)
    sel = sel or LabelSelection()
    a = sel.relabel(reference.data).ravel()
    b = sel.relabel(warped.data).ravel()
    size = int(max(a.max(initial=0), b.max(initial=0))) + 1
    count_a = np.bincount(a, minlength=size)
    count_b = np.bincount(b, minlength=size)
    inter = np.bincount(a[a == b], minlength=size)
    total = count_a + count_b
    labels = np.flatnonzero(total)
    labels = labels[labels > 0]
    scores = 2.0 * inter[labels] / total[labels]
    report = OverlapReport({int(k): float(v) for k, v in zip(labels, scores)},
                           labels_evaluated=int(labels.size))
    if labels.size:
        report.mean_dice = float(scores.mean())
        report.weighted_mean_dice = float(2.0 * inter[labels].sum() / total[labels].sum())
    return report


@dataclass
class JacobianReport:
    negative_count: int
    min_det: float
    max_det: float
    mean_det: float
    interior_voxels: int

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def table(self):
        return "\n".join(f"{k:>16}  {v}" for k, v in asdict(self).items())


def jacobian_determinant(displacement):
    """Determinant of the Jacobian of ``x -> x + u(x)`` on interior voxels.

    Central differences along voxel axes, converted to world coordinates;
    the output has shape ``(nx - 2, ny - 2, nz - 2)``.
    """
    u = displacement.data
    if min(u.shape[:3]) < 3:
        raise GridTooSmall(f"grid {u.shape[:3]} needs at least 3 voxels per axis")
    inner = (slice(1, -1),) * 3
    # du[..., c, a] = d u_c / d index_a
    du = np.empty(tuple(s - 2 for s in u.shape[:3]) + (3, 3))
    for a in range(3):
        hi = list(inner)
        lo = list(inner)
        hi[a] = slice(2, None)
        lo[a] = slice(None, -2)
        du[..., :, a] = (u[tuple(hi)] - u[tuple(lo)]) / 2.0
    lin_inv = np.linalg.inv(displacement.voxel_to_world.linear)
    jac = np.eye(3) + du @ lin_inv
    return np.linalg.det(jac)


def jacobian_report(result):
    """Jacobian statistics of the total map of a result (or a displacement field)."""
    field_ = result if isinstance(result, VectorField) else result.full_displacement
    det = jacobian_determinant(field_)
    return JacobianReport(
        negative_count=int(np.count_nonzero(det < 0)),
        min_det=float(det.min()),
        max_det=float(det.max()),
        mean_det=float(det.mean()),
        interior_voxels=int(det.size),
    )
