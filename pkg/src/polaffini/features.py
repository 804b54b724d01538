"""Feature points: region centroids of segmentation volumes, and label pairing."""

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .affine import PointSet
from .errors import EmptyPointSet, InsufficientPoints


@dataclass(frozen=True)
class LabelSelection:
    """Labels to ignore and optional regrouping of labels.

    ``merge_map`` sends a source label to a group label; merged regions are
    treated as one region everywhere a selection is used.
    """

    excluded: frozenset = frozenset()
    merge_map: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "excluded", frozenset(int(v) for v in self.excluded))
        object.__setattr__(self, "merge_map", {int(k): int(v) for k, v in self.merge_map.items()})
        clash = self.excluded & set(self.merge_map)
        if clash:
            raise ValueError(f"labels both excluded and merged: {sorted(clash)}")

    @classmethod
    def parse(cls, text):
        """Parse the text config: one label id, or ``merge <src> <dst>``, per line."""
        excluded, merge = set(), {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "merge" and len(parts) == 3:
                merge[int(parts[1])] = int(parts[2])
            elif len(parts) == 1:
                excluded.add(int(parts[0]))
            else:
                raise ValueError(f"line {lineno}: cannot parse {line!r}")
        return cls(frozenset(excluded), merge)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.parse(f.read())

    @classmethod
    def dkt_default(cls):
        """White matter, WM hypointensities and CSF excluded (FreeSurfer ids)."""
        text = resources.files("polaffini").joinpath("data/dkt_exclude.txt").read_text()
        return cls.parse(text)

    def format(self):
        lines = [str(v) for v in sorted(self.excluded)]
        lines += [f"merge {k} {v}" for k, v in sorted(self.merge_map.items())]
        return "".join(line + "\n" for line in lines)

    def relabel(self, data):
        """Apply exclusions (to 0) and merges to an integer label array."""
        data = np.asarray(data)
        if not self.excluded and not self.merge_map:
            return data
        top = int(data.max()) if data.size else 0
        if top < (1 << 24):
            lut = np.arange(top + 1, dtype=np.int64)
            for k in self.excluded:
                if k <= top:
                    lut[k] = 0
            for k, v in self.merge_map.items():
                if k <= top:
                    lut[k] = v
            return lut[data]
        values, inverse = np.unique(data, return_inverse=True)
        mapped = np.array([0 if v in self.excluded else self.merge_map.get(int(v), v) for v in values])
        return mapped[inverse].reshape(data.shape)


def label_counts(data, sel=None):
    """Voxel count per label (background dropped) after applying ``sel``."""
    data = (sel or LabelSelection()).relabel(data).ravel()
    counts = np.bincount(data)
    labels = np.flatnonzero(counts)
    labels = labels[labels > 0]
    return labels, counts[labels]


def extract_centroids(vol, sel=None):
    """Mean world position of the voxels of each retained label.

    Parameters
    ----------
    vol : LabelVolume
    sel : LabelSelection, optional
        Exclusions and merges applied before counting. Background (0) is
        always dropped.

    Returns
    -------
    PointSet
        One point per label present, sorted by label.
    """
    data = (sel or LabelSelection()).relabel(vol.data)
    if data.size == 0:
        raise EmptyPointSet("volume is empty")
    flat = data.ravel()
    counts = np.bincount(flat)
    labels = np.flatnonzero(counts)
    labels = labels[labels > 0]
    if labels.size == 0:
        raise EmptyPointSet("no retained label has any voxel")
    # index sums per label, one axis at a time; voxel_to_world is affine so
    # the world centroid is the image of the mean index
    nx, ny, nz = data.shape
    sums = np.empty((labels.size, 3))
    grids = (np.arange(nx)[:, None, None], np.arange(ny)[None, :, None], np.arange(nz)[None, None, :])
    for axis, coord in enumerate(grids):
        weights = np.broadcast_to(coord, data.shape).ravel().astype(float)
        sums[:, axis] = np.bincount(flat, weights=weights, minlength=counts.size)[labels]
    mean_index = sums / counts[labels, None]
    return PointSet(labels, vol.voxel_to_world(mean_index))


def pair_point_sets(reference, moving, min_points=None):
    """Restrict both sets to their common labels, in the same order.

    Raises :class:`InsufficientPoints` when fewer than ``d + 1`` labels
    are shared (an affine fit needs that many).
    """
    if len(reference) == 0 or len(moving) == 0:
        raise EmptyPointSet("cannot pair an empty point set")
    common = np.intersect1d(reference.labels, moving.labels)
    need = reference.dimension + 1 if min_points is None else min_points
    if common.size < need:
        raise InsufficientPoints(
            f"only {common.size} labels shared between reference and moving; "
            f"at least {need} (d+1) are required")
    return reference.subset(common), moving.subset(common)
