"""Synthetic paired segmentations with known ground-truth transformations.

The reference is a Voronoi partition of an ellipsoidal "brain" mask into
``n_regions`` labels; the moving volume is the reference pushed through a
ground-truth warp ``G`` (reference space to moving space), i.e.
``moving(y) = reference(G^-1(y))`` with nearest-neighbour sampling and
background outside the reference field of view.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from .affine import AffineTransform, save_affine
from .polyaffine import (LocalTransformSet, PolyaffineResult, WeightConfig,
                         dumps_sidecar, invert_transform, polyaffine_from_locals, save_result)
from .volume_io import Grid, LabelVolume, VectorField, resample, write_volume

WARPS = ("identity", "affine", "polyaffine", "fold")


@dataclass
class SynthSpec:
    """Parameters of a synthetic pair.

    ``affine`` may fix the ground-truth affine (4x4 matrix); otherwise one
    is drawn from ``seed``. With ``affine_in_header`` the affine warp is
    written into the moving volume's voxel-to-world matrix instead of
    resampling the labels, so centroids move exactly.
    """

    seed: int = 0
    n_regions: int = 40
    dims: tuple = (64, 64, 64)
    spacing: float = 2.0
    warp: str = "identity"
    affine: list = None
    affine_in_header: bool = False
    k_anchors: int = 8
    magnitude: float = 0.2
    warp_sigma: float = 20.0
    fold_amplitude: float = 4.0
    fold_period: float = 16.0
    mask_radius: float = 0.4
    max_retries: int = 10

    def __post_init__(self):
        self.dims = tuple(int(v) for v in self.dims)
        if self.n_regions < 5:
            raise ValueError("n_regions must be at least 5")
        if self.warp not in WARPS:
            raise ValueError(f"unknown warp {self.warp!r}; choose from {WARPS}")
        if self.warp == "polyaffine" and not 0 < self.magnitude <= 0.5:
            raise ValueError("polyaffine magnitude must lie in (0, 0.5] to stay invertible")

    def grid(self):
        """Isotropic grid centred on the world origin."""
        dims = np.asarray(self.dims)
        origin = -(dims - 1) / 2.0 * self.spacing
        return Grid(self.dims, AffineTransform(np.eye(3) * self.spacing, origin))


@dataclass
class SynthPair:
    reference: LabelVolume
    moving: LabelVolume
    ground_truth: object  # AffineTransform or PolyaffineResult, reference -> moving
    spec: SynthSpec = None
    info: dict = field(default_factory=dict)


def _mask_coords(grid, radius):
    x = grid.world_coords()
    semi = np.asarray(grid.dims) * grid.spacing * radius
    inside = ((x / semi) ** 2).sum(axis=1) <= 1.0
    return x, inside, semi


def voronoi_labels(spec, rng):
    """Reference label volume: Voronoi cells of random seeds in the mask."""
    grid = spec.grid()
    x, inside, semi = _mask_coords(grid, spec.mask_radius)
    for _ in range(spec.max_retries):
        seeds = []
        while len(seeds) < spec.n_regions:
            cand = rng.uniform(-1, 1, size=(4 * spec.n_regions, 3))
            cand = cand[(cand ** 2).sum(axis=1) <= 0.85]
            seeds.extend(cand * semi)
        seeds = np.array(seeds[:spec.n_regions])
        _, nearest = cKDTree(seeds).query(x[inside])
        labels = np.zeros(grid.size, dtype=np.int32)
        labels[inside] = nearest + 1
        counts = np.bincount(labels, minlength=spec.n_regions + 1)[1:]
        if counts.min() >= 27:
            return LabelVolume(labels.reshape(grid.dims), grid.voxel_to_world)
    raise RuntimeError("could not draw regions with at least 27 voxels each")


def random_affine(rng, max_angle=10.0, scale=0.1, shear=0.03, shift=6.0):
    """Moderate random affine about the world origin."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(rng.uniform(-max_angle, max_angle))
    skew = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    rot = scipy.linalg.expm(angle * skew)
    stretch = np.diag(rng.uniform(1 - scale, 1 + scale, size=3))
    sh = np.eye(3) + np.triu(rng.uniform(-shear, shear, size=(3, 3)), 1)
    return AffineTransform(rot @ stretch @ sh, rng.uniform(-shift, shift, size=3))


def random_polyaffine_locals(rng, spec, grid):
    """``k_anchors`` local transforms centred inside the mask.

    Each log has a linear block of Frobenius norm ``magnitude`` acting
    about its anchor, plus a translation of length ``magnitude * warp_sigma``.
    """
    semi = np.asarray(grid.dims) * grid.spacing * spec.mask_radius
    anchors = []
    while len(anchors) < spec.k_anchors:
        c = rng.uniform(-1, 1, size=3)
        if (c ** 2).sum() <= 0.7:
            anchors.append(c * semi)
    logs = []
    for c in anchors:
        g = rng.normal(size=(3, 3))
        g *= spec.magnitude / np.linalg.norm(g)
        tau = rng.normal(size=3)
        tau *= spec.magnitude * spec.warp_sigma / np.linalg.norm(tau)
        m = np.zeros((4, 4))
        m[:3, :3] = g
        m[:3, 3] = tau - g @ c
        logs.append(m)
    return LocalTransformSet.from_logs(logs, np.array(anchors))


def fold_field(grid, amplitude, period):
    """Displacement ``u_x = amplitude * sin(2 pi x / period)`` (folds when
    ``2 pi amplitude / period > 1``)."""
    x = grid.world_coords()
    u = np.zeros_like(x)
    u[:, 0] = amplitude * np.sin(2 * np.pi * x[:, 0] / period)
    return VectorField.from_flat(u, grid)


def generate(spec):
    """Build ``(reference, moving, ground_truth)`` deterministically from ``spec``."""
    rng = np.random.default_rng(spec.seed)
    reference = voronoi_labels(spec, rng)
    grid = reference.grid
    info = {}

    if spec.warp == "identity":
        truth = AffineTransform.identity()
        moving = LabelVolume(reference.data.copy(), reference.voxel_to_world)
    elif spec.warp == "affine":
        truth = (AffineTransform.from_matrix(spec.affine) if spec.affine is not None
                 else random_affine(rng))
        if spec.affine_in_header:
            # NIfTI stores the header matrix in float32; define the truth from
            # the stored matrix so that header and ground truth agree exactly
            header = (truth @ reference.voxel_to_world).matrix.astype(np.float32).astype(float)
            header = AffineTransform.from_matrix(header)
            truth = header @ reference.voxel_to_world.inverse()
            moving = LabelVolume(reference.data.copy(), header)
        else:
            moving = resample(reference, truth.inverse(), grid, "nearest", mode="constant")
    elif spec.warp == "polyaffine":
        locals_ = random_polyaffine_locals(rng, spec, grid)
        cfg = WeightConfig(sigma=spec.warp_sigma, background_weight=1e-5)
        truth = polyaffine_from_locals(AffineTransform.identity(), locals_, cfg, grid,
                                       svf_downsample=1, steps=7)
        truth.info = {"parameters": {"steps": 7, "sigma": spec.warp_sigma,
                                     "background_weight": 1e-5, "svf_downsample": 1}}
        inverse = invert_transform(truth, steps=7)
        moving = resample(reference, inverse, grid, "nearest", mode="constant")
    else:
        full = fold_field(grid, spec.fold_amplitude, spec.fold_period)
        zero = VectorField.zeros(grid)
        truth = PolyaffineResult(AffineTransform.identity(), zero, zero, full)
        moving = resample(reference, truth, grid, "nearest", mode="constant")
    return SynthPair(reference, moving, truth, spec, info)


def save_pair(pair, outdir, ext=".nii.gz"):
    """Write reference, moving, ground truth and a ``spec.json`` sidecar."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"reference": str(out / f"reference{ext}"), "moving": str(out / f"moving{ext}")}
    write_volume(pair.reference, paths["reference"])
    write_volume(pair.moving, paths["moving"])
    if isinstance(pair.ground_truth, AffineTransform):
        paths["ground_truth"] = str(out / "truth_affine.txt")
        save_affine(pair.ground_truth, paths["ground_truth"])
    else:
        paths.update({"ground_truth_" + k: v
                      for k, v in save_result(pair.ground_truth, str(out / "truth_"), ext).items()})
    spec = asdict(pair.spec)
    spec["dims"] = list(spec["dims"])
    with open(out / "spec.json", "w") as f:
        f.write(dumps_sidecar({"spec": spec, "files": paths}))
    return paths
