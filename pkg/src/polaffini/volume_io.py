"""Volumes on regular grids: NIfTI-1 input/output, coordinate conversion
and resampling through transformations.

Voxel ``(i, j, k)`` sits at world position ``voxel_to_world((i, j, k))``
(centre-of-voxel convention). Vector volumes store world-space mm vectors
in a trailing channel axis.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _nifti
from .affine import AffineTransform
from .errors import GridMismatch, InterpolationMismatch

ELEMENT_TYPES = {"u8": np.uint8, "i16": np.int16, "i32": np.int32,
                 "f32": np.float32, "f64": np.float64}

# voxels per work item; fixed so that results never depend on thread count
_CHUNK = 1 << 18


def run_chunked(fn, n, threads=1, chunk=_CHUNK):
    """Call ``fn(start, stop)`` over ``range(n)`` in fixed-size chunks.

    Each chunk is handled independently and results are concatenated in
    chunk order, so the output is identical for any ``threads``.
    """
    bounds = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    if threads <= 1 or len(bounds) == 1:
        parts = [fn(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda ab: fn(*ab), bounds))
    return np.concatenate(parts, axis=0) if parts else np.empty((0,))


@dataclass(frozen=True, eq=False)
class Grid:
    """Voxel lattice: shape plus voxel-to-world affine."""

    dims: tuple
    voxel_to_world: AffineTransform

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        if not isinstance(self.voxel_to_world, AffineTransform):
            object.__setattr__(self, "voxel_to_world", AffineTransform.from_matrix(self.voxel_to_world))

    @property
    def size(self):
        return int(np.prod(self.dims))

    @property
    def spacing(self):
        return np.linalg.norm(self.voxel_to_world.linear, axis=0)

    def same_as(self, other, atol=1e-6):
        return self.dims == other.dims and self.voxel_to_world.allclose(other.voxel_to_world, atol=atol)

    def indices(self, start=0, stop=None):
        """Integer voxel indices of flat (C-order) positions ``start:stop``."""
        stop = self.size if stop is None else stop
        flat = np.arange(start, stop)
        return np.stack(np.unravel_index(flat, self.dims), axis=-1).astype(float)

    def world_coords(self, start=0, stop=None):
        return self.voxel_to_world(self.indices(start, stop))

    def downsample(self, factor):
        """Grid with ``factor`` times coarser spacing covering the same box."""
        factor = int(factor)
        if factor == 1:
            return self
        dims = tuple(-(-n // factor) for n in self.dims)
        v2w = AffineTransform(self.voxel_to_world.linear * factor, self.voxel_to_world.translation)
        return Grid(dims, v2w)


def world_to_voxel(volume, x):
    """Continuous voxel index of world points ``x``."""
    grid = volume.grid if hasattr(volume, "grid") else volume
    return grid.voxel_to_world.inverse()(x)


def voxel_to_world(volume, index):
    grid = volume.grid if hasattr(volume, "grid") else volume
    return grid.voxel_to_world(index)


class Volume:
    """Scalar or vector data on a grid."""

    def __init__(self, data, voxel_to_world):
        data = np.asarray(data)
        if data.ndim not in (3, 4):
            raise ValueError(f"expected a 3D or 3D+channel array, got shape {data.shape}")
        if not isinstance(voxel_to_world, AffineTransform):
            voxel_to_world = AffineTransform.from_matrix(voxel_to_world)
        self.data = data
        self.voxel_to_world = voxel_to_world

    @property
    def dims(self):
        return self.data.shape[:3]

    @property
    def channels(self):
        return 1 if self.data.ndim == 3 else self.data.shape[3]

    @property
    def grid(self):
        return Grid(self.dims, self.voxel_to_world)

    @property
    def element_type(self):
        for name, dt in ELEMENT_TYPES.items():
            if self.data.dtype == dt:
                return name
        return str(self.data.dtype)

    @property
    def is_integer(self):
        return np.issubdtype(self.data.dtype, np.integer)

    def __repr__(self):
        return f"{type(self).__name__}(dims={self.dims}, channels={self.channels}, type={self.element_type})"


class LabelVolume(Volume):
    """Integer segmentation; 0 is background."""

    def __init__(self, data, voxel_to_world):
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.integer):
            if not np.all(np.mod(data, 1) == 0):
                raise ValueError("label volume holds non-integer values")
            data = data.astype(np.int32)
        super().__init__(data, voxel_to_world)
        if self.channels != 1:
            raise ValueError("label volume must be scalar")
        if data.size and data.min() < 0:
            raise ValueError("labels must be non-negative")


class VectorField(Volume):
    """World-space (mm) 3-vectors on a grid, shape ``(nx, ny, nz, 3)``."""

    def __init__(self, data, voxel_to_world):
        super().__init__(np.asarray(data, dtype=float), voxel_to_world)
        if self.data.ndim != 4 or self.data.shape[3] != 3:
            raise ValueError(f"vector field must have shape (nx, ny, nz, 3), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("vector field holds non-finite values")

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros(tuple(grid.dims) + (3,)), grid.voxel_to_world)

    @classmethod
    def from_flat(cls, flat, grid):
        return cls(np.asarray(flat).reshape(tuple(grid.dims) + (3,)), grid.voxel_to_world)

    def flat(self):
        return self.data.reshape(-1, 3)


def read_volume(path, kind=None):
    """Read a ``.nii`` / ``.nii.gz`` file.

    ``kind`` may be ``"label"`` or ``"vector"`` to get the matching volume
    class; by default the class is guessed from the data.
    """
    data, affine, hdr = _nifti.read(path)
    if kind is None:
        if data.ndim == 4 and data.shape[3] == 3 and hdr["intent_code"] in (
                _nifti.INTENT_DISPVECT, _nifti.INTENT_VECTOR):
            kind = "vector"
        elif np.issubdtype(data.dtype, np.integer):
            kind = "label"
    if kind == "label":
        return LabelVolume(data, affine)
    if kind == "vector":
        return VectorField(data, affine)
    return Volume(data, affine)


def write_volume(volume, path, dtype=None):
    """Write a volume; integer data keeps its type, 64-bit ints become i32."""
    data = volume.data
    if dtype is not None:
        data = data.astype(dtype)
    elif data.dtype == np.int64 or data.dtype == np.uint16 or data.dtype == np.uint32:
        if data.size and (data.max() > np.iinfo(np.int32).max):
            raise ValueError("label values exceed the i32 range")
        data = data.astype(np.int32)
    elif data.dtype == np.bool_:
        data = data.astype(np.uint8)
    intent = _nifti.INTENT_DISPVECT if isinstance(volume, VectorField) else _nifti.INTENT_NONE
    _nifti.write(path, data, volume.voxel_to_world.matrix, intent)


@dataclass
class ResampleReport:
    """Provenance flags of a resampling pass."""

    out_of_domain: int = 0
    total: int = 0

    @property
    def clamped(self):
        return self.out_of_domain > 0


def _map_points(transform, grid, start, stop):
    if hasattr(transform, "map_grid_points"):
        return transform.map_grid_points(grid, start, stop)
    x = grid.world_coords(start, stop)
    if transform is None:
        return x
    return transform(x)


def sample(volume, coords, order=1, mode="clamp", fill=0):
    """Sample ``volume`` at continuous voxel ``coords`` of shape (m, 3).

    ``mode='clamp'`` repeats edge voxels (total, never NaN);
    ``mode='constant'`` returns ``fill`` outside the grid.
    """
    nd_mode = "nearest" if mode == "clamp" else "constant"
    cols = coords.T
    if volume.data.ndim == 3:
        return ndimage.map_coordinates(volume.data, cols, order=order, mode=nd_mode, cval=fill)
    return np.stack([
        ndimage.map_coordinates(volume.data[..., c], cols, order=order, mode=nd_mode, cval=fill)
        for c in range(volume.data.shape[3])], axis=-1)


def resample(moving, transform=None, target=None, interpolation="nearest",
             mode="clamp", fill=0, threads=1, return_report=False):
    """Resample ``moving`` onto ``target`` through ``transform``.

    Each target voxel at world position ``x`` receives the value of
    ``moving`` at ``transform(x)``; the transform therefore maps target
    (reference) space into moving space, and a composite transform is
    evaluated in one go so that only a single interpolation happens.

    Parameters
    ----------
    moving : Volume
    transform : AffineTransform, PolyaffineResult or None
        ``None`` is the identity.
    target : Grid or Volume, optional
        Output grid; defaults to the moving grid.
    interpolation : {'nearest', 'linear'}
        Label volumes require ``'nearest'``.
    mode : {'clamp', 'constant'}
        Behaviour outside the moving grid.
    """
    if interpolation in ("linear", "trilinear"):
        order = 1
        if moving.is_integer:
            raise InterpolationMismatch("trilinear interpolation requested on integer label data")
    elif interpolation == "nearest":
        order = 0
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    if target is None:
        target = moving.grid
    elif hasattr(target, "grid"):
        target = target.grid
    w2v = moving.voxel_to_world.inverse()
    hi = np.asarray(moving.dims) - 1
    report = ResampleReport(total=target.size)

    def work(start, stop):
        idx = w2v(_map_points(transform, target, start, stop))
        outside = np.any((idx < -1e-6) | (idx > hi + 1e-6), axis=1)
        values = sample(moving, idx, order=order, mode=mode, fill=fill)
        return np.concatenate([values.reshape(stop - start, -1), outside[:, None]], axis=1)

    out = run_chunked(work, target.size, threads)
    report.out_of_domain = int(out[:, -1].sum())
    values = out[:, :-1].astype(moving.data.dtype)
    shape = tuple(target.dims) + ((moving.channels,) if moving.data.ndim == 4 else ())
    cls = type(moving)
    result = cls(values.reshape(shape), target.voxel_to_world)
    if return_report:
        return result, report
    return result


def check_same_grid(a, b):
    if not a.grid.same_as(b.grid):
        raise GridMismatch(f"volumes are on different grids: {a.dims} vs {b.dims}")
