"""Log-Euclidean polyaffine fusion.

Local affine transforms estimated on Delaunay neighbourhoods are fused
into a stationary velocity field (SVF) by Gaussian-weighted averaging of
their principal logarithms; the SVF is exponentiated by scaling and
squaring and composed after the global (background) affine::

    T(x) = exp(V)(A_B(x))
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from . import _kernels
from . import affine as _aff
from .affine import AffineTransform, LogAffine, PointSet, fit_affine_lls, matrix_log
from .errors import (DegenerateConfiguration, InsufficientPoints, NoTransforms,
                     PolaffiniError)
from .features import LabelSelection, extract_centroids, pair_point_sets
from .graph import delaunay_graph
from .volume_io import Grid, VectorField, read_volume, run_chunked, write_volume

MODELS = ("affine", "rigid", "translation")
_FALLBACK = {"affine": ("affine", "rigid", "translation"),
             "rigid": ("rigid", "translation"),
             "translation": ("translation",)}

#: kernel values below this are treated as exactly zero
WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True)
class WeightConfig:
    """Gaussian weight maps and background weight.

    ``sigma`` may be the string ``"auto"``, resolved by
    :func:`sigma_heuristic` on the reference points at estimation time.
    """

    sigma: object = 20.0
    background_weight: float = 1e-5
    kernel: str = "gaussian"
    cutoff_radius: float = None

    def __post_init__(self):
        if self.kernel != "gaussian":
            raise ValueError(f"unsupported kernel {self.kernel!r}")
        if self.sigma != "auto" and not float(self.sigma) > 0:
            raise ValueError("sigma must be positive")
        if not self.background_weight >= 0:
            raise ValueError("background weight must be non-negative")
        if self.cutoff_radius is not None and self.sigma != "auto" \
                and self.cutoff_radius < 3 * float(self.sigma):
            raise ValueError("cutoff radius must be at least 3 sigma")


@dataclass(eq=False)
class LocalTransformSet:
    """One local transform per feature point, its log and its weight-map centre."""

    transforms: list
    logs: list
    anchors: np.ndarray
    model: str = "affine"
    fallbacks: dict = field(default_factory=dict)

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=float).reshape(-1, 3)
        if not len(self.transforms) == len(self.logs) == len(self.anchors):
            raise ValueError("transforms, logs and anchors must have equal length")

    def __len__(self):
        return len(self.transforms)

    def log_stack(self):
        """(n, 3, 4) array of the top rows of the logs."""
        if not self.logs:
            return np.zeros((0, 3, 4))
        return np.stack([lg.matrix[:3] for lg in self.logs])

    @classmethod
    def from_logs(cls, logs, anchors, model="affine"):
        logs = [lg if isinstance(lg, LogAffine) else LogAffine(lg) for lg in logs]
        return cls([_aff.matrix_exp(lg) for lg in logs], logs, anchors, model)


def estimate_local_transforms(graph, reference_bg, moving, model="affine"):
    """Fit one transform per neighbourhood, from ``reference_bg`` to ``moving``.

    Parameters
    ----------
    graph : NeighborhoodGraph
        Built on the reference points (same labels and order).
    reference_bg : PointSet
        Reference points already mapped by the background affine.
    moving : PointSet
    model : {'affine', 'rigid', 'translation'}
        Degenerate neighbourhoods fall back to the next simpler model; the
        model actually used is recorded in ``fallbacks``.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    if len(graph) != len(reference_bg) or np.any(graph.labels != reference_bg.labels):
        raise ValueError("graph and point labels differ")
    x, y = _aff._paired_arrays(reference_bg, moving)
    transforms, logs, anchors, fallbacks = [], [], [], {}
    for i, nb in enumerate(graph.neighbors):
        for kind in _FALLBACK[model]:
            try:
                a = _aff.FITTERS[kind](x[nb], y[nb])
                break
            except DegenerateConfiguration:
                continue
        if kind != model:
            fallbacks[i] = kind
        try:
            lg = matrix_log(a)
        except PolaffiniError as exc:
            exc.args = (f"local transform {i} (label {graph.labels[i]}): {exc.args[0]}",)
            raise
        transforms.append(a)
        logs.append(lg)
        anchors.append(x[nb].mean(axis=0))
    return LocalTransformSet(transforms, logs, np.array(anchors), model, fallbacks)


def sigma_heuristic(points):
    """Twice the mean nearest-neighbour distance (self excluded)."""
    p = points.points if isinstance(points, PointSet) else np.asarray(points, dtype=float)
    if len(p) < 2:
        raise InsufficientPoints("need at least two points")
    from scipy.spatial import cKDTree
    dist, _ = cKDTree(p).query(p, k=2)
    return 2.0 * float(dist[:, 1].mean())


def _resolve_sigma(cfg, points):
    return sigma_heuristic(points) if cfg.sigma == "auto" else float(cfg.sigma)


def svf_at(locals_, cfg, x, sigma=None):
    """Fused velocity at world points ``x`` (m, 3)."""
    sigma = float(cfg.sigma) if sigma is None else sigma
    logs = locals_.log_stack().reshape(len(locals_), 12)
    anchors = locals_.anchors
    origin = anchors.mean(axis=0)
    xc, ac = x - origin, anchors - origin
    d2 = (xc * xc).sum(1)[:, None] - 2.0 * xc @ ac.T + (ac * ac).sum(1)[None, :]
    np.maximum(d2, 0.0, out=d2)
    w = np.exp(d2 * (-0.5 / sigma ** 2))
    w[w < WEIGHT_FLOOR] = 0.0
    if cfg.cutoff_radius is not None:
        w[d2 > cfg.cutoff_radius ** 2] = 0.0
    denom = cfg.background_weight + w.sum(axis=1)
    mix = (w @ logs).reshape(-1, 3, 4)
    v = np.einsum("mij,mj->mi", mix[:, :, :3], x) + mix[:, :, 3]
    ok = denom > 0
    v[ok] /= denom[ok, None]
    v[~ok] = 0.0
    return v


def build_svf(locals_, cfg, grid, threads=1, sigma=None):
    """Stationary velocity field on ``grid``.

    At each voxel position ``x``::

        V(x) = sum_i w_i(x) log(A_i) x_hat / (w_B + sum_i w_i(x))
        w_i(x) = exp(-|x - anchor_i|^2 / (2 sigma^2))
    """
    if len(locals_) == 0:
        raise NoTransforms("no local transforms to fuse")
    sigma = float(cfg.sigma) if sigma is None else float(sigma)

    def work(start, stop):
        return svf_at(locals_, cfg, grid.world_coords(start, stop), sigma)

    flat = run_chunked(work, grid.size, threads, chunk=1 << 16)
    return VectorField.from_flat(flat, grid)


def _sample_field(field_data, coords):
    """Trilinear, edge-clamped sampling of an (nx, ny, nz, 3) array at voxel coords."""
    coords = np.ascontiguousarray(coords, dtype=float).reshape(-1, 3)
    out = np.empty((coords.shape[0], 3))
    _kernels.sample_points(np.ascontiguousarray(field_data, dtype=float), coords, out)
    return out


def _top(a):
    """3x4 top block of a homogeneous affine."""
    return np.ascontiguousarray(a.matrix[:3])


def _affine_sample(field_, grid, sample_map, add_map, threads=1):
    """``field(sample_map @ v) + add_map @ v`` for every voxel index ``v`` of ``grid``."""
    data = np.ascontiguousarray(field_.data, dtype=float)
    dims = np.asarray(grid.dims, dtype=np.int64)
    sample_map = np.ascontiguousarray(sample_map, dtype=float)
    add_map = np.ascontiguousarray(add_map, dtype=float)

    def work(start, stop):
        out = np.empty((stop - start, 3))
        _kernels.affine_sample(data, dims, sample_map, add_map, start, stop, out)
        return out

    return run_chunked(work, grid.size, threads)


def compose_displacements(outer, inner_flat, grid, threads=1):
    """Displacement of ``outer o inner`` on ``grid`` given ``inner`` displacements.

    ``outer`` is a VectorField; the result at ``x`` is
    ``inner(x) + outer(x + inner(x))``.
    """
    w2v = outer.voxel_to_world.inverse()

    def work(start, stop):
        x = grid.world_coords(start, stop) + inner_flat[start:stop]
        return inner_flat[start:stop] + _sample_field(outer.data, w2v(x))

    return run_chunked(work, grid.size, threads)


def exponentiate(svf, steps=7, threads=1):
    """Scaling and squaring: displacement ``D`` with ``exp(V)(x) = x + D(x)``.

    ``D`` starts as ``V / 2**steps`` and is composed with itself ``steps``
    times using trilinear, edge-clamped interpolation.
    """
    steps = int(steps)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    grid = svf.grid
    disp = np.ascontiguousarray(svf.data / 2.0 ** steps)
    lin_inv = np.ascontiguousarray(np.linalg.inv(svf.voxel_to_world.linear))

    for _ in range(steps):
        current = disp

        def work(start, stop, current=current):
            out = np.empty((stop - start, 3))
            _kernels.self_compose(current, lin_inv, start, stop, out)
            return out

        disp = run_chunked(work, grid.size, threads).reshape(current.shape)
    return VectorField(disp, svf.voxel_to_world)


@dataclass(eq=False)
class PolyaffineResult:
    """Output of a polyaffine estimation.

    ``displacement`` holds ``exp(V) - Id`` and ``full_displacement`` holds
    ``T - Id``, both on the reference grid. ``affine_first`` is True for
    ``T = exp(V) o A_B`` and False for inverses, ``T = A_B o exp(V)``.
    """

    background: AffineTransform
    svf: VectorField
    displacement: VectorField
    full_displacement: VectorField
    affine_first: bool = True
    locals: LocalTransformSet = None
    reference_points: PointSet = None
    moving_points: PointSet = None
    graph: object = None
    info: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.full_displacement.grid

    def map_grid_points(self, grid, start=0, stop=None):
        """Images under ``T`` of the flat voxel range of ``grid``."""
        stop = grid.size if stop is None else stop
        x = grid.world_coords(start, stop)
        if grid.same_as(self.grid, atol=0):
            return x + self.full_displacement.flat()[start:stop]
        return full_transform_at(self, x)

    def __call__(self, x):
        return full_transform_at(self, x)


def full_transform_at(result, x, return_flag=False):
    """Evaluate ``T(x) = x + full_displacement(x)`` at world points.

    Points outside the reference grid use clamped extrapolation; with
    ``return_flag`` a boolean mask of in-domain points is also returned.
    """
    x = np.asarray(x, dtype=float)
    shape = x.shape
    x = x.reshape(-1, 3)
    field_ = result.full_displacement
    idx = field_.voxel_to_world.inverse()(x)
    inside = np.all((idx >= -1e-9) & (idx <= np.asarray(field_.dims) - 1 + 1e-9), axis=1)
    y = (x + _sample_field(field_.data, idx)).reshape(shape)
    if return_flag:
        return y, inside.reshape(shape[:-1])
    return y


def _upsample(coarse, grid, threads=1):
    """Trilinear resampling of a coarse displacement field onto ``grid``."""
    to_coarse = coarse.voxel_to_world.inverse() @ grid.voxel_to_world
    return _affine_sample(coarse, grid, _top(to_coarse), np.zeros((3, 4)), threads)


def polyaffine_from_locals(background, locals_, cfg, grid, svf_downsample=2, steps=7,
                           threads=1, sigma=None, timings=None):
    """Fuse ``locals_`` into ``T = exp(V) o background`` on ``grid``."""
    timings = {} if timings is None else timings
    coarse = grid.downsample(svf_downsample)
    t0 = time.perf_counter()
    svf = build_svf(locals_, cfg, coarse, threads, sigma=sigma)
    t1 = time.perf_counter()
    disp_coarse = exponentiate(svf, steps, threads)
    t2 = time.perf_counter()
    if coarse is grid:
        disp = disp_coarse
    else:
        disp = VectorField.from_flat(_upsample(disp_coarse, grid, threads), grid)
    # T(x) - x = D(A_B(x)) + (A_B(x) - x), both affine in the voxel index
    v2w = grid.voxel_to_world
    sample_map = _top(disp_coarse.voxel_to_world.inverse() @ background @ v2w)
    add_map = _top(background @ v2w) - _top(v2w)
    full = VectorField.from_flat(_affine_sample(disp_coarse, grid, sample_map, add_map, threads), grid)
    t3 = time.perf_counter()
    timings.update(svf=t1 - t0, exponentiation=t2 - t1, composition=t3 - t2)
    return PolyaffineResult(background, svf, disp, full, locals=locals_)


def affine_result(a, grid, threads=1):
    """A :class:`PolyaffineResult` that is the plain affine map ``a``."""

    def work(start, stop):
        x = grid.world_coords(start, stop)
        return a(x) - x

    full = VectorField.from_flat(run_chunked(work, grid.size, threads), grid)
    zero = VectorField.zeros(grid)
    return PolyaffineResult(a, zero, zero, full)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PolaffiniError as exc:
        raise exc.with_stage(name)


def estimate_polyaffine(ref_seg, mov_seg, sel=None, model="affine", cfg=None,
                        svf_downsample=2, steps=7, threads=1, graph=None):
    """End-to-end polyaffine estimation from two label volumes.

    Pipeline: centroids, label pairing, background affine fit, Delaunay
    graph on the reference points, local fits from background-mapped
    reference points to moving points, SVF on the reference grid
    downsampled by ``svf_downsample``, exponentiation with ``steps``
    squarings, and composition ``T = exp(V) o A_B`` on the full reference
    grid.

    Parameters
    ----------
    ref_seg, mov_seg : LabelVolume
    sel : LabelSelection, optional
    model : {'affine', 'rigid', 'translation'}
        Local transform model.
    cfg : WeightConfig, optional
        Defaults to sigma = 20 mm, background weight 1e-5.
    graph : NeighborhoodGraph, optional
        Precomputed graph on the reference points (restricted to the
        paired labels when needed).

    Returns
    -------
    PolyaffineResult
        ``info`` holds parameters, label counts, fallbacks and timings.
    """
    cfg = cfg or WeightConfig()
    sel = sel or LabelSelection()
    timings = {}
    t_start = time.perf_counter()

    def timed(name, fn, *args, **kwargs):
        t = time.perf_counter()
        out = _stage(name, fn, *args, **kwargs)
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t
        return out

    x_all = timed("centroids", extract_centroids, ref_seg, sel)
    y_all = timed("centroids", extract_centroids, mov_seg, sel)
    x, y = timed("pairing", pair_point_sets, x_all, y_all)
    background = timed("background", fit_affine_lls, x, y)
    x_bg = x.transformed(background)
    if graph is None:
        g = timed("graph", delaunay_graph, x)
    else:
        g = timed("graph", lambda: graph.subgraph(x.labels).with_points(x))
    locals_ = timed("local-fits", estimate_local_transforms, g, x_bg, y, model)
    sigma = _stage("svf", _resolve_sigma, cfg, x)
    result = _stage("fusion", polyaffine_from_locals, background, locals_, cfg, ref_seg.grid,
                    svf_downsample, steps, threads, sigma, timings)
    timings["total"] = time.perf_counter() - t_start
    result.reference_points = x
    result.moving_points = y
    result.graph = g
    result.info = {
        "parameters": {
            "model": model,
            "sigma": sigma,
            "sigma_setting": cfg.sigma if cfg.sigma == "auto" else float(cfg.sigma),
            "background_weight": cfg.background_weight,
            "kernel": cfg.kernel,
            "cutoff_radius": cfg.cutoff_radius,
            "steps": int(steps),
            "svf_downsample": int(svf_downsample),
        },
        "labels": {
            "reference": len(x_all),
            "moving": len(y_all),
            "paired": len(x),
            "excluded": sorted(sel.excluded),
        },
        "fallbacks": {str(int(g.labels[i])): kind for i, kind in sorted(locals_.fallbacks.items())},
        "timing_seconds": timings,
    }
    return result


def invert_transform(result, steps=None, threads=1):
    """Inverse map: ``exp(-V)`` then the inverse background (or reversed order)."""
    steps = result.info.get("parameters", {}).get("steps", 7) if steps is None else steps
    grid = result.grid
    neg = VectorField(-result.svf.data, result.svf.voxel_to_world)
    inv_bg = result.background.inverse()
    if not np.any(neg.data):
        disp_coarse = VectorField.zeros(neg.grid)
    else:
        disp_coarse = exponentiate(neg, steps, threads)
    disp = VectorField.from_flat(_upsample(disp_coarse, grid, threads), grid)
    w2v = disp_coarse.voxel_to_world.inverse()

    def work(start, stop):
        x = grid.world_coords(start, stop)
        if result.affine_first:
            # (exp(V) o A)^-1 = A^-1 o exp(-V)
            y = inv_bg(x + _sample_field(disp_coarse.data, w2v(x)))
        else:
            xb = inv_bg(x)
            y = xb + _sample_field(disp_coarse.data, w2v(xb))
        return y - x

    full = VectorField.from_flat(run_chunked(work, grid.size, threads), grid)
    info = dict(result.info)
    info["inverted"] = not result.info.get("inverted", False)
    return PolyaffineResult(inv_bg, neg, disp, full, not result.affine_first,
                            info=info)


# ---------------------------------------------------------------------------
# persistence

def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj))


def dumps_sidecar(info):
    return json.dumps(info, indent=2, sort_keys=True, default=_json_default) + "\n"


def result_paths(prefix, ext=".nii.gz"):
    prefix = str(prefix)
    return {
        "affine": prefix + "affine.txt",
        "svf": prefix + "svf" + ext,
        "displacement": prefix + "expsvf" + ext,
        "full_displacement": prefix + "transform" + ext,
        "sidecar": prefix + "params.json",
    }


def save_result(result, prefix, ext=".nii.gz", dtype=np.float32, affine_only=False):
    """Write a result as ``<prefix>affine.txt``, ``svf``, ``expsvf``,
    ``transform`` volumes and a ``params.json`` sidecar."""
    paths = result_paths(prefix, ext)
    if affine_only:
        paths = {k: paths[k] for k in ("affine", "sidecar")}
    Path(paths["affine"]).parent.mkdir(parents=True, exist_ok=True)
    _aff.save_affine(result.background, paths["affine"])
    if not affine_only:
        write_volume(result.svf, paths["svf"], dtype=dtype)
        write_volume(result.displacement, paths["displacement"], dtype=dtype)
        write_volume(result.full_displacement, paths["full_displacement"], dtype=dtype)
    info = dict(result.info)
    info["affine_first"] = result.affine_first
    with open(paths["sidecar"], "w") as f:
        f.write(dumps_sidecar(info))
    return paths


def load_result(prefix, ext=".nii.gz"):
    paths = result_paths(prefix, ext)
    background = _aff.load_affine(paths["affine"])
    info = {}
    if Path(paths["sidecar"]).exists():
        with open(paths["sidecar"]) as f:
            info = json.load(f)
    svf = read_volume(paths["svf"], kind="vector")
    disp = read_volume(paths["displacement"], kind="vector")
    full = read_volume(paths["full_displacement"], kind="vector")
    return PolyaffineResult(background, svf, disp, full, info.pop("affine_first", True), info=info)
