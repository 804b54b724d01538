"""Compiled trilinear sampling kernels.

All kernels sample vector fields of shape (nx, ny, nz, 3) at continuous
voxel coordinates with edge clamping, and work on a flat (C-order) voxel
range ``[start, stop)`` of an output grid so callers can split the work
into deterministic chunks. They release the GIL.
"""

import numpy as np
from numba import njit


@njit(nogil=True, cache=True, inline="always")
def _axis(c, n):
    if c <= 0.0 or n == 1:
        return 0, 0, 0.0
    if c >= n - 1:
        return n - 1, n - 1, 0.0
    i = int(np.floor(c))
    return i, i + 1, c - i


@njit(nogil=True, cache=True, inline="always")
def _sample3(field, x, y, z, out, k):
    nx, ny, nz = field.shape[0], field.shape[1], field.shape[2]
    i0, i1, fx = _axis(x, nx)
    j0, j1, fy = _axis(y, ny)
    k0, k1, fz = _axis(z, nz)
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    for c in range(3):
        out[k, c] += (gx * (gy * (gz * field[i0, j0, k0, c] + fz * field[i0, j0, k1, c])
                            + fy * (gz * field[i0, j1, k0, c] + fz * field[i0, j1, k1, c]))
                      + fx * (gy * (gz * field[i1, j0, k0, c] + fz * field[i1, j0, k1, c])
                              + fy * (gz * field[i1, j1, k0, c] + fz * field[i1, j1, k1, c])))


@njit(nogil=True, cache=True)
def sample_points(field, coords, out):
    """``out[k] = field(coords[k])`` for voxel coordinates (m, 3)."""
    for k in range(coords.shape[0]):
        out[k, 0] = 0.0
        out[k, 1] = 0.0
        out[k, 2] = 0.0
        _sample3(field, coords[k, 0], coords[k, 1], coords[k, 2], out, k)


@njit(nogil=True, cache=True)
def affine_sample(field, dims, sample_map, add_map, start, stop, out):
    """For output voxel index ``v``: ``out = field(S @ v) + B @ v``.

    ``S`` and ``B`` are 3x4 affine maps acting on homogeneous output
    voxel indices; ``S`` lands in the voxel coordinates of ``field``.
    """
    ny, nz = dims[1], dims[2]
    for v in range(start, stop):
        i = v // (ny * nz)
        j = (v // nz) % ny
        l = v % nz
        k = v - start
        for c in range(3):
            out[k, c] = add_map[c, 0] * i + add_map[c, 1] * j + add_map[c, 2] * l + add_map[c, 3]
        x = sample_map[0, 0] * i + sample_map[0, 1] * j + sample_map[0, 2] * l + sample_map[0, 3]
        y = sample_map[1, 0] * i + sample_map[1, 1] * j + sample_map[1, 2] * l + sample_map[1, 3]
        z = sample_map[2, 0] * i + sample_map[2, 1] * j + sample_map[2, 2] * l + sample_map[2, 3]
        _sample3(field, x, y, z, out, k)


@njit(nogil=True, cache=True)
def self_compose(disp, lin_inv, start, stop, out):
    """One squaring step: ``out(v) = D(v) + D(v + lin_inv @ D(v))``."""
    ny, nz = disp.shape[1], disp.shape[2]
    for v in range(start, stop):
        i = v // (ny * nz)
        j = (v // nz) % ny
        l = v % nz
        k = v - start
        d0, d1, d2 = disp[i, j, l, 0], disp[i, j, l, 1], disp[i, j, l, 2]
        out[k, 0] = d0
        out[k, 1] = d1
        out[k, 2] = d2
        x = i + lin_inv[0, 0] * d0 + lin_inv[0, 1] * d1 + lin_inv[0, 2] * d2
        y = j + lin_inv[1, 0] * d0 + lin_inv[1, 1] * d1 + lin_inv[1, 2] * d2
        z = l + lin_inv[2, 0] * d0 + lin_inv[2, 1] * d1 + lin_inv[2, 2] * d2
        _sample3(disp, x, y, z, out, k)
