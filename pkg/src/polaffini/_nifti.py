"""Minimal NIfTI-1 single-file (``.nii`` / ``.nii.gz``) codec."""

import gzip
import io

import numpy as np

from .errors import DimensionalityUnsupported, MalformedHeader, UnsupportedDatatype

HEADER_DTYPE = np.dtype([
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
])
assert HEADER_DTYPE.itemsize == 348

# NIfTI datatype code -> numpy dtype
DATATYPES = {
    2: np.dtype("u1"),
    4: np.dtype("i2"),
    8: np.dtype("i4"),
    16: np.dtype("f4"),
    64: np.dtype("f8"),
}
CODES = {v: k for k, v in DATATYPES.items()}

INTENT_NONE = 0
INTENT_DISPVECT = 1006
INTENT_VECTOR = 1007
INTENT_LABEL = 1002


def _open(path, mode):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def _qform_matrix(hdr):
    b, c, d = (float(hdr[k]) for k in ("quatern_b", "quatern_c", "quatern_d"))
    a = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a) if a > 1e-7 else 0.0
    rot = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ])
    pix = hdr["pixdim"].astype(float)
    qfac = -1.0 if pix[0] < 0 else 1.0
    zooms = np.array([pix[1], pix[2], pix[3] * qfac])
    zooms[zooms == 0] = 1.0
    m = np.eye(4)
    m[:3, :3] = rot * zooms
    m[:3, 3] = [hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]]
    return m


def header_affine(hdr):
    """Voxel-to-world matrix: sform, else qform, else diagonal pixdim."""
    if hdr["sform_code"] > 0:
        m = np.eye(4)
        m[0], m[1], m[2] = hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]
        return m
    if hdr["qform_code"] > 0:
        return _qform_matrix(hdr)
    zooms = hdr["pixdim"][1:4].astype(float)
    zooms[zooms == 0] = 1.0
    return np.diag(np.append(zooms, 1.0))


def read(path):
    """Return ``(data, affine, header)``; data in (x, y, z[, c]) order."""
    with _open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 348:
        raise MalformedHeader(f"{path}: file shorter than a NIfTI-1 header")
    hdr = np.frombuffer(raw[:348], dtype=HEADER_DTYPE)[0]
    if hdr["sizeof_hdr"] != 348:
        hdr = np.frombuffer(raw[:348], dtype=HEADER_DTYPE.newbyteorder(">"))[0]
        if hdr["sizeof_hdr"] != 348:
            raise MalformedHeader(f"{path}: sizeof_hdr is not 348")
    if hdr["magic"] not in (b"n+1", b"n+1\x00"):
        raise MalformedHeader(f"{path}: magic is {hdr['magic']!r}, expected 'n+1'")
    dim = [int(v) for v in hdr["dim"]]
    ndim = dim[0]
    if not 1 <= ndim <= 7 or any(v < 1 for v in dim[1:ndim + 1]):
        raise MalformedHeader(f"{path}: invalid dim field {dim}")
    shape = dim[1:ndim + 1] + [1] * (3 - ndim if ndim < 3 else 0)
    spatial = shape[:3]
    # singleton trailing axes are dropped (covers the 5D ITK vector layout)
    extra = [v for v in shape[3:] if v != 1]
    if len(extra) > 1:
        raise DimensionalityUnsupported(f"{path}: dim {dim} exceeds 3D + vector channel")
    code = int(hdr["datatype"])
    if code not in DATATYPES:
        raise UnsupportedDatatype(f"{path}: NIfTI datatype code {code}")
    dtype = DATATYPES[code].newbyteorder(hdr.dtype["sizeof_hdr"].byteorder)
    offset = int(hdr["vox_offset"])
    count = int(np.prod(spatial)) * (extra[0] if extra else 1)
    if offset < 348 or len(raw) < offset + count * dtype.itemsize:
        raise MalformedHeader(f"{path}: data block is truncated")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = flat.reshape(spatial + extra, order="F").astype(dtype.newbyteorder("="))
    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if slope not in (0.0, 1.0) or inter != 0.0:
        if slope == 0.0:
            slope = 1.0
        data = data * slope + inter
    return data, header_affine(hdr), hdr


def encode(data, affine, intent=INTENT_NONE, descrip=b""):
    """Serialise an (x, y, z[, c]) array and its voxel-to-world matrix."""
    data = np.asarray(data)
    if data.dtype not in CODES:
        raise UnsupportedDatatype(f"cannot store dtype {data.dtype}")
    if data.ndim not in (3, 4):
        raise DimensionalityUnsupported("only 3D volumes and 3D vector volumes are written")
    hdr = np.zeros((), dtype=HEADER_DTYPE)
    hdr["sizeof_hdr"] = 348
    hdr["regular"] = b"r"
    dim = np.ones(8, dtype=np.int16)
    dim[0] = data.ndim
    dim[1:data.ndim + 1] = data.shape
    hdr["dim"] = dim
    hdr["intent_code"] = intent
    hdr["datatype"] = CODES[data.dtype]
    hdr["bitpix"] = data.dtype.itemsize * 8
    # derive pixdim from the stored (float32) matrix so rewrites are byte-stable
    stored = np.asarray(affine, dtype=np.float32).astype(float)
    pix = np.ones(8, dtype=np.float32)
    pix[1:4] = np.linalg.norm(stored[:3, :3], axis=0)
    hdr["pixdim"] = pix
    hdr["vox_offset"] = 352.0
    hdr["scl_slope"] = 1.0
    hdr["xyzt_units"] = 2  # mm
    hdr["descrip"] = descrip[:80]
    hdr["sform_code"] = 1
    hdr["srow_x"], hdr["srow_y"], hdr["srow_z"] = affine[0], affine[1], affine[2]
    hdr["magic"] = b"n+1"
    buf = io.BytesIO()
    buf.write(hdr.tobytes())
    buf.write(b"\x00" * 4)
    buf.write(np.asfortranarray(data.astype(data.dtype.newbyteorder("<"))).tobytes(order="F"))
    return buf.getvalue()


def write(path, data, affine, intent=INTENT_NONE):
    payload = encode(data, affine, intent)
    if str(path).endswith(".gz"):
        # no mtime and no embedded file name: the bytes depend on content only
        payload = gzip.compress(payload, mtime=0)
    with open(path, "wb") as f:
        f.write(payload)
