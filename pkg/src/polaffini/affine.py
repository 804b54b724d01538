"""Homogeneous affine transforms, closed-form point-set fits and the
matrix logarithm / exponential of affine matrices.

Affine maps act on world coordinates (mm) as ``y = L @ x + t`` and are
stored as ``(d+1, d+1)`` homogeneous matrices whose last row is
``[0, ..., 0, 1]``. Their logarithms live in the affine Lie algebra, i.e.
have an all-zero last row.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (DegenerateConfiguration, LogUndefined, PairingMismatch,
                     Singular)

#: smallest/largest singular value ratio under which a scatter matrix is
#: considered singular
DEGENERACY_RATIO = 1e-10

#: tolerance on the imaginary part of eigenvalues lying on the negative axis
LOG_EIG_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class AffineTransform:
    """Affine map ``x -> linear @ x + translation``."""

    linear: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        lin = np.array(self.linear, dtype=float)
        tr = np.array(self.translation, dtype=float).reshape(-1)
        if lin.ndim != 2 or lin.shape[0] != lin.shape[1] or lin.shape[0] != tr.size:
            raise ValueError(f"incompatible shapes {lin.shape} and {tr.shape}")
        if lin.shape[0] not in (2, 3):
            raise ValueError("only 2D and 3D transforms are supported")
        if not abs(np.linalg.det(lin)) > 1e-12:
            raise Singular("linear part is not invertible")
        lin.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", tr)

    @property
    def dimension(self):
        return self.linear.shape[0]

    @property
    def matrix(self):
        d = self.dimension
        m = np.eye(d + 1)
        m[:d, :d] = self.linear
        m[:d, d] = self.translation
        return m

    @classmethod
    def from_matrix(cls, matrix):
        m = np.asarray(matrix, dtype=float)
        d = m.shape[0] - 1
        if m.shape != (d + 1, d + 1):
            raise ValueError(f"expected a square homogeneous matrix, got {m.shape}")
        return cls(m[:d, :d], m[:d, d])

    @classmethod
    def identity(cls, d=3):
        return cls(np.eye(d), np.zeros(d))

    @classmethod
    def from_translation(cls, t):
        t = np.asarray(t, dtype=float)
        return cls(np.eye(t.size), t)

    def __call__(self, points):
        """Apply to an array of points of shape ``(..., d)``."""
        points = np.asarray(points, dtype=float)
        return points @ self.linear.T + self.translation

    def __matmul__(self, other):
        return compose(self, other)

    def inverse(self):
        return invert(self)

    def allclose(self, other, atol=1e-10):
        return np.allclose(self.matrix, other.matrix, rtol=0, atol=atol)

    def __repr__(self):
        return f"AffineTransform(\n{np.array2string(self.matrix, precision=6)})"


@dataclass(frozen=True, eq=False)
class LogAffine:
    """Element of the affine Lie algebra (homogeneous matrix, zero last row)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        d = m.shape[0] - 1
        if m.shape != (d + 1, d + 1):
            raise ValueError(f"expected a square matrix, got {m.shape}")
        if np.any(m[d] != 0):
            raise ValueError("last row of an affine log must be exactly zero")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dimension(self):
        return self.matrix.shape[0] - 1

    @property
    def linear(self):
        return self.matrix[:-1, :-1]

    @property
    def translation(self):
        return self.matrix[:-1, -1]

    def velocity(self, points):
        """Velocity ``log(A) @ x_hat`` restricted to the first d rows."""
        points = np.asarray(points, dtype=float)
        return points @ self.linear.T + self.translation


@dataclass(frozen=True, eq=False)
class PointSet:
    """Labelled world-space points, kept sorted by label."""

    labels: np.ndarray
    points: np.ndarray
    centroid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        points = np.array(self.points, dtype=float)
        if points.ndim != 2 or points.shape[0] != labels.size:
            raise ValueError(f"{labels.size} labels for points of shape {points.shape}")
        order = np.argsort(labels, kind="stable")
        labels, points = labels[order], points[order]
        if np.any(np.diff(labels) == 0):
            raise ValueError("labels must be unique")
        labels.setflags(write=False)
        points.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "points", points)
        centroid = points.mean(axis=0) if len(labels) else np.full(points.shape[1], np.nan)
        centroid.setflags(write=False)
        object.__setattr__(self, "centroid", centroid)

    def __len__(self):
        return self.labels.size

    @property
    def dimension(self):
        return self.points.shape[1]

    def subset(self, labels):
        idx = np.searchsorted(self.labels, labels)
        if np.any(idx >= len(self)) or np.any(self.labels[np.minimum(idx, len(self) - 1)] != labels):
            raise KeyError("some labels are not in the point set")
        return PointSet(self.labels[idx], self.points[idx])

    def transformed(self, affine):
        return PointSet(self.labels, affine(self.points))

    def as_dict(self):
        return {int(k): p for k, p in zip(self.labels, self.points)}


def _paired_arrays(reference, moving):
    if isinstance(reference, PointSet) or isinstance(moving, PointSet):
        if not (isinstance(reference, PointSet) and isinstance(moving, PointSet)):
            raise TypeError("both inputs must be PointSets or both arrays")
        if len(reference) != len(moving) or np.any(reference.labels != moving.labels):
            raise PairingMismatch("reference and moving point sets carry different labels")
        x, y = reference.points, moving.points
    else:
        x = np.asarray(reference, dtype=float)
        y = np.asarray(moving, dtype=float)
        if x.shape != y.shape:
            raise PairingMismatch(f"point arrays differ in shape: {x.shape} vs {y.shape}")
    return x, y


def _is_degenerate(singular_values):
    return not singular_values[-1] > DEGENERACY_RATIO * singular_values[0]


def fit_affine_lls(reference, moving):
    """Least-squares affine map sending ``reference`` onto ``moving``.

    Closed form on centred coordinates::

        L = sum(Y' X'^T) @ inv(sum(X' X'^T)),   t = mean(Y) - L @ mean(X)

    Parameters
    ----------
    reference, moving : PointSet or (n, d) array
        Paired point sets (same labels / same row order).

    Returns
    -------
    AffineTransform

    Raises
    ------
    DegenerateConfiguration
        If the reference scatter matrix is numerically singular, i.e. the
        reference points are not affinely independent.
    """
    x, y = _paired_arrays(reference, moving)
    n, d = x.shape
    if n < d + 1:
        raise DegenerateConfiguration(f"need at least {d + 1} points for an affine fit, got {n}")
    xm, ym = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - xm, y - ym
    scatter = xc.T @ xc
    cross = yc.T @ xc
    if _is_degenerate(np.linalg.svd(scatter, compute_uv=False)):
        raise DegenerateConfiguration("reference points are not affinely independent")
    lin = np.linalg.solve(scatter, cross.T).T
    try:
        return AffineTransform(lin, ym - lin @ xm)
    except Singular as exc:
        raise DegenerateConfiguration("fitted linear part is singular") from exc


def fit_rigid(reference, moving):
    """Least-squares rotation + translation (SVD of the cross-covariance).

    A determinant sign correction keeps the result a proper rotation.
    Raises :class:`DegenerateConfiguration` when the cross-covariance has
    rank below ``d - 1`` (the rotation is then not unique).
    """
    x, y = _paired_arrays(reference, moving)
    n, d = x.shape
    if n < 2:
        raise DegenerateConfiguration("need at least 2 points for a rigid fit")
    xm, ym = x.mean(axis=0), y.mean(axis=0)
    cov = (x - xm).T @ (y - ym)
    u, s, vt = np.linalg.svd(cov)
    if not s[0] > 0 or not s[d - 2] > DEGENERACY_RATIO * s[0]:
        raise DegenerateConfiguration("cross-covariance too rank deficient for a unique rotation")
    sign = np.ones(d)
    sign[-1] = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag(sign) @ u.T
    return AffineTransform(rot, ym - rot @ xm)


def fit_translation(reference, moving):
    """Translation-only fit: ``t = mean(Y) - mean(X)``."""
    x, y = _paired_arrays(reference, moving)
    if x.shape[0] < 1:
        raise DegenerateConfiguration("need at least one point")
    return AffineTransform.from_translation(y.mean(axis=0) - x.mean(axis=0))


FITTERS = {
    "affine": fit_affine_lls,
    "rigid": fit_rigid,
    "translation": fit_translation,
}


def compose(a, b):
    """Return ``a o b`` (apply ``b`` first)."""
    if a.dimension != b.dimension:
        raise ValueError("dimension mismatch")
    return AffineTransform(a.linear @ b.linear, a.linear @ b.translation + a.translation)


def invert(a):
    try:
        inv = np.linalg.inv(a.linear)
    except np.linalg.LinAlgError as exc:
        raise Singular("linear part is not invertible") from exc
    return AffineTransform(inv, -inv @ a.translation)


def _sqrtm_product_db(a, tol=1e-15, maxiter=100):
    # product form of the Denman-Beavers iteration
    eye = np.eye(a.shape[0])
    m, y = a.copy(), a.copy()
    for _ in range(maxiter):
        minv = np.linalg.inv(m)
        y = y @ (eye + minv) / 2
        m = (eye + (m + minv) / 2) / 2
        if np.linalg.norm(m - eye, 1) <= tol * a.shape[0]:
            break
    return y


def matrix_log(a, tol=LOG_EIG_TOL):
    """Principal logarithm of a homogeneous affine matrix.

    Inverse scaling and squaring: take repeated square roots until the
    matrix is within 0.25 of the identity, sum the ``atanh`` form of the
    log series, then scale back by ``2**k``.

    Parameters
    ----------
    a : AffineTransform
    tol : float
        Eigenvalues of the linear part with non-positive real part and
        ``|imag| <= tol * max(1, |lambda|)`` make the log undefined.

    Returns
    -------
    LogAffine

    Raises
    ------
    LogUndefined
        When the principal logarithm does not exist (e.g. a rotation by pi
        or a reflection).
    """
    mat = a.matrix
    d = mat.shape[0] - 1
    ev = np.linalg.eigvals(mat[:d, :d])
    on_axis = (ev.real <= 0) & (np.abs(ev.imag) <= tol * np.maximum(1.0, np.abs(ev)))
    if np.any(on_axis):
        raise LogUndefined(
            f"linear part has eigenvalue(s) {ev[on_axis]} on the closed negative real axis")

    eye = np.eye(d + 1)
    x = mat.copy()
    k = 0
    while np.linalg.norm(x - eye, 1) >= 0.25:
        x = _sqrtm_product_db(x)
        x[d] = eye[d]
        k += 1
        if k > 60:
            raise LogUndefined("square root iteration did not approach the identity")

    z = np.linalg.solve((x + eye).T, (x - eye).T).T
    z2 = z @ z
    term = z.copy()
    series = np.zeros_like(z)
    for j in range(40):
        contrib = term / (2 * j + 1)
        series += contrib
        if np.abs(contrib).max() <= 1e-18 * max(1.0, np.abs(series).max()):
            break
        term = term @ z2
    out = (2.0 ** (k + 1)) * series
    out[d] = 0.0
    return LogAffine(out)


def matrix_exp(m):
    """Exponential of an affine Lie algebra element (back to an AffineTransform)."""
    if isinstance(m, LogAffine):
        m = m.matrix
    else:
        m = LogAffine(m).matrix
    e = scipy.linalg.expm(m)
    d = m.shape[0] - 1
    return AffineTransform(e[:d, :d], e[:d, d])


def format_affine(a):
    return "".join(" ".join(f"{v:.17e}" for v in row) + "\n" for row in a.matrix)


def parse_affine(text):
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
    mat = np.array([[float(v) for v in row] for row in rows])
    d = mat.shape[0] - 1
    if mat.shape != (d + 1, d + 1) or not np.allclose(mat[d], np.eye(d + 1)[d], atol=0):
        raise ValueError("not a homogeneous affine matrix")
    return AffineTransform.from_matrix(mat)


def save_affine(a, path):
    with open(path, "w") as f:
        f.write(format_affine(a))


def load_affine(path):
    with open(path) as f:
        return parse_affine(f.read())
