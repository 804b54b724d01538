"""Neighbourhood graph on the reference feature points from a 3D Delaunay
triangulation.

The triangulation is built incrementally (Bowyer-Watson). The convex hull
is closed by "ghost" tetrahedra sharing a vertex at infinity, so no
bounding super-tetrahedron is needed. Orientation and in-sphere tests are
evaluated in floating point first and recomputed exactly with rationals
whenever the float result is within its error bound.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .affine import PointSet
from .errors import DegenerateInput

INF = -1  # vertex id of the point at infinity

_EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# predicates

def _det3(r0, r1, r2):
    return (r0[..., 0] * (r1[..., 1] * r2[..., 2] - r1[..., 2] * r2[..., 1])
            - r0[..., 1] * (r1[..., 0] * r2[..., 2] - r1[..., 2] * r2[..., 0])
            + r0[..., 2] * (r1[..., 0] * r2[..., 1] - r1[..., 1] * r2[..., 0]))


def _perm3(r0, r1, r2):
    a0, a1, a2 = np.abs(r0), np.abs(r1), np.abs(r2)
    return _det3p(a0, a1, a2)


def _det3p(r0, r1, r2):
    # permanent of non-negative rows (upper bound on |terms| of _det3)
    return (r0[..., 0] * (r1[..., 1] * r2[..., 2] + r1[..., 2] * r2[..., 1])
            + r0[..., 1] * (r1[..., 0] * r2[..., 2] + r1[..., 2] * r2[..., 0])
            + r0[..., 2] * (r1[..., 0] * r2[..., 1] + r1[..., 1] * r2[..., 0]))


def _orient_float(v):
    """Orientation of tetrahedra ``v`` (..., 4, 3): det[b-a, c-a, d-a]."""
    r = v[..., 1:, :] - v[..., :1, :]
    det = _det3(r[..., 0, :], r[..., 1, :], r[..., 2, :])
    bound = 16 * _EPS * _perm3(r[..., 0, :], r[..., 1, :], r[..., 2, :])
    return det, bound


def _insphere_float(v, e):
    """Positive when ``e`` is inside the sphere of positively oriented ``v``."""
    r = v - e[..., None, :]
    lift = np.einsum("...i,...i->...", r, r)
    r0, r1, r2, r3 = (r[..., k, :] for k in range(4))
    l0, l1, l2, l3 = (lift[..., k] for k in range(4))
    det = (-l0 * _det3(r1, r2, r3) + l1 * _det3(r0, r2, r3)
           - l2 * _det3(r0, r1, r3) + l3 * _det3(r0, r1, r2))
    a = [np.abs(x) for x in (r0, r1, r2, r3)]
    perm = (l0 * _det3p(a[1], a[2], a[3]) + l1 * _det3p(a[0], a[2], a[3])
            + l2 * _det3p(a[0], a[1], a[3]) + l3 * _det3p(a[0], a[1], a[2]))
    return -det, 64 * _EPS * perm


def _exact(p):
    return [Fraction(float(c)) for c in p]


def _sub(a, b):
    return [x - y for x, y in zip(a, b)]


def _det3_exact(r0, r1, r2):
    return (r0[0] * (r1[1] * r2[2] - r1[2] * r2[1])
            - r0[1] * (r1[0] * r2[2] - r1[2] * r2[0])
            + r0[2] * (r1[0] * r2[1] - r1[1] * r2[0]))


def orient_exact(a, b, c, d):
    a, b, c, d = (p if isinstance(p[0], Fraction) else _exact(p) for p in (a, b, c, d))
    return _sign(_det3_exact(_sub(b, a), _sub(c, a), _sub(d, a)))


def insphere_exact(a, b, c, d, e):
    """Sign of ``e`` w.r.t. the sphere through positively oriented a, b, c, d."""
    pts = [p if isinstance(p[0], Fraction) else _exact(p) for p in (a, b, c, d, e)]
    e = pts[4]
    r = [_sub(p, e) for p in pts[:4]]
    lift = [sum(x * x for x in ri) for ri in r]
    det = (-lift[0] * _det3_exact(r[1], r[2], r[3]) + lift[1] * _det3_exact(r[0], r[2], r[3])
           - lift[2] * _det3_exact(r[0], r[1], r[3]) + lift[3] * _det3_exact(r[0], r[1], r[2]))
    return -_sign(det)


def incircle_coplanar_exact(a, b, c, p):
    """Sign of coplanar ``p`` w.r.t. the circumcircle of triangle abc."""
    a, b, c, p = (_exact(x) for x in (a, b, c, p))
    u, v = _sub(b, a), _sub(c, a)
    n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
    # any sphere through abc cuts their plane along the circumcircle
    q = [x + y for x, y in zip(a, n)]
    return insphere_exact(a, b, c, q, p)


def _sign(x):
    return (x > 0) - (x < 0)


# ---------------------------------------------------------------------------
# triangulation

def _flip(tet):
    t = list(tet)
    t[0], t[1] = t[1], t[0]
    return t


class _Triangulation:
    """Incremental Delaunay triangulation with ghost cells."""

    def __init__(self, points):
        self.p = points
        self.tets = []
        self.alive = []

    def _coords(self, tets, sub):
        """Coordinates of (m, 4) tets, with infinite vertices replaced by ``sub``."""
        idx = np.asarray(tets)
        out = self.p[np.where(idx == INF, 0, idx)]
        out[idx == INF] = sub
        return out

    def start(self, a, b, c, d):
        tet = [a, b, c, d]
        if orient_exact(*(self.p[i] for i in tet)) < 0:
            tet = _flip(tet)
        self.tets.append(tet)
        for k in range(4):
            ghost = list(tet)
            ghost[k] = INF
            # swap two finite entries so infinity lies opposite the removed vertex
            others = [j for j in range(4) if j != k]
            ghost[others[0]], ghost[others[1]] = ghost[others[1]], ghost[others[0]]
            self.tets.append(ghost)
        self.alive = [True] * len(self.tets)

    def conflicts(self, i):
        """Indices of live tetrahedra whose circumsphere strictly contains point i."""
        p = self.p[i]
        live = np.flatnonzero(self.alive)
        tets = np.asarray(self.tets)[live]
        ghost = np.any(tets == INF, axis=1)
        result = []

        fin = live[~ghost]
        if fin.size:
            val, bound = _insphere_float(self._coords(tets[~ghost], p), p)
            sure = np.abs(val) > bound
            result.extend(fin[sure & (val > 0)].tolist())
            for t in fin[~sure]:
                if insphere_exact(*(self.p[v] for v in self.tets[t]), p) > 0:
                    result.append(int(t))

        gh = live[ghost]
        if gh.size:
            val, bound = _orient_float(self._coords(tets[ghost], p))
            sure = np.abs(val) > bound
            result.extend(gh[sure & (val > 0)].tolist())
            for t in gh[~sure]:
                tet = self.tets[t]
                sub = [p if v == INF else self.p[v] for v in tet]
                s = orient_exact(*sub)
                if s > 0:
                    result.append(int(t))
                elif s == 0:
                    face = [self.p[v] for v in tet if v != INF]
                    if incircle_coplanar_exact(*face, p) > 0:
                        result.append(int(t))
        return sorted(result)

    def insert(self, i):
        cavity = self.conflicts(i)
        if not cavity:
            return False
        faces = {}
        for t in cavity:
            tet = self.tets[t]
            for k in range(4):
                key = frozenset(tet[:k] + tet[k + 1:])
                if key in faces:
                    faces[key] = None
                else:
                    faces[key] = (t, k)
            self.alive[t] = False
        for key in faces:
            entry = faces[key]
            if entry is None:
                continue
            t, k = entry
            new = list(self.tets[t])
            new[k] = i
            self.tets.append(new)
            self.alive.append(True)
        return True

    def finite_tetrahedra(self):
        out = [t for t, a in zip(self.tets, self.alive) if a and INF not in t]
        return np.array(out, dtype=np.int64).reshape(-1, 4)


def _initial_simplex(p):
    n = len(p)
    i0 = 0
    i1 = next((j for j in range(1, n) if np.any(p[j] != p[i0])), None)
    if i1 is None:
        raise DegenerateInput("all points coincide")
    e0 = _exact(p[i0])
    u = _sub(_exact(p[i1]), e0)
    i2 = None
    for j in range(n):
        v = _sub(_exact(p[j]), e0)
        cross = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
        if any(cross):
            i2 = j
            break
    if i2 is None:
        raise DegenerateInput("points are collinear")
    i3 = next((j for j in range(n) if orient_exact(p[i0], p[i1], p[i2], p[j]) != 0), None)
    if i3 is None:
        raise DegenerateInput("points are coplanar")
    return [i0, i1, i2, i3]


def _jitter(point, index, scale):
    rng = np.random.default_rng(index)
    return point + scale * rng.uniform(-1, 1, size=point.shape)


def delaunay_tetrahedra(points):
    """Tetrahedra (m, 4) of a Delaunay triangulation of (n, 3) ``points``.

    Points are inserted in index order, so the output is deterministic.
    A point that coincides with an already inserted one is displaced by a
    seeded jitter of ``1e-8`` times the bounding-box diagonal.
    """
    p = np.array(points, dtype=float)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError("expected an (n, 3) array of points")
    if len(p) < 4:
        raise DegenerateInput(f"need at least 4 points, got {len(p)}")
    if not np.all(np.isfinite(p)):
        raise DegenerateInput("points must be finite")
    tri = _Triangulation(p)
    first = _initial_simplex(p)
    tri.start(*first)
    scale = 1e-8 * float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))
    for i in range(len(p)):
        if i in first:
            continue
        attempt = 0
        while not tri.insert(i):
            attempt += 1
            if attempt > 8:
                raise DegenerateInput(f"point {i} could not be inserted")
            p[i] = _jitter(p[i], i * 16 + attempt, scale)
    return tri.finite_tetrahedra()


# ---------------------------------------------------------------------------
# graph

@dataclass(frozen=True, eq=False)
class NeighborhoodGraph:
    """Per-point neighbourhoods ``N(i)`` (sorted index arrays including i).

    ``centers[i]`` is the mean of the points of ``N(i)`` when the graph was
    built from (or attached to) a point set.
    """

    labels: np.ndarray
    neighbors: tuple
    centers: np.ndarray = None
    tetrahedra: np.ndarray = None

    def __len__(self):
        return len(self.neighbors)

    def edges(self):
        return sorted((i, int(j)) for i, nb in enumerate(self.neighbors) for j in nb if j > i)

    def with_points(self, points):
        """Attach ``points`` (matching labels) and compute the centres."""
        if len(points) != len(self) or np.any(points.labels != self.labels):
            raise ValueError("point labels do not match the graph")
        centers = np.array([points.points[nb].mean(axis=0) for nb in self.neighbors])
        return NeighborhoodGraph(self.labels, self.neighbors, centers, self.tetrahedra)

    def subgraph(self, labels):
        """Restrict to ``labels``; neighbourhoods lose the removed points."""
        labels = np.asarray(labels)
        keep = np.searchsorted(self.labels, labels)
        if np.any(keep >= len(self)) or np.any(self.labels[np.minimum(keep, len(self) - 1)] != labels):
            raise KeyError("labels missing from graph")
        remap = np.full(len(self), -1)
        remap[keep] = np.arange(len(keep))
        neighbors = tuple(np.sort(remap[nb][remap[nb] >= 0]) for nb in (self.neighbors[k] for k in keep))
        return NeighborhoodGraph(labels.copy(), neighbors)

    @classmethod
    def singleton(cls, labels):
        labels = np.asarray(labels)
        return cls(labels, tuple(np.array([i]) for i in range(len(labels))))


def graph_from_tetrahedra(labels, tets):
    n = len(labels)
    adj = [{i} for i in range(n)]
    for tet in tets:
        for a in tet:
            adj[a].update(int(b) for b in tet)
    return NeighborhoodGraph(np.asarray(labels), tuple(np.array(sorted(s)) for s in adj),
                             tetrahedra=np.asarray(tets))


def delaunay_graph(points):
    """Neighbourhood graph of a :class:`PointSet` from its Delaunay edges.

    Two points are neighbours when they share a triangulation edge; each
    point is also its own neighbour.
    """
    if points.dimension != 3:
        raise ValueError("the Delaunay graph is implemented for 3D points")
    tets = delaunay_tetrahedra(points.points)
    return graph_from_tetrahedra(points.labels, tets).with_points(points)


def neighborhood_center(graph, i, points):
    """Mean of the points of ``N(i)``."""
    pts = points.points if isinstance(points, PointSet) else np.asarray(points)
    return pts[graph.neighbors[i]].mean(axis=0)


def format_graph(graph):
    lines = []
    for i, nb in enumerate(graph.neighbors):
        others = " ".join(str(int(graph.labels[j])) for j in nb if j != i)
        lines.append(f"{int(graph.labels[i])}: {others}".rstrip() + "\n")
    return "".join(lines)


def parse_graph(text, points=None):
    entries = []
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        head, _, tail = line.partition(":")
        entries.append((int(head), [int(v) for v in tail.split()]))
    entries.sort()
    labels = np.array([e[0] for e in entries], dtype=np.int64)
    pos = {int(lab): k for k, lab in enumerate(labels)}
    neighbors = tuple(np.array(sorted({k} | {pos[v] for v in nb})) for k, (_, nb) in enumerate(entries))
    graph = NeighborhoodGraph(labels, neighbors)
    return graph.with_points(points) if points is not None else graph


def write_graph(graph, path):
    with open(path, "w") as f:
        f.write(format_graph(graph))


def read_graph(path, points=None):
    with open(path) as f:
        return parse_graph(f.read(), points)
