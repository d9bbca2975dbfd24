"""Small-dimension polyhedral computations.

Polytopes carry an H-representation {x : Ax <= b} and/or a vertex list; the
missing representation is computed on demand.  Vertex enumeration is
combinatorial (all d-subsets of the constraint rows), which restricts the
module to dimension <= 3 — enough for every bundled nonlinearity instance.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

__all__ = ["Polytope", "hull_vertices", "gauge_matrix", "DimensionError"]

_TOL = 1e-9
MAX_DIM = 3


class DimensionError(ValueError):
    """Polyhedral operation requested above the supported dimension."""


def hull_vertices(V):
    """Extreme points of the convex hull of a point set, any affine rank.

    Handles degenerate sets (points, segments, flat polygons) that
    scipy.spatial.ConvexHull rejects.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.shape[0] == 0:
        return V
    d = V.shape[1]
    if d > MAX_DIM:
        raise DimensionError(f"dimension {d} exceeds supported maximum {MAX_DIM}")
    # collapse duplicates first
    out = []
    for v in V:
        if not any(np.allclose(v, w, atol=1e-9) for w in out):
            out.append(v)
    V = np.array(out)
    if len(V) <= 1:
        return V
    span = V - V[0]
    rank = np.linalg.matrix_rank(span, tol=1e-9)
    if rank == 0:
        return V[:1]
    if rank == 1:
        # segment: keep the two endpoints along the span direction
        direction = span[np.argmax(np.linalg.norm(span, axis=1))]
        t = span @ direction
        return np.array([V[np.argmin(t)], V[np.argmax(t)]])
    if rank < d:
        # flat set in higher dimension: hull in an orthonormal basis of the flat
        Q, _ = np.linalg.qr(span.T)
        W = span @ Q[:, :rank]
        idx = _full_dim_hull_indices(W)
        return V[idx]
    return V[_full_dim_hull_indices(V)]


def _full_dim_hull_indices(V):
    from scipy.spatial import ConvexHull
    return sorted(ConvexHull(V).vertices)


class Polytope:
    """Convex polyhedron in dimension <= 3.

    Construct via from_halfspaces (may be unbounded, e.g. a cone) or
    from_vertices (always bounded).
    """

    def __init__(self, A=None, b=None, V=None):
        if A is None and V is None:
            raise ValueError("need an H-representation or a vertex list")
        if A is not None:
            A = np.atleast_2d(np.asarray(A, dtype=float))
            b = np.asarray(b, dtype=float).reshape(-1)
            if A.shape[0] != b.shape[0]:
                raise ValueError("A and b row counts differ")
            if A.shape[1] > MAX_DIM:
                raise DimensionError(
                    f"dimension {A.shape[1]} exceeds supported maximum {MAX_DIM}")
        if V is not None:
            V = np.atleast_2d(np.asarray(V, dtype=float))
        self._A, self._b, self._V = A, b, V

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_halfspaces(cls, A, b):
        return cls(A=A, b=b)

    @classmethod
    def from_vertices(cls, V):
        return cls(V=hull_vertices(V))

    @classmethod
    def box(cls, dim, radius=1.0):
        A = np.vstack([np.eye(dim), -np.eye(dim)])
        return cls(A=A, b=radius * np.ones(2 * dim))

    # -- properties -------------------------------------------------------
    @property
    def dim(self):
        return self._A.shape[1] if self._A is not None else self._V.shape[1]

    @property
    def halfspaces(self):
        if self._A is None:
            self._A, self._b = self._facets_from_vertices()
        return self._A, self._b

    @property
    def vertices(self):
        if self._V is None:
            self._V = self._enumerate_vertices()
        return self._V

    def _facets_from_vertices(self):
        V = self._V
        d = self.dim
        span = V - V[0]
        if len(V) <= d or np.linalg.matrix_rank(span, tol=1e-9) < d:
            raise ValueError("H-representation requires a full-dimensional polytope")
        from scipy.spatial import ConvexHull
        eq = ConvexHull(V).equations  # rows [a, c] meaning a.x + c <= 0
        A, b = eq[:, :-1], -eq[:, -1]
        # merge duplicate facets from triangulated output
        rows = []
        for i in range(A.shape[0]):
            if not any(np.allclose(A[i], r[0], atol=1e-9)
                       and abs(b[i] - r[1]) < 1e-9 for r in rows):
                rows.append((A[i], b[i]))
        return np.array([r[0] for r in rows]), np.array([r[1] for r in rows])

    def _enumerate_vertices(self):
        A, b = self._A, self._b
        d = A.shape[1]
        if A.shape[0] < d:
            raise ValueError("too few constraints for a vertex")
        pts = []
        for idx in combinations(range(A.shape[0]), d):
            M = A[list(idx)]
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            x = np.linalg.solve(M, b[list(idx)])
            if np.all(A @ x <= b + _TOL * (1.0 + np.abs(b))):
                pts.append(x)
        if not pts:
            return np.zeros((0, d))
        return hull_vertices(np.array(pts))

    # -- predicates -------------------------------------------------------
    def contains(self, x, tol=1e-9):
        A, b = self.halfspaces
        return bool(np.all(A @ np.asarray(x, dtype=float) <= b + tol))

    def is_bounded(self):
        """A halfspace polyhedron is bounded iff its recession cone is {0}."""
        if self._A is None:
            return True
        A, b = self._A, self._b
        box = Polytope.box(self.dim)
        Abox, bbox = box._A, box._b
        rec = Polytope(A=np.vstack([A, Abox]),
                       b=np.concatenate([np.zeros(len(b)), bbox]))
        V = rec.vertices
        return not (len(V) and np.max(np.abs(V)) > 1e-7)

    # -- operations -------------------------------------------------------
    def intersect(self, other: "Polytope") -> "Polytope":
        A1, b1 = self.halfspaces
        A2, b2 = other.halfspaces
        return Polytope(A=np.vstack([A1, A2]), b=np.concatenate([b1, b2]))

    def image(self, L) -> "Polytope":
        """Image under the linear map L (requires a bounded polytope)."""
        if self._V is None and not self.is_bounded():
            raise ValueError("image of an unbounded polyhedron is not a polytope")
        return Polytope.from_vertices(self.vertices @ np.asarray(L, dtype=float).T)

    def gauge(self, x):
        """Minkowski functional; requires 0 in the interior."""
        A, b = self.halfspaces
        if np.any(b <= _TOL):
            raise ValueError("gauge requires the origin in the interior")
        vals = (A @ np.asarray(x, dtype=float)) / b
        return float(max(np.max(vals), 0.0))

    @staticmethod
    def convex_union(*polys) -> "Polytope":
        V = np.vstack([p.vertices for p in polys])
        return Polytope.from_vertices(V)

    def symmetrized(self) -> "Polytope":
        V = self.vertices
        return Polytope.from_vertices(np.vstack([V, -V]))

    def __repr__(self):
        n = len(self._V) if self._V is not None else None
        return f"Polytope(dim={self.dim}, vertices={n})"


def gauge_matrix(P: Polytope):
    """Matrix T with gauge(x) = |Tx|_inf for an origin-symmetric polytope P.

    Facet normals of a symmetric polytope come in +/- pairs; one scaled
    representative per pair is kept, sign-normalized so the first nonzero
    entry is positive, rows sorted for a deterministic result.
    """
    A, b = P.halfspaces
    if np.any(b <= _TOL):
        raise ValueError("gauge matrix requires the origin in the interior")
    rows = A / b[:, None]
    kept = []
    for r in rows:
        k = np.flatnonzero(np.abs(r) > 1e-12)[0]
        r = r * np.sign(r[k])
        if not any(np.allclose(r, s, atol=1e-9) for s in kept):
            kept.append(r)
    kept.sort(key=lambda r: tuple(-r))
    return np.array(kept)
