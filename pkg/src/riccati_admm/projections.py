"""Euclidean projections onto boxes, half-spaces and hyperplanes.

These realize the indicator functions of the constraint sets in the ADMM
slack update. Every function returns a new array.
"""
from __future__ import annotations

import numpy as np

from .problem import HalfSpace


class DegenerateGeometry(ValueError):
    pass


def project_box(v, lo, hi) -> np.ndarray:
    return np.minimum(np.maximum(v, lo), hi)


def project_halfspace(v, h: HalfSpace) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    viol = h.a @ v - h.b
    if viol <= 0:
        return v.copy()
    return v - (viol / (h.a @ h.a)) * h.a


def project_hyperplane(v, a, b) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    return v - ((a @ v - b) / (a @ a)) * a


def _orthonormal_rows(normals) -> np.ndarray:
    """Gram-Schmidt on the rows of ``normals``; dependent rows become zero."""
    E = np.array(normals, dtype=float).reshape(len(normals), -1)
    for i in range(E.shape[0]):
        E[i] -= E[:i].T @ (E[:i] @ E[i])
        nrm = np.linalg.norm(E[i])
        E[i] = E[i] / nrm if nrm > 1e-12 else 0.0
    return E


def _in_plane(a, E) -> np.ndarray:
    """Component of ``a`` orthogonal to the plane normals ``E``.

    Falls back to ``a`` itself when the half-space normal is (nearly)
    perpendicular to the planes, where no in-plane step can help.
    """
    at = a - E.T @ (E @ a) if len(E) else a.copy()
    return at if at @ at > 1e-12 * (a @ a) else a


def project_state_set(v, state_box=None, planes=(), halfspaces=()) -> np.ndarray:
    """One sequential pass: box clamp, then each plane, then each half-space.

    Half-space steps move within the planes (along the normal with its
    plane components removed), so for planes plus a single half-space the
    result is the exact projection onto their intersection. With several
    half-spaces only the last is guaranteed to hold exactly.
    """
    z = np.array(v, dtype=float)
    if state_box is not None:
        z = project_box(z, *state_box)
    for h in planes:
        z = project_hyperplane(z, h.a, h.b)
    E = _orthonormal_rows([h.a for h in planes]) if planes else np.zeros((0, z.size))
    for h in halfspaces:
        viol = h.a @ z - h.b
        if viol > 0:
            at = _in_plane(h.a, E)
            z = z - (viol / (h.a @ at)) * at
    return z


def linearize_sphere_obstacle(pos_estimate, center, radius, n: int = 3,
                              pos_index=(0, 1, 2)) -> HalfSpace:
    """Tangent-plane keep-out constraint for a sphere.

    The constraint (p - c) . e >= radius, with e the unit vector from the
    center toward ``pos_estimate``, is returned as a . x <= b over a state of
    dimension ``n`` whose position occupies ``pos_index``.
    """
    p = np.asarray(pos_estimate, dtype=float)
    c = np.asarray(center, dtype=float)
    diff = p - c
    dist = np.linalg.norm(diff)
    if dist <= 1e-9:
        raise DegenerateGeometry("position estimate coincides with the obstacle center")
    a_pos = -diff / dist
    a = np.zeros(n)
    a[list(pos_index)] = a_pos
    return HalfSpace(a, float(a_pos @ c - radius))


class CompiledStateConstraints:
    """Per-knot constraint lists packed into padded arrays.

    Applying plane ``j`` (then half-space ``j``) to every knot at once gives
    the same result as looping :func:`project_state_set` over knots, because
    each knot is projected independently. Half-space step directions are
    restricted to the knot's planes once, at construction.
    """

    def __init__(self, constraints, N: int, n: int, skip_first: bool = True):
        self.box = constraints.state_box
        start = 1 if skip_first else 0
        self.plane_a, self.plane_b, self.plane_mask = self._pack(
            [constraints.planes_at(k) if k >= start else [] for k in range(N)], N, n)
        self.half_a, self.half_b, self.half_mask = self._pack(
            [constraints.halfspaces_at(k) if k >= start else [] for k in range(N)], N, n)
        self.start = start
        # step directions for the half-spaces, restricted to each knot's planes
        self.half_dir = self.half_a.copy()
        for k in range(N):
            planes = constraints.planes_at(k) if k >= start else []
            if planes:
                E = _orthonormal_rows([h.a for h in planes])
                for j in range(self.half_a.shape[0]):
                    if self.half_mask[j, k]:
                        self.half_dir[j, k] = _in_plane(self.half_a[j, k], E)

    @staticmethod
    def _pack(lists, N, n):
        width = max((len(step) for step in lists), default=0)
        a = np.zeros((width, N, n))
        b = np.zeros((width, N))
        mask = np.zeros((width, N), dtype=bool)
        for k, step in enumerate(lists):
            for j, h in enumerate(step):
                a[j, k] = h.a
                b[j, k] = h.b
                mask[j, k] = True
        # padded rows get a unit normal so the division below stays finite
        a[~mask, 0] = 1.0
        return a, b, mask

    @property
    def empty(self) -> bool:
        return self.box is None and not self.plane_mask.any() and not self.half_mask.any()

    def project(self, V: np.ndarray) -> np.ndarray:
        """Project every row of V (shape (N, n)) onto its knot's set."""
        Z = V.copy()
        s = self.start
        if self.box is not None:
            Z[s:] = project_box(Z[s:], *self.box)
        for a, b, mask in zip(self.plane_a, self.plane_b, self.plane_mask):
            t = np.where(mask, (np.einsum("kn,kn->k", a, Z) - b) / np.einsum("kn,kn->k", a, a), 0.0)
            Z -= t[:, None] * a
        for a, b, mask, da in zip(self.half_a, self.half_b, self.half_mask, self.half_dir):
            viol = np.einsum("kn,kn->k", a, Z) - b
            t = np.where(mask & (viol > 0), viol / np.einsum("kn,kn->k", a, da), 0.0)
            Z -= t[:, None] * da
        return Z
