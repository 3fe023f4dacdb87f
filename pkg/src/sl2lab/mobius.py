"""Geometry of SL2(C) acting on the complex projective line.

Scalar objects (:class:`GroupElement`, :class:`ProjPoint`) are used for
configuration and tests; the ``*_vec`` helpers work on stacked arrays of
homogeneous vectors with shape ``(..., 2)`` and are what the Monte Carlo
and grid code call in their inner loops.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

DET_TOL = 1e-12
DET_RENORM_MAX = 1e-6
PHASE_TOL = 1e-8


class GroupElement:
    """Unit-determinant 2x2 complex matrix.

    Matrices whose determinant drifted by at most ``1e-6`` are rescaled by
    ``det**-1/2`` (principal branch); anything further off raises.
    """

    def __init__(self, matrix):
        m = np.array(matrix, dtype=complex).reshape(2, 2)
        if not np.all(np.isfinite(m)):
            raise ValueError("matrix entries must be finite")
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        drift = abs(det - 1)
        if drift > DET_RENORM_MAX:
            raise ValueError(f"determinant {det} too far from 1")
        if drift > DET_TOL:
            m = m / np.sqrt(det)
        m.setflags(write=False)
        self.m = m

    @classmethod
    def identity(cls) -> GroupElement:
        return cls(np.eye(2))

    @classmethod
    def diag(cls, lam: complex) -> GroupElement:
        return cls([[lam, 0], [0, 1 / lam]])

    @classmethod
    def rotation(cls, theta: float) -> GroupElement:
        """Real rotation by ``theta`` radians (an element of SU(2))."""
        c, s = np.cos(theta), np.sin(theta)
        return cls([[c, -s], [s, c]])

    def __matmul__(self, other: GroupElement) -> GroupElement:
        return GroupElement(self.m @ other.m)

    def __repr__(self) -> str:
        return f"GroupElement({self.m.tolist()!r})"

    def inv(self) -> GroupElement:
        a, b, c, d = self.m.ravel()
        return GroupElement([[d, -b], [-c, a]])

    @property
    def trace(self) -> complex:
        return complex(self.m[0, 0] + self.m[1, 1])

    @cached_property
    def opnorm(self) -> float:
        return float(opnorm_vec(self.m))

    @cached_property
    def cartan(self) -> tuple[GroupElement, float, GroupElement]:
        return _cartan(self)


def opnorm(g: GroupElement) -> float:
    """Operator norm, i.e. the largest singular value (always >= 1)."""
    return g.opnorm


def opnorm_vec(m: np.ndarray) -> np.ndarray:
    """Largest singular value of stacked unit-determinant matrices ``(..., 2, 2)``.

    Uses ``s = ||m||_F^2`` and ``lambda^2 = (s + sqrt(s^2 - 4)) / 2``.
    """
    s = np.sum(np.abs(m) ** 2, axis=(-2, -1))
    disc = np.sqrt(np.maximum(s * s - 4.0, 0.0))
    return np.sqrt(np.maximum((s + disc) / 2.0, 1.0))


def _su2_from_column(k1: complex, k2: complex) -> np.ndarray:
    return np.array([[k1, -np.conj(k2)], [k2, np.conj(k1)]])


def _cartan(g: GroupElement) -> tuple[GroupElement, float, GroupElement]:
    lam = g.opnorm
    if lam - 1.0 <= 1e-12:
        return g, 1.0, GroupElement.identity()
    h = g.m.conj().T @ g.m
    p, q, r = h[0, 0].real, h[0, 1], h[1, 1].real
    t = lam * lam
    # eigenvector of g^H g for the top eigenvalue t; pick the better-conditioned form
    c1 = np.array([q, t - p])
    c2 = np.array([t - r, np.conj(q)])
    v1 = c1 if np.linalg.norm(c1) >= np.linalg.norm(c2) else c2
    v1 = v1 / np.linalg.norm(v1)
    # rows of l are conj(v1), conj(v2) with v2 = (-conj(v1_2), conj(v1_1)); det l = 1
    l_mat = np.array([[np.conj(v1[0]), np.conj(v1[1])], [-v1[1], v1[0]]])
    kcol = g.m @ v1 / lam
    kcol = kcol / np.linalg.norm(kcol)
    k_mat = _su2_from_column(kcol[0], kcol[1])
    return GroupElement(k_mat), lam, GroupElement(l_mat)


def cartan(g: GroupElement) -> tuple[GroupElement, float, GroupElement]:
    """Return ``(k, lam, l)`` with ``g = k @ diag(lam, 1/lam) @ l`` and k, l in SU(2)."""
    return g.cartan


def cartan_vec(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked :func:`cartan` for unit-determinant ``(..., 2, 2)`` arrays.

    Returns ``(k, lam, l)`` with shapes ``(..., 2, 2)``, ``(...)``, ``(..., 2, 2)``.
    Near-unitary inputs (``lam - 1 <= 1e-12``) give ``(m, 1, I)`` as in the scalar case.
    """
    m = np.asarray(m, dtype=complex)
    lam = opnorm_vec(m)
    h = np.swapaxes(m.conj(), -1, -2) @ m
    p, q, r = h[..., 0, 0].real, h[..., 0, 1], h[..., 1, 1].real
    t = lam * lam
    c1 = np.stack([q, t - p], axis=-1)
    c2 = np.stack([t - r, np.conj(q)], axis=-1)
    n1, n2 = np.linalg.norm(c1, axis=-1), np.linalg.norm(c2, axis=-1)
    v1 = np.where((n1 >= n2)[..., None], c1, c2)
    flat = lam - 1.0 <= 1e-12
    nv = np.linalg.norm(v1, axis=-1)
    v1 = np.where(flat[..., None], np.array([1.0, 0.0]), v1 / np.where(flat, 1.0, nv)[..., None])
    a, b = v1[..., 0], v1[..., 1]
    l_mat = np.stack([np.stack([np.conj(a), np.conj(b)], -1), np.stack([-b, a], -1)], -2)
    kcol = act_vec(m, v1) / lam[..., None]
    kcol = kcol / np.linalg.norm(kcol, axis=-1, keepdims=True)
    k1, k2 = kcol[..., 0], kcol[..., 1]
    k_mat = np.stack([np.stack([k1, -np.conj(k2)], -1), np.stack([k2, np.conj(k1)], -1)], -2)
    eye = np.broadcast_to(np.eye(2, dtype=complex), m.shape)
    k_mat = np.where(flat[..., None, None], m, k_mat)
    l_mat = np.where(flat[..., None, None], eye, l_mat)
    return k_mat, np.where(flat, 1.0, lam), l_mat


# ---------------------------------------------------------------------------
# projective points


def canonical_vec(v: np.ndarray) -> np.ndarray:
    """Normalize stacked 2-vectors to unit norm and canonical phase.

    The first coordinate with modulus above ``1e-8`` is made real positive.
    """
    v = np.asarray(v, dtype=complex)
    nrm = np.sqrt(np.abs(v[..., 0]) ** 2 + np.abs(v[..., 1]) ** 2)
    if np.any(nrm == 0):
        raise ValueError("zero vector does not define a projective point")
    v = v / nrm[..., None]
    lead = np.where(np.abs(v[..., 0]) > PHASE_TOL, v[..., 0], v[..., 1])
    phase = np.conj(lead) / np.abs(lead)
    return v * phase[..., None]


def dist_vec(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Projective distance ``|det(v, w)| / (|v| |w|)`` for stacked vectors."""
    det = v[..., 0] * w[..., 1] - v[..., 1] * w[..., 0]
    nv = np.sqrt(np.abs(v[..., 0]) ** 2 + np.abs(v[..., 1]) ** 2)
    nw = np.sqrt(np.abs(w[..., 0]) ** 2 + np.abs(w[..., 1]) ** 2)
    return np.minimum(np.abs(det) / (nv * nw), 1.0)


def act_vec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply ``m`` (2x2, or stacked ``(..., 2, 2)``) to stacked vectors, no renormalization."""
    return np.einsum("...ij,...j->...i", m, v)


def cocycle_vec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``log(|m v| / |v|)`` for stacked vectors."""
    gv = act_vec(m, v)
    num = np.abs(gv[..., 0]) ** 2 + np.abs(gv[..., 1]) ** 2
    den = np.abs(v[..., 0]) ** 2 + np.abs(v[..., 1]) ** 2
    return 0.5 * np.log(num / den)


class ProjPoint:
    """Point of P^1 stored as a unit vector with canonical phase."""

    __hash__ = None  # equality is tolerance based

    def __init__(self, v):
        self.v = canonical_vec(np.asarray(v, dtype=complex).reshape(2))
        self.v.setflags(write=False)

    @classmethod
    def from_affine(cls, z: complex) -> ProjPoint:
        """The point ``[z : 1]``; ``z = inf`` gives ``[1 : 0]``."""
        if np.isinf(z):
            return cls([1, 0])
        return cls([z, 1])

    @property
    def affine(self) -> complex:
        v0, v1 = self.v
        return complex(np.inf) if v1 == 0 else complex(v0 / v1)

    def isclose(self, other: ProjPoint, tol: float = 1e-10) -> bool:
        return dist(self, other) <= tol

    def __eq__(self, other):
        if not isinstance(other, ProjPoint):
            return NotImplemented
        return self.isclose(other)

    def __repr__(self) -> str:
        return f"ProjPoint({self.v.tolist()!r})"


def act(g: GroupElement, x: ProjPoint) -> ProjPoint:
    return ProjPoint(g.m @ x.v)


def cocycle(g: GroupElement, x: ProjPoint) -> float:
    """Norm cocycle ``log |g v|`` for the stored unit vector ``v``."""
    return float(cocycle_vec(g.m, x.v))


def dist(x: ProjPoint, y: ProjPoint) -> float:
    return float(dist_vec(x.v, y.v))


def dual_vector(w) -> np.ndarray:
    """``w* = (-conj(w2), conj(w1))``, so that ``|<v, w>| = d([v], [w*])`` for unit v, w."""
    w = np.asarray(w, dtype=complex)
    return np.stack([-np.conj(w[..., 1]), np.conj(w[..., 0])], axis=-1)


def sigma_density(g: GroupElement, z: complex) -> float:
    """Density of ``i d(sigma_g) ^ conj(d(sigma_g))`` at ``[z : 1]``.

    For ``g = diag(lam, 1/lam)`` this is
    ``(lam^4 - 1)^2 |z|^2 / (lam^4 |z|^2 + 1)^2``; general ``g`` reduces to that
    case through the right Cartan factor, which is an isometry of P^1.
    The reference area form is ``dA / (2 (1 + |z|^2)^2)``, so against the
    unit-mass form the density is ``pi / 2`` times this value.
    """
    v = np.array([1.0, 0.0]) if np.isinf(z) else np.array([z, 1.0])
    return float(sigma_density_vec(g, v))


def sigma_density_vec(g: GroupElement, v: np.ndarray) -> np.ndarray:
    """:func:`sigma_density` at stacked homogeneous vectors ``v``."""
    _k, lam, l_el = g.cartan
    w = act_vec(l_el.m, np.asarray(v, dtype=complex))
    a2, b2 = np.abs(w[..., 0]) ** 2, np.abs(w[..., 1]) ** 2
    l4 = lam**4
    den = l4 * a2 + b2
    return (l4 - 1.0) ** 2 * a2 * b2 / (den * den)
