"""Finitely supported probability measures on SL2(C)."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .mobius import (
    GroupElement,
    ProjPoint,
    act,
    dist,
)

WEIGHT_TOL = 1e-9
MAX_ENUMERATED = 10_000


class ModelMeasure:
    """Probability measure ``sum_i w_i delta_{g_i}`` with strictly positive weights.

    Zero-weight atoms are dropped (they are not in the support). Weights whose
    total is within ``1e-9`` of one are renormalized; anything else raises
    ``ValueError``.
    """

    def __init__(self, atoms):
        atoms = [(g if isinstance(g, GroupElement) else GroupElement(g), float(w)) for g, w in atoms]
        if any(w < 0 or not np.isfinite(w) for _, w in atoms):
            raise ValueError("weights must be non-negative and finite")
        atoms = [(g, w) for g, w in atoms if w > 0]
        if not atoms:
            raise ValueError("a measure needs at least one atom of positive weight")
        weights = np.array([w for _, w in atoms])
        total = weights.sum()
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {total}, expected 1")
        weights = weights / total
        self.elements = tuple(g for g, _ in atoms)
        self.weights = weights
        self.weights.setflags(write=False)
        self.matrices = np.stack([g.m for g in self.elements])
        self.matrices.setflags(write=False)
        self.cumulative = np.cumsum(weights)
        self.cumulative[-1] = 1.0
        self._moments: dict[float, float] = {}

    @classmethod
    def dirac(cls, g) -> ModelMeasure:
        return cls([(g, 1.0)])

    @classmethod
    def uniform(cls, elements) -> ModelMeasure:
        elements = list(elements)
        return cls([(g, 1.0 / len(elements)) for g in elements])

    @property
    def atoms(self) -> list[tuple[GroupElement, float]]:
        return list(zip(self.elements, self.weights.tolist()))

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.matrices.imag == 0))

    def moment(self, p: float) -> float:
        return moment(self, p)

    def sample(self, rng: np.random.Generator) -> GroupElement:
        return sample(self, rng)

    def sample_indices(self, rng: np.random.Generator, size) -> np.ndarray:
        """Atom indices drawn i.i.d. from the weights (inverse-CDF on ``rng.random``)."""
        u = rng.random(size)
        return np.searchsorted(self.cumulative, u, side="right").astype(np.intp)


def reference_measure() -> ModelMeasure:
    """Uniform measure on ``{diag(2, 1/2), R_1 diag(2, 1/2)}``, ``R_1`` the rotation by 1 rad."""
    a = GroupElement.diag(2.0)
    return ModelMeasure.uniform([a, GroupElement.rotation(1.0) @ a])


def moment(mu: ModelMeasure, p: float) -> float:
    """``sum_i w_i (log |g_i|)^p`` (cached per ``p``)."""
    if p <= 0:
        raise ValueError("moment order must be positive")
    p = float(p)
    if p not in mu._moments:
        logs = np.log([g.opnorm for g in mu.elements])
        mu._moments[p] = float(np.dot(mu.weights, logs**p))
    return mu._moments[p]


def sample(mu: ModelMeasure, rng: np.random.Generator) -> GroupElement:
    return mu.elements[int(mu.sample_indices(rng, None))]


def convolution_power(mu: ModelMeasure, n: int) -> ModelMeasure:
    """Exact ``mu^{*n}`` as the law of ``g_n ... g_1``; atoms are not merged."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(mu) ** n > MAX_ENUMERATED:
        raise ValueError("convolution power too large to enumerate")
    atoms = []
    for word in itertools.product(range(len(mu)), repeat=n):
        m = np.eye(2, dtype=complex)
        w = 1.0
        for i in word:  # word[0] is g_1, applied first
            m = mu.matrices[i] @ m
            w *= mu.weights[i]
        atoms.append((GroupElement(m), w))
    tot = sum(w for _, w in atoms)
    return ModelMeasure([(g, w / tot) for g, w in atoms])


def convolution_moment_bound(mu: ModelMeasure, n: int, p: float) -> float:
    """Upper bound ``n^p M_p(mu)`` on ``M_p(mu^{*n})`` from sub-additivity of ``log |g|``."""
    if n < 1 or p < 1:
        raise ValueError("need n >= 1 and p >= 1")
    return n**p * moment(mu, p)


@dataclass
class ElementarityReport:
    has_proximal: bool
    has_noncommuting_pair: bool
    finite_orbit_suspected: bool
    evidence: list[str] = field(default_factory=list)

    @property
    def verdict(self) -> str:
        ok = self.has_proximal and self.has_noncommuting_pair and not self.finite_orbit_suspected
        return "likely-non-elementary" if ok else "elementary-or-unknown"

    @property
    def non_elementary(self) -> bool:
        return self.verdict == "likely-non-elementary"


def _enumerate_products(mu: ModelMeasure, depth: int) -> list[np.ndarray]:
    out = list(mu.matrices)
    layer = list(mu.matrices)
    for _ in range(depth - 1):
        nxt = []
        for m in layer:
            for a in mu.matrices:
                nxt.append(a @ m)
                if len(out) + len(nxt) >= MAX_ENUMERATED:
                    break
            if len(out) + len(nxt) >= MAX_ENUMERATED:
                break
        out.extend(nxt)
        layer = nxt
        if len(out) >= MAX_ENUMERATED:
            break
    return out[:MAX_ENUMERATED]


def _fixed_points(m: np.ndarray) -> list[ProjPoint]:
    _, vecs = np.linalg.eig(m)
    return [ProjPoint(vecs[:, j]) for j in range(2)]


def _orbit_closes(x: ProjPoint, mu: ModelMeasure, cap: int) -> bool:
    orbit = [x]
    frontier = [x]
    while frontier:
        nxt = []
        for y in frontier:
            for g in mu.elements:
                gy = act(g, y)
                if not any(dist(gy, z) <= 1e-9 for z in orbit):
                    orbit.append(gy)
                    nxt.append(gy)
                    if len(orbit) > cap:
                        return False
        frontier = nxt
    return True


def screen_elementarity(mu: ModelMeasure, depth: int = 4) -> ElementarityReport:
    """Heuristic, deterministic screen for non-elementarity.

    Enumerates products of length <= ``depth`` (capped at 1e4 matrices).
    A proximal witness is a product with ``|tr| > 2``; a finite invariant set
    is suspected when the orbit of a fixed point of that witness closes up.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    prods = _enumerate_products(mu, depth)
    evidence = [f"enumerated {len(prods)} products up to length {depth}"]

    proximal = None
    for m in prods:
        if abs(m[0, 0] + m[1, 1]) > 2 + 1e-9:
            proximal = m
            break
    if proximal is None:
        evidence.append("no product with |tr| > 2: semigroup looks bounded")
    else:
        evidence.append(f"proximal witness with |tr| = {abs(proximal[0, 0] + proximal[1, 1]):.6g}")

    noncommuting = False
    pool = prods[:200]
    ident = np.eye(2)
    for a, b in itertools.combinations(pool, 2):
        comm = a @ b @ np.linalg.inv(a) @ np.linalg.inv(b)
        if min(np.abs(comm - ident).max(), np.abs(comm + ident).max()) >= 1e-9:
            noncommuting = True
            break
    evidence.append("found non-commuting pair" if noncommuting else "all sampled pairs commute")

    finite = False
    if proximal is not None:
        for x in _fixed_points(proximal):
            if _orbit_closes(x, mu, cap=64):
                finite = True
                evidence.append(f"orbit of fixed point {x.v.round(6).tolist()} is finite")
        if not finite:
            evidence.append("fixed-point orbits of the proximal witness exceed the cap")
    return ElementarityReport(proximal is not None, noncommuting, finite, evidence)
