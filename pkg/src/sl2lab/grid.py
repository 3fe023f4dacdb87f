"""Two-chart discretization of P^1 and the transfer operators acting on it.

Chart 0 carries ``[z : 1]`` and chart 1 carries ``[1 : w]`` (``w = 1/z``).
Each chart is a uniform ``(m + 1) x (m + 1)`` node lattice on the square
``[-R, R]^2`` with ``R = 1.25``. A smooth partition of unity, switching over
``1/1.2 <= |z| <= 1.2``, makes every quadrature count the overlap once.
Interpolation is bilinear in the chart that contains the target point in
its closed unit disk.
"""

from __future__ import annotations

import csv
import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .measures import ModelMeasure
from .mobius import act_vec, canonical_vec, cocycle_vec, dist_vec

CHART_HALF_WIDTH = 1.25
PU_LOG_WIDTH = math.log(1.2)
DEFAULT_RESOLUTION = 256
PAIR_SAMPLE = 1_000_000
PAIR_SEED = 20240601


class NonConvergenceError(RuntimeError):
    """An iteration hit ``max_iter``; ``last_change`` holds its final step size."""

    def __init__(self, message: str, last_change: float, result=None):
        super().__init__(message)
        self.last_change = last_change
        self.result = result


def _smooth_step(s: np.ndarray) -> np.ndarray:
    # C-infinity step: 0 for s <= -1, 1 for s >= 1
    def f(r):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(r > 0, np.exp(-1.0 / np.where(r > 0, r, 1.0)), 0.0)

    a, b = f(1 + s), f(1 - s)
    return a / (a + b)


def _snap(f: np.ndarray) -> np.ndarray:
    # keep points on grid lines (notably the real axis) exactly on them
    r = np.round(f)
    return np.where(np.abs(f - r) < 1e-9, r, f)


class ProjGrid:
    """Node set on P^1 with Fubini-Study quadrature weights of total mass one."""

    def __init__(self, resolution: int = DEFAULT_RESOLUTION, half_width: float = CHART_HALF_WIDTH):
        m = int(resolution)
        if m < 4 or m % 2:
            raise ValueError("resolution must be an even integer >= 4")
        if half_width <= 1.2:
            raise ValueError("charts must contain the partition-of-unity support |z| <= 1.2")
        self.resolution = m
        self.half_width = float(half_width)
        self.h = 2 * self.half_width / m
        self.side = m + 1
        ax = -self.half_width + self.h * np.arange(self.side)
        ax[m // 2] = 0.0
        self.axis = ax
        zz = (ax[None, :] + 1j * ax[:, None]).ravel()  # index iy * side + ix
        self.n_per_chart = zz.size
        self.coords = np.concatenate([zz, zz])
        self.chart = np.repeat([0, 1], zz.size)
        ones = np.ones_like(zz)
        v0 = np.concatenate([zz, ones])
        v1 = np.concatenate([ones, zz])
        self.points = canonical_vec(np.stack([v0, v1], axis=-1))
        r = np.abs(zz)
        with np.errstate(divide="ignore"):
            pu = _smooth_step(-np.log(np.where(r > 0, r, 1e-300)) / PU_LOG_WIDTH)
        self.partition = np.concatenate([pu, pu])
        fs = (self.h**2 / math.pi) / (1 + r**2) ** 2
        w = np.concatenate([fs, fs]) * self.partition
        # the raw quadrature is within 1e-7 of unit mass for m >= 128; normalize exactly
        self.quadrature_mass = float(w.sum())
        self.weights = w / self.quadrature_mass
        for arr in (self.coords, self.chart, self.points, self.partition, self.weights):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.coords.size

    def __repr__(self) -> str:
        return f"ProjGrid(resolution={self.resolution})"

    def node_index(self, chart: int, ix: int, iy: int) -> int:
        return chart * self.n_per_chart + iy * self.side + ix

    def chart_view(self, values: np.ndarray, chart: int) -> np.ndarray:
        """``values`` of one chart as an ``(iy, ix)`` array."""
        n = self.n_per_chart
        return values[chart * n:(chart + 1) * n].reshape(self.side, self.side)

    def locate(self, v: np.ndarray):
        """Bilinear stencil ``(indices (n, 4), weights (n, 4))`` for stacked vectors ``v``."""
        v = np.asarray(v, dtype=complex).reshape(-1, 2)
        use0 = np.abs(v[:, 0]) <= np.abs(v[:, 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            coord = np.where(use0, v[:, 0] / np.where(use0, v[:, 1], 1), v[:, 1] / np.where(use0, 1, v[:, 0]))
        m, s = self.resolution, self.side
        fx = _snap((coord.real + self.half_width) / self.h)
        fy = _snap((coord.imag + self.half_width) / self.h)
        ix = np.clip(np.floor(fx).astype(np.intp), 0, m - 1)
        iy = np.clip(np.floor(fy).astype(np.intp), 0, m - 1)
        tx = fx - ix
        ty = fy - iy
        base = np.where(use0, 0, self.n_per_chart) + iy * s + ix
        idx = np.stack([base, base + 1, base + s, base + s + 1], axis=-1)
        wts = np.stack([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty], axis=-1)
        return idx, wts

    def interpolation_matrix(self, v: np.ndarray) -> sp.csr_matrix:
        idx, wts = self.locate(v)
        n = idx.shape[0]
        rows = np.repeat(np.arange(n), 4)
        return sp.csr_matrix((wts.ravel(), (rows, idx.ravel())), shape=(n, self.n_nodes))

    def function(self, f) -> GridFunction:
        """Sample ``f(points)`` where ``points`` is the ``(n_nodes, 2)`` array of unit vectors."""
        return GridFunction(self, f(self.points))


@functools.lru_cache(maxsize=4)
def default_grid(resolution: int = DEFAULT_RESOLUTION) -> ProjGrid:
    return ProjGrid(resolution)


@dataclass
class GridFunction:
    grid: ProjGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError("one value per grid node expected")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")

    def interp(self, v: np.ndarray) -> np.ndarray:
        """Bilinear evaluation at stacked vectors ``v``."""
        idx, wts = self.grid.locate(v)
        return np.sum(self.values[idx] * wts, axis=-1)

    def integral(self, measure: GridMeasure | None = None) -> complex:
        """Pairing with ``measure`` (default: Fubini-Study quadrature)."""
        w = self.grid.weights if measure is None else measure.masses
        return complex(np.dot(w, self.values))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def write_csv(self, path) -> None:
        g = self.grid
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["chart", "ix", "iy", "re", "im"])
            for i, val in enumerate(np.asarray(self.values, dtype=complex)):
                c, rem = divmod(i, g.n_per_chart)
                iy, ix = divmod(rem, g.side)
                wr.writerow([c, ix, iy, repr(float(val.real)), repr(float(val.imag))])


@dataclass
class GridMeasure:
    grid: ProjGrid
    masses: np.ndarray

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float)
        if self.masses.shape != (self.grid.n_nodes,):
            raise ValueError("one mass per grid node expected")
        if np.any(self.masses < 0):
            raise ValueError("masses must be non-negative")
        if abs(self.masses.sum() - 1) > 1e-9:
            raise ValueError(f"masses sum to {self.masses.sum()}, expected 1")

    @classmethod
    def fubini_study(cls, grid: ProjGrid) -> GridMeasure:
        w = np.array(grid.weights)
        return cls(grid, w / w.sum())

    @classmethod
    def dirac(cls, grid: ProjGrid, v) -> GridMeasure:
        return empirical_measure(grid, np.asarray(v)[None, :])

    def total_variation(self, other: GridMeasure) -> float:
        return 0.5 * float(np.abs(self.masses - other.masses).sum())

    def write_csv(self, path) -> None:
        g = self.grid
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["chart", "ix", "iy", "mass"])
            for i, val in enumerate(self.masses):
                c, rem = divmod(i, g.n_per_chart)
                iy, ix = divmod(rem, g.side)
                wr.writerow([c, ix, iy, repr(float(val))])


def empirical_measure(grid: ProjGrid, endpoints: np.ndarray) -> GridMeasure:
    """Bin sample points to the grid by bilinear splatting (the same stencil as interpolation)."""
    idx, wts = grid.locate(endpoints)
    masses = np.bincount(idx.ravel(), weights=wts.ravel(), minlength=grid.n_nodes)
    masses = np.maximum(masses, 0.0)
    return GridMeasure(grid, masses / masses.sum())


# ---------------------------------------------------------------------------
# operators


class GridOperator:
    """Discretized perturbed Markov operators of ``mu`` on ``grid``.

    ``(P^(k)_xi u)_i = sum_a w_a (i sigma_a(x_i))^k exp(i xi sigma_a(x_i)) (B_a u)_i``
    with ``B_a`` the bilinear interpolation matrix at the nodes ``g_a x_i``.
    """

    def __init__(self, mu: ModelMeasure, grid: ProjGrid):
        self.mu = mu
        self.grid = grid
        pts = grid.points
        self.interp = []
        sig = []
        for m in mu.matrices:
            self.interp.append(grid.interpolation_matrix(act_vec(m, pts)))
            sig.append(cocycle_vec(m, pts))
        self.sigma = np.array(sig)
        self.weights = mu.weights
        markov = self.weights[0] * self.interp[0]
        for w, b in zip(self.weights[1:], self.interp[1:]):
            markov = markov + w * b
        self.markov = markov.tocsr()
        self.markov_t = self.markov.T.tocsr()

    def apply(self, u: np.ndarray, xi: float = 0.0, k: int = 0) -> np.ndarray:
        if k < 0:
            raise ValueError("derivative order must be >= 0")
        if xi == 0 and k == 0:
            return self.markov @ u
        out = np.zeros(self.grid.n_nodes, dtype=complex)
        for w, s, b in zip(self.weights, self.sigma, self.interp):
            coef = w * np.exp(1j * xi * s)
            if k:
                coef = coef * (1j * s) ** k
            out += coef * (b @ u)
        return out

    def push(self, masses: np.ndarray) -> np.ndarray:
        """Adjoint of the Markov operator: mass at each node transported to ``g x_i`` and splatted."""
        return self.markov_t @ masses


@functools.lru_cache(maxsize=8)
def grid_operator(mu: ModelMeasure, grid: ProjGrid) -> GridOperator:
    return GridOperator(mu, grid)


def _as_values(u) -> np.ndarray:
    return u.values if isinstance(u, GridFunction) else np.asarray(u)


def apply_markov(mu: ModelMeasure, u: GridFunction) -> GridFunction:
    return GridFunction(u.grid, grid_operator(mu, u.grid).apply(u.values))


def apply_perturbed(mu: ModelMeasure, xi: float, k: int, u: GridFunction) -> GridFunction:
    return GridFunction(u.grid, grid_operator(mu, u.grid).apply(u.values, xi, k))


def bin_measure(nu: GridMeasure, grid: ProjGrid) -> GridMeasure:
    """Re-bin a measure living on another grid onto ``grid`` by bilinear splatting."""
    keep = nu.masses > 0
    idx, wts = grid.locate(nu.grid.points[keep])
    masses = np.bincount(idx.ravel(), weights=(wts * nu.masses[keep][:, None]).ravel(), minlength=grid.n_nodes)
    masses = np.maximum(masses, 0.0)
    return GridMeasure(grid, masses / masses.sum())


def stationary_measure(mu: ModelMeasure, grid: ProjGrid | None = None, tol: float = 1e-12,
                       max_iter: int = 5000, start: GridMeasure | None = None,
                       refine: int = 1) -> GridMeasure:
    """Fixed point of the adjoint Markov iteration, started from the FS mass.

    Iterates until the total-variation change between sweeps is ``<= tol``.
    Raises :class:`NonConvergenceError` (with the last change and iterate)
    otherwise.

    With ``refine > 1`` the iteration runs on a grid ``refine`` times finer
    and the result is binned back onto ``grid``. Each sweep splats mass to
    neighbouring nodes, and this jitter is not damped by the dynamics, so the
    node-scale error of the plain iteration does not decrease under
    refinement; iterating finer and binning coarser does reduce it. The
    binned measure is not the exact left eigenvector of the ``grid``
    operator, so spectral code keeps ``refine = 1``.
    """
    grid = grid or default_grid()
    if refine > 1:
        fine = stationary_measure(mu, ProjGrid(grid.resolution * refine, grid.half_width), tol, max_iter)
        return bin_measure(fine, grid)
    op = grid_operator(mu, grid)
    masses = (start or GridMeasure.fubini_study(grid)).masses
    change = math.inf
    for _ in range(max_iter):
        nxt = op.push(masses)
        nxt = nxt / nxt.sum()
        change = 0.5 * float(np.abs(nxt - masses).sum())
        masses = nxt
        if change <= tol:
            return GridMeasure(grid, np.maximum(masses, 0.0))
    raise NonConvergenceError(
        f"stationary iteration did not reach tol={tol} in {max_iter} sweeps (last TV change {change:.3e})",
        change,
        GridMeasure(grid, np.maximum(masses, 0.0) / np.maximum(masses, 0.0).sum()),
    )


# ---------------------------------------------------------------------------
# norms


def dirichlet_energy(u) -> float:
    """``int 2 |du/dz|^2 dA`` summed over both charts with the partition of unity."""
    grid = u.grid
    vals = u.values
    total = 0.0
    for c in (0, 1):
        arr = grid.chart_view(vals, c)
        dy, dx = np.gradient(arr, grid.h)
        uz = 0.5 * (dx - 1j * dy)
        total += float(np.sum(2 * np.abs(uz) ** 2 * grid.chart_view(grid.partition, c)) * grid.h**2)
    return total


def norm_w12(u: GridFunction) -> float:
    """``|int u dFS| + ||du||_L2`` with centred chart differences."""
    return abs(u.integral()) + math.sqrt(dirichlet_energy(u))


@dataclass(frozen=True)
class SeminormEstimate:
    """Maximum over a finite pair set; a lower bound for the true supremum."""

    value: float
    n_pairs: int
    policy: str
    lower_bound: bool = True

    def __float__(self) -> float:
        return self.value


def _adjacent_pairs(grid: ProjGrid) -> tuple[np.ndarray, np.ndarray]:
    s, n = grid.side, grid.n_per_chart
    idx = np.arange(n).reshape(s, s)
    a = [idx[:, :-1].ravel(), idx[:-1, :].ravel()]
    b = [idx[:, 1:].ravel(), idx[1:, :].ravel()]
    a = np.concatenate(a)
    b = np.concatenate(b)
    return np.concatenate([a, a + n]), np.concatenate([b, b + n])


@functools.lru_cache(maxsize=4)
def pair_set(grid: ProjGrid) -> tuple[np.ndarray, np.ndarray] | None:
    """Fixed sampled pair set for large grids (``None`` means all pairs)."""
    if grid.resolution <= 64:
        return None
    rng = np.random.default_rng(PAIR_SEED)
    ra = rng.integers(0, grid.n_nodes, PAIR_SAMPLE)
    rb = rng.integers(0, grid.n_nodes, PAIR_SAMPLE)
    aa, ab = _adjacent_pairs(grid)
    i = np.concatenate([ra, aa])
    j = np.concatenate([rb, ab])
    d = dist_vec(grid.points[i], grid.points[j])
    keep = d >= 1e-15
    return i[keep], j[keep]


def _logstar(d: np.ndarray, p: float) -> np.ndarray:
    return (1 + np.abs(np.log(d))) ** p


def seminorm_logp(u: GridFunction, p: float) -> SeminormEstimate:
    """``max |u(x) - u(y)| (1 + |log d(x, y)|)^p`` over node pairs.

    All pairs are used for ``m <= 64``; otherwise a fixed seeded sample of
    10^6 pairs plus every adjacent pair in both charts. Pairs closer than
    1e-15 are skipped.
    """
    if p <= 0:
        raise ValueError("p must be positive")
    grid, vals, pts = u.grid, u.values, u.grid.points
    pairs = pair_set(grid)
    if pairs is not None:
        i, j = pairs
        d = dist_vec(pts[i], pts[j])
        val = float(np.max(np.abs(vals[i] - vals[j]) * _logstar(d, p)))
        return SeminormEstimate(val, i.size, f"{PAIR_SAMPLE} seeded random pairs + adjacent pairs")
    best, count = 0.0, 0
    n = grid.n_nodes
    for start in range(0, n, 256):
        blk = slice(start, min(start + 256, n))
        d = dist_vec(pts[blk, None, :], pts[None, :, :])
        diff = np.abs(vals[blk, None] - vals[None, :])
        ok = d >= 1e-15
        with np.errstate(divide="ignore"):
            score = np.where(ok, diff * _logstar(np.where(ok, d, 1.0), p), 0.0)
        best = max(best, float(score.max()))
        count += int(ok.sum())
    return SeminormEstimate(best, count // 2, "all pairs")


def wspace_upper_norm(u: GridFunction, p: float) -> float:
    """``max(||u||_W12, ||u||_inf + [u]_{log^(p-1)})``."""
    if p <= 1.5:
        raise ValueError("p must exceed 3/2")
    return max(norm_w12(u), u.sup() + seminorm_logp(u, p - 1).value)


# ---------------------------------------------------------------------------
# spectral probes


@dataclass
class SpectralReport:
    xi: float
    leading_eigenvalue: complex
    eigenfunction: GridFunction | None
    decay_profile: np.ndarray = field(default_factory=lambda: np.zeros(0))
    radius_estimate: float = math.nan
    converged: bool = False
    iterations: int = 0

    def to_dict(self) -> dict:
        lam = complex(self.leading_eigenvalue)
        return {
            "xi": self.xi,
            "leading_eigenvalue": [lam.real, lam.imag],
            "decay_profile": [float(x) for x in self.decay_profile],
            "radius_estimate": self.radius_estimate,
            "converged": self.converged,
            "iterations": self.iterations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _fs_dot(grid: ProjGrid, a: np.ndarray, b: np.ndarray) -> complex:
    return complex(np.dot(grid.weights, a * np.conj(b)))


def leading_eigen(mu: ModelMeasure, xi: float, tol: float = 1e-12, max_iter: int = 2000,
                  grid: ProjGrid | None = None) -> SpectralReport:
    """Power iteration for the dominant eigenvalue of the discretized ``P_xi``.

    The eigenvalue is the FS-weighted Rayleigh quotient, and convergence means
    a relative change ``<= tol`` between iterations.
    """
    grid = grid or default_grid()
    op = grid_operator(mu, grid)
    u = np.ones(grid.n_nodes, dtype=complex)
    lam_prev = math.inf
    lam = 1.0 + 0j
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        pu = op.apply(u, xi)
        lam = _fs_dot(grid, pu, u) / _fs_dot(grid, u, u)
        nrm = math.sqrt(_fs_dot(grid, pu, pu).real)
        if nrm == 0:
            break
        u = pu / nrm
        if abs(lam - lam_prev) <= tol * abs(lam):
            converged = True
            break
        lam_prev = lam
    # fix the phase so the eigenfunction has positive FS mean
    mean = _fs_dot(grid, u, np.ones_like(u))
    if abs(mean) > 0:
        u = u * (abs(mean) / mean)
    return SpectralReport(xi, lam, GridFunction(grid, u), converged=converged, iterations=it)


def eigen_expansion(mu: ModelMeasure, h: float = 0.02, grid: ProjGrid | None = None,
                    tol: float = 1e-13, max_iter: int = 4000) -> tuple[float, float, float]:
    """Finite-difference Taylor coefficients of ``xi -> lambda_xi`` at 0.

    Returns ``(gamma_spec, A_spec, a2_spec)`` with ``a2_spec = A_spec - gamma_spec**2``.
    """
    if not 1e-3 <= h <= 1e-1:
        raise ValueError("h must lie in [1e-3, 1e-1]")
    reps = [leading_eigen(mu, x, tol, max_iter, grid) for x in (h, 0.0, -h)]
    for r in reps:
        if not r.converged:
            raise NonConvergenceError(f"leading eigenvalue at xi={r.xi} did not converge", math.nan, r)
    lp, l0, lm = (r.leading_eigenvalue for r in reps)
    gamma = float((lp - lm).imag / (2 * h))
    big_a = float(-(lp - 2 * l0 + lm).real / h**2)
    return gamma, big_a, big_a - gamma**2


def contraction_seed(grid: ProjGrid) -> np.ndarray:
    """Smooth non-constant seed ``1 + (|v_0|^2 - |v_1|^2) / 2``."""
    p = grid.points
    return 1 + 0.5 * (np.abs(p[:, 0]) ** 2 - np.abs(p[:, 1]) ** 2)


def tail_slope(profile: np.ndarray) -> float:
    """Least-squares slope of ``log profile`` against the step over the last half."""
    n = len(profile)
    k = np.arange(1, n + 1)[n - n // 2:]
    return float(np.polyfit(k, np.log(profile[n - n // 2:]), 1)[0])


def contraction_probe(mu: ModelMeasure, xi: float, N: int = 60, grid: ProjGrid | None = None,
                      allow_zero: bool = False) -> SpectralReport:
    """Decay of ``||P_xi^n u_0||_W12`` for ``n = 1..N`` and the implied spectral radius."""
    if xi == 0 and not allow_zero:
        raise ValueError("xi = 0 has spectral radius exactly one; pass allow_zero to run anyway")
    if N < 20:
        raise ValueError("N must be >= 20")
    grid = grid or default_grid()
    op = grid_operator(mu, grid)
    u = contraction_seed(grid).astype(complex)
    profile = np.empty(N)
    prev = u
    for n in range(N):
        prev = u
        u = op.apply(u, xi)
        profile[n] = norm_w12(GridFunction(grid, u))
    radius = math.exp(tail_slope(profile))
    lam = _fs_dot(grid, u, prev) / _fs_dot(grid, prev, prev)
    return SpectralReport(xi, lam, GridFunction(grid, u), profile, radius, True, N)


def equidistribution_probe(mu: ModelMeasure, u: GridFunction, N: int = 40,
                           nu: GridMeasure | None = None) -> np.ndarray:
    """``sup |P^n (u - <nu, u>)|`` for ``n = 1..N``."""
    grid = u.grid
    nu = nu or stationary_measure(mu, grid)
    op = grid_operator(mu, grid)
    vals = u.values - u.integral(nu)
    out = np.empty(N)
    for n in range(N):
        vals = op.apply(vals)
        out[n] = float(np.max(np.abs(vals)))
    return out


def fit_rate(profile: np.ndarray, lo: int = 5, hi: int = 40) -> tuple[float, float]:
    """Least-squares fit ``profile[n] ~ c tau^n`` over ``lo <= n <= hi`` (1-based); returns ``(c, tau)``."""
    n = np.arange(lo, hi + 1)
    slope, icept = np.polyfit(n, np.log(profile[n - 1]), 1)
    return float(math.exp(icept)), float(math.exp(slope))
