"""Seeded Monte Carlo for the random products ``S_n = g_n ... g_1``.

Trajectories are simulated in fixed-size chunks. Chunk ``j`` draws its atoms
from its own generator seeded with ``SeedSequence(seed, spawn_key=(j,))``,
and chunk results are concatenated in chunk order, so the output does not
depend on how many worker threads run the chunks.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .measures import ModelMeasure
from .mobius import ProjPoint, canonical_vec, dist_vec, dual_vector

CHUNK = 8192
STEP_BLOCK = 128
N_BATCHES = 100
LOG_OVERFLOW = 700.0


class NumericalAbort(RuntimeError):
    """A log-norm increment exceeded the overflow guard."""


@dataclass(frozen=True)
class WalkConfig:
    mu: ModelMeasure
    n_steps: int
    n_samples: int
    start_point: ProjPoint = field(default_factory=lambda: ProjPoint([1, 0]))
    seed: int = 0
    renorm_every: int = 1

    def __post_init__(self):
        if self.n_steps < 1 or self.n_samples < 1 or self.renorm_every < 1:
            raise ValueError("n_steps, n_samples and renorm_every must all be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class TrajectoryStats:
    """Summary of one Monte Carlo run at horizon ``n_steps``.

    ``samples_sigma`` holds ``sigma(S_n, x) - n * gamma_hat`` centred with this
    report's own ``gamma_hat``; reports that are compared with each other
    should be re-centred with a common value.
    """

    n_steps: int
    n_samples: int
    gamma_hat: float
    gamma_se: float
    var_hat: float
    var_se: float
    samples_sigma: np.ndarray | None = None
    samples_endpoint: np.ndarray | None = None
    samples_lognorm: np.ndarray | None = None

    @property
    def sigma_raw(self) -> np.ndarray:
        return self.samples_sigma + self.n_steps * self.gamma_hat

    def summary(self) -> dict:
        return {
            "n_steps": self.n_steps,
            "n_samples": self.n_samples,
            "gamma_hat": self.gamma_hat,
            "gamma_se": self.gamma_se,
            "var_hat": self.var_hat,
            "var_se": self.var_se,
            "centering": "own gamma_hat",
        }

    def write_csv(self, path) -> None:
        """Raw samples as ``sample_index,sigma_centered,endpoint_re,endpoint_im,lognorm``.

        The endpoint is written in the affine chart ``[z : 1]`` (``inf`` at ``[1 : 0]``).
        """
        ep = self.samples_endpoint
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["sample_index", "sigma_centered", "endpoint_re", "endpoint_im", "lognorm"])
            for i in range(self.n_samples):
                if ep is not None and ep[i, 1] != 0:
                    z = ep[i, 0] / ep[i, 1]
                    zr, zi = repr(float(z.real)), repr(float(z.imag))
                elif ep is not None:
                    zr, zi = "inf", "0.0"
                else:
                    zr = zi = ""
                ln = "" if self.samples_lognorm is None else repr(float(self.samples_lognorm[i]))
                wr.writerow([i, repr(float(self.samples_sigma[i])), zr, zi, ln])


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(chunk,))))


def _top_singular_sq(m: np.ndarray) -> np.ndarray:
    s = np.sum(np.abs(m) ** 2, axis=(-2, -1))
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    disc = np.sqrt(np.maximum(s * s - 4 * np.abs(det) ** 2, 0.0))
    return (s + disc) / 2


def _simulate_chunk(mu, x0, n_steps, size, rng, renorm_every, checkpoints, track_matrix):
    real = mu.is_real and np.all(x0.imag == 0)
    dt = float if real else complex
    mats = mu.matrices.real if real else mu.matrices
    a, b, c, d = (mats[:, i, j].copy() for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)))
    v0 = np.full(size, x0[0].real if real else x0[0], dtype=dt)
    v1 = np.full(size, x0[1].real if real else x0[1], dtype=dt)
    sigma = np.zeros(size)
    if track_matrix:
        mat = np.zeros((size, 2, 2), dtype=dt)
        mat[:, 0, 0] = mat[:, 1, 1] = 1
        logscale = np.zeros(size)
    out = {}
    single = len(mu) == 1
    step = 0
    while step < n_steps:
        nblk = min(STEP_BLOCK, n_steps - step)
        idx_block = None if single else mu.sample_indices(rng, (nblk, size))
        for k in range(nblk):
            if single:
                ga, gb, gc, gd = a[0], b[0], c[0], d[0]
            else:
                idx = idx_block[k]
                ga, gb, gc, gd = a[idx], b[idx], c[idx], d[idx]
            with np.errstate(over="ignore", invalid="ignore"):
                # overflow surfaces as a non-finite norm at the next renormalization
                v0, v1 = ga * v0 + gb * v1, gc * v0 + gd * v1
            if track_matrix:
                m00, m01, m10, m11 = mat[:, 0, 0], mat[:, 0, 1], mat[:, 1, 0], mat[:, 1, 1]
                mat = np.stack(
                    [
                        np.stack([ga * m00 + gb * m10, ga * m01 + gb * m11], axis=-1),
                        np.stack([gc * m00 + gd * m10, gc * m01 + gd * m11], axis=-1),
                    ],
                    axis=-2,
                )
            step += 1
            if step % renorm_every == 0 or step == n_steps or step in checkpoints:
                with np.errstate(over="ignore", invalid="ignore"):
                    nrm2 = (v0 * np.conj(v0)).real + (v1 * np.conj(v1)).real if not real else v0 * v0 + v1 * v1
                    lg = 0.5 * np.log(nrm2)
                if not np.all(np.isfinite(lg)) or np.max(np.abs(lg)) > LOG_OVERFLOW:
                    raise NumericalAbort(
                        f"log-norm increment beyond {LOG_OVERFLOW} at step {step}; "
                        "renormalize more often"
                    )
                sigma += lg
                inv = 1.0 / np.sqrt(nrm2)
                v0 = v0 * inv
                v1 = v1 * inv
                if track_matrix:
                    fro = np.sqrt(np.sum(np.abs(mat) ** 2, axis=(1, 2)))
                    logscale += np.log(fro)
                    mat = mat / fro[:, None, None]
            if step in checkpoints:
                ep = canonical_vec(np.stack([v0, v1], axis=-1).astype(complex))
                rec = {"sigma": sigma.copy(), "endpoint": ep}
                if track_matrix:
                    rec["lognorm"] = logscale + 0.5 * np.log(_top_singular_sq(mat))
                out[step] = rec
    return out


def simulate(cfg: WalkConfig, checkpoints=None, *, threads: int = 1, track_matrix: bool = False) -> dict:
    """Raw per-trajectory samples at each horizon in ``checkpoints``.

    Returns ``{n: {"sigma": ..., "endpoint": ..., ["lognorm": ...]}}`` where
    ``sigma`` is the uncentred cocycle ``sigma(S_n, x)`` accumulated step by
    step through the cocycle identity.
    """
    cps = sorted(set(checkpoints or [cfg.n_steps]))
    if cps[0] < 1 or cps[-1] > cfg.n_steps:
        raise ValueError("checkpoints must lie in [1, n_steps]")
    cps_set = frozenset(cps)
    x0 = cfg.start_point.v
    sizes = [min(CHUNK, cfg.n_samples - s) for s in range(0, cfg.n_samples, CHUNK)]

    def job(j):
        return _simulate_chunk(
            cfg.mu, x0, cfg.n_steps, sizes[j], _chunk_rng(cfg.seed, j),
            cfg.renorm_every, cps_set, track_matrix,
        )

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(job, range(len(sizes))))
    else:
        parts = [job(j) for j in range(len(sizes))]
    return {
        n: {key: np.concatenate([p[n][key] for p in parts]) for key in parts[0][n]}
        for n in cps
    }


def batch_se(values: np.ndarray, stat=np.mean, n_batches: int = N_BATCHES) -> float:
    """Batch-means standard error of ``stat`` over consecutive batches."""
    nb = min(n_batches, len(values))
    if nb < 2:
        return math.nan
    batches = np.array_split(values, nb)
    est = np.array([stat(bt) for bt in batches])
    return float(np.std(est, ddof=1) / math.sqrt(nb))


def _variance(x: np.ndarray) -> float:
    if len(x) < 2 or np.ptp(x) == 0:
        return 0.0
    return float(np.var(x, ddof=1))


def stats_from_samples(n: int, sigma: np.ndarray, endpoint=None, lognorm=None) -> TrajectoryStats:
    gamma_hat = float(np.mean(sigma) / n)
    if np.ptp(sigma) == 0:
        gamma_hat = float(sigma[0] / n)
    var_hat = _variance(sigma) / n
    if np.ptp(sigma) == 0:
        gse = vse = 0.0
    else:
        gse = batch_se(sigma / n)
        vse = batch_se(sigma, lambda s: _variance(s) / n)
    return TrajectoryStats(
        n_steps=n,
        n_samples=len(sigma),
        gamma_hat=gamma_hat,
        gamma_se=gse,
        var_hat=var_hat,
        var_se=vse,
        samples_sigma=sigma - n * gamma_hat,
        samples_endpoint=endpoint,
        samples_lognorm=lognorm,
    )


def run_walk(cfg: WalkConfig, *, threads: int = 1) -> TrajectoryStats:
    """Estimate the Lyapunov exponent and CLT variance from ``n_samples`` trajectories.

    ``gamma_hat`` is the sample mean of ``sigma(S_n, x) / n`` and ``var_hat`` is
    ``Var(sigma(S_n, x)) / n``; standard errors come from 100 batch means.
    """
    rec = simulate(cfg, threads=threads)[cfg.n_steps]
    return stats_from_samples(cfg.n_steps, rec["sigma"], rec["endpoint"])


def run_walk_multi(cfg: WalkConfig, n_values, *, threads: int = 1) -> dict[int, TrajectoryStats]:
    """Like :func:`run_walk` at several horizons recorded along the same trajectories."""
    n_values = sorted(set(int(n) for n in n_values))
    cfg = WalkConfig(cfg.mu, max(n_values), cfg.n_samples, cfg.start_point, cfg.seed, cfg.renorm_every)
    raw = simulate(cfg, n_values, threads=threads)
    return {n: stats_from_samples(n, raw[n]["sigma"], raw[n]["endpoint"]) for n in n_values}


@numba.njit(cache=True)
def _ergodic_kernel(mats, idx, v, sums, batch_len, pos):
    # pos[0]: global step counter; sums: per-batch accumulated sigma
    for k in range(idx.shape[0]):
        g = mats[idx[k]]
        w0 = g[0, 0] * v[0] + g[0, 1] * v[1]
        w1 = g[1, 0] * v[0] + g[1, 1] * v[1]
        nrm2 = w0.real * w0.real + w0.imag * w0.imag + w1.real * w1.real + w1.imag * w1.imag
        nrm = math.sqrt(nrm2)
        b = pos[0] // batch_len
        if b >= sums.shape[0]:
            b = sums.shape[0] - 1
        sums[b] += 0.5 * math.log(nrm2)
        v[0] = w0 / nrm
        v[1] = w1 / nrm
        pos[0] += 1


def run_ergodic(mu: ModelMeasure, n_steps: int, x: ProjPoint | None = None, seed: int = 0,
                n_batches: int = N_BATCHES) -> tuple[float, float]:
    """Single-trajectory ergodic average of the cocycle increments.

    Returns ``(gamma, se)`` with the standard error from batch means over
    ``n_batches`` consecutive stretches of the trajectory.
    """
    x = x or ProjPoint([1, 0])
    rng = _chunk_rng(seed, 0)
    mats = np.ascontiguousarray(mu.matrices)
    v = x.v.astype(complex).copy()
    batch_len = n_steps // n_batches
    sums = np.zeros(n_batches)
    pos = np.zeros(1, dtype=np.int64)
    block = 1 << 20
    done = 0
    while done < n_steps:
        nb = min(block, n_steps - done)
        _ergodic_kernel(mats, mu.sample_indices(rng, nb), v, sums, batch_len, pos)
        done += nb
    lens = np.full(n_batches, batch_len, dtype=float)
    lens[-1] += n_steps - batch_len * n_batches
    means = sums / lens
    gamma = float(sums.sum() / n_steps)
    se = float(np.std(means, ddof=1) / math.sqrt(n_batches))
    return gamma, se


def furstenberg_crosscheck(mu: ModelMeasure, nu, gamma_hat: float) -> tuple[float, float, float]:
    """Compare a Monte Carlo ``gamma_hat`` with ``sum_i nu_i sum_g w_g sigma_g(x_i)``."""
    pts = nu.grid.points
    gv = np.einsum("aij,nj->ani", mu.matrices, pts)
    sig = 0.5 * np.log(np.abs(gv[..., 0]) ** 2 + np.abs(gv[..., 1]) ** 2)
    rhs = float(np.dot(mu.weights, sig @ nu.masses))
    return gamma_hat, rhs, abs(gamma_hat - rhs)


def coefficient_values(n: int, sigma: np.ndarray, endpoint: np.ndarray, w, gamma: float) -> np.ndarray:
    """``sigma - n gamma + log d(S_n [v], [w*])``, which equals ``log|<S_n v, w>| - n gamma``."""
    wstar = canonical_vec(dual_vector(np.asarray(w, dtype=complex)))
    d = dist_vec(endpoint, wstar[None, :])
    with np.errstate(divide="ignore"):
        logd = np.where(d < 1e-300, -np.inf, np.log(np.maximum(d, 1e-300)))
    return sigma - n * gamma + logd


def sample_coefficient_stat(cfg: WalkConfig, v, w, gamma: float | None = None, *, threads: int = 1) -> np.ndarray:
    """Per-sample ``log|<S_n v, w>| / (|v||w|) - n gamma``.

    ``gamma`` defaults to the run's own ``gamma_hat``. Samples where the
    coefficient vanishes numerically come back as ``-inf``.
    """
    start = ProjPoint(v)
    cfg = WalkConfig(cfg.mu, cfg.n_steps, cfg.n_samples, start, cfg.seed, cfg.renorm_every)
    rec = simulate(cfg, threads=threads)[cfg.n_steps]
    if gamma is None:
        gamma = float(np.mean(rec["sigma"]) / cfg.n_steps)
    return coefficient_values(cfg.n_steps, rec["sigma"], rec["endpoint"], w, gamma)


def lognorm_vs_cocycle(cfg: WalkConfig) -> np.ndarray:
    """Pairs ``(log |S_n|, sigma(S_n, x))`` per sample from explicit renormalized products."""
    if cfg.n_samples > 1000:
        raise ValueError("lognorm_vs_cocycle forms explicit products; use n_samples <= 1000")
    rec = simulate(cfg, track_matrix=True)[cfg.n_steps]
    return np.column_stack([rec["lognorm"], rec["sigma"]])
