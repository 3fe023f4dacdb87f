"""Empirical checks of the CLT and the local limit theorems from walk samples."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats as sps

from .fourier import SampledFunction
from .grid import GridFunction, GridMeasure, stationary_measure
from .mobius import ProjPoint, canonical_vec, dist_vec
from .walk import TrajectoryStats, WalkConfig, coefficient_values, simulate

ADMISSIBLE_OFFSET = 2.0


class CltCheck(NamedTuple):
    ks_statistic: float
    passed: bool
    degenerate: bool = False


def verify_clt(stats: TrajectoryStats, threshold: float = 0.01) -> CltCheck:
    """KS distance of ``samples_sigma / sqrt(n)`` from ``Normal(0, var_hat)``.

    A walk with ``var_hat == 0`` is reported as degenerate and not tested.
    """
    if stats.samples_sigma is None:
        raise ValueError("TrajectoryStats carries no samples")
    if stats.var_hat == 0:
        return CltCheck(math.nan, False, True)
    z = stats.samples_sigma / math.sqrt(stats.n_steps)
    ks = float(sps.kstest(z, "norm", args=(0.0, math.sqrt(stats.var_hat))).statistic)
    return CltCheck(ks, ks <= threshold)


def gaussian_reference(t: float, a: float, n: int) -> float:
    """``exp(-t^2 / (2 a^2 n))``."""
    if a <= 0 or n < 1:
        raise ValueError("need a > 0 and n >= 1")
    return math.exp(-(t * t) / (2 * a * a * n))


@dataclass
class ProductTestFunction:
    """``f(u, x) = phi(u) psi(x)`` with its two reference integrals."""

    phi: SampledFunction
    psi: GridFunction
    integral_phi: float
    integral_psi_nu: float

    @classmethod
    def build(cls, phi: SampledFunction, psi: GridFunction, nu: GridMeasure | None = None,
              mu=None) -> ProductTestFunction:
        if nu is None:
            if mu is None:
                raise ValueError("need nu or mu to integrate psi")
            nu = stationary_measure(mu, psi.grid)
        ipsi = psi.integral(nu)
        return cls(phi, psi, phi.integral(), float(ipsi.real))


def smooth_bump(grid, center: ProjPoint, width: float = 0.5) -> GridFunction:
    """``exp(-d(x, center)^2 / (2 width^2))`` sampled on ``grid``."""
    d = dist_vec(grid.points, center.v[None, :])
    return GridFunction(grid, np.exp(-(d**2) / (2 * width**2)))


@dataclass
class LltReport:
    n_values: np.ndarray
    statistic: np.ndarray
    reference: np.ndarray
    abs_error: np.ndarray
    mc_se: np.ndarray
    params: dict
    table: list = field(default_factory=list)  # rows (n, t, statistic, reference, abs_error, mc_se)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_values": [int(n) for n in self.n_values],
            "statistic": [float(x) for x in self.statistic],
            "reference": [float(x) for x in self.reference],
            "abs_error": [float(x) for x in self.abs_error],
            "mc_se": [float(x) for x in self.mc_se],
            "params": self.params,
            "extra": self.extra,
            "table": [list(map(float, row)) for row in self.table],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["n", "t", "statistic", "reference", "abs_error", "mc_se"])
            for row in self.table:
                wr.writerow([int(row[0])] + [repr(float(x)) for x in row[1:]])


def _estimates(n: int, sigma: np.ndarray) -> tuple[float, float]:
    gamma = float(np.mean(sigma) / n)
    a = float(math.sqrt(np.var(sigma, ddof=1) / n))
    return gamma, a


def verify_norm_llt(cfg: WalkConfig, f: ProductTestFunction, t_values, a: float | None = None,
                    gamma: float | None = None, n_values=None, *, threads: int = 1) -> LltReport:
    """``sqrt(2 pi n) a E[phi(t + sigma - n gamma) psi(S_n x)]`` against its Gaussian limit.

    Per ``n`` the worst ``t`` (largest ``abs_error``) is reported; the full grid
    of ``t`` values is in ``table``. ``gamma`` and ``a`` default to the sample
    estimates at the largest ``n``. ``mc_se`` is the plain standard error of
    the sample mean, scaled the same way as the statistic.
    """
    n_values = sorted(set(int(n) for n in (n_values or [cfg.n_steps])))
    t_values = np.atleast_1d(np.asarray(t_values, dtype=float))
    run = WalkConfig(cfg.mu, max(n_values), cfg.n_samples, cfg.start_point, cfg.seed, cfg.renorm_every)
    raw = simulate(run, n_values, threads=threads)
    n_top = n_values[-1]
    g_est, a_est = _estimates(n_top, raw[n_top]["sigma"])
    gamma = g_est if gamma is None else gamma
    a = a_est if a is None else a
    if a <= 0:
        raise ValueError("a must be positive")
    mass = f.integral_phi * f.integral_psi_nu
    rows, out = [], {k: [] for k in ("stat", "ref", "err", "se")}
    for n in n_values:
        centred = raw[n]["sigma"] - n * gamma
        psi_vals = np.real(f.psi.interp(raw[n]["endpoint"]))
        scale = math.sqrt(2 * math.pi * n) * a
        best = None
        for t in t_values:
            vals = f.phi(t + centred) * psi_vals
            stat = scale * float(np.mean(vals))
            ref = gaussian_reference(t, a, n) * mass
            se = scale * float(np.std(vals, ddof=1)) / math.sqrt(vals.size)
            row = (n, t, stat, ref, abs(stat - ref), se)
            rows.append(row)
            if best is None or row[4] > best[4]:
                best = row
        for key, idx in (("stat", 2), ("ref", 3), ("err", 4), ("se", 5)):
            out[key].append(best[idx])
    params = {"a": a, "gamma": gamma, "test_function": "product phi(u) psi(x)",
              "t_values": t_values.tolist(), "x": [[z.real, z.imag] for z in cfg.start_point.v],
              "sup_over_t": "max over the finite t grid (a lower bound on the sup)"}
    return LltReport(np.array(n_values), np.array(out["stat"]), np.array(out["ref"]),
                     np.array(out["err"]), np.array(out["se"]), params, rows)


def _window_report(n: int, hits: np.ndarray, a: float, b1: float, b2: float, params: dict,
                   extra: dict) -> LltReport:
    p = float(np.mean(hits))
    scale = math.sqrt(2 * math.pi * n) * a
    stat = scale * p
    se = scale * math.sqrt(p * (1 - p) / hits.size)
    ref = b2 - b1
    row = (n, 0.0, stat, ref, abs(stat - ref), se)
    return LltReport(np.array([n]), np.array([stat]), np.array([ref]), np.array([abs(stat - ref)]),
                     np.array([se]), params, [row], extra)


def coefficient_hits(values: np.ndarray, b1: float, b2: float) -> np.ndarray:
    """Closed-window indicator; ``-inf`` (vanishing coefficient) is a miss."""
    return (values >= b1) & (values <= b2)


def _check_window(b1: float, b2: float, a: float | None) -> None:
    if not b1 < b2:
        raise ValueError("need b1 < b2")
    if a is not None and a <= 0:
        raise ValueError("a must be positive")


def _coeff_samples(cfg: WalkConfig, v, threads: int):
    start = ProjPoint(v)
    run = WalkConfig(cfg.mu, cfg.n_steps, cfg.n_samples, start, cfg.seed, cfg.renorm_every)
    return simulate(run, threads=threads)[cfg.n_steps]


def verify_coeff_llt(cfg: WalkConfig, v, w, b1: float, b2: float, a: float | None = None,
                     gamma: float | None = None, *, threads: int = 1, samples=None) -> LltReport:
    """``sqrt(2 pi n) a P(log|<S_n v, w>| / (|v||w|) - n gamma in [b1, b2])`` against ``b2 - b1``.

    ``gamma`` and ``a`` default to the run's own estimates. ``samples`` may
    carry a precomputed ``simulate`` record for ``v`` so several windows or
    vectors share one set of trajectories.
    """
    _check_window(b1, b2, a)
    rec = samples if samples is not None else _coeff_samples(cfg, v, threads)
    n = cfg.n_steps
    g_est, a_est = _estimates(n, rec["sigma"])
    gamma = g_est if gamma is None else gamma
    a = a_est if a is None else a
    w = np.asarray(w, dtype=complex)
    w = w / np.linalg.norm(w)
    vals = coefficient_values(n, rec["sigma"], rec["endpoint"], w, gamma)
    hits = coefficient_hits(vals, b1, b2)
    params = {"a": a, "gamma": gamma, "window": [b1, b2],
              "v": [[z.real, z.imag] for z in ProjPoint(v).v], "w": [[z.real, z.imag] for z in w]}
    extra = {"n_vanishing": int(np.sum(np.isneginf(vals))), "hits": int(hits.sum())}
    rep = _window_report(n, hits, a, b1, b2, params, extra)
    rep.extra["indicators"] = hits
    return rep


def admissible_observable(endpoint: np.ndarray, y: ProjPoint, offset: float = ADMISSIBLE_OFFSET) -> np.ndarray:
    """``Phi_y(x) = offset + log d(x, y)`` (``-inf`` at ``y``)."""
    d = dist_vec(endpoint, y.v[None, :])
    with np.errstate(divide="ignore"):
        return offset + np.where(d < 1e-300, -np.inf, np.log(np.maximum(d, 1e-300)))


def coefficient_vector_for(y: ProjPoint) -> np.ndarray:
    """The unit ``w`` whose dual ``w*`` represents ``y``: ``w = (conj y_2, -conj y_1)``."""
    return np.array([np.conj(y.v[1]), -np.conj(y.v[0])])


def verify_admissible_llt(cfg: WalkConfig, y: ProjPoint, window: tuple[float, float], a: float | None = None,
                          gamma: float | None = None, offset: float = ADMISSIBLE_OFFSET, *,
                          threads: int = 1, samples=None) -> LltReport:
    """The coefficient LLT through the pair ``(f, Phi_y)``.

    ``f(u, s) = 1{u + s in [b1 + offset, b2 + offset]}`` evaluated at
    ``u = sigma(S_n, x) - n gamma``, ``s = Phi_y(S_n x)``. The same event is
    also computed through :func:`verify_coeff_llt` with ``v = x`` and the
    ``w`` dual to ``y``; ``extra["mismatches"]`` counts samples where the two
    indicators differ.
    """
    b1, b2 = window
    _check_window(b1, b2, a)
    rec = samples if samples is not None else _coeff_samples(cfg, cfg.start_point.v, threads)
    n = cfg.n_steps
    g_est, a_est = _estimates(n, rec["sigma"])
    gamma = g_est if gamma is None else gamma
    a = a_est if a is None else a
    u = rec["sigma"] - n * gamma
    phi = admissible_observable(rec["endpoint"], y, offset)
    s = u + phi
    hits = (s >= b1 + offset) & (s <= b2 + offset)
    coeff = verify_coeff_llt(cfg, cfg.start_point.v, coefficient_vector_for(y), b1, b2, a, gamma, samples=rec)
    mismatches = int(np.sum(hits != coeff.extra["indicators"]))
    params = {"a": a, "gamma": gamma, "window": [b1, b2], "offset": offset,
              "y": [[z.real, z.imag] for z in canonical_vec(y.v)]}
    extra = {"mismatches": mismatches, "n_vanishing": int(np.sum(np.isneginf(phi))), "hits": int(hits.sum()),
             "coefficient_statistic": float(coeff.statistic[0])}
    rep = _window_report(n, hits, a, b1, b2, params, extra)
    rep.extra["indicators"] = hits
    return rep


def uniformity_probe(cfg: WalkConfig, pairs, b1: float, b2: float, a: float | None = None,
                     gamma: float | None = None, *, threads: int = 1) -> dict:
    """Run :func:`verify_coeff_llt` for several ``(v, w)`` with the same seed.

    All pairs share one centring: ``gamma`` and ``a`` default to the
    estimates from the walk started at ``cfg.start_point``. Returns the
    statistics, their range, and the pooled standard error ``sqrt(mean(se^2))``.
    """
    if gamma is None or a is None:
        g_est, a_est = _estimates(cfg.n_steps, simulate(cfg, threads=threads)[cfg.n_steps]["sigma"])
        gamma = g_est if gamma is None else gamma
        a = a_est if a is None else a
    stats_, ses = [], []
    for v, w in pairs:
        rep = verify_coeff_llt(cfg, v, w, b1, b2, a, gamma, threads=threads)
        stats_.append(float(rep.statistic[0]))
        ses.append(float(rep.mc_se[0]))
    stats_ = np.array(stats_)
    return {
        "statistics": stats_,
        "spread": float(stats_.max() - stats_.min()),
        "pooled_se": float(math.sqrt(np.mean(np.square(ses)))),
    }
