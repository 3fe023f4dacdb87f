"""Band-limited mollifiers and sandwich approximants on the real line.

Fourier convention: ``fhat(xi) = int f(u) exp(-i u xi) du``.

The kernel ``theta`` has transform ``(chihat * chihat)(xi) sqrt(2 pi) exp(-xi^2 / 2)``
(normalized to one at ``xi = 0``) where ``chihat(s) = exp(-1 / (1/4 - s^2))``
on ``|s| < 1/2``. Its transform is therefore supported in ``[-1, 1]``, and
``theta`` is evaluated as the trapezoid inverse transform over that interval.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter1d
from scipy.signal import fftconvolve

SPECTRAL_STEP = 1.0 / 1024
WORK_HALF_WIDTH = 40.0
WORK_POINTS = 2**16 - 1  # odd so that u = 0 is a node
KERNEL_CUTOFF = 1e-15  # relative size below which kernel tails are dropped


def chi_hat(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 0.5
    out = np.zeros_like(s)
    out[inside] = np.exp(-1.0 / (0.25 - s[inside] ** 2))
    return out


def _spectrum() -> tuple[np.ndarray, np.ndarray]:
    # nonnegative frequencies j * step and the normalized transform there
    half = int(round(0.5 / SPECTRAL_STEP))
    s = SPECTRAL_STEP * np.arange(-half, half + 1)
    c = chi_hat(s)
    conv = np.convolve(c, c) * SPECTRAL_STEP  # supported on [-1, 1]
    xi = SPECTRAL_STEP * np.arange(-2 * half, 2 * half + 1)
    f = conv * np.exp(-(xi**2) / 2)
    f = f / f[2 * half]
    return xi[2 * half:], f[2 * half:]


_XI, _THETA_HAT = _spectrum()


def theta_hat(xi: np.ndarray) -> np.ndarray:
    """Transform of the undilated kernel (linear interpolation of the sampled spectrum)."""
    return np.interp(np.abs(np.asarray(xi, dtype=float)), _XI, _THETA_HAT, right=0.0)


def theta(u: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Undilated kernel, ``(1/2pi) int thetahat(xi) cos(u xi) dxi`` by the trapezoid rule."""
    u = np.asarray(u, dtype=float)
    flat = u.ravel()
    coef = _THETA_HAT * SPECTRAL_STEP / math.pi
    coef = coef.copy()
    coef[0] *= 0.5  # the xi = 0 term is shared by both half-lines
    out = np.empty_like(flat)
    for start in range(0, flat.size, chunk):
        blk = flat[start:start + chunk]
        out[start:start + chunk] = np.cos(np.outer(blk, _XI)) @ coef
    return out.reshape(u.shape)


@dataclass
class SampledFunction:
    """Real function sampled on a uniform grid ``u``."""

    u: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.u.shape != self.values.shape or self.u.ndim != 1:
            raise ValueError("u and values must be matching 1-d arrays")

    @property
    def dx(self) -> float:
        return float(self.u[1] - self.u[0])

    def __call__(self, x) -> np.ndarray:
        return np.interp(x, self.u, self.values, left=0.0, right=0.0)

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.u))

    def l1(self) -> float:
        return float(np.trapezoid(np.abs(self.values), self.u))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["u", "value"])
            for a, b in zip(self.u, self.values):
                wr.writerow([repr(float(a)), repr(float(b))])


def triangle(u: np.ndarray) -> np.ndarray:
    """``max(0, 1 - |u|)``."""
    return np.maximum(0.0, 1.0 - np.abs(u))


@dataclass
class BandLimitedKernel:
    """Samples of ``theta_delta(u) = delta^-2 theta(u / delta^2)`` on a symmetric grid."""

    delta: float
    u: np.ndarray
    values: np.ndarray
    fourier_support_bound: float

    def __call__(self, u) -> np.ndarray:
        d2 = self.delta**2
        return theta(np.asarray(u, dtype=float) / d2) / d2

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.u))

    def as_sampled(self) -> SampledFunction:
        return SampledFunction(self.u, self.values)


def build_theta(grid_half_width: float = WORK_HALF_WIDTH, grid_points: int = 8193) -> BandLimitedKernel:
    """Sample the undilated kernel on ``linspace(-W, W, grid_points)``."""
    if grid_half_width < 20 or grid_points < 4096:
        raise ValueError("need grid_half_width >= 20 and grid_points >= 4096")
    u = np.linspace(-grid_half_width, grid_half_width, grid_points)
    vals = theta(u)
    vals = 0.5 * (vals + vals[::-1])  # exact evenness of the samples
    return BandLimitedKernel(1.0, u, vals, 1.0)


def dilate(kernel: BandLimitedKernel, delta: float) -> BandLimitedKernel:
    """Rescale the samples: grid ``u * delta^2``, values ``values / delta^2``."""
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if kernel.delta != 1.0:
        raise ValueError("dilate expects the undilated kernel")
    if delta == 1:
        return kernel
    d2 = delta**2
    return BandLimitedKernel(delta, kernel.u * d2, kernel.values / d2, 1.0 / d2)


def fourier_transform(f: SampledFunction, xi: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Trapezoid quadrature of ``int f(u) exp(-i u xi) du`` at each ``xi``."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    w = np.full(f.u.size, f.dx)
    w[0] = w[-1] = 0.5 * f.dx
    fw = f.values * w
    out = np.empty(xi.size, dtype=complex)
    for start in range(0, xi.size, chunk):
        blk = xi[start:start + chunk]
        ph = np.outer(blk, f.u)
        out[start:start + chunk] = np.cos(ph) @ fw - 1j * (np.sin(ph) @ fw)
    return out


def sup_mollify(phi: SampledFunction, delta: float) -> SampledFunction:
    """Running maximum over ``|u' - u| <= delta``, window snapped outward to whole nodes."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    r = int(math.ceil(delta / phi.dx - 1e-9))
    if r == 0:
        return SampledFunction(phi.u, phi.values.copy())
    return SampledFunction(phi.u, maximum_filter1d(phi.values, size=2 * r + 1, mode="nearest"))


@dataclass
class SandwichPair:
    phi_minus: SampledFunction
    phi_plus: SampledFunction
    delta: float
    l1_gap: float
    original: SampledFunction
    c: float = math.nan
    c_delta: float = math.nan
    notes: dict = field(default_factory=dict)

    def ordering_violation(self) -> float:
        """Largest amount by which ``phi_minus <= original <= phi_plus`` fails (0 if it holds)."""
        lo = np.max(self.phi_minus.values - self.original.values)
        hi = np.max(self.original.values - self.phi_plus.values)
        return float(max(lo, hi, 0.0))


def _kernel_samples(delta: float, dx: float) -> np.ndarray:
    # theta_delta on an odd, centred grid of step dx, truncated where it is negligible
    d2 = delta**2
    v = np.arange(0.0, 400.0, 0.25)
    tv = theta(v)
    small = np.nonzero(np.abs(tv) < KERNEL_CUTOFF * tv[0])[0]
    vmax = v[small[0]] if small.size else v[-1]
    n = int(math.ceil(vmax * d2 / dx))
    s = dx * np.arange(-n, n + 1)
    vals = theta(s / d2) / d2
    vals = 0.5 * (vals + vals[::-1])
    return np.maximum(vals, 0.0)


class _Smoother:
    """Shared pieces for one delta on the extended work grid."""

    def __init__(self, u_ext: np.ndarray, dx: float, delta: float, pad: int):
        self.delta = delta
        self.dx = dx
        self.u_ext = u_ext
        self.pad = pad
        self.kernel = _kernel_samples(delta, dx)

    def smooth(self, f_ext: np.ndarray) -> np.ndarray:
        # f^+_[delta] * theta_delta on the interior of the extended grid
        r = int(math.ceil(self.delta / self.dx - 1e-9))
        up = maximum_filter1d(f_ext, size=2 * r + 1, mode="nearest") if r else f_ext
        conv = fftconvolve(up, self.kernel, mode="same") * self.dx
        return conv[self.pad:-self.pad]


def make_sandwich(phi, delta: float, support: float = 1.0, half_width: float = WORK_HALF_WIDTH,
                  points: int = WORK_POINTS) -> SandwichPair:
    """Band-limited ``phi_minus <= phi <= phi_plus`` whose transforms vanish beyond ``delta^-2``.

    ``phi`` is a callable or :class:`SampledFunction` with ``|phi| <= 1`` supported
    in ``[-support, support]``. It is split as ``phi_+ - phi_-``, and each part ``f``
    gets ``U f = (1 + c_delta) f^+_[delta] * theta_delta`` and
    ``L f = c theta - U(c theta - f)``. Then ``phi_plus = U phi_+ - L phi_-`` and
    ``phi_minus = L phi_+ - U phi_-``. Here ``c`` is twice the smallest constant
    with ``c theta >= phi_+, phi_-``, and one ``c_delta`` (the smallest value
    making all four one-sided inequalities hold at the nodes) is shared by
    every part.
    """
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if support + 1 >= half_width:
        raise ValueError("support exceeds the kernel grid")
    u = np.linspace(-half_width, half_width, points)
    dx = float(u[1] - u[0])
    fn = phi if callable(phi) else None
    vals = fn(u) if fn is not None else np.asarray(phi)
    vals = np.asarray(vals, dtype=float)
    if np.max(np.abs(vals)) > 1 + 1e-12:
        raise ValueError("||phi||_inf must be <= 1")
    if np.any(np.abs(vals[np.abs(u) > support]) > 0):
        raise ValueError("phi is not supported in [-support, support]")

    probe = _kernel_samples(delta, dx)
    pad = probe.size // 2 + int(math.ceil(delta / dx)) + 1
    u_ext = dx * np.arange(-(points // 2) - pad, points // 2 + pad + 1)
    th_ext = theta(u_ext)
    inner = slice(pad, -pad)
    th = th_ext[inner]
    pos_ext = np.zeros_like(u_ext)
    neg_ext = np.zeros_like(u_ext)
    pos_ext[inner] = np.maximum(vals, 0.0)
    neg_ext[inner] = np.maximum(-vals, 0.0)
    c0 = max(np.max(pos_ext[inner] / th), np.max(neg_ext[inner] / th))
    c = 2.0 * c0 if c0 > 0 else 1.0

    sm = _Smoother(u_ext, dx, delta, pad)
    parts = [pos_ext, neg_ext, c * th_ext - pos_ext, c * th_ext - neg_ext]
    smoothed = [sm.smooth(f) for f in parts]
    ratio = 0.0
    for f, s in zip(parts, smoothed):
        fi = f[inner]
        mask = fi > 0
        if np.any(mask):
            ratio = max(ratio, float(np.max(fi[mask] / s[mask])))
    c_delta = max(ratio - 1.0, 0.0) * (1 + 1e-9) + 1e-12

    def build(cd):
        up = [(1 + cd) * s for s in smoothed]
        upper_pos, upper_neg, upper_cpos, upper_cneg = up
        lower_pos = c * th - upper_cpos
        lower_neg = c * th - upper_cneg
        return upper_pos - lower_neg, lower_pos - upper_neg

    plus, minus = build(c_delta)
    for _ in range(60):
        if np.all(minus <= vals) and np.all(vals <= plus):
            break
        c_delta = c_delta * 2 + 1e-12
        plus, minus = build(c_delta)
    else:
        raise RuntimeError("could not certify the sandwich ordering")
    pp = SampledFunction(u, plus)
    pm = SampledFunction(u, minus)
    gap = float(np.trapezoid(plus - minus, u))
    return SandwichPair(pm, pp, delta, gap, SampledFunction(u, vals), c, c_delta)


def band_limit_ratio(f: SampledFunction, bound: float, factor: float = 1.05, n_xi: int = 400) -> float:
    """``max |fhat(xi)| / ||f||_L1`` over ``factor * bound <= |xi| <= xi_max``.

    ``xi_max`` is ``3 * bound`` capped at a quarter of the sampling frequency
    ``2 pi / dx``. By symmetry of the real transform only ``xi > 0`` is scanned.
    """
    xi_max = min(3 * bound, 0.5 * math.pi / f.dx)
    xi = np.linspace(factor * bound, xi_max, n_xi)
    return float(np.max(np.abs(fourier_transform(f, xi))) / f.l1())


def c1_profile(f: SampledFunction, xi_max: float = 10.0, n_xi: int = 2001) -> tuple[float, float]:
    """``(sup |fhat|, sup |fhat'|)`` on ``[-xi_max, xi_max]`` with finite differences."""
    xi = np.linspace(-xi_max, xi_max, n_xi)
    fh = fourier_transform(f, xi)
    return float(np.max(np.abs(fh))), float(np.max(np.abs(np.gradient(fh, xi))))


def write_spectrum_csv(f: SampledFunction, xi, path) -> None:
    """``|fhat(xi)|`` at each ``xi`` as CSV ``xi,abs_fhat``."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    mag = np.abs(fourier_transform(f, xi))
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["xi", "abs_fhat"])
        for a, b in zip(xi, mag):
            wr.writerow([repr(float(a)), repr(float(b))])
