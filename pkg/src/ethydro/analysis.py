"""Time-series and frequency-domain analysis.

Turns autocorrelator output into the quantities the physics claims are
stated in: saturation plateaus, the frequency profile |f(omega)|^2 via a
continuous-normalization Fourier transform, power-law (and logarithmic)
fits with uncertainties, finite-size scaling of plateaus, and the
relaxation-overlap inequality verdict nu <= d m / z.

Everything here is a pure function of its inputs.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .spectra import FrequencyProfile
from .typicality import TimeSeries


# ============================================================
# fits
# ============================================================


@dataclass
class PowerLawFit:
    exponent: float
    exponent_stderr: float
    window: tuple
    r_squared: float
    log_correction: bool = False
    below_noise_floor: bool = False
    note: str = ""
    xs: np.ndarray = field(default=None, repr=False)
    ys: np.ndarray = field(default=None, repr=False)
    fitted: np.ndarray = field(default=None, repr=False)

    def report(self):
        lines = [
            f"exponent: {self.exponent:.6g}",
            f"exponent_stderr: {self.exponent_stderr:.3g}",
            f"window: [{self.window[0]:.6g}, {self.window[1]:.6g}]",
            f"r_squared: {self.r_squared:.6g}",
            f"log_correction: {self.log_correction}",
        ]
        if self.below_noise_floor:
            lines.append("below_noise_floor: True")
        if self.note:
            lines.append(f"note: {self.note}")
        return "\n".join(lines)


@dataclass
class InequalityVerdict:
    nu: float
    m: float
    d: int
    z: float
    bound: float
    satisfied: bool
    saturated: bool
    tolerance: float

    def report(self):
        return "\n".join([
            f"nu: {self.nu:.6g}",
            f"m: {self.m}",
            f"d: {self.d}",
            f"z: {self.z:.6g}",
            f"bound: {self.bound:.6g}",
            f"satisfied: {self.satisfied}",
            f"saturated: {self.saturated}",
            f"tolerance: {self.tolerance:.6g}",
        ])


def _weighted_line(x, y):
    """Plain least-squares line y = a + b x with slope stderr from
    residual variance."""
    n = x.size
    a, b = np.polynomial.polynomial.polyfit(x, y, 1)
    yhat = a + b * x
    if n > 2:
        s2 = np.sum((y - yhat) ** 2) / (n - 2)
        sxx = np.sum((x - x.mean()) ** 2)
        b_err = np.sqrt(s2 / sxx) if sxx > 0 else np.inf
    else:
        b_err = 0.0
    return a, b, b_err, yhat


def powerlaw_fit(xs, ys, window=None, with_log=False, min_points=5):
    """Power-law exponent (or logarithmic coefficient) over a window.

    Default mode fits ln y = a + nu ln x; with_log=True instead fits
    y = a + b ln x, for profiles whose divergence is logarithmic rather
    than algebraic. r_squared is evaluated in raw-y coordinates in both
    modes so the two model families can be ranked against each other.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ConfigError("xs and ys must be matching 1-d arrays")
    if window is None:
        window = (float(xs.min()), float(xs.max()))
    lo, hi = float(window[0]), float(window[1])
    keep = (xs >= lo) & (xs <= hi) & np.isfinite(ys)
    x = xs[keep]
    y = ys[keep]
    if x.size < min_points:
        raise ConfigError(
            f"window [{lo}, {hi}] holds {x.size} points; need {min_points}"
        )
    if np.any(x <= 0):
        raise ConfigError("fit abscissae must be positive")
    if with_log:
        a, b, b_err, yhat = _weighted_line(np.log(x), y)
        resid = y - yhat
        ss_tot = np.sum((y - y.mean()) ** 2)
        r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
        return PowerLawFit(
            exponent=float(b), exponent_stderr=float(b_err),
            window=(lo, hi), r_squared=float(max(min(r2, 1.0), 0.0)),
            log_correction=True, xs=x, ys=y, fitted=yhat,
        )
    if np.any(y <= 0):
        raise ConfigError("power-law fit needs positive values in window")
    a, b, b_err, lhat = _weighted_line(np.log(x), np.log(y))
    yhat = np.exp(lhat)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - yhat) ** 2) / ss_tot if ss_tot > 0 else 1.0
    return PowerLawFit(
        exponent=float(b), exponent_stderr=float(b_err),
        window=(lo, hi), r_squared=float(max(min(r2, 1.0), 0.0)),
        log_correction=False, xs=x, ys=y, fitted=yhat,
    )


def finite_size_fit(values):
    """m-hat from plateau-vs-length scaling, plateau ~ L^(-m).

    values holds (L, plateau) or (L, plateau, stderr) rows. Plateaus that
    are nonpositive, or within two standard errors of zero, put the result
    on the below-noise-floor branch (consistent with infinite order)
    instead of producing a garbage fit.
    """
    rows = [tuple(map(float, r)) for r in values]
    if len(rows) < 3:
        raise ConfigError("finite-size fit needs at least three sizes")
    ls = np.array([r[0] for r in rows])
    ps = np.array([r[1] for r in rows])
    es = np.array([r[2] if len(r) > 2 else 0.0 for r in rows])
    floor = (ps <= 0.0) | (ps <= 2.0 * es)
    if floor.any():
        return PowerLawFit(
            exponent=np.nan, exponent_stderr=np.nan,
            window=(float(ls.min()), float(ls.max())), r_squared=0.0,
            below_noise_floor=True,
            note="below noise floor, m-hat = infinity consistent",
            xs=ls, ys=ps,
        )
    return powerlaw_fit(ls, ps, min_points=3)


def roi_check(nu, m, d=1, z=2.0, tol=None, nu_stderr=0.0):
    """Relaxation-overlap inequality verdict nu <= d m / z.

    nu may be a PowerLawFit from a time-domain fit (its exponent is the
    negative of the decay power) or a plain positive decay exponent.
    """
    if isinstance(nu, PowerLawFit):
        nu_stderr = nu.exponent_stderr
        nu = -nu.exponent
    nu = float(nu)
    if tol is None:
        tol = max(0.15, 2.0 * float(nu_stderr))
    m_val = float(m)
    bound = d * m_val / z
    satisfied = bool(nu <= bound + tol)
    saturated = bool(np.isfinite(bound) and abs(nu - bound) <= tol)
    return InequalityVerdict(
        nu=nu, m=m_val, d=d, z=z, bound=bound,
        satisfied=satisfied, saturated=saturated, tolerance=float(tol),
    )


# ============================================================
# plateaus
# ============================================================


@dataclass
class SaturationValue:
    value: float
    stderr: float
    still_decaying: bool = False


def saturation_value(series, n_last=50):
    """Late-time plateau: mean of Re C over the last n_last grid points.

    The reported error combines the point scatter with the series' own
    standard errors conservatively (realization noise is correlated
    across neighboring times, so no 1/sqrt(n) is claimed for it). A tail
    that still has a slope beyond three sigma of flat sets still_decaying.
    """
    vals = np.asarray(series.values)
    times = np.asarray(series.times)
    if vals.size <= n_last:
        raise ConfigError("series shorter than the plateau window")
    tail = vals[-n_last:].real
    ttail = times[-n_last:]
    value = float(tail.mean())
    scatter = float(tail.std(ddof=1) / np.sqrt(n_last)) if n_last > 1 else 0.0
    point_err = float(np.mean(series.stderr[-n_last:])) \
        if series.stderr is not None else 0.0
    stderr = max(scatter, point_err)
    still = False
    if n_last >= 5:
        _, slope, slope_err, _ = _weighted_line(ttail, tail)
        if slope_err > 0 and abs(slope) > 3.0 * slope_err:
            still = True
            warnings.warn("plateau window still has a significant slope")
    return SaturationValue(value=value, stderr=stderr, still_decaying=still)


# ============================================================
# Fourier profile
# ============================================================


def fourier_f2(series, beta=None, c_inf=0.0, omega_max=None):
    """|f(omega)|^2 from the plateau-subtracted autocorrelator,

        (1/2pi) e^{beta omega/2} Int e^{-i omega t} (C(t) - C_inf) dt,

    with the t < 0 half supplied by C(-t) = C(t)*. Continuous-transform
    normalization: trapezoid quadrature on the uniform grid, not a bare
    DFT. Output frequencies are multiples of 2 pi / t_max up to the
    Nyquist frequency pi / dt (or omega_max if given, which must not
    exceed Nyquist).
    """
    times = np.asarray(series.times, dtype=np.float64)
    vals = np.asarray(series.values)
    if times.size < 3:
        raise ConfigError("need at least three time points")
    dts = np.diff(times)
    if not np.allclose(dts, dts[0], rtol=1e-10, atol=1e-12):
        raise ConfigError("fourier transform needs a uniform time grid")
    if times[0] != 0.0:
        raise ConfigError("time grid must start at t = 0")
    dt = float(dts[0])
    tmax = float(times[-1])
    if beta is None:
        beta = getattr(series, "beta", 0.0)
    nyquist = np.pi / dt
    if omega_max is None:
        omega_max = nyquist
    if omega_max > nyquist * (1 + 1e-12):
        raise ConfigError(
            f"requested omega {omega_max:.3g} above Nyquist {nyquist:.3g}"
        )
    domega = 2.0 * np.pi / tmax
    jmax = int(np.floor(omega_max / domega + 1e-9))
    omega = np.arange(-jmax, jmax + 1) * domega
    g = np.asarray(vals - c_inf, dtype=np.complex128)
    w = np.full(times.size, dt)
    w[0] *= 0.5
    w[-1] *= 0.5
    # With the extension g(-t) = g(t)*, the two half-axis integrals are
    # conjugates, so F(w) = 2 Re Int_0^T e^{-i w t} g(t) dt; the t = 0
    # half-weights from both halves add back to the full interior weight.
    # F(-w) comes from the same kernel applied to g*.
    pos = omega[jmax:]  # 0 .. omega_max
    f_pos = np.empty(pos.size)
    f_neg = np.empty(pos.size)
    wg = w * g
    wgc = w * np.conj(g)
    step = max(1, int(2e7 // max(times.size, 1)))
    for lo in range(0, pos.size, step):
        block = np.exp(-1j * np.outer(pos[lo:lo + step], times))
        f_pos[lo:lo + step] = 2.0 * (block @ wg).real
        f_neg[lo:lo + step] = 2.0 * (block @ wgc).real
    full = np.concatenate([f_neg[:0:-1], f_pos])
    values = full / (2.0 * np.pi)
    if beta != 0.0:
        values = values * np.exp(0.5 * beta * omega)
    counts = np.ones(omega.size, dtype=np.int64)
    return FrequencyProfile(
        omega=omega, values=values, counts=counts,
        bin_width=domega, beta=float(beta), kind="fourier",
    )


def smooth_part_estimate(profile, t_max, n_bins=3, omega_min=None):
    """|f(0)|^2 estimate for profiles that stay finite at omega = 0.

    Mean of the n_bins lowest populated bins above the finite-size
    cutoff omega_min, which defaults to ten resolution elements of the
    symmetrically extended signal, 10 pi / t_max. The choice of cutoff is
    recorded with the result so downstream fits can report it.
    """
    if omega_min is None:
        omega_min = 10.0 * np.pi / t_max
    om, vals = profile.populated()
    sel = om > omega_min
    if not sel.any():
        raise ConfigError("no populated bins above the reliability cutoff")
    om = om[sel]
    vals = vals[sel]
    order = np.argsort(om)
    take = order[:n_bins]
    return float(np.mean(vals[take])), float(omega_min)


def singular_remainder(profile, t_max, n_bins=3, omega_min=None):
    """Profile minus its omega -> 0 smooth part, for m = 3, 4 fits."""
    f0, omin = smooth_part_estimate(profile, t_max, n_bins, omega_min)
    out = FrequencyProfile(
        omega=profile.omega.copy(),
        values=profile.values - f0,
        counts=profile.counts.copy(),
        bin_width=profile.bin_width,
        beta=profile.beta,
        kind=profile.kind + "-remainder",
    )
    return out, f0, omin


# ============================================================
# oscillation removal
# ============================================================


def oscillation_filter(series, method="moving_average", scale=1.0):
    """Suppress coherent oscillations before fitting the envelope decay.

    moving_average: box average of width `scale` (time units), shrinking
    symmetrically near the ends. frequency_truncation: discard Fourier
    components with |omega| > 2 pi / scale. The two are approximately
    equivalent for scales matched to the oscillation period. stderr is
    smoothed the same way and kept as a conservative per-point error.
    """
    if scale <= 0:
        raise ConfigError("filter scale must be positive")
    times = np.asarray(series.times, dtype=np.float64)
    vals = np.asarray(series.values)
    tspan = float(times[-1] - times[0])
    if scale > tspan:
        raise ConfigError("filter scale exceeds the series support")
    dt = float(times[1] - times[0])
    if method == "moving_average":
        half = max(1, int(round(0.5 * scale / dt)))
        n = vals.size
        out = np.empty_like(vals)
        err = np.zeros(n)
        serr = series.stderr if series.stderr is not None else np.zeros(n)
        for k in range(n):
            lo = max(0, k - half)
            hi = min(n, k + half + 1)
            out[k] = vals[lo:hi].mean()
            err[k] = np.mean(serr[lo:hi])
    elif method == "frequency_truncation":
        freqs = 2.0 * np.pi * np.fft.fftfreq(vals.size, d=dt)
        spec = np.fft.fft(vals)
        spec[np.abs(freqs) > 2.0 * np.pi / scale] = 0.0
        out = np.fft.ifft(spec)
        if np.isrealobj(vals):
            out = out.real
        err = series.stderr.copy() if series.stderr is not None \
            else np.zeros(vals.size)
    else:
        raise ConfigError(f"unknown filter method {method!r}")
    return TimeSeries(
        times=times.copy(), values=out, stderr=err, beta=series.beta,
        observable=series.observable, length=series.length,
        meta=dict(series.meta, filtered=method, filter_scale=scale),
    )
