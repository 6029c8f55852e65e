"""Thermal autocorrelators from random pure states.

A Gaussian-random state |psi> stands in for the thermal trace: with
|psi_b> = e^{-beta H / 2}|psi> and |phi> = O |psi_b>, the estimator

    C_beta(t) = <psi_b(t)| O |phi(t)> / <psi_b|psi_b>

reproduces the thermal autocorrelator with statistical error ~ 1/sqrt(D),
so a handful of realizations suffices once the chain outgrows dense
diagonalization. Real- and imaginary-time propagation both run through a
Chebyshev expansion of the propagator on the rescaled Hamiltonian
Htilde = (H - b)/a, with Bessel-function coefficients truncated once two
consecutive magnitudes drop below tolerance.

Both auxiliary states ride through the kernel together as the two columns
of one block, which halves the sweep count per time step.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ive, jv

from ._kernels import chebyshev_step_block
from .errors import ConfigError, TaskError
from .lattice import apply, build_observable, spectral_bounds

CHEB_TOL_DEFAULT = 1e-12
_NORM_CHECK_STRIDE = 16
_NORM_BLOWUP = 50.0


# ============================================================
# runs and series
# ============================================================


@dataclass(frozen=True)
class TypicalityRun:
    """Deterministic description of one DQT estimation."""

    seeds: tuple
    beta: float
    dt: float
    n_steps: int
    cheb_tol: float = CHEB_TOL_DEFAULT

    def __post_init__(self):
        if len(self.seeds) < 1:
            raise ConfigError("need at least one realization seed")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if not 0.0 < self.cheb_tol <= 1e-6:
            raise ConfigError("cheb_tol must lie in (0, 1e-6]")
        if self.n_steps < 0:
            raise ConfigError("n_steps must be nonnegative")
        if self.beta < 0:
            raise ConfigError("beta must be nonnegative")

    @property
    def n_p(self):
        return len(self.seeds)

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.dt

    def as_dict(self):
        return {
            "seeds": list(self.seeds),
            "beta": self.beta,
            "dt": self.dt,
            "n_steps": self.n_steps,
            "cheb_tol": self.cheb_tol,
        }


def default_realizations(length, reference=12, count_at_reference=16, floor=4):
    """Realization count ~ 3^(-L/2), pinned to 16 at L = 12, floored at 4."""
    raw = count_at_reference * 3.0 ** (0.5 * (reference - length))
    return max(floor, int(round(raw)))


def make_run(seed, n_p, beta=0.0, dt=0.1, n_steps=1000,
             cheb_tol=CHEB_TOL_DEFAULT):
    seeds = tuple(int(seed) + k for k in range(n_p))
    return TypicalityRun(seeds=seeds, beta=float(beta), dt=float(dt),
                         n_steps=int(n_steps), cheb_tol=float(cheb_tol))


@dataclass
class TimeSeries:
    """Realization-averaged C(t) with per-point standard error."""

    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    beta: float
    observable: str = ""
    length: int = 0
    meta: dict = field(default_factory=dict)


# ============================================================
# random states
# ============================================================


def haar_state(dim, seed):
    """Unit vector with i.i.d. complex Gaussian components."""
    if dim < 1:
        raise ConfigError("dimension must be at least 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    return v


# ============================================================
# Chebyshev propagation
# ============================================================


def _truncate(mags, tol):
    """Index after which two consecutive coefficients sit below tol."""
    scale = mags.max()
    small = mags < tol * scale
    hits = np.flatnonzero(small[:-1] & small[1:])
    if hits.size == 0:
        return None
    return int(hits[0])


def _coeffs_real_time(z, tol):
    """Chebyshev coefficients of e^{-i z x} on [-1, 1]."""
    n_hi = int(abs(z) + 40 + 8.0 * abs(z) ** 0.5) + 4
    n = np.arange(n_hi)
    c = 2.0 * (-1j) ** (n % 4) * jv(n, z)
    c[0] *= 0.5
    cut = _truncate(np.abs(c), tol)
    if cut is None:
        raise TaskError("Chebyshev coefficients fail to decay; check bounds")
    return c[:max(cut, 1)]


def _coeffs_imag_time(s, tol):
    """Chebyshev coefficients of e^{-s x} on [-1, 1] for s >= 0."""
    n_hi = int(s + 40 + 8.0 * s**0.5) + 4
    n = np.arange(n_hi)
    c = 2.0 * (-1.0) ** (n % 2) * ive(n, s)  # I_n(s) e^{-s}, scaled
    c[0] *= 0.5
    cut = _truncate(np.abs(c), tol)
    if cut is None:
        raise TaskError("Chebyshev coefficients fail to decay; check bounds")
    return c[:max(cut, 1)] * np.exp(s)  # undo the ive scaling


def _cheb_series(h_op, block, coeffs, center, halfwidth):
    """sum_n c_n T_n(Htilde) block with the three-buffer recurrence."""
    st = h_op.structure
    ainv = 1.0 / halfwidth
    cur = np.array(block, copy=True)
    acc = coeffs[0] * cur
    if len(coeffs) == 1:
        return acc
    nxt = (apply(h_op, cur) - center * cur) * ainv
    prev, cur = cur, nxt
    acc += coeffs[1] * cur
    nrm0 = np.linalg.norm(cur)
    for k in range(2, len(coeffs)):
        if st is not None:
            chebyshev_step_block(
                st.diag, st.amp, st.powers, st.nsites,
                ainv, center, prev, cur, acc, coeffs[k],
            )
            prev, cur = cur, prev
        else:
            nxt = 2.0 * ainv * (apply(h_op, cur) - center * cur) - prev
            acc += coeffs[k] * nxt
            prev, cur = cur, nxt
        if k % _NORM_CHECK_STRIDE == 0:
            if np.linalg.norm(cur) > _NORM_BLOWUP * max(nrm0, 1e-300):
                raise TaskError(
                    "Chebyshev recursion diverging; spectral bounds must "
                    "enclose the full spectrum"
                )
    return acc


def chebyshev_propagate(h_op, psi, tau, bounds=None, tol=CHEB_TOL_DEFAULT):
    """e^{tau H} psi for tau = -i t (real time) or tau = -beta/2 (imaginary).

    bounds is the (E_min, E_max) pair from spectral_bounds; recomputed here
    when omitted. Imaginary-time results are intentionally not normalized.
    Large imaginary-time arguments are split into increments with
    beta step <= 1 to keep the coefficient range tame.
    """
    tau = complex(tau)
    if bounds is None:
        bounds = spectral_bounds(h_op)
    lo, hi = float(bounds[0]), float(bounds[1])
    if hi <= lo:
        raise ConfigError("empty spectral bounds")
    center = 0.5 * (hi + lo)
    halfwidth = 0.5 * (hi - lo) * 1.01
    shape = psi.shape
    block = psi.reshape(psi.shape[0], -1)
    if tau == 0:
        return psi.copy()
    if abs(tau.real) > 1e-14 * max(1.0, abs(tau)) and \
            abs(tau.imag) > 1e-14 * max(1.0, abs(tau)):
        raise ConfigError("tau must be purely real or purely imaginary")
    if abs(tau.real) <= 1e-14 * max(1.0, abs(tau)):
        # real time: tau = -i t
        t = -tau.imag
        if np.isrealobj(block):
            block = block.astype(np.complex128)
        z = halfwidth * t
        coeffs = _coeffs_real_time(z, tol) * np.exp(-1j * center * t)
        out = _cheb_series(h_op, block, coeffs, center, halfwidth)
        return out.reshape(shape)
    # imaginary time: tau = -s with s > 0 (negative real axis)
    s = -tau.real
    if s < 0:
        raise ConfigError("imaginary-time propagation needs tau.real <= 0")
    n_chunks = max(1, int(np.ceil(2.0 * s)))  # beta increments <= 1
    s_step = s / n_chunks
    out = block if not np.isrealobj(block) else block.astype(np.float64)
    out = np.array(out, copy=True)
    coeffs = _coeffs_imag_time(halfwidth * s_step, tol) * np.exp(-center * s_step)
    for _ in range(n_chunks):
        out = _cheb_series(h_op, out, coeffs, center, halfwidth)
    return out.reshape(shape)


# ============================================================
# autocorrelators
# ============================================================


def dqt_autocorrelator(h_op, o_op, run, bounds=None):
    """Typicality estimate of the connected autocorrelator.

    Per realization both auxiliary states are co-propagated on the shared
    time grid, the overlap is normalized by <psi_b|psi_b>, and after
    averaging, the square of the realization-averaged <O>_beta is
    subtracted. Identical runs give bitwise-identical output; realizations
    are reduced in fixed seed order.
    """
    if h_op.dim != o_op.dim:
        raise ConfigError("H and O dimensions differ")
    if bounds is None:
        bounds = spectral_bounds(h_op)
    lo, hi = float(bounds[0]), float(bounds[1])
    center = 0.5 * (hi + lo)
    halfwidth = 0.5 * (hi - lo) * 1.01
    z_step = halfwidth * run.dt
    step_coeffs = _coeffs_real_time(z_step, run.cheb_tol) \
        * np.exp(-1j * center * run.dt)
    nt = run.n_steps + 1
    per_real = np.empty((run.n_p, nt), dtype=np.complex128)
    omeans = np.empty(run.n_p, dtype=np.complex128)
    for r, seed in enumerate(run.seeds):
        psi = haar_state(h_op.dim, seed)
        if run.beta > 0.0:
            psi = chebyshev_propagate(
                h_op, psi, -0.5 * run.beta, bounds=bounds, tol=run.cheb_tol
            )
        znorm = float(np.vdot(psi, psi).real)
        if znorm < 1e-280:
            raise TaskError(
                "thermal state norm underflow; lower beta or rescale"
            )
        phi = apply(o_op, psi)
        omeans[r] = np.vdot(psi, phi) / znorm
        pair = np.column_stack([psi, phi])
        per_real[r, 0] = np.vdot(pair[:, 0], apply(o_op, pair[:, 1])) / znorm
        for k in range(1, nt):
            pair = _cheb_series(h_op, pair, step_coeffs, center, halfwidth)
            per_real[r, k] = (
                np.vdot(pair[:, 0], apply(o_op, pair[:, 1])) / znorm
            )
    values = per_real.mean(axis=0)
    if run.n_p > 1:
        spread = np.abs(per_real - values[None, :]) ** 2
        stderr = np.sqrt(spread.sum(axis=0) / (run.n_p - 1) / run.n_p)
    else:
        stderr = np.zeros(nt)
    omean = omeans.mean()
    values = values - np.abs(omean) ** 2
    return TimeSeries(
        times=run.times,
        values=values,
        stderr=stderr,
        beta=run.beta,
        observable=o_op.name,
        length=h_op.nsites,
        meta={"n_p": run.n_p, "seeds": list(run.seeds),
              "o_mean": complex(omean)},
    )


def realization_scaling_check(spec_for_length, descriptor, sizes,
                              n_seeds=50, t_star=2.0, beta=0.0,
                              seed=1234, cheb_tol=CHEB_TOL_DEFAULT):
    """Single-realization spread of C(t*) against chain length.

    spec_for_length maps L to a chain spec; descriptor is the observable
    descriptor applied at every size. Returns an array of rows
    (L, std of single-realization C(t*) across seeds), which should fall
    like 3^(-L/2).
    """
    from .lattice import build_hamiltonian

    rows = []
    for length in sizes:
        spec = spec_for_length(length)
        h = build_hamiltonian(spec)
        o = build_observable(length, descriptor)
        run = TypicalityRun(
            seeds=tuple(seed + k for k in range(n_seeds)),
            beta=beta, dt=float(t_star), n_steps=1, cheb_tol=cheb_tol,
        )
        series = _per_realization_final(h, o, run)
        rows.append((length, float(np.std(series, ddof=1))))
    return np.asarray(rows)


def _per_realization_final(h_op, o_op, run):
    """C(t_max) per realization (helper for the scaling check)."""
    bounds = spectral_bounds(h_op)
    lo, hi = float(bounds[0]), float(bounds[1])
    center = 0.5 * (hi + lo)
    halfwidth = 0.5 * (hi - lo) * 1.01
    coeffs = _coeffs_real_time(halfwidth * run.dt, run.cheb_tol) \
        * np.exp(-1j * center * run.dt)
    out = np.empty(run.n_p, dtype=np.complex128)
    for r, seed in enumerate(run.seeds):
        psi = haar_state(h_op.dim, seed)
        if run.beta > 0.0:
            psi = chebyshev_propagate(h_op, psi, -0.5 * run.beta,
                                      bounds=bounds, tol=run.cheb_tol)
        znorm = float(np.vdot(psi, psi).real)
        pair = np.column_stack([psi, apply(o_op, psi)])
        for _ in range(run.n_steps):
            pair = _cheb_series(h_op, pair, coeffs, center, halfwidth)
        out[r] = np.vdot(pair[:, 0], apply(o_op, pair[:, 1])) / znorm
    return out
