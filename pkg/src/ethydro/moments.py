"""Joint moments of energy with an observable, and what follows from them.

The thermal expectation of an observable is differentiated in beta through
joint connected cumulants of (H, O); the order of the first non-vanishing
cumulant is the overlap order m. The same traces give the no-free-parameter
prefactor of the eps^m term of the diagonal profile, and the Gaussian
combinatorial constants predict the finite-size plateau of diagonal
fluctuations at order m.

Trace evaluation routes:
  exact-dense          full diagonalization or matrix powers, small L
  exact-sparse-columns column sweeps with the structured apply, no dense H
  stochastic-trace     random-vector (Hutchinson) estimates, any L the
                       propagator can reach; the only beta != 0 route
                       besides dense
"""

import warnings
from dataclasses import dataclass, field
from math import comb, factorial

import numpy as np

from .errors import ConfigError
from .lattice import apply, spectral_bounds
from .spectra import diagonalize
from .typicality import chebyshev_propagate, haar_state

ZERO_THRESHOLD_DEFAULT = 1e-8


# ============================================================
# tables
# ============================================================


@dataclass
class MomentTable:
    """Raw joint moments <H^m O>_beta and their connected cumulants.

    h_moments holds <H^m>_beta for the same orders; stderr entries are
    present only for stochastic evaluation.
    """

    beta: float
    raw: dict = field(default_factory=dict)
    h_moments: dict = field(default_factory=dict)
    cc: dict = field(default_factory=dict)
    stderr: dict = field(default_factory=dict)
    zero_threshold: float = ZERO_THRESHOLD_DEFAULT

    def m_max(self):
        return max(self.raw) if self.raw else -1

    def check_contiguous(self):
        orders = sorted(self.raw)
        if orders != list(range(len(orders))):
            raise ConfigError("moment orders must be contiguous from 0")
        for m in orders:
            if m not in self.h_moments:
                raise ConfigError(f"missing <H^{m}> for cumulant recursion")

    def rows(self):
        """(m, raw, cc, stderr) rows for export."""
        out = []
        for m in sorted(self.raw):
            out.append((m, self.raw[m], self.cc.get(m, np.nan),
                        self.stderr.get(m, 0.0)))
        return out


@dataclass
class OverlapOrderResult:
    m: object  # int or np.inf
    witness: float
    threshold: float
    ambiguous: bool = False
    normalized: dict = field(default_factory=dict)

    def is_infinite(self):
        return not np.isfinite(self.m)


# ============================================================
# trace backends
# ============================================================


def _dense_matrix(op):
    mat = op.matrix
    if hasattr(mat, "toarray"):
        return mat.toarray()
    return np.asarray(mat)


def _moments_dense(h_op, o_op, m_max, beta):
    hd = _dense_matrix(h_op)
    dim = h_op.dim
    scale = max(float(np.linalg.norm(hd, ord=1)), 1.0)
    if beta == 0.0:
        raw = {}
        hm = {}
        x = np.eye(dim) if o_op is None else _dense_matrix(o_op)
        y = np.eye(dim)
        hs = hd / scale
        for m in range(m_max + 1):
            raw[m] = float(np.trace(x).real) / dim * scale**m
            hm[m] = float(np.trace(y).real) / dim * scale**m
            if m < m_max:
                x = hs @ x
                y = hs @ y
        return raw, hm
    spec = diagonalize(h_op)
    e, v = spec.energies, spec.eigenvectors
    if o_op is None:
        o_diag = np.ones(dim)
    else:
        od = _dense_matrix(o_op)
        # Hermitian O has a real diagonal in the (real) eigenbasis
        o_diag = np.real(np.einsum("ij,ij->j", v, od @ v))
    w = np.exp(-beta * (e - e.min()))
    z = w.sum()
    es = e / scale
    raw = {}
    hm = {}
    for m in range(m_max + 1):
        raw[m] = float((w * es**m * o_diag).sum()) / z * scale**m
        hm[m] = float((w * es**m).sum()) / z * scale**m
    return raw, hm


def _moments_sparse_columns(h_op, o_op, m_max, block_cols=None):
    """beta = 0 traces by sweeping identity columns through O then H^k.

    Never forms a dense H; one sweep accumulates every order at once.
    """
    dim = h_op.dim
    if block_cols is None:
        block_cols = max(1, int(3e6) // dim)
    o_mat = None if o_op is None else o_op.matrix
    bounds = spectral_bounds(h_op)
    scale = max(abs(bounds[0]), abs(bounds[1]), 1.0)
    raw = np.zeros(m_max + 1)
    hm = np.zeros(m_max + 1)
    for lo in range(0, dim, block_cols):
        hi = min(lo + block_cols, dim)
        cols = np.arange(lo, hi)
        eye = np.zeros((dim, cols.size))
        eye[cols, np.arange(cols.size)] = 1.0
        if o_op is None:
            y = eye.copy()
        elif hasattr(o_mat, "toarray"):
            y = np.asarray(o_mat[:, lo:hi].todense())
        else:
            y = np.array(o_mat[:, lo:hi])
        z = eye
        for m in range(m_max + 1):
            raw[m] += y[cols, np.arange(cols.size)].sum() * scale**m
            hm[m] += z[cols, np.arange(cols.size)].sum() * scale**m
            if m < m_max:
                y = apply(h_op, y) / scale
                z = apply(h_op, z) / scale
    raw /= dim
    hm /= dim
    return {m: float(raw[m]) for m in range(m_max + 1)}, \
        {m: float(hm[m]) for m in range(m_max + 1)}


def _moments_stochastic(h_op, o_op, m_max, beta, seeds, bounds=None):
    """Random-vector traces; one thermal vector per seed serves all orders,
    so cumulant differences inherit correlated (partly canceling) noise."""
    if bounds is None:
        bounds = spectral_bounds(h_op)
    scale = max(abs(bounds[0]), abs(bounds[1]), 1.0)
    dim = h_op.dim
    raw_samples = np.zeros((len(seeds), m_max + 1))
    h_samples = np.zeros((len(seeds), m_max + 1))
    for r, seed in enumerate(seeds):
        psi = haar_state(dim, seed)
        if beta != 0.0:
            phi = chebyshev_propagate(h_op, psi, -0.5 * beta, bounds=bounds)
        else:
            phi = psi
        norm = float(np.real(np.vdot(phi, phi)))
        if norm < 1e-280:
            raise ConfigError("thermal vector underflow; reduce beta")
        y = phi.copy() if o_op is None else apply(o_op, phi)
        z = phi.copy()
        for m in range(m_max + 1):
            raw_samples[r, m] = np.real(np.vdot(phi, y)) / norm * scale**m
            h_samples[r, m] = np.real(np.vdot(phi, z)) / norm * scale**m
            if m < m_max:
                y = apply(h_op, y) / scale
                z = apply(h_op, z) / scale
    raw = {m: float(raw_samples[:, m].mean()) for m in range(m_max + 1)}
    hm = {m: float(h_samples[:, m].mean()) for m in range(m_max + 1)}
    n = len(seeds)
    if n > 1:
        err = {m: float(raw_samples[:, m].std(ddof=1) / np.sqrt(n))
               for m in range(m_max + 1)}
    else:
        err = {m: 0.0 for m in range(m_max + 1)}
    return raw, hm, err


METHODS = ("exact-dense", "exact-sparse-columns", "stochastic-trace")


def moment_table(h_op, o_op, m_max, beta=0.0, method="exact-dense",
                 seeds=None, n_seeds=24, bounds=None):
    """All joint moments <H^m O>_beta for m = 0..m_max, plus <H^m>_beta,
    with connected cumulants filled in. o_op=None means O = identity."""
    if m_max < 0:
        raise ConfigError("m_max must be nonnegative")
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}")
    err = {}
    if method == "exact-dense":
        raw, hm = _moments_dense(h_op, o_op, m_max, beta)
    elif method == "exact-sparse-columns":
        if beta != 0.0:
            raise ConfigError(
                "column sweeps evaluate infinite-temperature traces only"
            )
        raw, hm = _moments_sparse_columns(h_op, o_op, m_max)
    else:
        if seeds is None:
            seeds = tuple(range(n_seeds))
        raw, hm, err = _moments_stochastic(
            h_op, o_op, m_max, beta, seeds, bounds=bounds
        )
    table = MomentTable(beta=beta, raw=raw, h_moments=hm, stderr=err)
    connected_cumulants(table)
    return table


def moment_trace(h_op, o_op, m, beta=0.0, method="exact-dense",
                 seeds=None, n_seeds=24, bounds=None):
    """Single joint moment <H^m O>_beta.

    Exact methods return a float; the stochastic method returns
    (value, stderr).
    """
    if m < 0:
        raise ConfigError("moment order must be nonnegative")
    table = moment_table(h_op, o_op, m, beta=beta, method=method,
                         seeds=seeds, n_seeds=n_seeds, bounds=bounds)
    if method == "stochastic-trace":
        return table.raw[m], table.stderr[m]
    return table.raw[m]


# ============================================================
# cumulants
# ============================================================


def connected_cumulants(table):
    """Fill table.cc from raw joint moments and Hamiltonian moments.

    With mu_m = <H^m O> and h_k = <H^k>, the cumulants linear in O obey
    mu_m = sum_k C(m,k) c_k h_{m-k}, inverted recursively. c_m is the
    m-th beta derivative (up to sign) of the thermal expectation of O.
    """
    table.check_contiguous()
    cc = {}
    for m in sorted(table.raw):
        acc = table.raw[m]
        for k in range(m):
            acc -= comb(m, k) * cc[k] * table.h_moments[m - k]
        cc[m] = acc
    table.cc = cc
    return table


def overlap_order(h_op, o_op, beta=0.0, m_max=6, threshold=None,
                  method="exact-dense", seeds=None, n_seeds=24):
    """Order of the first non-vanishing joint connected cumulant.

    Cumulants are compared in normalized units: |c_m| / (var(H)^{m/2}
    sqrt(var(O))), so the threshold is scale-free. Algebraic zeros sit
    around 1e-14 there and physical signals at 1e-3..1e-1; anything
    within a factor 3 of the threshold flags the result ambiguous.
    """
    if m_max < 1:
        raise ConfigError("m_max must be at least 1")
    if threshold is None:
        threshold = ZERO_THRESHOLD_DEFAULT
    table = moment_table(h_op, o_op, max(m_max, 2), beta=beta, method=method,
                         seeds=seeds, n_seeds=n_seeds)
    var_h = table.h_moments[2] - table.h_moments[1] ** 2
    if var_h <= 0:
        raise ConfigError("Hamiltonian variance must be positive")
    var_o = _observable_variance(h_op, o_op, beta, method, seeds, n_seeds)
    if var_o <= 0:
        raise ConfigError("observable variance must be positive")
    normalized = {}
    found = np.inf
    witness = 0.0
    for m in range(1, m_max + 1):
        scale = var_h ** (m / 2.0) * np.sqrt(var_o)
        normalized[m] = abs(table.cc[m]) / scale
        if normalized[m] > threshold and not np.isfinite(found):
            found = m
            witness = table.cc[m]
    checks = [normalized[m] for m in range(1, m_max + 1)] \
        if not np.isfinite(found) else \
        [normalized[m] for m in range(1, int(found) + 1)]
    ambiguous = any(threshold / 3.0 <= v <= 3.0 * threshold for v in checks)
    if ambiguous:
        warnings.warn("cumulant magnitude within a factor 3 of the threshold")
    return OverlapOrderResult(
        m=int(found) if np.isfinite(found) else np.inf,
        witness=float(witness), threshold=float(threshold),
        ambiguous=ambiguous, normalized=normalized,
    )


def _observable_variance(h_op, o_op, beta, method, seeds, n_seeds):
    """<O^2>_beta - <O>_beta^2 through the matching trace backend."""
    if method == "exact-dense":
        od = _dense_matrix(o_op)
        dim = o_op.dim
        if beta == 0.0:
            mean = float(np.trace(od).real) / dim
            sq = float(np.trace(od @ od).real) / dim
            return sq - mean**2
        spec = diagonalize(h_op)
        e, v = spec.energies, spec.eigenvectors
        w = np.exp(-beta * (e - e.min()))
        z = w.sum()
        ov = od @ v
        mean = float((w * np.einsum("ij,ij->j", v, ov)).sum()) / z
        sq = float((w * np.einsum("ij,ij->j", ov, ov)).sum()) / z
        return sq - mean**2
    if method == "exact-sparse-columns":
        dim = o_op.dim
        mat = o_op.matrix
        if hasattr(mat, "multiply"):
            sq = float(np.real(np.asarray(mat.multiply(mat.T).sum())))
            mean = float(np.real(mat.diagonal().sum()))
        else:
            m = np.asarray(mat)
            sq = float(np.real((m * m.T).sum()))
            mean = float(np.real(np.trace(m)))
        return sq / dim - (mean / dim) ** 2
    # stochastic
    if seeds is None:
        seeds = tuple(range(n_seeds))
    dim = o_op.dim
    bounds = spectral_bounds(h_op) if beta != 0.0 else None
    means = []
    sqs = []
    for seed in seeds:
        psi = haar_state(dim, seed)
        phi = psi if beta == 0.0 else \
            chebyshev_propagate(h_op, psi, -0.5 * beta, bounds=bounds)
        norm = float(np.real(np.vdot(phi, phi)))
        y = apply(o_op, phi)
        means.append(np.real(np.vdot(phi, y)) / norm)
        sqs.append(np.real(np.vdot(y, y)) / norm)
    return float(np.mean(sqs) - np.mean(means) ** 2)


# ============================================================
# diagonal-profile prefactor and plateau constants
# ============================================================


def taylor_prefactor(h_op, o_op, m, length, method="exact-dense",
                     seeds=None, n_seeds=24):
    """Coefficient of eps^m in the diagonal profile near eps = 0:

        (1/m!) <H^m O>_cc(beta=0) / (<H^2>/L)^m.

    Uses the connected cumulant, which at the overlap order coincides
    with the raw joint moment. No fitted quantities enter.
    """
    if m < 1:
        raise ConfigError("prefactor order must be at least 1")
    table = moment_table(h_op, o_op, max(m, 2), beta=0.0, method=method,
                         seeds=seeds, n_seeds=n_seeds)
    h2 = table.h_moments[2]
    if h2 <= 0:
        raise ConfigError("<H^2> must be positive")
    density = h2 / length
    return table.cc[m] / (factorial(m) * density**m)


def double_factorial(n):
    if n <= 0:
        return 1
    return int(np.prod(np.arange(n, 0, -2, dtype=np.float64)))


def kappa_constant(m):
    """Gaussian fluctuation constant: var of a centered Gaussian power.

    (2m-1)!! for odd m; (2m-1)!! - ((m-1)!!)^2 for even m.
    """
    if m <= 0:
        raise ConfigError("order must be positive")
    full = double_factorial(2 * m - 1)
    if m % 2 == 1:
        return full
    return full - double_factorial(m - 1) ** 2


def variance_prediction(dm_o, h2_density, m, length):
    """Predicted finite-size plateau of diagonal fluctuations at order m:

        (dm_o / m!)^2 (h2_density / L)^m kappa(m),

    with dm_o the m-th eps-derivative of the profile and h2_density the
    intensive energy variance <H^2>/L. Scales as 1/L^m.
    """
    if m <= 0:
        raise ConfigError("order must be positive")
    if length <= 0:
        raise ConfigError("length must be positive")
    return (dm_o / factorial(m)) ** 2 * (h2_density / length) ** m \
        * kappa_constant(m)
