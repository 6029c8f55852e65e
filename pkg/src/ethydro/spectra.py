"""Exact spectra, symmetry sectors, and ETH matrix-element statistics.

Supplies the eigenbasis side of the toolkit: dense diagonalization with a
configurable dimension cap, translation/reflection/spin-flip symmetry
sectors for reaching L = 10 within workstation memory, diagonal
matrix-element profiles, the binned off-diagonal estimator

    |f(omega)|^2 ~ (1/Z_beta) sum_{i != j} e^{-beta (E_i + E_j)/2}
                   |O_ij|^2 delta_eps(omega - (E_i - E_j)),

and the exact-diagonalization autocorrelator used as an oracle for the
typicality route.

Translation sectors with momentum k outside {0, pi} are built as real
cos/sin pair blocks (k merged with -k), so every projected Hamiltonian
block is real symmetric. The +-k eigenvalues then show up as exact
doublets; binned pair statistics are invariant under the arbitrary
rotation inside a doublet because both members share one energy.
"""

import warnings
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import CapExceeded, ConfigError
from .lattice import (
    apply,
    hilbert_dim,
    reflect_indices,
    spinflip_indices,
    translate_indices,
)

# Mean adjacent-gap ratios of the reference ensembles (standard values).
GOE_MEAN_GAP_RATIO = 0.5307
POISSON_MEAN_GAP_RATIO = 2.0 * np.log(2.0) - 1.0

DENSE_CAP_DEFAULT = 3**12


# ============================================================
# spectra
# ============================================================


@dataclass(frozen=True)
class SectorLabel:
    """(kappa, parity, zparity); kappa is an int or a (k, L-k) pair."""

    kappa: object
    parity: int | None = None
    zparity: int | None = None

    def token(self):
        k = self.kappa
        kpart = f"k{k[0]}-{k[1]}" if isinstance(k, tuple) else f"k{k}"
        ppart = "" if self.parity is None else f"p{self.parity:+d}"
        zpart = "" if self.zparity is None else f"z{self.zparity:+d}"
        return kpart + ppart + zpart


@dataclass
class Spectrum:
    """Sorted eigenvalues, optional eigenvector columns, optional sector."""

    energies: np.ndarray
    eigenvectors: np.ndarray | None = None
    sector_label: SectorLabel | None = None

    @property
    def dim(self):
        return self.energies.shape[0]


def diagonalize(op, want_vectors=True, cap=DENSE_CAP_DEFAULT):
    """Dense diagonalization of a Hermitian operator, ascending energies.

    Refuses dimensions above `cap` (exit-code-3 territory in the CLI); use
    the sector route for larger chains.
    """
    if not op.hermitian:
        raise ConfigError("diagonalize expects a Hermitian operator")
    if op.dim > cap:
        raise CapExceeded(f"dense diagonalization of dim {op.dim} exceeds cap {cap}")
    dense = op.dense()
    if want_vectors:
        w, v = sla.eigh(dense, overwrite_a=True, driver="evd")
        return Spectrum(energies=w, eigenvectors=v)
    w = sla.eigvalsh(dense, overwrite_a=True)
    return Spectrum(energies=w)


# ============================================================
# symmetry sectors
# ============================================================


@dataclass
class SectorBasis:
    """Orthonormal real basis of one symmetry block, as sparse columns."""

    label: SectorLabel
    columns: sp.csc_matrix
    length: int

    @property
    def dim(self):
        return self.columns.shape[1]


def _orbit_table(length):
    """Representative, period, and member order of every translation orbit."""
    dim = hilbert_dim(length)
    tmap = translate_indices(length)
    idx = np.arange(dim, dtype=np.int64)
    rep = idx.copy()
    period = np.zeros(dim, dtype=np.int64)
    cur = idx.copy()
    for r in range(1, length + 1):
        cur = tmap[cur]
        np.minimum(rep, cur, out=rep)
        newly = (cur == idx) & (period == 0)
        period[newly] = r
    reps = np.flatnonzero(rep == idx)
    return tmap, rep, period, reps


def _momentum_columns(length, tmap, reps, periods, kappa):
    """Sparse momentum-sector columns for one kappa (complex convention
    folded to real): kappa in {0, L/2} gives one real column per allowed
    orbit, other kappa give the cos and the sin column of the +-k pair."""
    allowed = (kappa * periods) % length == 0
    reps = reps[allowed]
    periods = periods[allowed]
    n = reps.size
    special = kappa == 0 or 2 * kappa == length
    rows, cols, vals = [], [], []
    cur = reps.copy()
    k = 2.0 * np.pi * kappa / length
    for j in range(length):
        live = periods > j
        if not live.any():
            break
        r = cur[live]
        if special:
            phase = np.cos(k * j)  # +-1 exactly for kappa in {0, L/2}
            rows.append(r)
            cols.append(np.flatnonzero(live))
            vals.append(np.full(r.size, phase) / np.sqrt(periods[live]))
        else:
            base = np.sqrt(2.0 / periods[live])
            rows.append(r)
            cols.append(2 * np.flatnonzero(live))
            vals.append(np.cos(k * j) * base)
            rows.append(r)
            cols.append(2 * np.flatnonzero(live) + 1)
            vals.append(np.sin(k * j) * base)
        cur = tmap[cur]
    ncols = n if special else 2 * n
    mat = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(hilbert_dim(length), ncols),
    )
    return mat


def _split_by_permutation(basis_cols, perm):
    """Split an orthonormal real basis under an involutive permutation U.

    Requires U to map basis columns onto each other up to sign, which holds
    for reflection and spin flip inside the kappa in {0, pi} sectors. Returns
    (columns_plus, columns_minus).
    """
    b = basis_cols.tocsc()
    ub = b[perm, :]
    m = (b.T @ ub).tocsc()
    d = b.shape[1]
    # m must be a signed permutation matrix; anything else is a logic error.
    if m.nnz != d or np.abs(np.abs(m.data) - 1.0).max() > 1e-10:
        raise AssertionError("sector basis is not closed under the symmetry")
    partner = np.full(d, -1, dtype=np.int64)
    sign = np.zeros(d)
    mc = m.tocoo()
    partner[mc.col] = mc.row
    sign[mc.col] = mc.data
    inv_sq2 = 1.0 / np.sqrt(2.0)
    comb_plus_i, comb_plus_j, comb_plus_v = [], [], []
    comb_minus_i, comb_minus_j, comb_minus_v = [], [], []
    seen = np.zeros(d, dtype=bool)
    np_plus = np_minus = 0
    for i in range(d):
        if seen[i]:
            continue
        j = partner[i]
        s = round(float(sign[i]))
        seen[i] = True
        if j == i:
            if s > 0:
                comb_plus_i.append(i)
                comb_plus_j.append(np_plus)
                comb_plus_v.append(1.0)
                np_plus += 1
            else:
                comb_minus_i.append(i)
                comb_minus_j.append(np_minus)
                comb_minus_v.append(1.0)
                np_minus += 1
        else:
            seen[j] = True
            comb_plus_i += [i, j]
            comb_plus_j += [np_plus, np_plus]
            comb_plus_v += [inv_sq2, s * inv_sq2]
            np_plus += 1
            comb_minus_i += [i, j]
            comb_minus_j += [np_minus, np_minus]
            comb_minus_v += [inv_sq2, -s * inv_sq2]
            np_minus += 1
    cp = sp.csc_matrix(
        (comb_plus_v, (comb_plus_i, comb_plus_j)), shape=(d, np_plus)
    )
    cm = sp.csc_matrix(
        (comb_minus_v, (comb_minus_i, comb_minus_j)), shape=(d, np_minus)
    )
    return (b @ cp).tocsc(), (b @ cm).tocsc()


def sector_decompose(spec, split_reflection=True, split_zflip=False):
    """Symmetry blocks of a chain spec as a list of SectorBasis.

    Always splits by quasimomentum; kappa = 0 and (even L) kappa = L/2 are
    further split by reflection parity when requested. split_zflip adds the
    global m -> -m parity inside those blocks and is only legal for models
    whose Hamiltonian commutes with it (no longitudinal field).
    """
    L = spec.length
    if split_zflip:
        if spec.model != "long_range_ising" and spec.coupling("h_z", 0.0) != 0.0:
            raise ConfigError("spin-flip parity needs a model without h_z")
    dim = hilbert_dim(L)
    tmap, rep, period, reps = _orbit_table(L)
    periods = period[reps]
    pmap = reflect_indices(L)
    xmap = spinflip_indices(L)
    out = []
    special = [0] + ([L // 2] if L % 2 == 0 else [])
    top = L // 2 if L % 2 == 0 else (L - 1) // 2
    for kappa in range(0, top + 1):
        cols = _momentum_columns(L, tmap, reps, periods, kappa)
        if kappa in special:
            if split_reflection:
                plus, minus = _split_by_permutation(cols, pmap)
                for p, bc in ((1, plus), (-1, minus)):
                    if split_zflip:
                        zp, zm = _split_by_permutation(bc, xmap)
                        for z, bz in ((1, zp), (-1, zm)):
                            if bz.shape[1]:
                                out.append(SectorBasis(
                                    SectorLabel(kappa, p, z), bz, L))
                    elif bc.shape[1]:
                        out.append(SectorBasis(SectorLabel(kappa, p), bc, L))
            else:
                out.append(SectorBasis(SectorLabel(kappa), cols, L))
        else:
            label = SectorLabel((kappa, L - kappa))
            out.append(SectorBasis(label, cols, L))
    total = sum(b.dim for b in out)
    if total != dim:
        raise AssertionError(f"sector dims sum to {total}, expected {dim}")
    return out


def project_operator(op, basis_a, basis_b=None):
    """Sparse projected block B_a^T O B_b (B_a^T O B_a when b omitted)."""
    bb = basis_a if basis_b is None else basis_b
    m = op.matrix
    right = m @ bb.columns
    return (basis_a.columns.T @ right).tocsr()


def diagonalize_sector(op, basis, want_vectors=True, dtype=np.float64):
    """Eigen-decompose one symmetry block. Vectors are in sector coordinates.

    dtype float32 halves memory and time for the big L = 10 blocks; energies
    are always returned as float64.
    """
    blk = project_operator(op, basis)
    dense = np.asarray(blk.todense(), dtype=dtype)
    herm_err = np.abs(dense - dense.T).max()
    if herm_err > 1e-10 * max(np.abs(dense).max(), 1e-300):
        raise ConfigError(f"projected block not symmetric ({herm_err:.2e})")
    dense = 0.5 * (dense + dense.T)
    if want_vectors:
        w, v = sla.eigh(dense, overwrite_a=True, driver="evd")
        return Spectrum(np.asarray(w, dtype=np.float64), v, basis.label)
    w = sla.eigvalsh(dense, overwrite_a=True)
    return Spectrum(np.asarray(w, dtype=np.float64), None, basis.label)


def eigen_blocks(op, spec=None, via="dense", want_vectors=True,
                 dtype=np.float64, cap=DENSE_CAP_DEFAULT):
    """Full-spectrum decomposition as [(SectorBasis | None, Spectrum), ...].

    via="dense" wraps plain diagonalize; via="sectors" builds translation
    blocks (reflection split off, so blocks stay simple) and diagonalizes
    each one.
    """
    if via == "dense":
        return [(None, diagonalize(op, want_vectors=want_vectors, cap=cap))]
    if via != "sectors":
        raise ConfigError(f"unknown route {via!r}")
    if spec is None:
        raise ConfigError("sector route needs the chain spec")
    bases = sector_decompose(spec, split_reflection=False)
    return [
        (b, diagonalize_sector(op, b, want_vectors=want_vectors, dtype=dtype))
        for b in bases
    ]


def all_energies(blocks):
    return np.sort(np.concatenate([s.energies for _, s in blocks]))


# ============================================================
# diagonal matrix elements
# ============================================================


@dataclass
class DiagonalProfile:
    """Raw O_ii against E_i plus the running-mean smoothed profile."""

    energies: np.ndarray
    diagonals: np.ndarray
    smoothed_energies: np.ndarray
    smoothed: np.ndarray
    window: int


def diagonal_matrix_elements(blocks, op):
    """(E_i, O_ii) over the whole spectrum, sorted by energy."""
    es, ds = [], []
    for basis, spectrum in blocks:
        if spectrum.eigenvectors is None:
            raise ConfigError("diagonal elements need eigenvectors")
        v = spectrum.eigenvectors
        if basis is None:
            ov = op.matrix @ v
        else:
            ov = project_operator(op, basis) @ v
        diag = np.einsum("ij,ij->j", np.conjugate(v), ov).real
        es.append(spectrum.energies)
        ds.append(diag)
    e = np.concatenate(es)
    d = np.concatenate(ds)
    order = np.argsort(e, kind="stable")
    return e[order], d[order]


def diagonal_profile(blocks, op, window=27):
    """Moving-average ETH profile of diagonal matrix elements.

    The window must be odd; smoothing keeps full windows only, so the
    smoothed arrays are shorter than the raw ones by window - 1 entries.
    """
    if window % 2 == 0 or window < 1:
        raise ConfigError("smoothing window must be odd and positive")
    e, d = diagonal_matrix_elements(blocks, op)
    if e.size < window:
        raise ConfigError("fewer states than the smoothing window")
    kern = np.full(window, 1.0 / window)
    sm = np.convolve(d, kern, mode="valid")
    se = np.convolve(e, kern, mode="valid")
    return DiagonalProfile(e, d, se, sm, window)


def diagonal_ensemble_variance(blocks, op, beta=0.0):
    """Infinite-time plateau sum_i w_i O_ii^2 / Z - (sum_i w_i O_ii / Z)^2."""
    e, d = diagonal_matrix_elements(blocks, op)
    w = np.exp(-beta * (e - e.min())) if beta != 0.0 else np.ones_like(e)
    z = w.sum()
    mean = float(w @ d) / z
    second = float(w @ (d * d)) / z
    return second - mean * mean


# ============================================================
# pair (off-diagonal) statistics
# ============================================================


@dataclass
class FrequencyProfile:
    """|f(omega)|^2-style profile on disjoint bins of width bin_width."""

    omega: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    bin_width: float
    beta: float
    kind: str = "ed_binned"

    def populated(self):
        keep = self.counts > 0
        return self.omega[keep], self.values[keep]


def _block_vectors(spectrum):
    if spectrum.eigenvectors is None:
        raise ConfigError("pair statistics need eigenvectors")
    return spectrum.eigenvectors


def _pair_histogram(blocks, op, accumulate):
    """Drive `accumulate(ia, ib, w2, e_a, e_b)` over all unordered block pairs.

    w2 is the dense |O_ab|^2 matrix between the two eigenbases; the caller
    handles both pair orientations and masks the i == j diagonal.
    """
    nblocks = len(blocks)
    for (ia, ib) in combinations_with_replacement(range(nblocks), 2):
        basis_a, spec_a = blocks[ia]
        basis_b, spec_b = blocks[ib]
        va = _block_vectors(spec_a)
        vb = _block_vectors(spec_b)
        if basis_a is None and basis_b is None:
            mab = op.matrix
        else:
            mab = (basis_a.columns.T @ (op.matrix @ basis_b.columns)).tocsr()
        tmp = mab @ vb
        if np.iscomplexobj(va) or np.iscomplexobj(tmp):
            block = np.conjugate(va.T) @ tmp
        else:
            block = va.T.astype(tmp.dtype, copy=False) @ tmp
        w2 = np.abs(block) ** 2
        del block, tmp
        accumulate(ia, ib, w2, spec_a.energies, spec_b.energies)
        del w2


def default_bin_width(blocks, length):
    e = all_energies(blocks)
    return 0.025 * float(e[-1] - e[0]) / length


def f2_binned(blocks, op, length, beta=0.0, bin_width=None):
    """Binned off-diagonal weight per unit frequency.

    value(bin) = (1/Z_beta) sum_{i != j in bin} e^{-beta (E_i+E_j)/2}
                 |O_ij|^2 / bin_width

    over disjoint bins centered on integer multiples of bin_width, covering
    the full attainable frequency range symmetrically. Empty bins stay in
    the output with count 0.

    Inside an exactly degenerate multiplet (the +-k doublets of the real
    momentum-pair blocks, for instance) the split of weight between the
    excluded diagonal and the omega = 0 bin depends on the arbitrary basis
    rotation within the multiplet, so the zero bin is gauge dependent at
    O(n_deg / D). Every bin at omega != 0 is rotation invariant, as is the
    autocorrelator that sums diagonal and zero-bin weight back together.
    """
    if bin_width is None:
        bin_width = default_bin_width(blocks, length)
    energies = all_energies(blocks)
    span = float(energies[-1] - energies[0])
    eref = float(energies.min())
    n_half = int(np.ceil(span / bin_width)) + 1
    nbins = 2 * n_half + 1
    values = np.zeros(nbins)
    counts = np.zeros(nbins, dtype=np.int64)
    # Z with energies shifted by E_min; the same shift cancels in the
    # symmetric pair weight, keeping exponentials tame at large beta.
    zbeta = float(np.exp(-beta * (energies - eref)).sum())

    def accumulate(ia, ib, w2, ea, eb):
        wa = np.exp(-0.5 * beta * (ea - eref)) if beta != 0.0 else None
        wb = np.exp(-0.5 * beta * (eb - eref)) if beta != 0.0 else None
        chunk = max(1, int(2e7) // max(eb.size, 1))
        for lo in range(0, ea.size, chunk):
            hi = min(lo + chunk, ea.size)
            om = ea[lo:hi, None] - eb[None, :]
            idx = np.rint(om / bin_width).astype(np.int64) + n_half
            w = w2[lo:hi].astype(np.float64, copy=True)
            if beta != 0.0:
                w *= wa[lo:hi, None]
                w *= wb[None, :]
            ones = np.ones(w.shape, dtype=np.float64)
            if ia == ib:
                rows = np.arange(lo, hi)
                w[rows - lo, rows] = 0.0
                ones[rows - lo, rows] = 0.0
            flat = idx.ravel()
            values[:] += np.bincount(flat, weights=w.ravel(),
                                     minlength=nbins)
            counts[:] += np.bincount(
                flat, weights=ones.ravel(), minlength=nbins
            ).astype(np.int64)
            if ia != ib:
                mirror = (2 * n_half - idx).ravel()
                values[:] += np.bincount(mirror, weights=w.ravel(),
                                         minlength=nbins)
                counts[:] += np.bincount(
                    mirror, weights=ones.ravel(), minlength=nbins
                ).astype(np.int64)

    _pair_histogram(blocks, op, accumulate)
    omega = (np.arange(nbins) - n_half) * bin_width
    values = values / (zbeta * bin_width)
    return FrequencyProfile(omega, values, counts, bin_width, beta)


# ============================================================
# exact autocorrelator (oracle for the typicality route)
# ============================================================


def _phase_sum(weights, omega_lo, domega, times):
    """sum_b weights_b exp(i omega_b t) for omega_b = omega_lo + b * domega.

    Uses the chirp-z transform when the time grid is uniform, otherwise a
    chunked direct sum.
    """
    from scipy.signal import czt

    times = np.asarray(times, dtype=np.float64)
    nt = times.size
    uniform = False
    if nt >= 2:
        dts = np.diff(times)
        uniform = np.allclose(dts, dts[0], rtol=1e-12, atol=1e-12)
    if uniform and nt >= 2:
        dt = float(times[1] - times[0])
        t0 = float(times[0])
        wts = weights.astype(np.complex128, copy=True)
        if t0 != 0.0:
            nb = weights.size
            wts *= np.exp(1j * (omega_lo + np.arange(nb) * domega) * t0)
        out = czt(wts, m=nt, w=np.exp(1j * domega * dt))
        out *= np.exp(1j * omega_lo * (times - t0))
        return out
    keep = np.flatnonzero(weights != 0.0)
    out = np.zeros(nt, dtype=np.complex128)
    om = omega_lo + keep * domega
    wk = weights[keep]
    chunk = max(1, int(5e6) // max(nt, 1))
    for lo in range(0, om.size, chunk):
        hi = min(lo + chunk, om.size)
        out += wk[lo:hi] @ np.exp(1j * np.outer(om[lo:hi], times))
    return out


def ed_autocorrelator(blocks, op, times, beta=0.0, connected=True,
                      phase_tol=5e-4, max_bins=2**26):
    """Exact C(t) = <O(t) O>_beta from the eigen decomposition.

    Pair frequencies are quantized on a grid fine enough that the phase
    error stays below phase_tol at the largest requested time; the i == j
    plateau terms sit at omega = 0 exactly. With connected=True the
    thermal square <O>_beta^2 is subtracted, matching the typicality
    estimator's convention.
    """
    times = np.asarray(times, dtype=np.float64)
    energies = all_energies(blocks)
    eref = float(energies.min())
    span = float(energies[-1] - energies[0])
    tmax = float(np.abs(times).max()) if times.size else 1.0
    if tmax == 0.0:
        tmax = 1.0
    domega = phase_tol / tmax
    n_half = int(np.ceil(span / domega)) + 1
    if 2 * n_half + 1 > max_bins:
        n_half = (max_bins - 1) // 2
        domega = span / max(n_half - 1, 1)
        warnings.warn("frequency grid clipped; phase error above phase_tol")
    nbins = 2 * n_half + 1
    hist = np.zeros(nbins)
    zbeta = float(np.exp(-beta * (energies - eref)).sum())

    def accumulate(ia, ib, w2, ea, eb):
        wa = np.exp(-beta * (ea - eref))
        wb = np.exp(-beta * (eb - eref))
        chunk = max(1, int(2e7) // max(eb.size, 1))
        for lo in range(0, ea.size, chunk):
            hi = min(lo + chunk, ea.size)
            om = ea[lo:hi, None] - eb[None, :]
            idx = np.rint(om / domega).astype(np.int64) + n_half
            w = w2[lo:hi].astype(np.float64, copy=True)
            flat = idx.ravel()
            hist[:] += np.bincount(flat, weights=(w * wa[lo:hi, None]).ravel(),
                                   minlength=nbins)
            if ia != ib:
                mirror = (2 * n_half - idx).ravel()
                hist[:] += np.bincount(mirror,
                                       weights=(w * wb[None, :]).ravel(),
                                       minlength=nbins)

    _pair_histogram(blocks, op, accumulate)
    omega_lo = -n_half * domega
    c = _phase_sum(hist, omega_lo, domega, times) / zbeta
    if connected:
        e, d = diagonal_matrix_elements(blocks, op)
        w = np.exp(-beta * (e - eref))
        mean = float(w @ d) / zbeta
        c = c - mean * mean
    return c


# ============================================================
# spectral statistics
# ============================================================


def gap_ratio(energies, middle_fraction=0.5):
    """Mean adjacent-gap ratio <min(g_n, g_n+1) / max(g_n, g_n+1)>.

    Restricted to the middle fraction of the sorted spectrum by index.
    Near-degenerate gaps (below 1e-12 of the mean spacing) trigger a
    warning and are dropped; feeding a spectrum with unresolved exact
    symmetries makes the statistic meaningless.
    """
    e = np.sort(np.asarray(energies, dtype=np.float64))
    n = e.size
    if not 0.0 < middle_fraction <= 1.0:
        raise ConfigError("middle_fraction must be in (0, 1]")
    keep = int(round(n * middle_fraction))
    lo = (n - keep) // 2
    window = e[lo:lo + keep]
    g = np.diff(window)
    if g.size < 2:
        raise ConfigError("not enough levels for gap ratios")
    tiny = 1e-12 * max(g.mean(), 1e-300)
    bad = g < tiny
    if bad.any():
        warnings.warn(
            f"{int(bad.sum())} (near-)degenerate gaps dropped; "
            "diagonalize within symmetry sectors first"
        )
    r = np.minimum(g[:-1], g[1:]) / np.maximum(g[:-1], g[1:])
    ok = ~(bad[:-1] | bad[1:])
    r = r[ok]
    if r.size == 0:
        raise ConfigError("no usable gaps after dropping degeneracies")
    return float(r.mean())
