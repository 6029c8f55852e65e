"""Numba kernels for the structured spin-chain matvec.

The Hamiltonians built in this package share one sparsity structure: a
diagonal part (all S^z couplings and longitudinal fields) plus a uniform
transverse-field amplitude connecting trit values v and v+1 at every site.
That makes a matrix-free kernel possible, which is what keeps dynamical
typicality affordable at 3^14 dimensions on a single core.

Every kernel accumulates row by row in a fixed order (diagonal first, then
sites from low to high, down-neighbor before up-neighbor), so results are
bitwise reproducible for a given dtype regardless of how calls are batched.
fastmath stays off for the same reason.
"""

import numba
import numpy as np


@numba.njit(cache=True, fastmath=False)
def chain_apply_block(diag, amp, p3, nsites, x, out):
    """out = H @ x for a block of column vectors x of shape (dim, ncols).

    diag is the precomputed diagonal, amp the uniform transverse amplitude,
    p3[l] = 3**l for l < nsites. x and out must be C-contiguous and distinct.
    """
    dim, ncols = x.shape
    for i in range(dim):
        for c in range(ncols):
            out[i, c] = diag[i] * x[i, c]
        for l in range(nsites):
            p = p3[l]
            v = (i // p) % 3
            if v > 0:
                j = i - p
                for c in range(ncols):
                    out[i, c] += amp * x[j, c]
            if v < 2:
                j = i + p
                for c in range(ncols):
                    out[i, c] += amp * x[j, c]


@numba.njit(cache=True, fastmath=False)
def chebyshev_step_block(diag, amp, p3, nsites, a_inv, shift, prev, cur, acc, coeff):
    """Fused Chebyshev recurrence step on a column block.

    Computes nxt = (2 / a) * (H - shift) @ cur - prev, overwrites prev with
    nxt in place (row i of prev is read exactly at row i, so this is safe),
    and accumulates acc += coeff * nxt. Callers swap prev and cur afterwards.
    One memory pass per order instead of three.
    """
    dim, ncols = cur.shape
    two_ainv = 2.0 * a_inv
    scratch = np.empty(ncols, dtype=cur.dtype)
    for i in range(dim):
        for c in range(ncols):
            scratch[c] = (diag[i] - shift) * cur[i, c]
        for l in range(nsites):
            p = p3[l]
            v = (i // p) % 3
            if v > 0:
                j = i - p
                for c in range(ncols):
                    scratch[c] += amp * cur[j, c]
            if v < 2:
                j = i + p
                for c in range(ncols):
                    scratch[c] += amp * cur[j, c]
        for c in range(ncols):
            nxt = two_ainv * scratch[c] - prev[i, c]
            prev[i, c] = nxt
            acc[i, c] += coeff * nxt


@numba.njit(cache=True, fastmath=False)
def chain_diag_bonds(values, p3, nsites, bonds, couplings, field, out):
    """Accumulate the diagonal of sum_b J_b m_i m_j + field * sum_l m_l.

    values maps trit -> magnetization (here always [-1., 0., 1.]). bonds is
    an (n_bonds, 2) array of 0-based sites, couplings the matching J_b.
    """
    dim = out.shape[0]
    nb = bonds.shape[0]
    for i in range(dim):
        e = 0.0
        for b in range(nb):
            vi = values[(i // p3[bonds[b, 0]]) % 3]
            vj = values[(i // p3[bonds[b, 1]]) % 3]
            e += couplings[b] * vi * vj
        if field != 0.0:
            for l in range(nsites):
                e += field * values[(i // p3[l]) % 3]
        out[i] = e
