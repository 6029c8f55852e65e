"""Chain builder checks: spin algebra, Hamiltonian trace moments, sparsity,
matrix-free application, and the long-range coupling table."""

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

import ethydro as eh
from ethydro.errors import CapExceeded, ConfigError
from ethydro.lattice import (
    SX,
    SY,
    SZ,
    chain_bonds,
    reflect_indices,
    site_magnetizations,
    spinflip_indices,
    translate_indices,
    trit_powers,
)


# ------------------------------------------------------------
# single-site algebra
# ------------------------------------------------------------


def test_spin_matrices_commutators():
    # [S^a, S^b] = i eps_abc S^c for the spin-1 triple
    assert np.allclose(SX @ SY - SY @ SX, 1j * SZ)
    assert np.allclose(SY @ SZ - SZ @ SY, 1j * SX)
    assert np.allclose(SZ @ SX - SX @ SZ, 1j * SY)


def test_spin_matrices_normalization():
    # Tr(S^a S^b) = 2 delta_ab in this convention
    for a in (SX, SY, SZ):
        for b in (SX, SY, SZ):
            tr = np.trace(a @ b)
            expect = 2.0 if a is b else 0.0
            assert abs(tr - expect) < 1e-14


def test_casimir():
    s2 = SX @ SX + SY @ SY + SZ @ SZ
    assert np.allclose(s2, 2.0 * np.eye(3))


# ------------------------------------------------------------
# basis indexing
# ------------------------------------------------------------


def test_hilbert_dim():
    assert eh.hilbert_dim(1) == 3
    assert eh.hilbert_dim(5) == 243
    with pytest.raises(ConfigError):
        eh.hilbert_dim(0)
    with pytest.raises(CapExceeded):
        eh.hilbert_dim(40)


def test_site_magnetizations_order():
    # site 1 is the fastest trit: magnetizations cycle -1, 0, +1
    m1 = site_magnetizations(2, 1)
    m2 = site_magnetizations(2, 2)
    assert list(m1[:4]) == [-1, 0, 1, -1]
    assert list(m2[:4]) == [-1, -1, -1, 0]


@given(st.integers(min_value=1, max_value=7), st.data())
@settings(max_examples=40, deadline=None)
def test_translation_is_cyclic(length, data):
    tmap = translate_indices(length)
    i = data.draw(st.integers(min_value=0, max_value=3**length - 1))
    cur = i
    for _ in range(length):
        cur = tmap[cur]
    assert cur == i


@given(st.integers(min_value=1, max_value=7), st.data())
@settings(max_examples=40, deadline=None)
def test_reflection_and_flip_are_involutions(length, data):
    pmap = reflect_indices(length)
    xmap = spinflip_indices(length)
    i = data.draw(st.integers(min_value=0, max_value=3**length - 1))
    assert pmap[pmap[i]] == i
    assert xmap[xmap[i]] == i
    # spin flip negates every site magnetization
    for site in range(1, length + 1):
        m = site_magnetizations(length, site)
        assert m[xmap[i]] == -m[i]


def test_translation_moves_site_content():
    L = 4
    tmap = translate_indices(L)
    for i in (0, 5, 17, 80):
        j = tmap[i]
        for site in range(1, L + 1):
            src = site_magnetizations(L, site)[i]
            dst_site = site % L + 1
            assert site_magnetizations(L, dst_site)[j] == src


# ------------------------------------------------------------
# Hamiltonians
# ------------------------------------------------------------


def test_tilted_preset_parameters():
    spec = eh.preset_spec("tilted-ising-paper", 6)
    assert spec.coupling("J") == 0.707
    assert spec.coupling("h_x") == 1.1
    assert spec.coupling("h_z") == 0.9
    spec = eh.preset_spec("long-range-ising-paper", 6)
    assert spec.coupling("J") == 2.0
    assert spec.coupling("h_x") == 1.1
    assert spec.coupling("alpha") == 1.5


@pytest.mark.parametrize("length", [3, 4, 5])
def test_tilted_trace_moments(length):
    # Tr H = 0 and Tr H^2 / (D L) = (2/3)(h_x^2 + h_z^2) + (4/9) J^2,
    # from Tr S^a = 0, Tr (S^a)^2 = 2 on each site.
    spec = eh.preset_spec("tilted-ising-paper", length)
    h = eh.build_hamiltonian(spec).dense()
    d = 3**length
    assert abs(np.trace(h)) < 1e-10 * d
    second = np.sum(h * h) / (d * length)
    expect = (2.0 / 3.0) * (1.1**2 + 0.9**2) + (4.0 / 9.0) * 0.707**2
    assert abs(expect - 1.568822) < 5e-7  # fixed reference of the preset
    assert abs(second - expect) < 1e-12


@pytest.mark.parametrize("length", [4, 5])
def test_long_range_trace_moments(length):
    # Tr H^2 / (D L) = (2/3) h_x^2 + (2/9) J^2 / N_alpha^4
    spec = eh.preset_spec("long-range-ising-paper", length)
    h = eh.build_hamiltonian(spec).dense()
    d = 3**length
    kac = eh.kac_normalization(length, 1.5)
    expect = (2.0 / 3.0) * 1.1**2 + (2.0 / 9.0) * 2.0**2 / kac**4
    second = np.sum(h * h) / (d * length)
    assert abs(np.trace(h)) < 1e-10 * d
    assert abs(second - expect) < 1e-12


def test_kac_normalization_value():
    # L = 4, alpha = 1.5: distances from site 1 are 1, 2, 1, so
    # N = (1 + 2^-3 + 1)^(-1/2) = (17/8)^(-1/2)
    assert abs(eh.kac_normalization(4, 1.5) - (17.0 / 8.0) ** -0.5) < 1e-14
    assert abs(eh.kac_normalization(4, 1.5) - 0.68599434) < 1e-8


def test_long_range_alpha_limit_is_nearest_neighbor():
    # alpha -> infinity: only r = 1 couplings survive, strength J / N_alpha
    L = 5
    spec = eh.make_spec("long_range_ising", L, J=2.0, h_x=1.1, alpha=50.0)
    h = eh.build_hamiltonian(spec).dense()
    kac = eh.kac_normalization(L, 50.0)
    nn = eh.make_spec("tilted_ising", L, J=2.0 / kac, h_x=1.1, h_z=0.0)
    ref = eh.build_hamiltonian(nn).dense()
    assert np.abs(h - ref).max() < 1e-8


def test_bond_tables():
    spec = eh.preset_spec("tilted-ising-paper", 5)
    bonds, coups = chain_bonds(spec)
    assert len(bonds) == 5
    assert np.allclose(coups, 0.707)
    spec = eh.preset_spec("long-range-ising-paper", 5)
    bonds, coups = chain_bonds(spec)
    assert len(bonds) == 10  # all pairs i < j
    kac = eh.kac_normalization(5, 1.5)
    r = np.array([min(j - i, 5 - (j - i)) for i, j in bonds])
    assert np.allclose(coups, 2.0 / (kac * r**1.5))


def test_periodic_two_site_warning():
    with pytest.warns(UserWarning, match="double-counts"):
        eh.build_hamiltonian(eh.preset_spec("tilted-ising-paper", 2))


def test_hamiltonian_is_real_symmetric():
    for name in ("tilted-ising-paper", "long-range-ising-paper"):
        h = eh.build_hamiltonian(eh.preset_spec(name, 4))
        m = h.dense()
        assert not np.iscomplexobj(m)
        assert np.abs(m - m.T).max() == 0.0


def test_tilted_sparsity_budget():
    for L in (3, 4, 5):
        h = eh.build_hamiltonian(eh.preset_spec("tilted-ising-paper", L))
        assert h.nnz <= (2 * L + 1) * 3**L


def test_translation_invariance():
    # T H T^dagger = H for both periodic models
    for name in ("tilted-ising-paper", "long-range-ising-paper"):
        h = eh.build_hamiltonian(eh.preset_spec(name, 5)).dense()
        t = translate_indices(5)
        assert np.abs(h[np.ix_(t, t)] - h).max() < 1e-12


# ------------------------------------------------------------
# observables
# ------------------------------------------------------------


def test_single_site_observable_trace():
    o = eh.build_observable(2, eh.site_observable("x", 1)).dense()
    assert abs(np.trace(o @ o) / 9.0 - 2.0 / 3.0) < 1e-14


def test_transverse_string_names_and_traces():
    desc = eh.transverse_string(3)
    assert desc.name == "sx1sx2sx3"
    o = eh.build_observable(4, desc).dense()
    # Tr(O^2)/D = (2/3)^n for an n-site string of S^x
    assert abs(np.trace(o @ o) / 81.0 - (2.0 / 3.0) ** 3) < 1e-13


def test_observable_site_placement():
    # S^z on site 2 of a 2-site chain acts on the slower trit
    o = eh.build_observable(2, eh.site_observable("z", 2)).dense()
    expect = np.kron(SZ, np.eye(3))
    assert np.abs(o - expect).max() == 0.0
    o1 = eh.build_observable(2, eh.site_observable("z", 1)).dense()
    assert np.abs(o1 - np.kron(np.eye(3), SZ)).max() == 0.0


def test_repeated_site_factors_multiply():
    desc = eh.ObservableDescriptor(
        name="sz1sz1", factors=((1, "z"), (1, "z")), coefficient=1.0
    )
    o = eh.build_observable(1, desc).dense()
    assert np.allclose(o, SZ @ SZ)


def test_commutator_observable_matches_dense():
    spec = eh.preset_spec("tilted-ising-paper", 3)
    h = eh.build_hamiltonian(spec)
    o = eh.build_observable(3, eh.transverse_string(1))
    c = eh.commutator_observable(h, o)
    ref = 1j * (h.dense() @ o.dense() - o.dense() @ h.dense())
    assert np.abs(c.dense() - ref).max() < 1e-12
    assert c.hermitian


def test_observable_out_of_range_site():
    with pytest.raises(ConfigError):
        eh.build_observable(2, eh.site_observable("x", 3))


# ------------------------------------------------------------
# matrix-free application
# ------------------------------------------------------------


@pytest.mark.parametrize("name", ["tilted-ising-paper", "long-range-ising-paper"])
@pytest.mark.parametrize("length", [2, 4, 6])
def test_apply_matches_dense(name, length):
    rng = np.random.default_rng(7)
    spec = eh.preset_spec(name, length)
    with np.errstate(all="ignore"):
        import warnings as w

        with w.catch_warnings():
            w.simplefilter("ignore")
            h = eh.build_hamiltonian(spec)
    dense = h.dense()
    x = rng.standard_normal((h.dim, 3))
    y = eh.apply(h, x)
    assert np.abs(y - dense @ x).max() < 1e-13 * max(1.0, np.abs(y).max())
    # complex blocks go through the same path
    xc = x + 1j * rng.standard_normal((h.dim, 3))
    yc = eh.apply(h, xc)
    assert np.abs(yc - dense @ xc).max() < 1e-12


def test_apply_rejects_nonfinite():
    h = eh.build_hamiltonian(eh.preset_spec("tilted-ising-paper", 3))
    x = np.zeros((h.dim,))
    x[0] = np.nan
    with pytest.raises(ConfigError):
        eh.apply(h, x)


def test_operator_arithmetic():
    spec = eh.preset_spec("tilted-ising-paper", 3)
    h = eh.build_hamiltonian(spec)
    o = eh.build_observable(3, eh.transverse_string(2))
    s = h + o
    d = h - o
    assert np.abs(s.dense() - (h.dense() + o.dense())).max() < 1e-14
    assert np.abs(d.dense() - (h.dense() - o.dense())).max() < 1e-14
    assert np.abs((h * 2.5).dense() - 2.5 * h.dense()).max() < 1e-14


# ------------------------------------------------------------
# spectral bounds
# ------------------------------------------------------------


@pytest.mark.parametrize("name", ["tilted-ising-paper", "long-range-ising-paper"])
def test_spectral_bounds_contain_spectrum(name):
    spec = eh.preset_spec(name, 5)
    h = eh.build_hamiltonian(spec)
    lo, hi = eh.spectral_bounds(h)
    w = np.linalg.eigvalsh(h.dense())
    assert lo <= w[0] and hi >= w[-1]
    # and not absurdly loose: the 1% widening plus Lanczos slack only
    span = w[-1] - w[0]
    assert lo > w[0] - 0.05 * span
    assert hi < w[-1] + 0.05 * span


def test_spectral_bounds_small_dense_path():
    spec = eh.preset_spec("tilted-ising-paper", 2)
    import warnings as w

    with w.catch_warnings():
        w.simplefilter("ignore")
        h = eh.build_hamiltonian(spec)
    lo, hi = eh.spectral_bounds(h)
    ev = np.linalg.eigvalsh(h.dense())
    assert lo <= ev[0] and hi >= ev[-1]


# ------------------------------------------------------------
# spec hashing
# ------------------------------------------------------------


def test_spec_hash_stability():
    a = eh.make_spec("tilted_ising", 4, J=0.707, h_x=1.1, h_z=0.9)
    b = eh.make_spec("tilted_ising", 4, h_z=0.9, h_x=1.1, J=0.707)
    assert a.hash() == b.hash()
    c = eh.make_spec("tilted_ising", 5, J=0.707, h_x=1.1, h_z=0.9)
    assert a.hash() != c.hash()


def test_make_spec_validation():
    with pytest.raises(ConfigError):
        eh.make_spec("tilted_ising", 4, J=0.707, h_x=1.1)  # missing h_z
    with pytest.raises(ConfigError):
        eh.make_spec("tilted_ising", 4, J=0.707, h_x=1.1, h_z=0.9, bogus=1.0)
    with pytest.raises(ConfigError):
        eh.make_spec("long_range_ising", 4, J=2.0, h_x=1.1, alpha=-0.5)
    with pytest.raises(ConfigError):
        eh.make_spec("nonsense", 4, J=1.0)
