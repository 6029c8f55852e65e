"""Continuum oracle checks against closed forms.

Gaussian initial data under z = 2 kinetics has an exact heat-kernel
answer, |k|^mu factors differentiate it, and the periodic plateau is a
bare counting identity. Decay exponents must land on -(n + mu)/z.
"""

import numpy as np
import pytest

from ethydro.analysis import roi_check
from ethydro.errors import ConfigError, TaskError
from ethydro.hydro import (
    HydroSetup,
    correlator_series,
    decay_exponent,
    evolve_correlator,
    plateau_scaling,
)


def heat_value(x, t, diffusion=1.0, width=1.0):
    a = 0.5 / width**2 + diffusion * t
    return np.exp(-x * x / (4.0 * a)) / (2.0 * np.sqrt(np.pi * a))


# ============================================================
# quadrature against closed forms
# ============================================================


def test_gaussian_heat_kernel_exact():
    setup = HydroSetup(n=1, z=2.0, diffusion=0.7, width=1.3)
    for x, t in [(0.0, 0.0), (0.0, 2.5), (1.7, 0.4), (3.0, 10.0)]:
        got = evolve_correlator(setup, x, t)
        want = heat_value(x, t, 0.7, 1.3)
        assert abs(got - want) <= 1e-8 * abs(want), (x, t)


def test_time_zero_is_initial_data():
    setup = HydroSetup(n=2, z=2.0, diffusion=1.0, width=1.0)
    got = evolve_correlator(setup, 0.8, 0.0)
    want = heat_value(0.8, 0.0) ** 2
    assert abs(got - want) <= 1e-8 * abs(want)


def test_k_squared_weighted_family():
    # |k|^2 initial factor: minus the second x-derivative of the kernel
    setup = HydroSetup(n=1, mu=2.0)
    for x, t in [(0.0, 1.0), (0.9, 3.0)]:
        a = 0.5 + t
        g = np.sqrt(np.pi / a) * np.exp(-x * x / (4 * a)) / (2.0 * np.pi)
        want = g * (0.5 / a - x * x / (4 * a * a))
        got = evolve_correlator(setup, x, t)
        assert abs(got - want) <= 1e-8 * abs(want), (x, t)


def test_k_fourth_weighted_family():
    setup = HydroSetup(n=1, mu=4.0)
    for t in (0.5, 4.0):
        a = 0.5 + t
        want = 3.0 / (8.0 * np.sqrt(np.pi)) * a ** -2.5
        got = evolve_correlator(setup, 0.0, t)
        assert abs(got - want) <= 1e-8 * abs(want)


def test_product_structure_for_higher_orders():
    setup = HydroSetup(n=3, diffusion=0.5, width=0.9)
    got = evolve_correlator(setup, 0.4, 1.2)
    want = heat_value(0.4, 1.2, 0.5, 0.9) ** 3
    assert abs(got - want) <= 1e-8 * abs(want)


def test_semigroup_in_x_space():
    # evolving pre-evolved initial data equals a single longer evolution
    t1, t2 = 3.0, 5.0
    base = HydroSetup(n=1, z=4.0 / 3.0, diffusion=0.7)

    def half_evolved(k):
        return np.exp(-0.5 * k * k) * np.exp(
            -0.7 * np.abs(k) ** (4.0 / 3.0) * t1
        )

    staged = HydroSetup(n=1, z=4.0 / 3.0, diffusion=0.7,
                        profile=half_evolved)
    a = evolve_correlator(staged, 0.3, t2)
    b = evolve_correlator(base, 0.3, t1 + t2)
    assert abs(a - b) <= 1e-8 * abs(b)


def test_monotone_relaxation_at_origin():
    for mu in (0.0, 2.0):
        setup = HydroSetup(n=2, mu=mu)
        vals = correlator_series(setup, 0.0, np.linspace(0.0, 40.0, 60))
        assert np.all(np.diff(vals) <= 1e-12 * vals[0])


# ============================================================
# decay exponents
# ============================================================


def test_decay_exponent_single_diffusive():
    fit = decay_exponent(HydroSetup(n=1))
    assert abs(fit.exponent + 0.5) <= 0.01


def test_decay_exponent_gradient_and_time_derivative_data():
    fit = decay_exponent(HydroSetup(n=1, mu=2.0))
    assert abs(fit.exponent + 1.5) <= 0.02
    fit = decay_exponent(HydroSetup(n=1, mu=4.0))
    assert abs(fit.exponent + 2.5) <= 0.02


def test_decay_exponent_higher_orders():
    assert abs(decay_exponent(HydroSetup(n=2)).exponent + 1.0) <= 0.01
    assert abs(decay_exponent(HydroSetup(n=3)).exponent + 1.5) <= 0.01


def test_decay_exponent_fractional_kinetics():
    fit = decay_exponent(HydroSetup(n=1, z=4.0 / 3.0),
                         t_window=(100.0, 5000.0))
    assert abs(fit.exponent + 0.75) <= 0.01
    fit = decay_exponent(HydroSetup(n=1, z=3.0), t_window=(1e3, 1e5))
    assert abs(fit.exponent + 1.0 / 3.0) <= 0.01


def test_decay_warns_in_preasymptotic_window():
    with pytest.warns(UserWarning, match="drift"):
        decay_exponent(HydroSetup(n=1), t_window=(0.01, 1.0))


def test_inequality_saturation_against_oracle():
    # mu = 0 saturates nu = n d / z; k-weighted data relaxes faster and
    # pairs with an infinite overlap order, leaving the bound slack
    for n in (1, 2):
        fit = decay_exponent(HydroSetup(n=n))
        verdict = roi_check(fit, m=n, d=1, z=2.0)
        assert verdict.satisfied and verdict.saturated
    fit = decay_exponent(HydroSetup(n=1, mu=4.0))
    verdict = roi_check(fit, m=np.inf, d=1, z=2.0)
    assert verdict.satisfied and not verdict.saturated


# ============================================================
# periodic volumes and plateaus
# ============================================================


def test_periodic_late_time_plateau():
    setup = HydroSetup(n=2, volume=10.0)
    exact = evolve_correlator(setup, 0.0, np.inf)
    assert abs(exact - 1.0 / 100.0) <= 1e-12
    late = evolve_correlator(setup, 0.0, 1e5)
    assert abs(late - exact) <= 1e-12


def test_plateau_scaling_counting_identity():
    fit = plateau_scaling(HydroSetup(n=2), sizes=(8.0, 16.0, 32.0, 64.0))
    assert abs(fit.exponent + 2.0) <= 0.01


def test_plateau_scaling_is_z_independent():
    fit = plateau_scaling(HydroSetup(n=1, z=4.0 / 3.0),
                          sizes=(8.0, 16.0, 32.0))
    assert abs(fit.exponent + 1.0) <= 0.01


def test_plateau_vanishes_for_k_weighted_data():
    fit = plateau_scaling(HydroSetup(n=1, mu=2.0), sizes=(8.0, 16.0, 32.0))
    assert fit.below_noise_floor
    assert "vanishes" in fit.note


def test_grid_initial_data_matches_family():
    k = np.linspace(-12.0, 12.0, 4001)
    gridded = HydroSetup(n=1, profile=(k, np.exp(-0.5 * k * k)))
    family = HydroSetup(n=1)
    a = evolve_correlator(gridded, 0.5, 2.0)
    b = evolve_correlator(family, 0.5, 2.0)
    assert abs(a - b) <= 1e-5 * abs(b)  # interpolation-limited


# ============================================================
# validation
# ============================================================


def test_setup_validation():
    with pytest.raises(ConfigError):
        HydroSetup(n=0)
    with pytest.raises(ConfigError):
        HydroSetup(d=2)
    with pytest.raises(ConfigError):
        HydroSetup(z=0.0)
    with pytest.raises(ConfigError):
        HydroSetup(diffusion=-1.0)
    with pytest.raises(ConfigError):
        HydroSetup(mu=-0.5)
    with pytest.raises(ConfigError):
        HydroSetup(width=0.0)
    with pytest.raises(ConfigError):
        HydroSetup(volume=-3.0)


def test_evolve_validation():
    setup = HydroSetup(n=1)
    with pytest.raises(ConfigError):
        evolve_correlator(setup, 0.0, -1.0)
    assert evolve_correlator(setup, 0.0, np.inf) == 0.0
    with pytest.raises(ConfigError):
        decay_exponent(HydroSetup(n=1, volume=10.0))
    with pytest.raises(ConfigError):
        plateau_scaling(setup, sizes=(8.0, 16.0))


def test_quadrature_cap_raises():
    # an enormous x makes the phase unresolvable at any allowed node count
    with pytest.raises(TaskError):
        evolve_correlator(HydroSetup(n=1), 1e9, 1.0)
