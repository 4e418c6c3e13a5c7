import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from noxdwc import thermo
from noxdwc.errors import PropertyRangeError, RichMixtureError, SaturationError

LHV, M_FUEL = 42.64e6, 0.19065

# Standard-table (JANAF) heat capacities, J/(mol K). The shipped NASA-7 fits
# differ from these by up to 1.1% (H2O at 2000 K), hence the 1.5% band.
JANAF = {
    ("CO2", 300): 37.221, ("CO2", 1000): 54.308, ("CO2", 2000): 60.350,
    ("H2O", 300): 33.596, ("H2O", 1000): 41.268, ("H2O", 2000): 51.180,
    ("N2", 300): 29.125, ("N2", 1000): 32.697, ("N2", 2000): 36.011,
    ("O2", 300): 29.385, ("O2", 1000): 34.870, ("O2", 2000): 37.741,
}

temps = st.floats(300.0, 3500.0)
species = st.sampled_from(thermo.SPECIES)


def quad_enthalpy(sp, t1, t2):
    pts = [1000.0] if min(t1, t2) < 1000.0 < max(t1, t2) else None
    val, _ = quad(lambda t: thermo.cp_molar(sp, t), t1, t2, epsabs=0, epsrel=1e-12, limit=200, points=pts)
    return val


@pytest.mark.parametrize("key", sorted(JANAF))
def test_cp_matches_standard_tables(key):
    sp, T = key
    assert thermo.cp_molar(sp, T) == pytest.approx(JANAF[key], rel=0.015)


def test_n2_cp_at_300():
    assert abs(thermo.cp_molar("N2", 300.0) - 29.1) <= 0.3


@pytest.mark.parametrize("T", [299.9, 3600.0, float("nan")])
def test_cp_out_of_range(T):
    with pytest.raises(PropertyRangeError):
        thermo.cp_molar("CO2", T)


def test_co2_cp_monotone_to_2000():
    T = np.linspace(300, 2000, 2000)
    assert np.all(np.diff(thermo.cp_molar("CO2", T)) > 0)


@pytest.mark.parametrize("sp", thermo.SPECIES)
def test_segments_continuous(sp):
    th = thermo.load_property_table()[sp]
    for edge in th.breaks[1:-1]:
        assert abs(th.cp(edge - 1e-9) - th.cp(edge + 1e-9)) < 0.5


@given(species, temps)
def test_cp_positive(sp, T):
    assert thermo.cp_molar(sp, T) > 0


def test_enthalpy_zero_width():
    assert thermo.enthalpy_integral("N2", 812.5, 812.5) == 0.0


def test_enthalpy_matches_quadrature():
    assert thermo.enthalpy_integral("N2", 300, 600) == pytest.approx(quad_enthalpy("N2", 300, 600), rel=1e-6)


@pytest.mark.parametrize("sp", thermo.SPECIES)
def test_enthalpy_across_break_matches_quadrature(sp):
    assert thermo.enthalpy_integral(sp, 450, 3100) == pytest.approx(quad_enthalpy(sp, 450, 3100), rel=1e-9)


def test_enthalpy_additive_example():
    lhs = thermo.enthalpy_integral("N2", 300, 600) + thermo.enthalpy_integral("N2", 600, 900)
    assert lhs == pytest.approx(thermo.enthalpy_integral("N2", 300, 900), rel=1e-9)


@given(species, temps, temps, temps)
def test_enthalpy_additive_and_antisymmetric(sp, a, b, c):
    ab, bc, ac = (thermo.enthalpy_integral(sp, x, y) for x, y in ((a, b), (b, c), (a, c)))
    scale = max(abs(ab), abs(bc), abs(ac), 1.0)
    assert abs(ab + bc - ac) <= 1e-9 * scale
    assert abs(ab + thermo.enthalpy_integral(sp, b, a)) <= 1e-9 * scale


def test_product_moles_stoichiometric():
    n = thermo.product_moles(1.0)
    assert (n.n_CO2, n.n_H2O, n.n_O2) == (13.88, 12.03, 0.0)
    assert n.n_N2 == pytest.approx(74.85, abs=0.02)


def test_product_moles_lean():
    assert thermo.product_moles(0.9).n_O2 == pytest.approx(19.895 * (1 / 0.9 - 1), rel=1e-12)
    assert thermo.product_moles(0.9).n_O2 == pytest.approx(2.211, abs=1e-3)


def test_product_moles_rich():
    with pytest.raises(RichMixtureError):
        thermo.product_moles(1.2)


@given(st.floats(0.01, 1.0))
def test_product_moles_non_negative(phi):
    n = thermo.product_moles(phi)
    assert min(n.n_CO2, n.n_H2O, n.n_N2, n.n_O2) >= 0


def test_peak_temperature():
    assert thermo.peak_compression_temperature(300.0, 17.0, 1.35) == pytest.approx(300 * 17**0.35, rel=1e-15)
    assert thermo.peak_compression_temperature(300.0, 17.0, 1.35) == pytest.approx(810, abs=2)
    assert thermo.peak_compression_temperature(311.0, 1.0, 1.35) == 311.0
    assert thermo.peak_compression_temperature(600.0, 17.0, 1.35) == 2 * thermo.peak_compression_temperature(300.0, 17.0, 1.35)


def test_flame_temperature_reference_case():
    # frozen from scipy quad + brentq on the same property table
    tp = 300 * 17**0.35
    T = thermo.adiabatic_flame_temperature(tp, thermo.product_moles(0.9), LHV, M_FUEL)
    assert 2300 <= T <= 2900
    assert T == pytest.approx(2658.4477223276826, rel=1e-9)


def test_flame_temperature_against_live_oracle():
    n = thermo.product_moles(0.75)
    tp = 700.0

    def balance(T):
        return sum(m * quad_enthalpy(sp, tp, T) for sp, m in n.as_dict().items()) - LHV * M_FUEL

    oracle = brentq(balance, tp, 3500, xtol=1e-10)
    assert thermo.adiabatic_flame_temperature(tp, n, LHV, M_FUEL) == pytest.approx(oracle, abs=1e-6)


def test_zero_heat_returns_t_peak():
    assert thermo.adiabatic_flame_temperature(812.25, thermo.product_moles(0.9), 0.0, M_FUEL) == 812.25


def test_saturation():
    with pytest.raises(SaturationError) as exc:
        thermo.adiabatic_flame_temperature(1500.0, thermo.product_moles(1.0), 80e6, M_FUEL)
    assert exc.value.edge == thermo.T_MAX


def test_scalar_and_array_calls_agree_bitwise():
    n = thermo.product_moles(0.9)
    tp = np.array([320.0, 808.0, 1100.0])
    arr = thermo.adiabatic_flame_temperature(tp, n, LHV, M_FUEL)
    for t, expected in zip(tp, arr):
        assert thermo.adiabatic_flame_temperature(float(t), n, LHV, M_FUEL) == expected


@given(st.floats(500, 1000), st.floats(0.3, 1.0), st.floats(20e6, 45e6), st.floats(1.01, 1.3))
def test_flame_temperature_monotone(tp, phi, lhv, k):
    n = thermo.product_moles(phi)
    base = thermo.adiabatic_flame_temperature(tp, n, lhv, M_FUEL)
    assert thermo.adiabatic_flame_temperature(tp, n, lhv * k, M_FUEL) > base
    more = thermo.ProductMoles(n.n_CO2, n.n_H2O, n.n_N2 * k, n.n_O2)
    assert thermo.adiabatic_flame_temperature(tp, more, lhv, M_FUEL) < base


def test_property_table_parse_errors():
    with pytest.raises(ValueError):
        thermo.parse_property_table("version 2\n")
    with pytest.raises(ValueError):
        thermo.parse_property_table("species N2\nsegment 300 1000 1 2 3 4 5\n")
    text = "gas_constant 8.314\nspecies X\nsegment 300 1000 3.5 0 0 0 0\nsegment 1100 2000 3.5 0 0 0 0\n"
    with pytest.raises(ValueError, match="tile"):
        thermo.parse_property_table(text)


def test_constant_cp_table_enthalpy_is_linear():
    table = thermo.parse_property_table("gas_constant 8.0\nspecies X\nsegment 300 1000 3.5 0 0 0 0\n")
    th = table["X"]
    assert math.isclose(float(th.enthalpy(800.0) - th.enthalpy(400.0)), 8.0 * 3.5 * 400.0, rel_tol=1e-14)
