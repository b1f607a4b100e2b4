import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slforce import constitutive as con

E, ETA = 1.0e5, 1.0e5  # default material: relaxation rate E/eta = 1 per second
VISCO = con.MaterialParams(con.Model.MAXWELL, elastic_modulus_pa=E, viscosity_pa_s=ETA)
GRID = np.arange(151) / 30.0  # 5 s at 30 Hz


def lumped(k=40.0, c=0.0):
    return con.MaterialParams(lumped_stiffness_n_per_m=k, lumped_damping_n_s_per_m=c)


def test_kv_constant_strain():
    p = con.MaterialParams(elastic_modulus_pa=E, viscosity_pa_s=ETA)
    assert con.kelvin_voigt_stress(p, lambda t: 0.02, 1.0) == E * 0.02


def test_kv_ramp():
    p = con.MaterialParams(elastic_modulus_pa=E, viscosity_pa_s=ETA)
    r = 0.01
    sigma = con.kelvin_voigt_stress(p, lambda t: r * t, 2.0, strain_rate_fn=lambda t: r)
    assert sigma == E * r * 2.0 + ETA * r


def test_kv_sinusoid_numeric_rate():
    p = con.MaterialParams(elastic_modulus_pa=1.0, viscosity_pa_s=0.5)
    w = 3.0
    for t in np.linspace(0, 2, 9):
        exact = np.sin(w * t) + 0.5 * w * np.cos(w * t)
        assert abs(con.kelvin_voigt_stress(p, lambda s: np.sin(w * s), t, dt=1e-4) - exact) <= 1e-6


def test_default_damping_is_five_percent_of_k():
    assert con.MaterialParams(lumped_stiffness_n_per_m=80.0).c == pytest.approx(4.0)


@pytest.mark.parametrize(
    "kw",
    [dict(elastic_modulus_pa=0.0), dict(viscosity_pa_s=-1.0), dict(lumped_stiffness_n_per_m=0.0),
     dict(lumped_damping_n_s_per_m=-0.1)],
)
def test_material_validation(kw):
    with pytest.raises(ValueError):
        con.MaterialParams(**kw)


def test_elastic_model_needs_no_viscosity():
    con.MaterialParams(con.Model.ELASTIC, viscosity_pa_s=0.0)


def max_rel(a, b):
    return float(np.max(np.abs(a - b) / np.abs(b)))


def test_maxwell_creep_constant_stress():
    s0 = 1000.0
    eps = con.maxwell_evolve(VISCO, GRID, stress_fn=lambda t: s0)
    assert max_rel(eps, s0 / E + s0 * GRID / ETA) <= 1e-6


def test_maxwell_relaxation_constant_strain():
    s0 = 1000.0
    sig = con.maxwell_evolve(VISCO, GRID, strain_fn=lambda t: 0.01, initial=s0)
    assert max_rel(sig, s0 * np.exp(-E * GRID / ETA)) <= 1e-6


def sinusoid_creep_error(n_steps):
    s0, w = 1000.0, 2.0
    t = np.linspace(0.0, 5.0, n_steps + 1)
    eps = con.maxwell_creep(
        VISCO, lambda s: s0 * np.sin(w * s), t, strain0=0.0, stress_rate_fn=lambda s: s0 * w * np.cos(w * s)
    )
    exact = s0 * np.sin(w * t) / E + s0 * (1 - np.cos(w * t)) / (w * ETA)
    return float(np.max(np.abs(eps - exact)))


def test_rk4_fourth_order():
    ratio = sinusoid_creep_error(75) / sinusoid_creep_error(150)
    assert 8.0 <= ratio <= 32.0


def test_maxwell_rejects_bad_grids():
    with pytest.raises(ValueError):
        con.maxwell_evolve(VISCO, np.array([0.0, 0.0, 0.1]), stress_fn=lambda t: 1.0)
    with pytest.raises(ValueError):
        con.maxwell_evolve(VISCO, np.array([0.0]), stress_fn=lambda t: 1.0)
    with pytest.raises(ValueError):
        con.maxwell_evolve(VISCO, GRID)
    with pytest.raises(ValueError):
        con.maxwell_evolve(VISCO, GRID, strain_fn=lambda t: 0.0)


def test_traction_ramp_elastic():
    f = con.traction_force(lumped(40.0, 0.0), 0.01 * GRID, GRID)
    assert np.array_equal(f, 40.0 * (0.01 * GRID))
    assert f[-1] == pytest.approx(2.0, abs=1e-15)


def test_traction_hold():
    f = con.traction_force(lumped(40.0, 0.5), np.full(len(GRID), 0.03), GRID)
    assert np.all(f == 40.0 * 0.03)


def test_traction_ramp_with_damping():
    f = con.traction_force(lumped(40.0, 0.5), 0.01 * GRID, GRID)
    assert np.allclose(f, 0.4 * GRID + 0.005, rtol=0, atol=1e-12)


@given(st.lists(st.floats(0.0, 0.05), min_size=2, max_size=40, unique=True))
def test_traction_monotone_without_damping(xs):
    x = np.sort(np.array(xs))
    f = con.traction_force(lumped(40.0, 0.0), x, np.arange(len(x)) / 30.0)
    assert np.all(np.diff(f) > 0)


@given(st.floats(0.1, 10.0), st.floats(1e-4, 0.05))
def test_damping_work_non_negative(c, amp):
    t = np.arange(301) / 30.0
    x = amp * np.sin(2 * np.pi * t / 10.0)
    p = lumped(40.0, c)
    xdot = con.sampled_derivative(x, t)
    damping = con.traction_force(p, x, t) - p.k * x
    assert np.sum(damping * xdot) / 30.0 >= 0.0


def test_traction_rejects_short_input():
    with pytest.raises(ValueError):
        con.traction_force(lumped(), np.array([0.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        con.traction_force(lumped(), np.zeros(3), np.arange(4.0))
