"""Elastic, Maxwell and Kelvin-Voigt material laws used as force ground truth.

Stress-strain forms take E (Pa) and eta (Pa s); the lumped forms used by the
simulator take a stiffness k (N/m) and a damping c (N s/m).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Model(str, Enum):
    ELASTIC = "elastic"
    MAXWELL = "maxwell"
    KELVIN_VOIGT = "kelvin_voigt"


@dataclass(frozen=True)
class MaterialParams:
    model: Model = Model.KELVIN_VOIGT
    elastic_modulus_pa: float = 1.0e5
    viscosity_pa_s: float = 1.0e5
    lumped_stiffness_n_per_m: float = 40.0
    lumped_damping_n_s_per_m: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        if self.elastic_modulus_pa <= 0:
            raise ValueError("elastic modulus must be > 0")
        if self.model is not Model.ELASTIC and self.viscosity_pa_s <= 0:
            raise ValueError("viscosity must be > 0 for viscoelastic models")
        if self.lumped_stiffness_n_per_m <= 0:
            raise ValueError("lumped stiffness must be > 0")
        if self.lumped_damping_n_s_per_m is not None and self.lumped_damping_n_s_per_m < 0:
            raise ValueError("lumped damping must be >= 0")

    @property
    def k(self) -> float:
        return self.lumped_stiffness_n_per_m

    @property
    def c(self) -> float:
        """Lumped damping; defaults to 0.05 s times the stiffness."""
        if self.lumped_damping_n_s_per_m is None:
            return 0.05 * self.k
        return self.lumped_damping_n_s_per_m


def elastic_stress(params: MaterialParams, strain):
    return params.elastic_modulus_pa * np.asarray(strain, dtype=float)


def central_derivative(fn, t, dt=1e-4):
    return (fn(t + dt) - fn(t - dt)) / (2.0 * dt)


def kelvin_voigt_stress(params: MaterialParams, strain_fn, t, strain_rate_fn=None, dt=1e-4):
    """sigma = E*eps + eta*d(eps)/dt; the rate comes from `strain_rate_fn` when given,
    else from a central difference of `strain_fn` with step dt."""
    eps = strain_fn(t)
    rate = strain_rate_fn(t) if strain_rate_fn is not None else central_derivative(strain_fn, t, dt)
    return params.elastic_modulus_pa * eps + params.viscosity_pa_s * rate


def kelvin_voigt_force(params: MaterialParams, x, xdot):
    """Lumped spring and damper in parallel: F = k x + c xdot."""
    return params.k * np.asarray(x, dtype=float) + params.c * np.asarray(xdot, dtype=float)


def _uniform_dt(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) < 2:
        raise ValueError("time grid needs at least 2 samples")
    steps = np.diff(t)
    if np.any(steps <= 0):
        raise ValueError("time grid must be strictly increasing (dt > 0)")
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise ValueError("time grid must be uniform")
    return t, float(steps[0])


def _rk4(f, y0, t):
    y = np.empty(len(t))
    y[0] = y0
    for i in range(len(t) - 1):
        h = t[i + 1] - t[i]
        ti, yi = t[i], y[i]
        k1 = f(ti, yi)
        k2 = f(ti + h / 2, yi + h / 2 * k1)
        k3 = f(ti + h / 2, yi + h / 2 * k2)
        k4 = f(ti + h, yi + h * k3)
        y[i + 1] = yi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def maxwell_creep(params: MaterialParams, stress_fn, t_grid, strain0=None, stress_rate_fn=None):
    """Strain under prescribed stress: d(eps)/dt = (d(sigma)/dt)/E + sigma/eta, RK4.

    The initial strain defaults to the instantaneous elastic response sigma(0)/E.
    """
    t, _ = _uniform_dt(t_grid)
    e, eta = params.elastic_modulus_pa, params.viscosity_pa_s
    rate = stress_rate_fn or (lambda s: central_derivative(stress_fn, s))
    if strain0 is None:
        strain0 = stress_fn(t[0]) / e
    return _rk4(lambda s, _eps: rate(s) / e + stress_fn(s) / eta, strain0, t)


def maxwell_relaxation(params: MaterialParams, strain_fn, t_grid, stress0, strain_rate_fn=None):
    """Stress under prescribed strain: d(sigma)/dt = E*(d(eps)/dt - sigma/eta), RK4."""
    t, _ = _uniform_dt(t_grid)
    e, eta = params.elastic_modulus_pa, params.viscosity_pa_s
    rate = strain_rate_fn or (lambda s: central_derivative(strain_fn, s))
    return _rk4(lambda s, sig: e * (rate(s) - sig / eta), stress0, t)


def maxwell_evolve(params: MaterialParams, t_grid, stress_fn=None, strain_fn=None, initial=None):
    """Creep when `stress_fn` is given (returns strain), relaxation when `strain_fn`
    is given (returns stress; `initial` is sigma(0))."""
    if (stress_fn is None) == (strain_fn is None):
        raise ValueError("give exactly one of stress_fn or strain_fn")
    if stress_fn is not None:
        return maxwell_creep(params, stress_fn, t_grid, initial)
    if initial is None:
        raise ValueError("relaxation needs the initial stress")
    return maxwell_relaxation(params, strain_fn, t_grid, initial)


def sampled_derivative(x, t_grid):
    """Central differences inside, one-sided at the ends."""
    t, _ = _uniform_dt(t_grid)
    return np.gradient(np.asarray(x, dtype=float), t, edge_order=1)


def traction_force(params: MaterialParams, elongation, t_grid):
    """Force trajectory (N) of the lumped Kelvin-Voigt law for a sampled elongation x(t)."""
    x = np.asarray(elongation, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    if x.shape != t.shape or len(x) < 2:
        raise ValueError("need at least 2 elongation samples matching the time grid")
    return kelvin_voigt_force(params, x, sampled_derivative(x, t))
