"""Piezoresistive element physics for the Velostat sensor mat.

Each sensing element is modelled as a conductance that relaxes toward a
pressure-dependent target with asymmetric first-order dynamics. The static
law is a saturating (Michaelis-Menten) curve between ``g_min`` and ``g_max``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VelostatParams:
    g_min: float = 3.333e-5  # S, about 30 kOhm unloaded
    g_max: float = 2.0e-3  # S, about 500 Ohm saturated
    p_half: float = 20.0  # N
    tau_load: float = 6.0  # s
    tau_release: float = 10.0  # s
    baseline_jitter_counts: float = 4.0
    noise_counts: float = 2.0

    def __post_init__(self):
        if not 0 < self.g_min < self.g_max:
            raise ValueError("require 0 < g_min < g_max")
        if self.p_half <= 0 or self.tau_load <= 0 or self.tau_release <= 0:
            raise ValueError("p_half, tau_load and tau_release must be positive")
        if self.baseline_jitter_counts < 0 or self.noise_counts < 0:
            raise ValueError("jitter and noise counts must be non-negative")


@dataclass(frozen=True)
class VelostatState:
    """Per-element conductance ``s`` and the static per-element ``baseline_offset``."""

    s: np.ndarray
    baseline_offset: np.ndarray

    @property
    def shape(self):
        return self.s.shape

    def with_conductance(self, s: np.ndarray) -> "VelostatState":
        return VelostatState(np.asarray(s, dtype=np.float64), self.baseline_offset)

    def rest_conductance(self, params: VelostatParams) -> np.ndarray:
        return params.g_min + self.baseline_offset


def target_conductance(p, params: VelostatParams):
    """Steady-state conductance under applied force ``p`` (newtons)."""
    p_arr = np.asarray(p, dtype=np.float64)
    if np.any(p_arr < 0) or np.any(np.isnan(p_arr)):
        raise ValueError("force must be non-negative")
    g = params.g_min + (params.g_max - params.g_min) * p_arr / (p_arr + params.p_half)
    if np.ndim(p) == 0:
        return float(g)
    return g


def _equilibrium(force: np.ndarray, state: VelostatState, params: VelostatParams) -> np.ndarray:
    g_t = target_conductance(np.asarray(force, dtype=np.float64), params) + state.baseline_offset
    return np.minimum(g_t, params.g_max)


def step_state(state: VelostatState, force, dt: float, params: VelostatParams) -> VelostatState:
    """Advance every element by ``dt`` seconds under a constant force grid.

    The relaxation is integrated exactly, so the result does not depend on
    how a constant-load interval is subdivided.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0:
        return state
    force = np.asarray(force, dtype=np.float64)
    if force.shape != state.s.shape:
        raise ValueError(f"force grid {force.shape} does not match state {state.s.shape}")
    g_t = _equilibrium(force, state, params)
    tau = np.where(g_t > state.s, params.tau_load, params.tau_release)
    s_new = g_t + (state.s - g_t) * np.exp(-dt / tau)
    # rounding must never carry an element past either end of its relaxation
    s_new = np.clip(s_new, np.minimum(state.s, g_t), np.maximum(state.s, g_t))
    return state.with_conductance(s_new)


def _nominal_column_shunt(n: int, params: VelostatParams, r_ref: float) -> float:
    # ideal zero-potential readout: the reference resistor plus the other n-1 unloaded elements
    return 1.0 / r_ref + (n - 1) * params.g_min


def init_state(geometry, params: VelostatParams, seed=None, circuit=None) -> VelostatState:
    """Fresh mat state with static per-element baseline offsets.

    Offsets are sized so that an unloaded, calibrated scan of each element
    reads a count drawn uniformly from ``[0, baseline_jitter_counts]``. The
    inversion uses the ideal zero-potential readout of a nominal mat.
    """
    from .crossbar import CircuitParams

    n, m = geometry.n, geometry.m
    circuit = circuit or CircuitParams()
    rng = np.random.default_rng(seed)
    counts = rng.uniform(0.0, 1.0, size=(n, m)) * params.baseline_jitter_counts
    if params.baseline_jitter_counts == 0:
        offset = np.zeros((n, m))
    else:
        shunt = _nominal_column_shunt(n, params, circuit.r_ref)
        lsb = circuit.vref_adc / 255.0
        v0 = circuit.vcc * params.g_min / (params.g_min + shunt)
        v = np.minimum(v0 + counts * lsb, 0.999 * circuit.vcc)
        s = shunt * v / (circuit.vcc - v)
        offset = np.clip(s - params.g_min, 0.0, params.g_max - params.g_min)
    return VelostatState(params.g_min + offset, offset)


def step_response(force: float, duration: float, dt: float, params: VelostatParams,
                  s0: float | None = None) -> np.ndarray:
    """Single-element conductance trace under constant ``force``, sampled every ``dt``."""
    steps = int(round(duration / dt))
    s = params.g_min if s0 is None else s0
    state = VelostatState(np.array([[s]]), np.zeros((1, 1)))
    out = [s]
    field = np.array([[float(force)]])
    for _ in range(steps):
        state = step_state(state, field, dt, params)
        out.append(float(state.s[0, 0]))
    return np.array(out)
