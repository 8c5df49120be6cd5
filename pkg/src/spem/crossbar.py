"""Electrical readout of the row/column crossbar.

A scan drives one row to ``vcc`` through ``r_drive`` while every other row
sinks to ground through ``r_gnd_inactive``; each column is read across the
reference resistor ``r_ref``. The full resistive network is solved, so
crosstalk through neighbouring elements is part of every reading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .velostat import VelostatParams, VelostatState


class SolverError(ArithmeticError):
    """The nodal system has no unique solution (floating nodes)."""


@dataclass(frozen=True)
class CircuitParams:
    vcc: float = 5.0
    vref_adc: float = 5.0
    r_ref: float = 10_000.0
    r_drive: float = 50.0
    r_gnd_inactive: float = 50.0
    noise_counts: float = 2.0
    # subtract the reading of a nominal unloaded mat before quantizing
    calibrate: bool = True

    def __post_init__(self):
        if self.vcc <= 0 or self.vref_adc <= 0:
            raise ValueError("vcc and vref_adc must be positive")
        if self.r_ref <= 0:
            raise ValueError("r_ref must be positive")
        if self.r_drive < 0 or self.r_gnd_inactive < 0:
            raise ValueError("r_drive and r_gnd_inactive must be non-negative")
        if self.noise_counts < 0:
            raise ValueError("noise_counts must be non-negative")


@dataclass(frozen=True)
class PressureFrame:
    pixels: np.ndarray  # (n, m, d) uint8
    timestamp: float = 0.0


def _as_conductance(state) -> np.ndarray:
    s = state.s if isinstance(state, VelostatState) else state
    return np.asarray(s, dtype=np.float64)


def solve_rows(s: np.ndarray, circuit: CircuitParams, rows=None) -> np.ndarray:
    """Column potentials for each driven row, shape ``(len(rows), m)``.

    Row nodes only couple to column nodes, so they are eliminated in closed
    form and a dense ``m x m`` system is solved per driven row.
    """
    s = np.asarray(s, dtype=np.float64)
    n, m = s.shape
    rows = np.arange(n) if rows is None else np.atleast_1d(np.asarray(rows))
    if np.any(rows < 0) or np.any(rows >= n):
        raise IndexError("row out of range")

    g_gnd = math.inf if circuit.r_gnd_inactive == 0 else 1.0 / circuit.r_gnd_inactive
    g_drv = math.inf if circuit.r_drive == 0 else 1.0 / circuit.r_drive
    row_sum = s.sum(axis=1)
    col_diag = s.sum(axis=0) + 1.0 / circuit.r_ref

    out = np.empty((len(rows), m))
    systems = np.empty((len(rows), m, m))
    rhs = np.empty((len(rows), m))
    for idx, r in enumerate(rows):
        g_tie = np.full(n, g_gnd)
        g_tie[r] = g_drv
        # fixed rows (infinite tie conductance) contribute nothing to the Schur term
        free = np.isfinite(g_tie)
        a = np.zeros(m)
        b = np.zeros(m)
        mat = np.diag(col_diag)
        if np.any(free):
            d = row_sum[free] + g_tie[free]
            if np.any(d <= 0):
                raise SolverError("floating row node: no conductance to any column or ground")
            sf = s[free]
            mat = mat - (sf.T / d) @ sf
            src = np.zeros(n)
            src[r] = circuit.vcc * (g_drv if np.isfinite(g_drv) else 0.0)
            b = b + sf.T @ (src[free] / d)
        if not np.isfinite(g_drv):
            a = s[r] * circuit.vcc
        systems[idx] = mat
        rhs[idx] = a + b
    try:
        out[:] = np.linalg.solve(systems, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SolverError(str(exc)) from exc
    if not np.all(np.isfinite(out)):
        raise SolverError("non-finite node potentials")
    return out


def scan_row(row: int, state, circuit: CircuitParams) -> np.ndarray:
    """Column voltages (V) while ``row`` is driven."""
    n = _as_conductance(state).shape[0]
    if not 0 <= row < n:
        raise IndexError(f"row {row} out of range for {n} rows")
    return solve_rows(_as_conductance(state), circuit, [row])[0]


def quantize(v, circuit: CircuitParams):
    """8-bit ADC transfer with round-half-away-from-zero and clamping."""
    x = 255.0 * np.asarray(v, dtype=np.float64) / circuit.vref_adc
    counts = np.sign(x) * np.floor(np.abs(x) + 0.5)
    counts = np.clip(counts, 0, 255).astype(np.uint8)
    if np.ndim(v) == 0:
        return int(counts)
    return counts


@lru_cache(maxsize=32)
def _calibration(shape, g_min, circuit):
    v = solve_rows(np.full(shape, g_min), circuit)
    v.setflags(write=False)
    return v


def calibration_voltages(shape, velostat: VelostatParams, circuit: CircuitParams) -> np.ndarray:
    """Readings of a nominal mat with every element at ``g_min``."""
    return _calibration(tuple(shape), velostat.g_min, circuit)


def scan_voltages(state, circuit: CircuitParams, velostat: VelostatParams | None = None) -> np.ndarray:
    """Noise-free calibrated voltage image (one solve per row)."""
    s = _as_conductance(state)
    v = solve_rows(s, circuit)
    if circuit.calibrate:
        v = v - calibration_voltages(s.shape, velostat or VelostatParams(), circuit)
    return v


def scan_frame(state, circuit: CircuitParams, rng=None, timestamp: float = 0.0,
               velostat: VelostatParams | None = None) -> PressureFrame:
    """Scan every row of a state snapshot into an 8-bit frame."""
    v = scan_voltages(state, circuit, velostat)
    if circuit.noise_counts > 0:
        rng = np.random.default_rng(rng)
        lsb = circuit.vref_adc / 255.0
        v = v + rng.uniform(-1.0, 1.0, size=v.shape) * circuit.noise_counts * lsb
    return PressureFrame(quantize(v, circuit)[..., None], float(timestamp))


def crosstalk_readthrough(state, circuit: CircuitParams, loaded, probe,
                          velostat: VelostatParams | None = None) -> int:
    """Change in the probe's noise-free reading caused by the load at ``loaded``.

    ``loaded`` is one ``(row, col)`` pair or a list of them; removing the load
    returns those elements to their rest conductance. The probe must sit on a
    different row from every loaded element.
    """
    velostat = velostat or VelostatParams()
    loads = [tuple(loaded)] if np.ndim(loaded) == 1 else [tuple(x) for x in loaded]
    pi, pk = probe
    if any(i == pi for i, _ in loads):
        raise ValueError("probe must be on a different row from the load")
    s = _as_conductance(state)
    if isinstance(state, VelostatState):
        rest = state.rest_conductance(velostat)
    else:
        rest = np.full(s.shape, velostat.g_min)
    unloaded = s.copy()
    for i, k in loads:
        unloaded[i, k] = rest[i, k]

    def reading(cond):
        v = solve_rows(cond, circuit, [pi])[0, pk]
        if circuit.calibrate:
            v -= calibration_voltages(s.shape, velostat, circuit)[pi, pk]
        return int(quantize(v, circuit))

    return reading(s) - reading(unloaded)
