"""Oracle suites run by ``spem verify``.

Each suite returns a :class:`SuiteResult`; a suite passes only when every one
of its checks does. The dense elimination oracle here is written without
reference to the production solver: it assembles the full row-and-column
nodal system and reduces it by Gaussian elimination with partial pivoting.
"""

from __future__ import annotations

import io
import math
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .crossbar import CircuitParams, crosstalk_readthrough, solve_rows
from .velostat import VelostatParams, step_response


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    elapsed: float = 0.0
    checks: list[tuple[str, bool, str]] = field(default_factory=list)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name:<20} {self.detail} ({self.elapsed:.2f} s)"


def _result(name, checks, t0) -> SuiteResult:
    ok = all(c[1] for c in checks)
    failed = [c for c in checks if not c[1]]
    detail = "; ".join(f"{n}: {d}" for n, _, d in (failed or checks)[:3])
    return SuiteResult(name, ok, detail, time.perf_counter() - t0, checks)


# --- circuit oracle --------------------------------------------------------

def gaussian_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a batch of systems ``a[k] x = b[k]`` by elimination with partial pivoting."""
    a = np.array(a, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    batch, size, _ = a.shape
    k_idx = np.arange(batch)
    for col in range(size):
        piv = col + np.argmax(np.abs(a[:, col:, col]), axis=1)
        if np.any(a[k_idx, piv, col] == 0):
            raise ZeroDivisionError("singular nodal matrix")
        rows_a = a[k_idx, piv].copy()
        a[k_idx, piv] = a[:, col]
        a[:, col] = rows_a
        rows_b = b[k_idx, piv].copy()
        b[k_idx, piv] = b[:, col]
        b[:, col] = rows_b
        factors = a[:, col + 1:, col] / a[:, col, col][:, None]
        a[:, col + 1:, col:] -= factors[:, :, None] * a[:, col, None, col:]
        b[:, col + 1:] -= factors * b[:, col, None]
    x = np.zeros_like(b)
    for col in range(size - 1, -1, -1):
        x[:, col] = (b[:, col] - np.einsum("kj,kj->k", a[:, col, col + 1:], x[:, col + 1:])) / a[:, col, col]
    return x


def dense_nodal_oracle(s: np.ndarray, circuit: CircuitParams) -> np.ndarray:
    """Column voltages for every driven row from the full ``n + m`` node system.

    Row ties with zero resistance become fixed potentials and are moved to the
    right-hand side; everything else stays an unknown.
    """
    s = np.asarray(s, dtype=np.float64)
    n, m = s.shape
    # node order: rows 0..n-1 then columns n..n+m-1
    base = np.zeros((n + m, n + m))
    base[:n, n:] = -s
    base[n:, :n] = -s.T
    base[np.arange(n), np.arange(n)] = s.sum(axis=1)
    base[n + np.arange(m), n + np.arange(m)] = s.sum(axis=0) + 1.0 / circuit.r_ref
    systems, rhs, keep = [], [], []
    for r in range(n):
        g = base.copy()
        cur = np.zeros(n + m)
        fixed = {}
        for i in range(n):
            res, volt = (circuit.r_drive, circuit.vcc) if i == r else (circuit.r_gnd_inactive, 0.0)
            if res == 0:
                fixed[i] = volt
            else:
                g[i, i] += 1.0 / res
                cur[i] += volt / res
        unknown = [v for v in range(n + m) if v not in fixed]
        for i, volt in fixed.items():
            cur -= g[:, i] * volt
        systems.append(g[np.ix_(unknown, unknown)])
        rhs.append(cur[unknown])
        keep.append([unknown.index(n + k) for k in range(m)])
    x = gaussian_solve(np.array(systems), np.array(rhs))
    return np.array([x[r, keep[r]] for r in range(n)])


def ideal_closed_form(s: np.ndarray, circuit: CircuitParams) -> np.ndarray:
    """Zero-potential readout with ideal row drivers and grounds."""
    s = np.asarray(s, dtype=np.float64)
    col = s.sum(axis=0) + 1.0 / circuit.r_ref
    return circuit.vcc * s / col


def random_grid(rng, shape=(27, 27), params: VelostatParams | None = None) -> np.ndarray:
    """Conductances spread log-uniformly over the element's full range."""
    p = params or VelostatParams()
    return np.exp(rng.uniform(math.log(p.g_min), math.log(p.g_max), size=shape))


def suite_circuit_oracle(grids: int = 100, seed: int = 0) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    circuits = [CircuitParams(), CircuitParams(r_drive=0.0), CircuitParams(r_gnd_inactive=0.0),
                CircuitParams(r_drive=120.0, r_gnd_inactive=1000.0)]
    worst = 0.0
    for k in range(grids):
        s = random_grid(rng)
        c = circuits[k % len(circuits)]
        worst = max(worst, float(np.max(np.abs(solve_rows(s, c) - dense_nodal_oracle(s, c)))))
    return _result("circuit_oracle", [("max |dV|", worst <= 1e-9, f"{worst:.2e} V over {grids} grids")], t0)


def suite_ideal_closed_form(grids: int = 20, seed: int = 1) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    c = CircuitParams(r_drive=0.0, r_gnd_inactive=0.0)
    worst = 0.0
    for _ in range(grids):
        s = random_grid(rng)
        worst = max(worst, float(np.max(np.abs(solve_rows(s, c) - ideal_closed_form(s, c)))))
    return _result("ideal_closed_form", [("max |dV|", worst <= 1e-12, f"{worst:.2e} V")], t0)


# --- crosstalk -------------------------------------------------------------

def ghost_fixture(params: VelostatParams | None = None, shape=(27, 27), heavy: float = 0.9):
    """Three loaded corners of a rectangle; the fourth corner is the probe.

    Returns ``(conductances, loaded, probe)``. The load at ``loaded`` closes a
    sneak path (probe row -> background -> loaded -> background -> probe
    column) whose strength depends on how well inactive rows are grounded.
    """
    p = params or VelostatParams()
    s = np.full(shape, p.g_min)
    g = p.g_min + heavy * (p.g_max - p.g_min)
    loaded, probe = (4, 4), (20, 20)
    for i, k in (loaded, (probe[0], loaded[1]), (loaded[0], probe[1])):
        s[i, k] = g
    return s, loaded, probe


def crosstalk_sweep(points: int = 10, r_max: float = 1000.0) -> tuple[np.ndarray, list[int]]:
    s, loaded, probe = ghost_fixture()
    r_values = np.linspace(0.0, r_max, points)
    counts = [crosstalk_readthrough(s, CircuitParams(r_gnd_inactive=float(r)), loaded, probe)
              for r in r_values]
    return r_values, counts


def suite_crosstalk() -> SuiteResult:
    t0 = time.perf_counter()
    r, counts = crosstalk_sweep()
    steps = np.diff(counts)
    checks = [
        ("grounded rows", counts[0] == 0, f"{counts[0]} counts at 0 ohm"),
        ("monotone sweep", bool(np.all(steps >= 0)), f"counts {counts}"),
        ("visible at 1 kohm", counts[-1] > 0, f"{counts[-1]} counts at {r[-1]:.0f} ohm"),
    ]
    return _result("crosstalk", checks, t0)


# --- element dynamics ------------------------------------------------------

def suite_velostat_dynamics() -> SuiteResult:
    t0 = time.perf_counter()
    p = VelostatParams()
    trace = step_response(200.0, 120.0, 0.5, p)
    grad = np.diff(trace)
    target = p.g_min + (p.g_max - p.g_min) * 200.0 / (200.0 + p.p_half)
    err = abs(trace[-1] - target) / (target - p.g_min)
    checks = [
        ("increasing", bool(np.all(grad > 0)), f"min step {grad.min():.3e} S"),
        ("decelerating", bool(np.all(np.diff(grad) < 0)), "discrete gradient strictly decreasing"),
        ("settled by 120 s", err <= 0.01, f"{100 * err:.4f}% from asymptote"),
    ]
    return _result("velostat_dynamics", checks, t0)


# --- scene conservation ----------------------------------------------------

def suite_conservation(scenes: int = 200, seed: int = 2) -> SuiteResult:
    from .scene import ACTIVITIES, POSTURES, make_scene, pressure_at, sample_subject

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    negative = False
    for k in range(scenes):
        task = "posture" if k % 2 == 0 else "activity"
        cls = int(rng.integers(len(POSTURES if task == "posture" else ACTIVITIES)))
        subject = sample_subject(rng)
        scene = make_scene(task, cls, subject, rng)
        field_ = pressure_at(scene, float(rng.uniform(0, 10)))
        worst = max(worst, abs(float(field_.force.sum()) - subject.weight * 9.81))
        negative |= bool(np.any(field_.force < 0))
    checks = [("sum force", worst <= 1e-6, f"max error {worst:.2e} N over {scenes} scenes"),
              ("non-negative", not negative, "all pixels >= 0")]
    return _result("conservation", checks, t0)


# --- gradients -------------------------------------------------------------

def _tiny_config(arch, frames=3):
    from .classifier import ModelConfig

    return ModelConfig(arch=arch, class_count=3, frames=frames, n=7, m=7, stem_width=2,
                       stage_widths=(2, 3), blocks=(1, 1), strides=(1, 2), fusion_width=4, dropout=0.2)


def gradcheck_cases():
    """``(name, fragment, input_shape, threshold)`` for every layer type and architecture."""
    from .classifier import ARCHS, build_model
    from .nn.layers import (LSTM, BatchNorm, Conv2D, Dense, Dropout, Flatten, GlobalAvgPool,
                            ReLU, ResidualBlock, TemporalConv, TemporalMean)

    rng = np.random.default_rng(0)
    cases = [
        ("dense", Dense(6, 4, rng=rng), (5, 6), 1e-7),
        ("conv2d", Conv2D(2, 3, 3, 1, bias=True, rng=rng), (2, 5, 5, 2), 1e-6),
        ("conv2d_stride2", Conv2D(2, 3, 3, 2, rng=rng), (2, 5, 5, 2), 1e-6),
        ("batchnorm", BatchNorm(3), (4, 3, 3, 3), 1e-5),
        ("relu", ReLU(), (3, 7), 1e-7),
        ("dropout", Dropout(0.3), (3, 7), 1e-7),
        ("global_avg_pool", GlobalAvgPool(), (2, 3, 3, 4), 1e-7),
        ("flatten", Flatten(), (2, 3, 4), 1e-7),
        ("temporal_mean", TemporalMean(), (2, 5, 3), 1e-7),
        ("temporal_conv", TemporalConv(4, 3, 3, rng=rng), (2, 5, 4), 1e-6),
        ("residual_identity", ResidualBlock(3, 3, 1, 0.2, rng=rng), (2, 5, 5, 3), 1e-5),
        ("residual_projection", ResidualBlock(2, 4, 2, 0.2, rng=rng), (2, 5, 5, 2), 1e-5),
        ("lstm_10_steps", LSTM(3, 4, rng=rng), (2, 10, 3), 1e-5),
    ]
    for arch in ARCHS:
        cfg = _tiny_config(arch)
        cases.append((f"model_{arch}", build_model(cfg, seed=1), (2, cfg.frames, 7, 7, 1), 1e-4))
    return cases


def suite_gradcheck() -> SuiteResult:
    from .nn.gradcheck import grad_check

    t0 = time.perf_counter()
    checks = []
    for k, (name, frag, shape, tol) in enumerate(gradcheck_cases()):
        err = grad_check(frag, shape, seed=k)
        checks.append((name, err <= tol, f"{err:.1e} (limit {tol:.0e})"))
    return _result("gradcheck", checks, t0)


# --- file formats ----------------------------------------------------------

def fuzz_spem(raw: bytes, cases: int = 10_000, seed: int = 0):
    """Feed mutated copies of ``raw`` to the SPEM parser.

    Returns ``(typed, accepted, crashes)``: counts of inputs rejected with a
    ``FormatError`` and inputs that parsed, plus a list of
    ``(case, exception)`` for anything else.
    """
    from .dataset_io import FormatError, from_bytes

    rng = np.random.default_rng(seed)
    typed = accepted = 0
    crashes = []
    for case in range(cases):
        buf = bytearray(raw)
        kind = case % 5
        if kind == 0:
            buf = buf[:int(rng.integers(0, len(buf)))]
        elif kind == 1:
            for pos in rng.integers(0, len(buf), size=int(rng.integers(1, 6))):
                buf[pos] = int(rng.integers(0, 256))
        elif kind == 2:
            # scramble one header field
            pos = int(rng.integers(4, 32))
            buf[pos:pos + 2] = rng.integers(0, 256, size=2, dtype=np.uint8).tobytes()
            buf = buf[:len(raw)]
        elif kind == 3:
            buf += rng.integers(0, 256, size=int(rng.integers(1, 40)), dtype=np.uint8).tobytes()
        else:
            buf = bytearray(b"SPEM" + rng.integers(0, 256, size=int(rng.integers(0, 200)),
                                                    dtype=np.uint8).tobytes())
        try:
            from_bytes(bytes(buf))
            accepted += 1
        except FormatError:
            typed += 1
        except Exception as exc:  # noqa: BLE001 - any other type is a finding
            crashes.append((case, exc))
    return typed, accepted, crashes


def suite_formats(seed: int = 3) -> SuiteResult:
    from .classifier import build_model, load_model, save_model
    from .dataset_io import Dataset, FormatError, export_pgm, from_bytes, read_pgm, to_bytes

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    ds = Dataset(1, 5, 4, 1, 3, 5, 99, rng.integers(0, 256, size=(6, 3, 5, 4, 1)),
                 rng.integers(0, 5, size=6), np.arange(6), np.arange(6) + 10)
    raw = to_bytes(ds)
    checks = [("spem round trip", to_bytes(from_bytes(raw)) == raw and from_bytes(raw) == ds, "")]
    typed = True
    for cut in range(0, len(raw), 7):
        try:
            from_bytes(raw[:cut])
            typed = False
        except FormatError:
            pass
    checks.append(("spem truncation", typed, f"{len(raw) // 7 + 1} prefixes"))
    with tempfile.TemporaryDirectory() as tmp:
        model = build_model(_tiny_config("crnn"), seed=4)
        a, b = Path(tmp) / "a.spnn", Path(tmp) / "b.spnn"
        save_model(model, a)
        save_model(load_model(a), b)
        checks.append(("spnn round trip", a.read_bytes() == b.read_bytes(), ""))
        frame = ds.pixels[0, 0]
        export_pgm(frame, Path(tmp) / "f.pgm")
        checks.append(("pgm round trip", np.array_equal(read_pgm(Path(tmp) / "f.pgm"), frame[..., 0]), ""))
    return _result("formats", [(n, ok, d or ("ok" if ok else "mismatch")) for n, ok, d in checks], t0)


# --- stream shape ----------------------------------------------------------

def suite_stream_shape(seed: int = 4) -> SuiteResult:
    from .scan import collect_dataset

    t0 = time.perf_counter()
    ds = collect_dataset("posture", 1, seed=seed)
    stream = ds.stream(0)
    ts = stream.timestamps
    checks = [
        ("frame shape", ds.pixels.shape[1:] == (10, 27, 27, 1), str(ds.pixels.shape[1:])),
        ("frame spacing", bool(np.allclose(np.diff(ts), 0.5)), "0.5 s"),
        ("stream duration", math.isclose(ts[-1] - ts[0] + 0.5, 5.0), f"{ts[-1] - ts[0] + 0.5:.1f} s"),
    ]
    return _result("stream_shape", checks, t0)


SUITES = {
    "circuit_oracle": suite_circuit_oracle,
    "ideal_closed_form": suite_ideal_closed_form,
    "crosstalk": suite_crosstalk,
    "velostat_dynamics": suite_velostat_dynamics,
    "conservation": suite_conservation,
    "gradcheck": suite_gradcheck,
    "formats": suite_formats,
    "stream_shape": suite_stream_shape,
}


@contextmanager
def injected_fault(kind: str | None):
    """Deliberately corrupt a component so that a suite must fail.

    ``backward`` scales the dense layer's weight gradient by 1.5.
    """
    if kind is None:
        yield
        return
    if kind != "backward":
        raise ValueError(f"unknown fault {kind!r}")
    from .nn.layers import Dense

    original = Dense.backward

    def corrupted(self, dout):
        before = self.grads["w"].copy()
        dx = original(self, dout)
        self.grads["w"] = before + 1.5 * (self.grads["w"] - before)
        return dx

    Dense.backward = corrupted
    try:
        yield
    finally:
        Dense.backward = original


def run_suites(names=None, fault: str | None = None, out=None) -> list[SuiteResult]:
    names = list(names or SUITES)
    results = []
    with injected_fault(fault):
        for name in names:
            res = SUITES[name]()
            results.append(res)
            if out is not None:
                print(res.line(), file=out, flush=True)
    return results


def report(results) -> str:
    buf = io.StringIO()
    for r in results:
        print(r.line(), file=buf)
    return buf.getvalue()
