"""End-to-end acceptance checks, one test (and one PASS/FAIL line) per criterion.

Criteria 6 and 7 generate full synthetic datasets and train pi_lite models
single-threaded; together they take tens of minutes.
"""

import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from spem.classifier import (ARCHS, ModelConfig, TrainConfig, build_model, evaluate, load_model,
                             save_model, train)
from spem.cli import main
from spem.crossbar import CircuitParams, solve_rows
from spem.dataset_io import export_pgm, from_bytes, read_pgm, split, to_bytes
from spem.scan import collect_dataset
from spem.scene import ACTIVITIES, POSTURES, make_scene, pressure_at, sample_subject
from spem.velostat import VelostatParams, step_response
from spem.verify import (crosstalk_sweep, dense_nodal_oracle, fuzz_spem, gradcheck_cases,
                         ideal_closed_form, random_grid)
from spem.nn import grad_check

BUDGET = 20 * 60.0  # seconds for one end-to-end run
STOP_AT = 0.99  # validation accuracy that ends training early


def test_1_circuit_oracle(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)
    circuits = [CircuitParams(), CircuitParams(r_drive=0.0), CircuitParams(r_gnd_inactive=0.0),
                CircuitParams(r_drive=120.0, r_gnd_inactive=1000.0)]
    worst = 0.0
    for k in range(100):
        s = random_grid(rng)
        c = circuits[k % 4]
        worst = max(worst, float(np.abs(solve_rows(s, c) - dense_nodal_oracle(s, c)).max()))
    ideal = CircuitParams(r_drive=0.0, r_gnd_inactive=0.0)
    closed = 0.0
    for _ in range(20):
        s = random_grid(rng)
        closed = max(closed, float(np.abs(solve_rows(s, ideal) - ideal_closed_form(s, ideal)).max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and closed <= 1e-12 and elapsed <= 10.0
    acceptance(1, ok, f"oracle max|dV| {worst:.1e} V over 100 grids, closed form {closed:.1e} V, "
                      f"{elapsed:.1f} s")
    assert ok


def test_2_crosstalk(acceptance):
    r, counts = crosstalk_sweep(points=10, r_max=1000.0)
    ok = counts[0] == 0 and all(b >= a for a, b in zip(counts, counts[1:])) and counts[-1] > 0
    acceptance(2, ok, f"readthrough over r_gnd_inactive 0..1000 ohm: {counts}")
    assert ok


def test_3_velostat_dynamics(acceptance):
    p = VelostatParams()
    details = []
    ok = True
    for force in (5.0, 50.0, 200.0):
        trace = step_response(force, 120.0, 0.5, p)
        grad = np.diff(trace)
        target = p.g_min + (p.g_max - p.g_min) * force / (force + p.p_half)
        err = abs(trace[-1] - target) / (target - p.g_min)
        good = bool(np.all(grad > 0) and np.all(np.diff(grad) < 0) and err <= 0.01)
        ok &= good
        details.append(f"{force:g} N {100 * err:.1e}%")
    acceptance(3, ok, "increasing, decelerating, gap to asymptote at 120 s: " + ", ".join(details))
    assert ok


def test_4_shape_and_rate(acceptance):
    ds = collect_dataset("activity", 2, seed=4)
    stamps = [ds.stream(k).timestamps for k in range(len(ds))]
    shape_ok = ds.pixels.shape[1:] == (10, 27, 27, 1)
    spacing = max(float(np.abs(np.diff(s) - 0.5).max()) for s in stamps)
    duration = float(stamps[0][-1] - stamps[0][0] + 0.5)
    ok = shape_ok and spacing == 0.0 and duration == 5.0
    acceptance(4, ok, f"sample {ds.n}x{ds.m}x{ds.d}x{ds.j}, frame spacing 0.5 s "
                      f"(max deviation {spacing}), stream {duration} s")
    assert ok


def test_5_gradient_verification(acceptance):
    t0 = time.perf_counter()
    failures = []
    worst_ratio = 0.0
    cases = gradcheck_cases()
    for k, (name, frag, shape, tol) in enumerate(cases):
        err = grad_check(frag, shape, seed=k)
        worst_ratio = max(worst_ratio, err / tol)
        if err > tol:
            failures.append(f"{name} {err:.1e}>{tol:.0e}")
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed <= 120.0
    acceptance(5, ok, f"{len(cases)} cases, worst error/threshold {worst_ratio:.2g}, "
                      f"{elapsed:.1f} s" + (f"; failed {failures}" if failures else ""))
    assert ok


def _end_to_end(task, per_class, arch, seed=7):
    """Generate, split 70/15/15, train pi_lite single-threaded, score the test split."""
    t0 = time.perf_counter()
    with threadpool_limits(1):
        ds = collect_dataset(task, per_class, seed=seed)
        tr, te, va = split(ds, seed=0)
        model = build_model(ModelConfig(arch=arch, class_count=ds.class_count), seed=0)
        remaining = BUDGET - (time.perf_counter() - t0) - 30.0
        result = train(model, tr, va, TrainConfig(epochs=200, seed=0, stop_at_val_acc=STOP_AT,
                                                  time_budget=remaining))
        report = evaluate(model, te)
    return (len(tr), len(te), len(va)), result, report, time.perf_counter() - t0


@pytest.mark.slow
def test_6_end_to_end_posture(acceptance):
    sizes, result, report, elapsed = _end_to_end("posture", 250, "crnn")
    ok = sizes == (700, 150, 150) and report.accuracy >= 0.95 and elapsed <= BUDGET
    acceptance(6, ok, f"posture crnn test accuracy {report.accuracy:.3f} "
                      f"({len(result.history)} epochs, best {result.best_epoch}), "
                      f"split {sizes}, {elapsed / 60:.1f} min")
    assert ok


@pytest.mark.slow
@pytest.mark.parametrize("arch", ARCHS)
def test_7_end_to_end_activity(acceptance, arch):
    sizes, result, report, elapsed = _end_to_end("activity", 200, arch)
    ok = sizes == (700, 150, 150) and report.accuracy >= 0.95
    acceptance(7, ok, f"activity {arch} test accuracy {report.accuracy:.3f} "
                      f"({len(result.history)} epochs, best {result.best_epoch}), "
                      f"{elapsed / 60:.1f} min")
    assert ok


def test_8_determinism(acceptance, tmp_path, capsys):
    a, b = tmp_path / "a.spem", tmp_path / "b.spem"
    for out in (a, b):
        assert main(["gen", "--task", "posture", "--per-class", "5", "--seed", "8",
                     "--out", str(out)]) == 0
    gen_ok = a.read_bytes() == b.read_bytes()
    capsys.readouterr()
    losses = []
    for k in range(2):
        assert main(["train", "--dataset", str(a), "--epochs", "2", "--threads", "1", "-q",
                     "--out", str(tmp_path / f"m{k}.spnn")]) == 0
        line = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("final loss")]
        losses.append(float(line[0].split()[-1]))
    diff = abs(losses[0] - losses[1])
    ok = gen_ok and diff <= 1e-12
    acceptance(8, ok, f"gen byte-identical: {gen_ok}; train final loss {losses[0]!r} "
                      f"reproduced to {diff:.1e}")
    assert ok


def test_9_format_fidelity(acceptance, tmp_path):
    image = pytest.importorskip("PIL.Image")
    ds = collect_dataset("posture", 2, seed=9)
    raw = to_bytes(ds)
    spem_ok = to_bytes(from_bytes(raw)) == raw
    model = build_model(ModelConfig(), seed=3)
    save_model(model, tmp_path / "a.spnn")
    save_model(load_model(tmp_path / "a.spnn"), tmp_path / "b.spnn")
    spnn_ok = (tmp_path / "a.spnn").read_bytes() == (tmp_path / "b.spnn").read_bytes()
    pgm_ok = True
    for k in range(len(ds)):
        path = tmp_path / f"f{k}.pgm"
        export_pgm(ds.pixels[k, 9], path)
        with image.open(path) as im:
            pgm_ok &= np.array_equal(np.asarray(im), ds.pixels[k, 9, ..., 0])
        pgm_ok &= np.array_equal(read_pgm(path), ds.pixels[k, 9, ..., 0])
    typed, accepted, crashes = fuzz_spem(to_bytes(ds.subset([0, 1])), cases=10_000, seed=9)
    ok = spem_ok and spnn_ok and pgm_ok and not crashes
    acceptance(9, ok, f"SPEM {spem_ok}, SPNN {spnn_ok}, PGM via Pillow {pgm_ok}; fuzz 10000 cases: "
                      f"{typed} typed errors, {accepted} valid, {len(crashes)} crashes")
    assert ok


def test_10_conservation(acceptance):
    rng = np.random.default_rng(10)
    worst = 0.0
    for k in range(1000):
        task = "posture" if k % 2 == 0 else "activity"
        cls = int(rng.integers(len(POSTURES if task == "posture" else ACTIVITIES)))
        subject = sample_subject(rng)
        scene = make_scene(task, cls, subject, rng)
        force = pressure_at(scene, float(rng.uniform(0, 10))).force
        worst = max(worst, abs(float(force.sum()) - subject.weight * 9.81))
    ok = worst <= 1e-6
    acceptance(10, ok, f"max |sum F - 9.81 W| {worst:.1e} N over 1000 scenes")
    assert ok
