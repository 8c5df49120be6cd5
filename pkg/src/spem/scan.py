"""Stream collection: scene clock, element dynamics, frame scans and dataset assembly."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .crossbar import CircuitParams, PressureFrame, scan_frame
from .scene import (TASK_IDS, MatGeometry, SceneScript, class_names, make_scene,
                    pressure_at, sample_subject)
from .velostat import VelostatParams, VelostatState, init_state, step_state

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimingConfig:
    frame_period: float = 0.5
    frames_per_stream: int = 10
    stream_period: float = 5.0
    # the subject is on the mat this long before the first frame is scanned
    lead_time: float = 1.0
    # piecewise-constant force updates per frame period
    substeps: int = 5

    def __post_init__(self):
        if self.frame_period <= 0 or self.frames_per_stream < 1:
            raise ValueError("frame_period must be positive and frames_per_stream >= 1")
        if abs(self.frames_per_stream * self.frame_period - self.stream_period) > 1e-9:
            raise ValueError("frames_per_stream * frame_period must equal stream_period")
        if self.lead_time < self.frame_period:
            raise ValueError("lead_time must cover at least one frame period")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


@dataclass(frozen=True)
class PressureStream:
    frames: tuple[PressureFrame, ...]
    label: int
    stream_id: int = 0
    subject_id: int = 0

    @property
    def pixels(self) -> np.ndarray:
        """Stacked frames, shape ``(j, n, m, d)``."""
        return np.stack([f.pixels for f in self.frames])

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames])


class _FieldCache:
    """Rasterized fields are reused for scenes without time dependence."""

    def __init__(self, scene: SceneScript):
        self.scene = scene
        self._static = pressure_at(scene, 0.0).force if scene.is_static else None

    def __call__(self, t: float) -> np.ndarray:
        if self._static is not None:
            return self._static
        return pressure_at(self.scene, t).force


def _advance(state, fields: _FieldCache, t0: float, duration: float, substeps: int, params):
    dt = duration / substeps
    for k in range(substeps):
        # force sampled at the sub-interval midpoint
        state = step_state(state, fields(t0 + (k + 0.5) * dt), dt, params)
    return state


def collect_stream(scene: SceneScript, state: VelostatState, circuit: CircuitParams,
                   timing: TimingConfig | None = None, rng=None,
                   velostat: VelostatParams | None = None, label: int | None = None,
                   stream_id: int = 0, subject_id: int = 0):
    """Record one stream of ``frames_per_stream`` scans of ``scene``.

    Returns the stream and the mat state after the last frame. Frame
    timestamps run ``frame_period, 2*frame_period, ...``; the scene clock is
    ``lead_time - frame_period`` seconds ahead of them.
    """
    timing = timing or TimingConfig()
    velostat = velostat or VelostatParams()
    if state.s.shape != scene.geometry.shape:
        raise ValueError("state and scene geometry differ")
    seeds = np.random.SeedSequence(rng) if not isinstance(rng, np.random.SeedSequence) else rng
    frame_seeds = seeds.spawn(timing.frames_per_stream)
    fields = _FieldCache(scene)

    offset = timing.lead_time - timing.frame_period
    state = _advance(state, fields, 0.0, offset, timing.substeps, velostat)
    frames = []
    for k in range(timing.frames_per_stream):
        t_scene = offset + k * timing.frame_period
        state = _advance(state, fields, t_scene, timing.frame_period, timing.substeps, velostat)
        stamp = (k + 1) * timing.frame_period
        frames.append(scan_frame(state, circuit, np.random.default_rng(frame_seeds[k]),
                                 timestamp=stamp, velostat=velostat))
    label = scene.class_id if label is None else label
    return PressureStream(tuple(frames), label, stream_id, subject_id), state


def collect_dataset(task: str, samples_per_class: int, seed: int = 0,
                    geometry: MatGeometry | None = None,
                    velostat: VelostatParams | None = None,
                    circuit: CircuitParams | None = None,
                    timing: TimingConfig | None = None,
                    templates=None, persist_state: bool = False, progress=None):
    """Generate a balanced stream dataset.

    Every sample gets a fresh subject, placement and noise stream derived from
    ``seed``. The mat (its baseline offsets) is drawn once per dataset and its
    conductances are reset between samples unless ``persist_state`` is set.
    """
    from .dataset_io import Dataset

    if samples_per_class < 1:
        raise ValueError("samples_per_class must be >= 1")
    geometry = geometry or MatGeometry()
    velostat = velostat or VelostatParams()
    circuit = circuit or CircuitParams(noise_counts=velostat.noise_counts)
    timing = timing or TimingConfig()
    names = class_names(task)
    n_classes = len(names)
    total = samples_per_class * n_classes

    root = np.random.SeedSequence(seed)
    mat_seed, *sample_seeds = root.spawn(1 + total)
    fresh = init_state(geometry, velostat, np.random.default_rng(mat_seed), circuit)

    j = timing.frames_per_stream
    pixels = np.empty((total, j, geometry.n, geometry.m, 1), dtype=np.uint8)
    labels = np.empty(total, dtype=np.int64)
    state = fresh
    for idx in range(total):
        cls = idx % n_classes
        scene_seed, noise_seed = sample_seeds[idx].spawn(2)
        rng = np.random.default_rng(scene_seed)
        subject = sample_subject(rng)
        scene = make_scene(task, cls, subject, rng, geometry, templates)
        if not persist_state:
            state = fresh
        stream, state = collect_stream(scene, state, circuit, timing, noise_seed, velostat,
                                       label=cls, stream_id=idx, subject_id=idx)
        pixels[idx] = stream.pixels
        labels[idx] = cls
        if progress is not None:
            progress(idx + 1, total)
    log.info("generated %d %s streams (%d classes)", total, task, n_classes)
    ids = np.arange(total, dtype=np.int64)
    return Dataset(task=TASK_IDS[task], n=geometry.n, m=geometry.m, d=1, j=j,
                   class_count=n_classes, master_seed=seed, pixels=pixels, labels=labels,
                   stream_ids=ids, subject_ids=ids.copy(), frame_period=timing.frame_period)
