import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spem.scene import (ACTIVITIES, POSTURES, TEMPLATES, LoadPatch, MatGeometry, Modulation,
                        PlacedPatch, SceneError, SubjectProfile, active_weights, make_scene,
                        on_mat_fraction, placed_patches, pose_descriptor, pressure_at, rasterize,
                        sample_subject)

G = MatGeometry()


def test_geometry_defaults():
    assert (G.n, G.m, G.pitch_x, G.pitch_y) == (27, 27, 67.3, 52.3)
    assert G.n * G.pitch_x <= G.length * 1000 and G.m * G.pitch_y <= G.width * 1000


def test_geometry_must_fit_sheet():
    with pytest.raises(ValueError):
        MatGeometry(n=40)


def test_subject_ranges():
    rng = np.random.default_rng(0)
    subjects = [sample_subject(rng) for _ in range(10_000)]
    h = np.array([s.height for s in subjects])
    w = np.array([s.weight for s in subjects])
    a = np.array([s.age for s in subjects])
    assert h.min() >= 1.67 and h.max() <= 1.83
    assert w.min() >= 64 and w.max() <= 78
    assert a.min() >= 21 and a.max() <= 28


def test_subject_deterministic():
    assert sample_subject(np.random.default_rng(4)) == sample_subject(np.random.default_rng(4))


def test_class_range_checked():
    subj = SubjectProfile(1.75, 70, 24)
    with pytest.raises(SceneError):
        make_scene("posture", 4, subj, 0)
    with pytest.raises(SceneError):
        make_scene("activity", -1, subj, 0)
    with pytest.raises(SceneError):
        make_scene("yoga", 0, subj, 0)


def test_supine_template():
    names = {p.name for p in TEMPLATES["supine"]}
    assert {"head", "shoulders", "torso_hips", "heels_l", "heels_r"} <= names
    assert sum(p.weight_fraction for p in TEMPLATES["supine"]) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("name", POSTURES + ACTIVITIES)
def test_active_weights_sum_to_one(name):
    for t in np.linspace(0, 10, 41):
        assert active_weights(TEMPLATES[name], t).sum() == pytest.approx(1.0, abs=1e-9)


def test_hip_lift_phase_uses_shoulders_and_feet():
    patches = TEMPLATES["hip_lift"]
    lifted = [t for t in np.linspace(0, 6, 121) if active_weights(patches, t)[0] == 0]
    assert lifted
    for t in lifted:
        active = {p.name.split("_")[0] for p, w in zip(patches, active_weights(patches, t)) if w > 0}
        assert active == {"shoulders", "feet"}


def test_running_feet_alternate():
    subj = SubjectProfile(1.75, 70, 24)
    scene = make_scene("activity", ACTIVITIES.index("running"), subj, 3)
    for t in (0.1, 0.7, 1.3):
        a = pressure_at(scene, t).force
        b = pressure_at(scene, t + 0.4).force
        dom_a = a > 0.5 * a.max()
        dom_b = b > 0.5 * b.max()
        assert not np.any(dom_a & dom_b)


def test_supine_force_total():
    subj = SubjectProfile(1.75, 70.0, 24)
    scene = make_scene("posture", 0, subj, 1)
    for t in (0.0, 1.3, 4.5):
        assert pressure_at(scene, t).force.sum() == pytest.approx(686.7, abs=1e-6)


def test_posture_is_static():
    scene = make_scene("posture", 2, sample_subject(5), 5)
    assert np.array_equal(pressure_at(scene, 0).force, pressure_at(scene, 4.5).force)


def test_activities_vary_in_time():
    for cls in range(len(ACTIVITIES)):
        scene = make_scene("activity", cls, sample_subject(cls), cls)
        fields = [pressure_at(scene, t).force for t in np.arange(0, 5, 0.25)]
        assert any(not np.allclose(fields[0], f) for f in fields[1:])


def test_seeds_change_placement_not_template():
    subj = SubjectProfile(1.75, 70, 24)
    a = make_scene("posture", 1, subj, 10)
    b = make_scene("posture", 1, subj, 11)
    assert a.placement != b.placement
    assert [p.name for p in a.patches] == [p.name for p in b.patches]


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        pressure_at(make_scene("posture", 0, sample_subject(0), 0), -0.1)


@given(st.integers(0, 2**32 - 1), st.booleans(), st.floats(0, 20))
def test_conservation_and_on_mat(seed, posture, t):
    rng = np.random.default_rng(seed)
    task = "posture" if posture else "activity"
    cls = int(rng.integers(4 if posture else 5))
    subj = sample_subject(rng)
    scene = make_scene(task, cls, subj, rng)
    field = pressure_at(scene, t)
    assert np.all(field.force >= 0)
    assert abs(field.force.sum() - subj.weight * 9.81) <= 1e-6
    assert abs(field.total_force - subj.weight * 9.81) <= 1e-6
    rot = scene.placement[2]
    assert abs(rot) <= (15 if posture else 180)
    assert on_mat_fraction(scene, t) >= 0.95


def test_scene_deterministic():
    def build(seed):
        rng = np.random.default_rng(seed)
        return make_scene("activity", 4, sample_subject(rng), rng)

    a, b = build(42), build(42)
    assert a == b
    assert np.array_equal(pressure_at(a, 2.2).force, pressure_at(b, 2.2).force)


def test_rasterize_single_pixel():
    # an axis-aligned ellipse that fits inside pixel (3, 5) puts all of its force there
    cx, cy = 3.5 * G.pitch_x, 5.5 * G.pitch_y
    field = rasterize([PlacedPatch((cx, cy), (20.0, 15.0), 0.0, 100.0)], None, G)
    assert field.force[3, 5] == pytest.approx(100.0, abs=1e-12)
    assert field.force.sum() == pytest.approx(100.0, abs=1e-12)
    assert np.count_nonzero(field.force) == 1


def test_rasterize_shift_equivariance():
    p = PlacedPatch((600.0, 500.0), (140.0, 90.0), 0.0, 300.0)
    q = PlacedPatch((600.0 + G.pitch_x, 500.0 + G.pitch_y), (140.0, 90.0), 0.0, 300.0)
    a = rasterize([p], None, G).force
    b = rasterize([q], None, G).force
    assert np.allclose(b[1:, 1:], a[:-1, :-1], atol=1e-9)


def test_rasterize_off_mat_raises():
    with pytest.raises(SceneError):
        rasterize([PlacedPatch((-500.0, -500.0), (10.0, 10.0), 0.0, 5.0)], None, G)


def test_rasterize_total_override():
    p = [PlacedPatch((600.0, 500.0), (100.0, 80.0), 0.3, 10.0),
         PlacedPatch((1200.0, 700.0), (60.0, 60.0), 0.3, 30.0)]
    field = rasterize(p, 200.0, G)
    assert field.force.sum() == pytest.approx(200.0, abs=1e-9)


def test_modulation_shapes():
    sq = Modulation("square", period=2.0, duty=0.25, low=0.1)
    assert sq(0.1) == 1.0 and sq(1.0) == 0.1
    sine = Modulation("sine", period=4.0, depth=0.5)
    assert sine(1.0) == pytest.approx(1.5)
    with pytest.raises(SceneError):
        Modulation("saw")(0.3)


def test_sway_moves_patch():
    p = LoadPatch("x", (0.0, 0.0), (10.0, 10.0), 1.0, sway=(0.0, 30.0), sway_period=4.0)
    assert p.offset(1.0) == pytest.approx((0.0, 30.0))
    assert not p.is_static


def test_placed_patches_skip_inactive():
    scene = make_scene("activity", ACTIVITIES.index("hip_lift"), sample_subject(0), 0)
    counts = {len(placed_patches(scene, t)) for t in np.linspace(0, 3, 31)}
    assert len(counts) == 2


def _centroid_accuracy(task, per_class, seed):
    classes = len(POSTURES if task == "posture" else ACTIVITIES)
    feats, labels = [], []
    for c in range(classes):
        for k in range(per_class):
            rng = np.random.default_rng([seed, c, k])
            scene = make_scene(task, c, sample_subject(rng), rng)
            # time-averaged over one stream window
            field = np.mean([pressure_at(scene, t).force for t in np.arange(1.0, 5.51, 0.5)], axis=0)
            feats.append(pose_descriptor(field, G))
            labels.append(c)
    x, y = np.array(feats), np.array(labels)
    fit = np.arange(len(y)) % 2 == 0
    cent = np.array([x[fit & (y == c)].mean(axis=0) for c in range(classes)])
    pred = np.argmin(((x[~fit][:, None] - cent[None]) ** 2).sum(-1), axis=1)
    return float((pred == y[~fit]).mean())


@pytest.mark.parametrize("task,per_class", [("posture", 50), ("activity", 40)])
def test_nearest_centroid_separability(task, per_class):
    assert _centroid_accuracy(task, per_class, seed=8) > 0.9


def test_pose_descriptor_rotation_invariant():
    scene = make_scene("posture", 2, SubjectProfile(1.75, 70, 24), 3)
    f = pressure_at(scene, 0).force
    d = pose_descriptor(f, G)
    assert d.sum() == pytest.approx(1.0)
    assert math.isclose(np.abs(d - pose_descriptor(f * 3.0, G)).max(), 0.0, abs_tol=1e-12)
