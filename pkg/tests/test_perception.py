import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from teardown.errors import InvalidDepthError, NoDepthError
from teardown.perception import (
    CameraModel, GroundTruthPart, NoiseModel, PartTracker, PixelDetection, RigidTransform,
    TrackedPart, associate, back_project, depth_at, fine_alignment_offset, merge_duplicates,
    read_detection_log, smooth, synthetic_detect, to_world, write_detection_log,
)

CAM = CameraModel(600.0, 600.0, 320.0, 320.0)


def rot_z(theta):
    c, s = math.cos(theta), math.sin(theta)
    return [[c, -s, 0], [s, c, 0], [0, 0, 1]]


def rot_x(theta):
    c, s = math.cos(theta), math.sin(theta)
    return [[1, 0, 0], [0, c, -s], [0, s, c]]


def track(tid, cat, pixel):
    return TrackedPart(tid, cat, (0, 0, 0), (0, 0, 0), 0, last_pixel=pixel)


def det(cat, u, v, conf=0.9, depth=None):
    return PixelDetection(cat, conf, (u, v), depth=depth)


# -- geometry ------------------------------------------------------------------

def test_back_project_principal_point():
    assert back_project((320, 320), 0.5, CAM).tolist() == [0.0, 0.0, 0.5]


def test_back_project_hand_value():
    # (380 - 320) * 0.5 / 600 = 0.05
    p = back_project((380, 320), 0.5, CAM)
    assert p == pytest.approx([0.05, 0.0, 0.5], abs=1e-15)


@pytest.mark.parametrize("d", [0.0, -1.0, float("nan"), float("inf")])
def test_back_project_rejects_bad_depth(d):
    with pytest.raises(InvalidDepthError):
        back_project((1, 1), d, CAM)


@given(st.floats(0, 639.999), st.floats(0, 639.999), st.floats(1e-3, 50))
def test_back_project_round_trip(u, v, d):
    pu, pv = CAM.project(back_project((u, v), d, CAM))
    assert abs(pu - u) < 1e-9 and abs(pv - v) < 1e-9


def test_camera_rejects_bad_focal():
    with pytest.raises(ValueError):
        CameraModel(0.0, 1.0, 0, 0)


def test_depth_at_identity_window():
    grid = np.full((5, 5), 1.0)
    grid[2, 3] = 0.42
    assert depth_at(grid, (3, 2), window=1) == 0.42


def test_depth_at_median_ignores_outlier():
    grid = np.full((3, 3), 0.5)
    grid[0, 0] = 9.9
    assert depth_at(grid, (1, 1), window=3) == 0.5


def test_depth_at_skips_nan_and_clips_border():
    grid = np.array([[np.nan, 0.3], [0.1, 0.2]])
    assert depth_at(grid, (0, 0), window=3) == pytest.approx(0.2)


def test_depth_at_all_nan():
    with pytest.raises(NoDepthError):
        depth_at(np.full((3, 3), np.nan), (1, 1), window=3)


def test_depth_at_even_window():
    with pytest.raises(ValueError):
        depth_at(np.ones((3, 3)), (1, 1), window=2)


def test_to_world_identity_and_translation():
    ident = RigidTransform.identity()
    assert to_world((1, 2, 3), ident, ident).tolist() == [1, 2, 3]
    he = RigidTransform.from_translation((0, 0, 0.1))
    assert to_world((0, 0, 0), he, ident).tolist() == [0, 0, 0.1]


def test_to_world_hand_computed():
    # camera rotated 90 deg about z and offset; tcp translated
    he = RigidTransform(rot_z(math.pi / 2), (0.0, 0.0, 0.1))
    tcp = RigidTransform.from_translation((1.0, 2.0, 3.0))
    # R_z(90) (1,0,0) = (0,1,0); + (0,0,0.1); + (1,2,3)
    assert to_world((1, 0, 0), he, tcp) == pytest.approx([1.0, 3.0, 3.1], abs=1e-12)


angles = st.floats(-math.pi, math.pi)
vecs = st.tuples(*[st.floats(-2, 2)] * 3)


@given(angles, angles, vecs, angles, vecs, vecs)
def test_to_world_inverse_round_trip(a, b, t1, c, t2, p):
    he = RigidTransform(np.array(rot_z(a)) @ np.array(rot_x(b)), t1)
    tcp = RigidTransform(rot_x(c), t2)
    w = to_world(p, he, tcp)
    back = he.inverse().apply(tcp.inverse().apply(w))
    assert np.allclose(back, p, atol=1e-9)


def test_rigid_transform_rejects_non_rotation():
    with pytest.raises(ValueError):
        RigidTransform([[1, 0, 0], [0, 1, 0], [0, 0, -1]])  # reflection
    with pytest.raises(ValueError):
        RigidTransform([[2, 0, 0], [0, 1, 0], [0, 0, 1]])


# -- association / merging ------------------------------------------------------

def test_associate_single_pair():
    res = associate([track("a", "screw", (100, 100))], [det("screw", 103, 100)])
    assert res.pairs == [(0, 0)]


def test_associate_class_consistent():
    res = associate([track("a", "screw", (100, 100))], [det("lid", 101, 100)])
    assert res.pairs == [] and res.unmatched_tracks == [0] and res.unmatched_detections == [0]


def test_associate_prefers_nearest():
    tracks = [track("far", "screw", (110, 100)), track("near", "screw", (102, 100))]
    assert associate(tracks, [det("screw", 100, 100)]).pairs == [(1, 0)]


def test_associate_gate():
    assert associate([track("a", "screw", (0, 0))], [det("screw", 16, 0)]).pairs == []
    assert associate([track("a", "screw", (0, 0))], [det("screw", 15, 0)]).pairs == [(0, 0)]


def test_associate_tie_goes_to_lower_track_id():
    tracks = [track("b", "screw", (105, 100)), track("a", "screw", (95, 100))]
    assert associate(tracks, [det("screw", 100, 100)]).pairs == [(1, 0)]


pix = st.tuples(st.integers(0, 60), st.integers(0, 60))


@given(st.lists(st.tuples(st.sampled_from("ab"), pix), max_size=6),
       st.lists(st.tuples(st.sampled_from("ab"), pix), max_size=6))
def test_associate_greedy_local_optimality(tr, de):
    tracks = [track(f"t{i}", c, p) for i, (c, p) in enumerate(tr)]
    dets = [det(c, *p) for c, p in de]
    res = associate(tracks, dets, gate=30)

    def dist(ti, di):
        return math.dist(tracks[ti].last_pixel, dets[di].centroid)

    for ti, di in res.pairs:
        assert tracks[ti].category == dets[di].category
    # no single swap between two matched pairs lowers the total distance
    for i, (t1, d1) in enumerate(res.pairs):
        for t2, d2 in res.pairs[i + 1:]:
            if tracks[t1].category != tracks[t2].category:
                continue
            swapped = dist(t1, d2) + dist(t2, d1)
            if dist(t1, d2) <= 30 and dist(t2, d1) <= 30:
                assert dist(t1, d1) + dist(t2, d2) <= swapped + 1e-9
    # every leftover same-class pair inside the gate would have been taken
    for ti in res.unmatched_tracks:
        for di in res.unmatched_detections:
            assert tracks[ti].category != dets[di].category or dist(ti, di) > 30


def test_merge_pair_averages():
    out = merge_duplicates([det("screw", 100, 100, 0.6), det("screw", 102, 100, 0.8)], gate=5)
    assert len(out) == 1 and out[0].centroid == (101, 100) and out[0].confidence == 0.8


def test_merge_keeps_distant():
    assert len(merge_duplicates([det("screw", 100, 100), det("screw", 150, 100)], gate=5)) == 2


def test_merge_chain_single_linkage():
    out = merge_duplicates([det("screw", 100, 100), det("screw", 104, 100), det("screw", 108, 100)], gate=5)
    assert len(out) == 1 and out[0].centroid == pytest.approx((104, 100))


def test_merge_respects_category():
    assert len(merge_duplicates([det("screw", 100, 100), det("lid", 100, 100)], gate=5)) == 2


@given(st.lists(st.tuples(st.sampled_from("ab"), st.floats(0, 40), st.floats(0, 40)), max_size=10))
def test_merge_idempotent(items):
    dets = [det(c, u, v) for c, u, v in items]
    once = merge_duplicates(dets, gate=5)
    assert merge_duplicates(once, gate=5) == once


def test_smooth_examples():
    assert smooth((0, 0, 0), (1, 2, 3), alpha=1.0) == (1, 2, 3)
    assert smooth((0, 0, 0), (1, 0, 0), alpha=0.5) == (0.5, 0, 0)


def test_smooth_convergence_step_count():
    alpha = 0.3
    steps = math.ceil(math.log(1e-6) / math.log(1 - alpha))
    p = (0.0, 0.0, 0.0)
    for _ in range(steps):
        p = smooth(p, (1.0, -2.0, 0.5), alpha)
    assert np.allclose(p, (1.0, -2.0, 0.5), atol=1e-6 * 2.0 + 1e-12)


@given(vecs, vecs, st.floats(1e-3, 1.0))
def test_smooth_on_segment(prev, new, alpha):
    out = smooth(prev, new, alpha)
    for p, n, o in zip(prev, new, out):
        assert min(p, n) - 1e-12 <= o <= max(p, n) + 1e-12


def test_fine_alignment_offset():
    assert fine_alignment_offset((320, 320), (320, 320), 0.05) == (0.0, 0.0)
    assert fine_alignment_offset((330, 316), (320, 320), 0.05) == pytest.approx((0.5, -0.2))
    corr = fine_alignment_offset((330, 316), (320, 320), 0.05)
    moved = (330 - corr[0] / 0.05, 316 - corr[1] / 0.05)
    assert fine_alignment_offset(moved, (320, 320), 0.05) == pytest.approx((0.0, 0.0))


def test_pixel_detection_bounds():
    with pytest.raises(ValueError):
        det("screw", 640, 0)
    with pytest.raises(ValueError):
        det("screw", 1, 1, conf=1.5)


# -- synthetic detector ----------------------------------------------------------

GT = [GroundTruthPart(f"s{i}", "screw", (100 + 50 * i, 200), 0.3) for i in range(7)]


def test_synthetic_noiseless_is_exact():
    out = synthetic_detect(GT, NoiseModel(), np.random.default_rng(0))
    assert [(d.truth_id, d.centroid) for d in out] == [(g.part_id, g.pixel) for g in GT]


def test_synthetic_deterministic():
    noise = NoiseModel(0.92, 0.88, 6.3, 0.001)
    a = synthetic_detect(GT, noise, np.random.default_rng(5), ["screw", "lid"])
    b = synthetic_detect(GT, noise, np.random.default_rng(5), ["screw", "lid"])
    assert a == b


def test_synthetic_statistics():
    noise = NoiseModel(0.92, 0.88, 6.3, 0.0)
    gen = np.random.default_rng(11)
    hits = fps = total = 0
    radial = []
    for _ in range(4000):
        out = synthetic_detect(GT, noise, gen, ["screw", "lid"])
        for d in out:
            if d.truth_id is None:
                fps += 1
            else:
                hits += 1
                g = GT[int(d.truth_id[1:])]
                radial.append(math.dist(d.centroid, g.pixel))
        total += len(out)
    assert hits / (4000 * 7) == pytest.approx(0.88, abs=0.01)
    assert hits / total == pytest.approx(0.92, abs=0.01)
    assert float(np.mean(radial)) == pytest.approx(6.3, rel=0.03)


def test_synthetic_skips_hidden_parts():
    hidden = [GroundTruthPart("x", "screw", (10, 10), 0.3, visible=False)]
    assert synthetic_detect(hidden, NoiseModel(0.5, 1.0), np.random.default_rng(0)) == []


# -- tracker ---------------------------------------------------------------------

def test_tracker_confirms_and_drops_tracks():
    trk = PartTracker(CAM, RigidTransform.identity(), min_hits=2, max_misses=3)
    tcp = RigidTransform.identity()
    trk.update([det("screw", 380, 320, depth=0.5)], tcp)
    assert trk.confirmed() == []
    trk.update([det("screw", 381, 320, depth=0.5)], tcp)
    (t,) = trk.confirmed()
    assert t.id == "screw#0001" and t.miss_count == 0
    assert t.position_world == pytest.approx((0.050833, 0.0, 0.5), abs=1e-6)
    for _ in range(3):
        trk.update([], tcp)
    assert trk.tracks == []


def test_detection_log_round_trip(tmp_path):
    dets = [PixelDetection("screw", 0.75, (1.5, 2.25), 3, depth=0.3),
            PixelDetection("lid", 0.5, (100.0, 7.0), 1)]
    path = tmp_path / "log.csv"
    write_detection_log(path, dets)
    frames = read_detection_log(path)
    assert list(frames) == [1, 3]
    assert frames[3][0] == dets[0] and frames[1][0] == dets[1]
