import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import ndimage

from depthtrack.depth_io import Actor, SceneSpec, format_box_records, synthesize_scene
from depthtrack.noise_filter import Region, RegionSet, process_frame
from depthtrack.tracker import (
    RoiTrack,
    Status,
    TrackParams,
    area_change,
    detect_occlusion,
    euclidean_gap,
    init_tracker,
    occlusion_score,
    refresh_rois,
    step,
)

from scenes import filtered


def run(spec, params=TrackParams(), seed=0):
    scene = synthesize_scene(spec, seed)
    regions = [process_frame(f) for f in scene.frames]
    return scene, regions, init_tracker(regions, params)


def track_of(track_id, *masks):
    tr = RoiTrack(track_id)
    for f, m in enumerate(masks):
        tr.append(f, Region.from_mask(1, m), Status.ACTIVE)
    return tr


def block(top, left, h, w, shape=(60, 60)):
    m = np.zeros(shape, dtype=bool)
    m[top : top + h, left : left + w] = True
    return m


def brute_gap(ma, mb):
    if (ndimage.binary_dilation(ma, structure=np.ones((3, 3))) & mb).any():
        return 0.0
    ba = np.argwhere(ma & ~ndimage.binary_erosion(ma, structure=np.ones((3, 3))))
    bb = np.argwhere(mb & ~ndimage.binary_erosion(mb, structure=np.ones((3, 3))))
    return min(math.dist(p, q) for p in ba for q in bb)


class TestInit:
    def test_too_few_frames(self):
        rs = [RegionSet.from_labels(np.ones((8, 8), dtype=np.int32), i) for i in range(5)]
        with pytest.raises(ValueError, match="K\\+1"):
            init_tracker(rs, TrackParams(k=5))

    def test_k_bound(self):
        with pytest.raises(ValueError):
            TrackParams(k=1)

    def test_static_scene(self):
        spec = SceneSpec(8, 120, 100, [Actor("rectangle", 30, 30, 30, 30)])
        _, _, state = run(spec)
        assert state.tracks == {}
        assert state.frame_index == 7

    def test_one_mover(self):
        spec = SceneSpec(6, 160, 100, [Actor("rectangle", 20, 30, 30, 30, velocity=(4, 0))])
        _, _, state = run(spec)
        assert [t.status for t in state.tracks.values()] == [Status.ACTIVE]
        tr = state.tracks[1]
        assert tr.current.frame_index == 5
        assert [f.frame_index for f in tr.frames] == list(range(6))

    def test_two_movers(self):
        spec = SceneSpec(
            6,
            200,
            120,
            [Actor("rectangle", 20, 20, 30, 30, velocity=(4, 0)), Actor("disc", 140, 60, 36, 36, velocity=(-3, 0))],
        )
        _, _, state = run(spec)
        assert sorted(state.tracks) == [1, 2]
        assert all(t.status is Status.ACTIVE for t in state.tracks.values())


class TestStep:
    def test_follows_fast_blob(self):
        spec = SceneSpec(100, 640, 120, [Actor("rectangle", 10, 40, 40, 40, velocity=(5, 0))])
        scene, _, state = run(spec)
        (tr,) = state.tracks.values()
        assert tr.status is Status.ACTIVE and len(tr.frames) == 100
        for f in tr.frames:
            (_, gt), = scene.ground_truth.boxes(f.frame_index)
            assert max(abs(a - b) for a, b in zip(f.box, gt)) <= 1

    def test_stopping_blob_is_lost(self):
        velocity = [(3, 0)] * 15 + [(0, 0)] * 10 + [(3, 0)] * 14
        spec = SceneSpec(40, 260, 100, [Actor("rectangle", 10, 30, 30, 30, velocity=velocity)])
        _, _, state = run(spec)
        first = state.tracks[1]
        assert first.status is Status.LOST
        assert 15 < first.lost_at <= 25
        # movement resumes: a fresh identity, no re-identification
        assert any(t.track_id > 1 and t.frames[-1].frame_index == 39 for t in state.tracks.values())

    def test_size_mismatch(self):
        _, regions, state = run(SceneSpec(6, 100, 80, [Actor("rectangle", 10, 10, 20, 20, velocity=(3, 0))]))
        with pytest.raises(ValueError, match="differs"):
            step(state, RegionSet.from_labels(np.ones((10, 10), dtype=np.int32), 6))

    def test_step_outputs(self):
        spec = SceneSpec(7, 160, 100, [Actor("rectangle", 20, 30, 30, 30, velocity=(4, 0))])
        scene = synthesize_scene(spec, 0)
        regions = [process_frame(f) for f in scene.frames]
        state = init_tracker(regions[:6])
        state, out = step(state, regions[6])
        assert [(r.frame_index, r.object_id, r.status) for r in out] == [(6, 1, "active")]
        assert state.counter == 2


class TestRefresh:
    def test_entering_blob(self):
        spec = SceneSpec(
            34,
            240,
            120,
            [Actor("rectangle", 10, 20, 30, 30, velocity=(3, 0)), Actor("disc", 150, 70, 30, 30, velocity=(-2, 0), appear=20)],
        )
        _, _, state = run(spec)
        late = [t for t in state.tracks.values() if t.frames[0].frame_index >= 20]
        assert len(late) == 1
        birth = late[0].frames[-1].frame_index - len(late[0].frames) + 1
        assert 20 <= birth <= 30
        assert state.tracks[1].status is Status.ACTIVE

    def test_vanishing_blob(self):
        spec = SceneSpec(
            30,
            240,
            120,
            [Actor("rectangle", 10, 20, 30, 30, velocity=(3, 0)), Actor("disc", 150, 70, 30, 30, velocity=(-2, 0), vanish=15)],
        )
        _, _, state = run(spec)
        gone = [t for t in state.tracks.values() if t.lost_at is not None]
        assert len(gone) == 1 and 15 <= gone[0].lost_at <= 20

    def test_no_change(self):
        _, _, state = run(SceneSpec(8, 160, 100, [Actor("rectangle", 20, 30, 30, 30, velocity=(4, 0))]))
        before = {i: (t.status, len(t.frames), t.region_id) for i, t in state.tracks.items()}
        state.counter = 3
        refresh_rois(state)
        assert state.counter == 0
        assert {i: (t.status, len(t.frames), t.region_id) for i, t in state.tracks.items()} == before


class TestGap:
    def test_overlap(self):
        assert euclidean_gap(track_of(1, block(0, 0, 10, 10)), track_of(2, block(5, 5, 10, 10))) == 0

    def test_pixels(self):
        a = block(0, 0, 1, 1)
        b = block(3, 4, 1, 1)
        assert euclidean_gap(track_of(1, a), track_of(2, b)) == 5.0

    def test_squares(self):
        a, b = block(10, 0, 10, 10), block(10, 19, 10, 10)
        assert euclidean_gap(track_of(1, a), track_of(2, b)) == brute_gap(a, b) == 10.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 50), st.integers(0, 50), st.integers(1, 9), st.integers(1, 9), st.integers(0, 50), st.integers(0, 50))
    def test_symmetric_and_touch(self, t1, l1, s1, t2, l2, s2):
        a, b = block(t1, l1, s1, s1), block(t2, l2, s2, s2)
        assume(a.any() and b.any())
        ta, tb = track_of(1, a), track_of(2, b)
        g = euclidean_gap(ta, tb)
        assert g == euclidean_gap(tb, ta)
        assert g == pytest.approx(brute_gap(a, b))
        touching = bool((ndimage.binary_dilation(a, structure=np.ones((3, 3))) & b).any())
        assert (g == 0) == touching


class TestOcclusion:
    def test_area_change(self):
        assert area_change(track_of(1, block(0, 0, 10, 10), block(1, 1, 10, 10))) == 0
        grow = track_of(1, block(0, 0, 10, 10), block(0, 0, 10, 14))
        assert area_change(grow) == 40
        shrink = track_of(1, block(0, 0, 10, 10), block(0, 0, 10, 5))
        assert area_change(shrink) == 50
        with pytest.raises(ValueError):
            area_change(track_of(1, block(0, 0, 3, 3)))

    def test_formula(self):
        assert occlusion_score(100, 0) == 50
        assert occlusion_score(0, 37) == 0

    @settings(max_examples=100)
    @given(st.floats(1e-6, 1e4), st.floats(0, 500))
    def test_od_bounds(self, delta, gap):
        od = occlusion_score(delta, gap)
        assert delta / 2 <= od <= delta
        if gap < 30:
            assert od < delta

    def test_far_pair_not_flagged(self):
        a = track_of(1, block(0, 0, 10, 10), block(0, 1, 10, 10))
        b = track_of(2, block(40, 40, 10, 10), block(40, 38, 10, 10))
        r = detect_occlusion(a, b)
        assert r.od == 0 and r.gap > 30 and not r.flagged

    def test_steady_occluder(self):
        # b keeps its size while a loses its right-hand columns behind it
        a = track_of(1, block(10, 0, 10, 20), block(10, 0, 10, 16))
        b = track_of(2, block(10, 21, 10, 10), block(10, 16, 10, 10))
        r = detect_occlusion(a, b)
        assert (r.occludee, r.occluder, r.gap) == (1, 2, 0.0)
        assert r.od == 0 and r.flagged

    def test_both_changing_fast(self):
        # the steadier track still loses 90% of its area: no occlusion call
        a = track_of(1, block(10, 0, 10, 20), block(10, 0, 10, 2))
        b = track_of(2, block(10, 21, 10, 10), block(10, 2, 10, 40))
        r = detect_occlusion(a, b)
        assert (r.occludee, r.occluder, r.gap) == (2, 1, 0.0)
        assert r.area_change == pytest.approx(0.9)
        assert r.od >= 0.4 and not r.flagged

    def test_tie_goes_to_lower_id(self):
        a = track_of(7, block(10, 0, 10, 10), block(10, 1, 10, 10))
        b = track_of(3, block(10, 12, 10, 10), block(10, 11, 10, 10))
        r = detect_occlusion(a, b)
        assert r.occludee == 3 and not r.flagged

    def test_converging_scene(self):
        _, _, regions = filtered("converging_rect")
        state = init_tracker(list(regions))
        flagged = [r for r in state.reports if r.flagged]
        assert flagged
        occludee = state.tracks[flagged[0].occludee]
        assert occludee.frames[0].box.x > 200  # the far actor starts on the right
        assert any(f.status is Status.OCCLUDED for f in occludee.frames)


def masks_disjoint(state, shape):
    frames = {f.frame_index for t in state.tracks.values() for f in t.frames}
    for f in frames:
        live = [
            t.frame(f).region.full_mask(shape)
            for t in state.tracks.values()
            if t.frame(f) is not None and t.frame(f).status is Status.ACTIVE
        ]
        total = sum(m.astype(int) for m in live)
        if live:
            assert total.max() <= 1


class TestContracts:
    @pytest.mark.parametrize("name", ["neighbourhood", "converging_rect", "converging_disc"])
    def test_pruning_equivalence(self, name):
        _, _, regions = filtered(name)
        on = init_tracker(list(regions), TrackParams(optimize=True))
        off = init_tracker(list(regions), TrackParams(optimize=False))
        assert format_box_records(on.records()) == format_box_records(off.records())
        assert all(s.pruned <= s.full for s in on.search)

    def test_workers_deterministic(self):
        _, _, regions = filtered("neighbourhood")
        a = init_tracker(list(regions), TrackParams(workers=1))
        b = init_tracker(list(regions), TrackParams(workers=4))
        assert format_box_records(a.records()) == format_box_records(b.records())

    @pytest.mark.parametrize("name", ["neighbourhood", "converging_rect"])
    def test_disjoint_masks(self, name):
        spec, _, regions = filtered(name)
        masks_disjoint(init_tracker(list(regions)), (spec.height, spec.width))

    def test_area_history(self):
        _, _, regions = filtered("neighbourhood")
        state = init_tracker(list(regions))
        for t in state.tracks.values():
            assert len(t.areas) == len(t.frames)
            idx = [f.frame_index for f in t.frames]
            assert idx == list(range(idx[0], idx[0] + len(idx)))
