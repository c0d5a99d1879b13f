import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from signgan.pose import (
    HAND_PATCH,
    EmptyGoodHandSetWarning,
    HandCrop,
    InsufficientLandmarksError,
    JointLayout,
    LineConfig,
    NoHandError,
    NormParams,
    OutOfFrameWarning,
    PoseFormatError,
    PoseFrame,
    PoseSequence,
    compute_norm_params,
    crop_hand,
    default_layout,
    dump_heatmaps,
    ground_truth_counters,
    normalize_pose,
    parse_pose_json,
    rasterize_batch,
    rasterize_heatmap,
    select_good_hands,
    serialize_pose_json,
    to_pixels,
)

from oracles import line_pixels_exact

LAYOUT = default_layout()


def random_sequence(rng, n=None, layout=LAYOUT):
    n = n or int(rng.integers(1, 12))
    coords = rng.uniform(0, 1, size=(n, layout.n_joints, 2))
    conf = rng.uniform(0.05, 1, size=(n, layout.n_joints))
    conf[rng.uniform(size=conf.shape) < 0.1] = 0.0
    coords[conf == 0] = 0.0
    return PoseSequence(coords, conf, ground_truth_counters(n), layout)


def tiny_layout():
    return JointLayout(("a", "b", "c"), ((0, 1), (1, 2)), (0, 2))


# -- layout ---------------------------------------------------------------


def test_default_layout_shape():
    assert LAYOUT.n_joints == 10 + 42
    assert LAYOUT.n_limbs == 9 + 40
    assert LAYOUT.joint_names[LAYOUT.anchor("left")] == "lh_middle_1"
    assert LAYOUT.joint_names[LAYOUT.anchor("right")] == "rh_middle_1"
    face = default_layout(face=True)
    assert face.n_joints == LAYOUT.n_joints + 5 and face.n_limbs == LAYOUT.n_limbs + 5


@pytest.mark.parametrize(
    "limbs, anchors",
    [(((0, 3),), (0, 1)), (((1, 1),), (0, 1)), (((0, 1), (1, 0)), (0, 1)), (((0, 1),), (0, 5))],
)
def test_layout_invariants_rejected(limbs, anchors):
    with pytest.raises(ValueError):
        JointLayout(("a", "b", "c"), limbs, anchors)


# -- JSON ------------------------------------------------------------------


def _doc_one_frame(layout, x, y, c=1.0, canvas=(100, 100)):
    person = {}
    for key, a, b in layout.json_groups:
        person[key] = [x, y, c] * (b - a)
    return {"canvas": {"width": canvas[0], "height": canvas[1]}, "frames": [{"people": [person]}]}


def test_parse_center_maps_to_midpoint():
    seq = parse_pose_json(json.dumps(_doc_one_frame(LAYOUT, 50, 50)).encode(), LAYOUT)
    assert len(seq) == 1
    np.testing.assert_array_equal(seq.coords[0], np.full((LAYOUT.n_joints, 2), 0.5))
    assert seq.counters[0] == 1.0


def test_parse_zero_confidence_sentinel():
    doc = _doc_one_frame(LAYOUT, 0, 0, 0.0)
    seq = parse_pose_json(json.dumps(doc).encode(), LAYOUT)
    assert np.all(seq.coords == 0) and np.all(seq.confidence == 0)


def test_parse_malformed_json_names_offset():
    bad = b'{"canvas": {"width": 10, "height": 10}, "frames": [ }'
    with pytest.raises(PoseFormatError, match="byte offset 52"):
        parse_pose_json(bad, LAYOUT)


def test_parse_joint_mismatch_names_frame():
    doc = _doc_one_frame(LAYOUT, 1, 1)
    doc["frames"].append(json.loads(json.dumps(doc["frames"][0])))
    doc["frames"][1]["people"][0]["hand_left_keypoints_2d"] = [1, 1, 1] * 20
    with pytest.raises(PoseFormatError, match="frame 1"):
        parse_pose_json(json.dumps(doc).encode(), LAYOUT)


def test_roundtrip_100_random_sequences():
    rng = np.random.default_rng(0)
    for _ in range(100):
        seq = random_sequence(rng)
        canvas = tuple(int(v) for v in rng.integers(32, 2000, size=2))
        back = parse_pose_json(serialize_pose_json(seq, canvas), LAYOUT)
        np.testing.assert_allclose(back.coords, seq.coords, atol=1e-6)
        np.testing.assert_allclose(back.confidence, seq.confidence, atol=1e-6)
        np.testing.assert_allclose(back.counters, seq.counters, atol=1e-6)
        # parse -> serialize -> parse is a fixed point
        again = parse_pose_json(serialize_pose_json(back, canvas), LAYOUT)
        np.testing.assert_array_equal(again.coords, back.coords)


def test_ground_truth_counters_affine():
    for n in (2, 5, 64):
        c = ground_truth_counters(n)
        assert c[0] == 0.0 and c[-1] == 1.0
        np.testing.assert_allclose(np.diff(c), 1.0 / (n - 1))


# -- normalisation -----------------------------------------------------------


def test_normalize_identity_and_fixed_point():
    rng = np.random.default_rng(1)
    seq = random_sequence(rng, 4)
    out = normalize_pose(seq, NormParams(1.0, (0.0, 0.0)))
    np.testing.assert_array_equal(out.coords, seq.coords)

    seq.coords[:] = 0.5
    out = normalize_pose(seq, NormParams(2.0, (-0.5, -0.5)))
    np.testing.assert_array_equal(out.coords, 0.5)


def test_normalize_matches_per_joint_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        seq = random_sequence(rng, 3)
        p = NormParams(float(rng.uniform(0.5, 1.5)), tuple(rng.uniform(-0.2, 0.2, size=2)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OutOfFrameWarning)
            out = normalize_pose(seq, p)
        for t in range(len(seq)):
            for j in range(LAYOUT.n_joints):
                x, y = seq.coords[t, j]
                assert out.coords[t, j, 0] == p.scale * x + p.translation[0]
                assert out.coords[t, j, 1] == p.scale * y + p.translation[1]
        np.testing.assert_array_equal(out.confidence, seq.confidence)
        np.testing.assert_array_equal(out.counters, seq.counters)


@settings(max_examples=50, deadline=None)
@given(
    scale=st.floats(0.2, 5.0),
    tx=st.floats(-1, 1),
    ty=st.floats(-1, 1),
    seed=st.integers(0, 2**16),
)
def test_normalize_inverse_is_identity(scale, tx, ty, seed):
    seq = random_sequence(np.random.default_rng(seed), 3)
    p = NormParams(scale, (tx, ty))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutOfFrameWarning)
        back = normalize_pose(normalize_pose(seq, p), p.inverse())
    np.testing.assert_allclose(back.coords, seq.coords, atol=1e-9)


def test_normalize_warns_out_of_frame():
    seq = random_sequence(np.random.default_rng(3), 2)
    with pytest.warns(OutOfFrameWarning):
        normalize_pose(seq, NormParams(5.0, (0.0, 0.0)))


def test_norm_params_rejects_bad_scale():
    for s in (0.0, -1.0, float("inf"), float("nan")):
        with pytest.raises(ValueError):
            NormParams(s, (0, 0))


def _shoulder_seq(width, neck=(0.5, 0.4), n=3):
    coords = np.full((n, LAYOUT.n_joints, 2), 0.5)
    coords[:, LAYOUT.index("neck")] = neck
    coords[:, LAYOUT.index("r_shoulder")] = (neck[0] - width / 2, neck[1])
    coords[:, LAYOUT.index("l_shoulder")] = (neck[0] + width / 2, neck[1])
    return PoseSequence(coords, np.ones((n, LAYOUT.n_joints)), ground_truth_counters(n), LAYOUT)


def test_compute_norm_params_examples():
    p = compute_norm_params(_shoulder_seq(0.2), 0.2, (0.5, 0.4))
    assert p.scale == pytest.approx(1.0)
    assert p.translation == pytest.approx((0.0, 0.0))
    assert compute_norm_params(_shoulder_seq(0.1), 0.2, (0.5, 0.4)).scale == pytest.approx(2.0)


def test_compute_norm_params_inverts_injected_distortion():
    rng = np.random.default_rng(4)
    for _ in range(20):
        orig = random_sequence(rng, 7)
        orig.confidence[:] = 1.0
        rs, ls, nk = (LAYOUT.index(n) for n in ("r_shoulder", "l_shoulder", "neck"))
        width = np.median(np.linalg.norm(orig.coords[:, rs] - orig.coords[:, ls], axis=1))
        neck = np.median(orig.coords[:, nk], axis=0)
        distort = NormParams(float(rng.uniform(0.5, 2)), tuple(rng.uniform(-0.3, 0.3, size=2)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OutOfFrameWarning)
            src = normalize_pose(orig, distort)
            rec = compute_norm_params(src, width, tuple(neck))
            back = normalize_pose(src, rec)
        inv = distort.inverse()
        assert rec.scale == pytest.approx(inv.scale, abs=1e-6)
        assert rec.translation == pytest.approx(inv.translation, abs=1e-6)
        np.testing.assert_allclose(back.coords, orig.coords, atol=1e-6)


def test_compute_norm_params_needs_shoulders():
    seq = _shoulder_seq(0.2)
    seq.confidence[:, LAYOUT.index("l_shoulder")] = 0
    with pytest.raises(InsufficientLandmarksError):
        compute_norm_params(seq, 0.2, (0.5, 0.4))


# -- rasterization -------------------------------------------------------------


def test_rasterize_example_segment():
    lay = tiny_layout()
    # (row 2, col 2) -> (row 2, col 5) on 8x8 means x = col/7, y = row/7
    coords = np.array([[2 / 7, 2 / 7], [5 / 7, 2 / 7], [0, 0]])
    maps = rasterize_heatmap(PoseFrame(coords, [1, 1, 0]), lay, (8, 8))
    assert maps.shape == (2, 8, 8)
    assert {tuple(p) for p in np.argwhere(maps[0] > 0)} == {(2, 2), (2, 3), (2, 4), (2, 5)}
    assert np.all(maps[0][maps[0] > 0] == 1.0)
    # limb with a zero-confidence endpoint -> empty channel
    assert not maps[1].any()


def test_rasterize_coincident_endpoints_single_pixel():
    lay = tiny_layout()
    coords = np.array([[0.5, 0.5], [0.5, 0.5], [0.1, 0.1]])
    maps = rasterize_heatmap(PoseFrame(coords, [1, 1, 1]), lay, (16, 16))
    assert maps[0].sum() == 1.0


def test_rasterize_random_frames_match_bresenham_oracle():
    rng = np.random.default_rng(5)
    size = (64, 64)
    for _ in range(200):
        fr = random_sequence(rng, 1)[0]
        maps = rasterize_heatmap(fr, LAYOUT, size)
        assert maps.shape[0] == LAYOUT.n_limbs and maps.max() <= 1.0
        pix = to_pixels(fr.coords, size)
        for k, (a, b) in enumerate(LAYOUT.limbs):
            if fr.confidence[a] > 0 and fr.confidence[b] > 0:
                want = line_pixels_exact(*pix[a], *pix[b])
            else:
                want = set()
            assert {tuple(p) for p in np.argwhere(maps[k] > 0)} == want


def test_rasterize_batch_equals_single():
    rng = np.random.default_rng(6)
    seq = random_sequence(rng, 5)
    batch = rasterize_batch(seq.coords, seq.confidence, LAYOUT, (32, 48))
    for t in range(5):
        np.testing.assert_array_equal(batch[t], rasterize_heatmap(seq[t], LAYOUT, (32, 48)))


def test_rasterize_thickness_and_blur():
    lay = tiny_layout()
    coords = np.array([[0.2, 0.5], [0.8, 0.5], [0, 0]])
    fr = PoseFrame(coords, [1, 1, 0])
    thin = rasterize_heatmap(fr, lay, (32, 32))
    thick = rasterize_heatmap(fr, lay, (32, 32), LineConfig(thickness=3))
    blur = rasterize_heatmap(fr, lay, (32, 32), LineConfig(blur_sigma=1.0))
    assert thick[0].sum() > thin[0].sum()
    assert np.all(blur[0][thin[0] > 0] == 1.0)
    assert blur.max() <= 1.0 and 0 < blur[0][blur[0] < 1].max() < 1
    assert not blur[1].any()


def test_dump_heatmaps(tmp_path):
    maps = np.zeros((2, 8, 8), dtype=np.float32)
    maps[1, 3, 3] = 1
    paths = dump_heatmaps([maps, maps], tmp_path)
    assert [p.name for p in paths][:3] == ["frame00000_limb00.png", "frame00000_limb01.png", "frame00001_limb00.png"]


# -- hands -----------------------------------------------------------------------


def _frame_with_knuckles(left_px, right_px, size, visible=(True, True)):
    coords = np.full((LAYOUT.n_joints, 2), 0.5)
    conf = np.ones(LAYOUT.n_joints)
    for side, px, vis in (("left", left_px, visible[0]), ("right", right_px, visible[1])):
        i = LAYOUT.anchor(side)
        coords[i] = (px[1] / (size - 1), px[0] / (size - 1))
        conf[i] = 1.0 if vis else 0.0
    return PoseFrame(coords, conf)


def test_crop_hand_window_position():
    img = np.arange(3 * 256 * 256, dtype=np.float64).reshape(3, 256, 256)
    fr = _frame_with_knuckles((100, 100), (10, 10), 256)
    crop = crop_hand(img, fr, "left", LAYOUT)
    assert crop.anchor == (100, 100)
    np.testing.assert_array_equal(crop.patch, img[:, 70:130, 70:130])


def test_crop_hand_padding_at_corner():
    img = np.zeros((3, 64, 64))
    fr = _frame_with_knuckles((0, 0), (30, 30), 64)
    crop = crop_hand(img, fr, "left", LAYOUT, background=(0.25, -0.5, 1.0))
    assert crop.patch.shape == (3, HAND_PATCH, HAND_PATCH)
    np.testing.assert_array_equal(crop.patch[:, :30, :], np.broadcast_to(np.array([0.25, -0.5, 1.0])[:, None, None], (3, 30, 60)))
    assert np.all(crop.patch[:, 30:, 30:] == 0)


def test_crop_hand_constant_image():
    img = np.full((3, 64, 64), 0.3)
    fr = _frame_with_knuckles((40, 20), (30, 30), 64)
    crop = crop_hand(img, fr, "right", LAYOUT, background=(0.3, 0.3, 0.3))
    assert np.all(crop.patch == 0.3)


@settings(max_examples=100, deadline=None)
@given(r=st.integers(-50, 300), c=st.integers(-50, 300))
def test_crop_is_always_60x60(r, c):
    img = np.zeros((3, 128, 96))
    size = 128
    fr = _frame_with_knuckles((min(max(r, 0), 127), min(max(c, 0), 95)), (0, 0), size)
    crop = crop_hand(img, fr, "left", LAYOUT)
    assert crop.patch.shape == (3, 60, 60)


def test_crop_hand_invisible_raises():
    fr = _frame_with_knuckles((10, 10), (20, 20), 64, visible=(False, True))
    with pytest.raises(NoHandError):
        crop_hand(np.zeros((3, 64, 64)), fr, "left", LAYOUT)


def _checker_patch():
    p = np.zeros((3, 60, 60))
    p[:, ::2, ::2] = 1.0
    p[:, 1::2, 1::2] = 1.0
    return p * 2 - 1


def test_select_good_hands_thresholds():
    from scipy.ndimage import uniform_filter

    sharp = _checker_patch()
    blurred = np.stack([uniform_filter(ch, size=7, mode="nearest") for ch in sharp])
    crops = [HandCrop(sharp, "left", 0, (0, 0)), HandCrop(blurred, "right", 1, (0, 0))]
    extractor = lambda patch: np.full((21, 2), 0.5)
    from signgan.pose import blur_score

    s_sharp, s_blur = blur_score(sharp), blur_score(blurred)
    assert s_sharp > s_blur
    good = select_good_hands(crops, extractor, (s_sharp + s_blur) / 2)
    assert good.sources == [(0, "left")]
    assert len(select_good_hands(crops, extractor, 0.0)) == 2


def test_select_good_hands_rejects_out_of_patch_keypoints():
    crops = [HandCrop(_checker_patch(), "left", 0, (0, 0))]
    bad = lambda patch: np.full((21, 2), 1.2)
    with pytest.warns(EmptyGoodHandSetWarning):
        good = select_good_hands(crops, bad, 0.0)
    assert len(good) == 0
