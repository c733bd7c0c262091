import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pvstereo import DisparityMap
from pvstereo.harness import (
    aepe,
    density,
    f1_3px,
    load_scene,
    make_rds,
    save_scene,
)
from pvstereo.losses import warp_right_to_left


def test_zero_shift_views_identical():
    scene = make_rds(32, 32, "constant", (0.0,), seed=0)
    assert np.array_equal(scene.left.data, scene.right.data)
    assert not scene.occlusion.any()


def test_constant_shift_column_identity():
    s = 7
    scene = make_rds(48, 64, "constant", (float(s),), seed=1)
    vis = ~scene.occlusion
    # unoccluded left pixels reproduce right pixels s columns over
    assert vis[:, s:].all()
    assert np.array_equal(
        scene.left.data[:, s:], scene.right.data[:, :-s]
    )
    # the first s columns fall off the frame and must be marked occluded
    assert scene.occlusion[:, :s].all()


def test_truth_field_kinds():
    const = make_rds(16, 32, "constant", (3.0,), seed=2)
    assert np.all(const.truth.values == 3.0)
    ramp = make_rds(16, 32, "ramp", (1.0, 5.0), seed=2)
    assert np.allclose(ramp.truth.values[0], 1.0)
    assert np.allclose(ramp.truth.values[-1], 5.0)
    assert np.all(np.diff(ramp.truth.values[:, 0]) > 0)
    plane = make_rds(32, 32, "two_plane", (2.0, 6.0), seed=2)
    assert plane.truth.values[0, 0] == 2.0
    assert plane.truth.values[16, 16] == 6.0


def test_two_plane_occlusion_band_at_foreground_left_edge():
    h = w = 64
    s_bg, s_fg = 4.0, 12.0
    scene = make_rds(h, w, "two_plane", (s_bg, s_fg), seed=3)
    x0 = w // 4
    band = int(s_fg - s_bg)  # foreground strip covers 8 background targets
    inside_rows = slice(h // 4, 3 * h // 4)
    assert scene.occlusion[inside_rows, x0 - band : x0].all()
    # between the frame-border strip (first s_bg columns fall off-frame)
    # and the band, nothing is occluded
    assert not scene.occlusion[inside_rows, int(s_bg) : x0 - band].any()


def test_warp_by_truth_is_exact_at_unoccluded_pixels():
    for kind, params in (
        ("constant", (9.0,)),
        ("ramp", (2.0, 14.0)),
        ("two_plane", (4.0, 12.0)),
    ):
        scene = make_rds(64, 64, kind, params, seed=4)
        recon, inside = warp_right_to_left(scene.right, scene.truth)
        ok = inside & ~scene.occlusion
        assert ok.any()
        assert np.abs(recon.data[ok] - scene.left.data[ok]).max() <= 1e-6


def test_integer_shift_warp_bit_exact():
    scene = make_rds(64, 64, "constant", (11.0,), seed=5)
    recon, inside = warp_right_to_left(scene.right, scene.truth)
    ok = inside & ~scene.occlusion
    assert np.array_equal(recon.data[ok], scene.left.data[ok])


def test_make_rds_rejects_bad_fields():
    with pytest.raises(ValueError):
        make_rds(32, 32, "constant", (-1.0,))
    with pytest.raises(ValueError):
        make_rds(32, 32, "constant", (8.0,))  # >= w/4
    with pytest.raises(ValueError):
        make_rds(32, 32, "spiral", (1.0,))


def test_make_rds_deterministic():
    a = make_rds(48, 48, "ramp", (1.0, 9.0), seed=6)
    b = make_rds(48, 48, "ramp", (1.0, 9.0), seed=6)
    assert np.array_equal(a.left.data, b.left.data)
    assert np.array_equal(a.right.data, b.right.data)
    c = make_rds(48, 48, "ramp", (1.0, 9.0), seed=7)
    assert not np.array_equal(a.right.data, c.right.data)


@given(st.integers(0, 500))
@settings(max_examples=25, deadline=None)
def test_make_rds_images_in_unit_range(seed):
    scene = make_rds(24, 40, "constant", (5.0,), seed=seed)
    for img in (scene.left, scene.right):
        assert img.data.min() >= 0.0 and img.data.max() <= 1.0


# --- metrics -------------------------------------------------------------


def _dense(values):
    return DisparityMap.dense(np.asarray(values, dtype=np.float32))


def test_aepe_exact_match_zero():
    d = _dense(np.full((5, 5), 3.0))
    assert aepe(d, d) == 0.0


def test_aepe_constant_offset():
    t = _dense(np.full((5, 5), 3.0))
    p = _dense(np.full((5, 5), 5.0))
    assert aepe(p, t) == 2.0


def test_aepe_covalid_only():
    truth = _dense(np.full((4, 4), 2.0))
    mask = np.zeros((4, 4), bool)
    mask[0] = True
    vals = np.full((4, 4), 2.0, np.float32)
    vals[0] = 3.0
    pred = DisparityMap(np.where(mask, vals, 0), mask)
    assert aepe(pred, truth) == 1.0


def test_aepe_disjoint_masks_rejected():
    a = DisparityMap(np.zeros((3, 3), np.float32), np.zeros((3, 3), bool))
    b = _dense(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        aepe(a, b)


def test_f1_strict_three_pixel_boundary():
    truth = _dense(np.zeros((1, 4)))
    pred = _dense(np.array([[0.0, 3.0, 3.0001, 10.0]]))
    # exactly 3 px is NOT an outlier; strictly above is
    assert f1_3px(pred, truth) == pytest.approx(50.0)


def test_f1_all_good_and_all_bad():
    truth = _dense(np.zeros((4, 4)))
    assert f1_3px(truth, truth) == 0.0
    assert f1_3px(_dense(np.full((4, 4), 9.0)), truth) == 100.0


def test_density_values():
    assert density(_dense(np.zeros((4, 4)))) == 100.0
    half = np.zeros((4, 4), bool)
    half[:2] = True
    assert density(DisparityMap(np.zeros((4, 4), np.float32), half)) == 50.0
    assert (
        density(DisparityMap(np.zeros((4, 4), np.float32), np.zeros((4, 4), bool)))
        == 0.0
    )


# --- persistence ---------------------------------------------------------


def test_scene_roundtrip(tmp_path):
    scene = make_rds(32, 48, "two_plane", (3.0, 9.0), seed=8)
    save_scene(scene, tmp_path / "s0")
    back = load_scene(tmp_path / "s0")
    assert np.array_equal(back.occlusion, scene.occlusion)
    assert np.array_equal(back.truth.values, scene.truth.values)
    assert back.truth.mask.all()
    # 8-bit quantization bounds the image error
    assert np.abs(back.left.data - scene.left.data).max() <= 0.5 / 255.0 + 1e-6
    assert np.abs(back.right.data - scene.right.data).max() <= 0.5 / 255.0 + 1e-6


def test_load_scene_missing_dir(tmp_path):
    with pytest.raises(OSError):
        load_scene(tmp_path / "nope")
