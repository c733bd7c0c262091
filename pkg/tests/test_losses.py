import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pvstereo import (
    DisparityMap,
    Image,
    LossConfig,
    guiding_loss,
    huber,
    reconstruction_loss,
    smoothness_loss,
    ssim3,
    total_loss,
    warp_right_to_left,
)
from pvstereo.harness import make_rds


# --- huber penalty -------------------------------------------------------


def test_huber_zero():
    assert huber(0.0) == 0.0


def test_huber_quadratic_region():
    assert huber(0.5) == 0.125
    assert huber(0.2) == pytest.approx(0.02)


def test_huber_linear_region():
    assert huber(1.0) == 0.5
    assert huber(3.0) == 2.5


def test_huber_continuous_at_knee():
    below = huber(1.0 - 1e-9)
    above = huber(1.0 + 1e-9)
    assert abs(above - below) < 1e-8
    assert abs(huber(1.0) - 0.5) < 1e-12


def test_huber_rejects_negative():
    with pytest.raises(ValueError):
        huber(-0.1)


def test_huber_monotone_on_dense_grid():
    xs = np.linspace(0.0, 10.0, 10_001)
    ys = np.array([huber(float(x)) for x in xs])
    assert np.all(np.diff(ys) >= 0.0)


# --- guiding loss --------------------------------------------------------


def _dense(values):
    return DisparityMap.dense(np.asarray(values, dtype=np.float32))


def test_guiding_perfect_prediction_zero():
    labels = _dense(np.full((4, 4), 3.0))
    assert guiding_loss([labels, labels], labels) == 0.0


def test_guiding_two_iterate_oracle():
    # independent double-sum oracle: weights gamma**2 and gamma**1, normalized
    labels = _dense(np.full((3, 3), 5.0))
    p1 = _dense(np.full((3, 3), 5.5))  # residual 0.5 -> huber 0.125
    p2 = _dense(np.full((3, 3), 7.0))  # residual 2.0 -> huber 1.5
    got = guiding_loss([p1, p2], labels, LossConfig(gamma=0.8))
    expected = (0.8 * 0.125 + 1.0 * 1.5) / (0.8 + 1.0)
    assert got == pytest.approx(expected, abs=1e-12)


def test_guiding_later_iterates_weigh_more():
    labels = _dense(np.zeros((4, 4)))
    bad = _dense(np.full((4, 4), 4.0))
    good = _dense(np.zeros((4, 4)))
    # a bad final iterate must cost more than a bad first iterate
    assert guiding_loss([good, bad], labels) > guiding_loss([bad, good], labels)


def test_guiding_respects_label_mask():
    h = w = 4
    mask = np.zeros((h, w), bool)
    mask[0, 0] = True
    labels = DisparityMap(np.full((h, w), 2.0, np.float32), mask)
    pred = np.full((h, w), 2.0, np.float32)
    pred[1:, :] = 99.0  # garbage outside the label support
    assert guiding_loss([_dense(pred)], labels) == 0.0


def test_guiding_empty_labels_rejected():
    labels = DisparityMap(np.zeros((3, 3), np.float32), np.zeros((3, 3), bool))
    with pytest.raises(ValueError):
        guiding_loss([_dense(np.zeros((3, 3)))], labels)


@given(st.integers(1, 12), st.floats(0.1, 1.0))
@settings(max_examples=50, deadline=None)
def test_guiding_weights_average_property(n, gamma):
    # with every iterate equal, the loss equals the per-pixel huber mean
    # regardless of n and gamma (the weights are normalized)
    labels = _dense(np.full((3, 3), 1.0))
    pred = _dense(np.full((3, 3), 1.5))
    got = guiding_loss([pred] * n, labels, LossConfig(gamma=gamma))
    assert got == pytest.approx(0.125, abs=1e-9)


# --- warping -------------------------------------------------------------


def test_warp_zero_disparity_identity():
    rng = np.random.default_rng(0)
    right = Image(rng.random((8, 10)).astype(np.float32))
    recon, inside = warp_right_to_left(right, _dense(np.zeros((8, 10))))
    assert inside.all()
    assert np.array_equal(recon.data, right.data)


def test_warp_integer_shift_exact():
    rng = np.random.default_rng(1)
    right = Image(rng.random((6, 12)).astype(np.float32))
    recon, inside = warp_right_to_left(right, _dense(np.full((6, 12), 3.0)))
    assert not inside[:, :3].any()
    assert inside[:, 3:].all()
    assert np.array_equal(recon.data[:, 3:], right.data[:, :-3])


def test_warp_by_truth_reconstructs_rds_left():
    scene = make_rds(64, 64, "constant", (5.0,), seed=2)
    recon, inside = warp_right_to_left(scene.right, scene.truth)
    ok = inside & ~scene.occlusion
    assert ok.any()
    assert np.array_equal(recon.data[ok], scene.left.data[ok])


def test_warp_fractional_is_linear_interpolation():
    row = np.arange(8, dtype=np.float32) / 8.0
    right = Image(np.tile(row, (3, 1)))
    recon, inside = warp_right_to_left(right, _dense(np.full((3, 8), 1.5)))
    # sampling a linear ramp at j - 1.5 gives (j - 1.5)/8 where inside
    cols = np.arange(8, dtype=np.float64) - 1.5
    expected = np.tile((cols / 8.0).astype(np.float32), (3, 1))
    assert np.allclose(recon.data[inside], expected[np.tile(cols >= 0, (3, 1))])


def test_warp_out_of_range_masked():
    right = Image(np.ones((4, 6), np.float32))
    recon, inside = warp_right_to_left(right, _dense(np.full((4, 6), 10.0)))
    assert not inside.any()
    assert np.all(recon.data == 0.0)


def test_warp_respects_disparity_mask():
    right = Image(np.ones((4, 6), np.float32))
    mask = np.zeros((4, 6), bool)
    mask[:, 3:] = True
    d = DisparityMap(np.zeros((4, 6), np.float32), mask)
    _, inside = warp_right_to_left(right, d)
    assert np.array_equal(inside, mask)


def test_warp_dim_mismatch():
    with pytest.raises(ValueError):
        warp_right_to_left(
            Image(np.zeros((4, 4), np.float32)), _dense(np.zeros((4, 5)))
        )


# --- structural similarity ----------------------------------------------


def test_ssim_self_is_one():
    rng = np.random.default_rng(3)
    img = Image(rng.random((16, 16)).astype(np.float32))
    assert np.allclose(ssim3(img, img), 1.0)


def test_ssim_distinct_constants_low():
    a = Image(np.zeros((12, 12), np.float32))
    b = Image(np.ones((12, 12), np.float32))
    # constants have zero variance; only the luminance term separates them
    assert ssim3(a, b).max() < 0.01


def test_ssim_small_perturbation_high():
    rng = np.random.default_rng(4)
    base = rng.random((16, 16)).astype(np.float32) * 0.8 + 0.1
    a = Image(base)
    b = Image(np.clip(base + 1e-4, 0.0, 1.0))
    assert ssim3(a, b).min() > 0.99


def test_ssim_bounded():
    rng = np.random.default_rng(5)
    a = Image(rng.random((16, 16)).astype(np.float32))
    b = Image(rng.random((16, 16)).astype(np.float32))
    s = ssim3(a, b)
    assert s.min() >= -1.0 and s.max() <= 1.0


def test_ssim_symmetric():
    rng = np.random.default_rng(6)
    a = Image(rng.random((12, 12)).astype(np.float32))
    b = Image(rng.random((12, 12)).astype(np.float32))
    assert np.allclose(ssim3(a, b), ssim3(b, a), atol=1e-6)


# --- reconstruction loss -------------------------------------------------


def test_reconstruction_identical_zero():
    rng = np.random.default_rng(7)
    img = Image(rng.random((12, 12)).astype(np.float32))
    mask = np.ones((12, 12), bool)
    assert reconstruction_loss(img, img, mask) == pytest.approx(0.0, abs=1e-9)


def test_reconstruction_pure_l1_constant_offset():
    a = Image(np.full((10, 10), 0.3, np.float32))
    b = Image(np.full((10, 10), 0.5, np.float32))
    mask = np.ones((10, 10), bool)
    got = reconstruction_loss(a, b, mask, LossConfig(alpha=0.0))
    assert got == pytest.approx(0.2, abs=1e-6)


def test_reconstruction_matches_scalar_composition():
    # oracle: recombine the published per-pixel terms by hand
    rng = np.random.default_rng(8)
    a = Image(rng.random((14, 14)).astype(np.float32))
    b = Image(rng.random((14, 14)).astype(np.float32))
    mask = rng.random((14, 14)) > 0.4
    cfg = LossConfig(alpha=0.85)
    s = ssim3(a, b).astype(np.float64)
    l1 = np.abs(a.data.astype(np.float64) - b.data)
    expected = (0.85 * (1.0 - s) / 2.0 + 0.15 * l1)[mask].mean()
    assert reconstruction_loss(a, b, mask, cfg) == pytest.approx(
        expected, abs=1e-9
    )


def test_reconstruction_empty_mask_rejected():
    img = Image(np.zeros((6, 6), np.float32))
    with pytest.raises(ValueError):
        reconstruction_loss(img, img, np.zeros((6, 6), bool))


# --- smoothness ----------------------------------------------------------


def test_smoothness_constant_disparity_zero():
    img = Image(np.random.default_rng(9).random((10, 10)).astype(np.float32))
    assert smoothness_loss(_dense(np.full((10, 10), 4.0)), img) == 0.0


def test_smoothness_unit_ramp_on_flat_image():
    # columns increase by exactly 1 px; the flat image gives weight 1
    ramp = np.tile(np.arange(12, dtype=np.float32), (12, 1))
    flat = Image(np.full((12, 12), 0.5, np.float32))
    assert smoothness_loss(_dense(ramp), flat) == pytest.approx(1.0, abs=1e-12)


def test_smoothness_edges_downweight_disparity_jumps():
    h = w = 16
    step_d = np.zeros((h, w), np.float32)
    step_d[:, w // 2 :] = 6.0
    flat = Image(np.full((h, w), 0.5, np.float32))
    edge = np.full((h, w), 0.1, np.float32)
    edge[:, w // 2 :] = 0.9  # image edge coincides with the disparity jump
    aligned = Image(edge)
    assert smoothness_loss(_dense(step_d), aligned) < smoothness_loss(
        _dense(step_d), flat
    )


@given(st.floats(0.0, 10.0))
@settings(max_examples=30, deadline=None)
def test_smoothness_shift_invariant(offset):
    rng = np.random.default_rng(10)
    vals = rng.random((9, 9)).astype(np.float32) * 4
    img = Image(rng.random((9, 9)).astype(np.float32))
    base = smoothness_loss(_dense(vals), img)
    shifted = smoothness_loss(_dense(vals + np.float32(offset)), img)
    assert shifted == pytest.approx(base, abs=1e-5)


# --- combined objective --------------------------------------------------


def test_total_loss_decomposition():
    scene = make_rds(48, 48, "ramp", (2.0, 8.0), seed=11)
    rng = np.random.default_rng(12)
    preds = [
        _dense(
            np.clip(
                scene.truth.values
                + rng.normal(0, s, (48, 48)).astype(np.float32),
                0.0,
                None,
            )
        )
        for s in (2.0, 1.0, 0.3)
    ]
    cfg = LossConfig()
    total, parts = total_loss(preds, scene.truth, scene.left, scene.right, cfg)
    recomposed = (
        parts["guiding"]
        + cfg.lambda1 * parts["reconstruction"]
        + cfg.lambda2 * parts["smoothness"]
    )
    assert total == parts["total"]
    assert abs(total - recomposed) < 1e-9
    assert parts["guiding"] > 0.0


def test_total_loss_perfect_prediction_small():
    scene = make_rds(64, 64, "constant", (4.0,), seed=13)
    total, parts = total_loss(
        [scene.truth], scene.truth, scene.left, scene.right
    )
    assert parts["guiding"] == 0.0
    assert parts["smoothness"] == 0.0
    # reconstruction error only at occluded pixels that remain inside-frame
    assert total < 0.05


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(gamma=0.0)
    with pytest.raises(ValueError):
        LossConfig(alpha=1.5)
    with pytest.raises(ValueError):
        LossConfig(lambda1=-0.1)
