import numpy as np
import pytest

from flairkit.augment import (
    AugmentConfig,
    apply_geometric,
    apply_intensity,
    augment_sample,
    flip,
    gamma_adjust,
    make_rng,
    patch_dropout,
    patch_inversion,
    random_crop,
)

SMALL = AugmentConfig(crop_size=(24, 24, 20), patch_size=(4, 4, 4), patch_max_count=5, seed=3)


def sample():
    vol = np.arange(30 * 28 * 22, dtype=np.float32).reshape(30, 28, 22) / 1000
    mask = np.zeros(vol.shape, bool)
    mask[10:18, 8:16, 5:12] = True
    return vol, mask


def test_philox_stream_is_frozen():
    assert make_rng(3).random(3).tolist() == [0.04529313735134588, 0.12745887676025125, 0.2098749737663479]


def test_augment_sample_is_frozen_for_seed_3():
    vol, mask = augment_sample(*sample(), SMALL)
    assert vol.shape == mask.shape == (24, 24, 20)
    assert float(vol.astype(np.float64).sum()) == pytest.approx(101799.1527210126, rel=1e-6)
    assert int(mask.sum()) == 657


def test_same_seed_same_output():
    a = augment_sample(*sample(), SMALL)
    b = augment_sample(*sample(), SMALL)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_random_crop_pads_short_axes(rng):
    vol = np.ones((5, 30, 30), np.float32)
    out, mask = random_crop(vol, vol > 0, (8, 10, 10), make_rng(0))
    assert out.shape == mask.shape == (8, 10, 10)
    # 3 padding voxels split 1 before and 2 after
    assert out[:, 0, 0].tolist() == [0, 1, 1, 1, 1, 1, 0, 0]
    with pytest.raises(ValueError):
        random_crop(vol, np.ones((5, 30, 31)), (4, 4, 4), make_rng(0))


def test_flip_is_exact_and_paired():
    vol, mask = sample()
    fv, fm = flip(vol, mask, 1)
    np.testing.assert_array_equal(fv[:, ::-1, :], vol)
    np.testing.assert_array_equal(fm[:, ::-1, :], mask)


def test_geometric_with_closed_gates_only_consumes_draws():
    vol, mask = sample()
    cfg = AugmentConfig(per_transform_probability=0.0)
    rng = make_rng(9)
    out_vol, out_mask = apply_geometric(vol, mask, cfg, rng)
    np.testing.assert_array_equal(out_vol, vol)
    np.testing.assert_array_equal(out_mask, mask)
    # fixed draw count: gate, axis, angle, 3 flips, gate, factor, gate, 3 offsets
    ref = make_rng(9)
    ref.random(), ref.integers(0, 3), ref.uniform(), [ref.random() for _ in range(3)]
    ref.random(), ref.uniform(), ref.random(), ref.uniform(size=3)
    assert rng.random() == ref.random()


def test_geometric_keeps_mask_binary_and_volume_size():
    vol, mask = sample()
    cfg = AugmentConfig(per_transform_probability=1.0)
    out_vol, out_mask = apply_geometric(vol, mask, cfg, make_rng(1))
    assert out_vol.shape == vol.shape
    assert out_mask.dtype == bool
    assert set(np.unique(out_mask.astype(int))) <= {0, 1}


def test_gamma_preserves_range():
    vol = np.linspace(-2, 6, 27, dtype=np.float32).reshape(3, 3, 3)
    out = gamma_adjust(vol, 2.0)
    assert out.min() == pytest.approx(-2) and out.max() == pytest.approx(6)
    assert out[1, 1, 1] == pytest.approx(-2 + 8 * 0.25)
    flat = np.ones((2, 2, 2), np.float32)
    np.testing.assert_array_equal(gamma_adjust(flat, 0.5), flat)


def test_patch_ops():
    vol = np.arange(64, dtype=np.float32).reshape(4, 4, 4)
    dropped = patch_dropout(vol, 1, (4, 4, 4), make_rng(0))
    assert not dropped.any()
    inverted = patch_inversion(vol, 1, (4, 4, 4), make_rng(0))
    np.testing.assert_allclose(inverted, 63 - vol)


def test_intensity_all_closed_is_identity():
    vol, _ = sample()
    out = apply_intensity(vol, AugmentConfig(per_transform_probability=0.0), make_rng(0))
    np.testing.assert_array_equal(out, vol)


def test_config_validation_and_from_dict():
    with pytest.raises(ValueError):
        AugmentConfig(per_transform_probability=1.5)
    with pytest.raises(ValueError):
        AugmentConfig(gamma_range=(0.0, 2.0))
    cfg = AugmentConfig.from_dict({"crop_size": [8, 8, 8], "seed": 4})
    assert cfg.crop_size == (8, 8, 8) and cfg.seed == 4
    with pytest.raises(ValueError, match="unknown"):
        AugmentConfig.from_dict({"colour": 1})
