import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flairkit.config import Config
from flairkit.preprocess import (
    CropBox,
    PreprocMeta,
    clip_intensities,
    crop,
    crop_to_head,
    map_mask,
    normalize_nonzero,
    preprocess_pipeline,
    resample_isotropic,
    resample_to,
    uncrop,
    unmap_mask,
)
from flairkit.phantom import Ellipsoid, make_phantom
from flairkit.volume import BinaryMask, ScalarVolume


def ramp(n=4, spacing=2.0):
    data = np.arange(n, dtype=np.float32).reshape(n, 1, 1)
    return ScalarVolume(data, (spacing, 1.0, 1.0), (10.0, 0.0, 0.0))


def test_upsampling_a_ramp_is_frozen():
    out = resample_isotropic(ramp(), (1.0, 1.0, 1.0))
    assert out.dims == (8, 1, 1)
    assert out.data.ravel().tolist() == [0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0]
    # grids share the low edge: first centre moves half a new voxel back
    assert out.origin == (9.5, 0.0, 0.0)


def test_downsampling_averages_neighbours():
    vol = ScalarVolume(np.arange(8, dtype=np.float32).reshape(8, 1, 1), (1.0, 1.0, 1.0))
    out = resample_isotropic(vol, (2.0, 1.0, 1.0))
    assert out.data.ravel().tolist() == [0.5, 2.5, 4.5, 6.5]
    assert out.origin[0] == 0.5


def test_target_dims_round_physical_extent():
    vol = ScalarVolume(np.zeros((10, 7, 3)), (0.7, 1.3, 4.0))
    assert resample_isotropic(vol).dims == (7, 9, 12)


def test_masks_need_nearest():
    mask = BinaryMask(np.ones((2, 2, 2), bool))
    with pytest.raises(ValueError, match="nearest"):
        resample_isotropic(mask, (0.5, 0.5, 0.5))
    out = resample_isotropic(mask, (0.5, 0.5, 0.5), interpolation="nearest")
    assert isinstance(out, BinaryMask) and out.data.all()


def test_bad_interpolation_and_spacing():
    with pytest.raises(ValueError):
        resample_to(ramp(), (1, 1, 1), (4, 1, 1), "cubic")
    with pytest.raises(ValueError):
        resample_isotropic(ramp(), (1.0, -1.0, 1.0))


@settings(max_examples=40, deadline=None)
@given(
    st.tuples(*[st.integers(1, 9)] * 3),
    st.tuples(*[st.sampled_from([0.5, 0.8, 1.0, 2.5])] * 3),
    st.integers(0, 2**16),
)
def test_resample_at_own_spacing_is_identity(dims, spacing, seed):
    data = np.random.default_rng(seed).normal(size=dims)
    vol = ScalarVolume(data, spacing, (1.0, 2.0, 3.0))
    out = resample_isotropic(vol, spacing)
    np.testing.assert_array_equal(out.data, vol.data)
    assert out.origin == vol.origin


def test_crop_uncrop_round_trip(rng):
    vol = ScalarVolume(rng.random((8, 9, 10)), (1.0, 2.0, 3.0), (5.0, 5.0, 5.0))
    box = CropBox((1, 2, 3), (6, 8, 9))
    small = crop(vol, box)
    assert small.dims == box.shape == (5, 6, 6)
    assert small.origin == (6.0, 9.0, 14.0)
    back = uncrop(small, box, vol.dims)
    assert back.origin == vol.origin
    np.testing.assert_array_equal(back.data[box.slices], vol.data[box.slices])
    assert back.data.sum() == pytest.approx(vol.data[box.slices].sum())


def test_crop_to_head_with_margin():
    data = np.zeros((20, 20, 20), np.float32)
    data[5:9, 6:10, 7:15] = 100.0
    data[0, 0, 0] = 1.0  # below 2% of the peak
    cropped, box = crop_to_head(ScalarVolume(data))
    assert box == CropBox((3, 4, 5), (11, 12, 17))
    assert cropped.data.max() == 100.0


def test_crop_to_head_on_empty_volume_keeps_everything():
    vol = ScalarVolume(np.zeros((3, 4, 5)))
    out, box = crop_to_head(vol)
    assert out is vol and box == CropBox((0, 0, 0), (3, 4, 5))


def test_clip_uses_closest_rank_percentiles():
    data = np.arange(1, 201, dtype=np.float32).reshape(200, 1, 1)
    out = clip_intensities(ScalarVolume(data))
    # 99.5th percentile of 1..200 sits at rank 0.995 * 201 = 199.995
    assert float(out.data.max()) == pytest.approx(199.995, abs=1e-4)
    assert float(out.data.min()) == 1.0
    with pytest.raises(ValueError):
        clip_intensities(ScalarVolume(data), 50, 10)


def test_normalize_nonzero():
    data = np.zeros((4, 1, 1), np.float32)
    data[1:, 0, 0] = [1.0, 2.0, 3.0]
    out = normalize_nonzero(ScalarVolume(data)).data.ravel()
    assert out[0] == 0.0
    np.testing.assert_allclose(out[1:], np.array([-1.0, 0.0, 1.0]) / np.sqrt(2.0 / 3.0), rtol=1e-6)
    mean_only = normalize_nonzero(ScalarVolume(data), "mean").data.ravel()
    assert mean_only.tolist() == [0.0, -1.0, 0.0, 1.0]


def test_normalize_degenerate_inputs():
    zeros = ScalarVolume(np.zeros((2, 2, 2)))
    assert normalize_nonzero(zeros) is zeros
    flat = ScalarVolume(np.full((2, 2, 2), 5.0))
    assert normalize_nonzero(flat).data.tolist() == np.zeros((2, 2, 2)).tolist()
    with pytest.raises(ValueError):
        normalize_nonzero(flat, "minmax")


def test_pipeline_and_mask_mapping_round_trip():
    spheres = [Ellipsoid((30.0, 30.0, 24.0), (22.0, 24.0, 18.0), 100.0), Ellipsoid.sphere((30.0, 34.0, 24.0), 6.0, 180.0)]
    vol, _ = make_phantom(spheres, (50, 50, 14), (1.2, 1.2, 3.6), noise_sigma=1.0, seed=5)
    _, lesion = make_phantom(spheres[1:], (50, 50, 14), (1.2, 1.2, 3.6))
    out, meta = preprocess_pipeline(vol, Config())
    assert out.spacing == (1.0, 1.0, 1.0)
    assert meta.resampled_dims == (60, 60, 50)
    assert PreprocMeta.from_json(meta.to_json()) == meta

    fwd = map_mask(lesion, meta)
    assert fwd.dims == out.dims and fwd.origin == out.origin
    back = unmap_mask(fwd, meta)
    assert back.dims == lesion.dims
    overlap = (back.data & lesion.data).sum() / lesion.data.sum()
    assert overlap > 0.9
