import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flairkit.sliding_window import (
    ConstantPredictor,
    FieldPredictor,
    PredictorError,
    SpherePredictor,
    VolumePredictor,
    parse_predictor,
    plan_tiles,
    stitch,
)
from flairkit.volume import ProbabilityMap, ScalarVolume, save_volume


@pytest.mark.parametrize(
    "dims, per_axis",
    [
        ((160, 160, 160), (1, 1, 1)),
        ((161, 160, 160), (2, 1, 1)),
        ((240, 240, 240), (2, 2, 2)),
        ((241, 240, 240), (3, 2, 2)),
        ((170, 230, 155), (2, 2, 1)),
        ((400, 100, 320), (4, 1, 3)),
    ],
)
def test_window_counts(dims, per_axis):
    grid = plan_tiles(dims)
    assert len(grid.windows) == int(np.prod(per_axis))
    assert grid.stride == (80, 80, 80)


def test_last_window_is_clamped_and_small_axes_padded():
    grid = plan_tiles((170, 230, 155))
    xs = sorted({w[0] for w in grid.windows})
    assert xs == [0, 10]
    assert grid.padded_dims == (170, 230, 160)
    assert grid.pad_before == (0, 0, 2)


def test_odd_overlap_rounds_stride_up():
    grid = plan_tiles((100, 100, 100), patch_size=(64, 64, 64), overlap=0.3)
    assert grid.stride == (45, 45, 45)
    assert sorted({w[0] for w in grid.windows}) == [0, 36]


def test_plan_validation():
    with pytest.raises(ValueError):
        plan_tiles((10, 10, 10), overlap=1.0)
    with pytest.raises(ValueError):
        plan_tiles((10, 10, 10), patch_size=(0, 4, 4))
    with pytest.raises(ValueError):
        plan_tiles((10, 10))


@settings(max_examples=25, deadline=None)
@given(
    st.tuples(*[st.integers(3, 40)] * 3),
    st.tuples(*[st.integers(2, 16)] * 3),
    st.sampled_from([0.0, 0.25, 0.5, 0.75]),
)
def test_windows_cover_every_voxel(dims, patch, overlap):
    grid = plan_tiles(dims, patch, overlap)
    cover = np.zeros(grid.padded_dims, int)
    for w in grid.windows:
        cover[tuple(slice(a, a + p) for a, p in zip(w, patch))] += 1
    assert cover.min() >= 1


@settings(max_examples=20, deadline=None)
@given(st.tuples(*[st.integers(3, 30)] * 3), st.integers(4, 12), st.sampled_from([0.0, 0.5]))
def test_field_is_reproduced(dims, patch, overlap):
    vol = ScalarVolume(np.zeros(dims), (0.8, 1.1, 2.0), (3.0, -4.0, 5.0))
    f = lambda x, y, z: 0.5 + 0.4 * np.sin(0.1 * x + 0.2 * y - 0.05 * z)  # noqa: E731
    out = stitch(vol, FieldPredictor(f), plan_tiles(dims, patch, overlap))
    direct = FieldPredictor(f)(vol)
    assert np.abs(out.data - direct).max() <= 1e-6


def test_constant_and_volume_predictors():
    vol = ScalarVolume(np.zeros((30, 20, 10)), origin=(5.0, 5.0, 5.0))
    out = stitch(vol, ConstantPredictor(0.25), plan_tiles(vol.dims, 16, 0.5))
    assert np.all(out.data == np.float32(0.25))
    prob = ProbabilityMap(np.random.default_rng(0).random(vol.dims), origin=vol.origin)
    back = stitch(vol, VolumePredictor(prob), plan_tiles(vol.dims, 16, 0.5))
    np.testing.assert_array_equal(back.data, prob.data)
    with pytest.raises(ValueError):
        ConstantPredictor(2.0)


def test_jobs_do_not_change_the_result():
    vol = ScalarVolume(np.zeros((40, 36, 20)))
    pred = SpherePredictor((20.0, 18.0, 10.0), 9.3)
    grid = plan_tiles(vol.dims, 16, 0.5)
    np.testing.assert_array_equal(stitch(vol, pred, grid, jobs=1).data, stitch(vol, pred, grid, jobs=3).data)


def test_misbehaving_predictor_is_reported():
    vol = ScalarVolume(np.zeros((10, 10, 10)))
    with pytest.raises(PredictorError, match="shape"):
        stitch(vol, lambda patch: np.zeros((2, 2, 2)), plan_tiles(vol.dims, 8))
    with pytest.raises(PredictorError, match="outside"):
        stitch(vol, lambda patch: np.full(patch.dims, 1.5), plan_tiles(vol.dims, 8))


def test_parse_predictor(tmp_path):
    assert parse_predictor("constant:0.3").value == 0.3
    assert isinstance(parse_predictor("sphere:1,2,3,4"), SpherePredictor)
    prob = ProbabilityMap(np.full((4, 4, 4), 0.5))
    save_volume(prob, tmp_path / "case.nii.gz")
    ext = parse_predictor(f"external:{tmp_path}", case_name="case.nii.gz")
    assert isinstance(ext, VolumePredictor)
    for bad in ("sphere:1,2", "magic:1", "external:/x"):
        with pytest.raises(ValueError):
            parse_predictor(bad)
