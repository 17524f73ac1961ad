import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowdistill.config import parse_config
from flowdistill.core import CameraRig, DataError, FormatError, write_pfm
from flowdistill.losses import prior_flow_mask
from flowdistill.scene import (
    MIN_NOISY_FLOW,
    SCENE_FILES,
    BandlimitedNoise,
    Box,
    ConstantPlane,
    LayeredBoxes,
    PeriodicStripes,
    SceneSpec,
    SlantedPlane,
    SmoothRamp,
    SpecError,
    interpolation_bound,
    load_prior_flow,
    load_scene,
    render,
    save_prior_flow,
    save_scene,
    spec_from_config,
    spec_to_config,
    stress_scene,
)
from flowdistill.warping import flow_from_depth, inverse_warp

from conftest import small_spec


# --- validation -------------------------------------------------------------------

@pytest.mark.parametrize(
    "overrides",
    [
        dict(illumination_gain=1.6),
        dict(illumination_gain=0.4),
        dict(flow_noise_sigma=-0.1),
        dict(texture_model=PeriodicStripes(period=1.5)),
        dict(texture_model=BandlimitedNoise(max_freq=0.7)),
        dict(depth_model=ConstantPlane(250.0)),
        dict(depth_model=ConstantPlane(0.05)),
        dict(depth_model=SlantedPlane(190.0, 1.0)),
        dict(depth_model=LayeredBoxes(50.0, (Box(0, 30, 0, 10, 5.0),))),
        dict(depth_model=LayeredBoxes(50.0, (Box(0, 10, 0, 10, 60.0),))),
    ],
)
def test_invalid_specs(overrides):
    with pytest.raises(SpecError):
        render(small_spec(**overrides), 0)


# --- rendering --------------------------------------------------------------------

@pytest.mark.parametrize("texture", [SmoothRamp(), BandlimitedNoise(seed=1), PeriodicStripes(period=9.0)])
@pytest.mark.parametrize("depth", [5.0, 7.3, 23.0])
def test_warp_reproduces_target_on_planes(texture, depth):
    spec = small_spec(depth_model=ConstantPlane(depth), texture_model=texture)
    scene = render(spec, 0)
    result = inverse_warp(scene.source, scene.depth_gt, scene.rig)
    ok = result.in_bounds == 1
    err = np.abs(result.image - scene.target)[ok].max()
    # the ramp's bound is exactly 0; allow float rounding only
    assert err <= interpolation_bound(spec) + 1e-12


def test_slanted_plane_is_constant_along_rows():
    scene = render(small_spec(depth_model=SlantedPlane(5.0, 0.5)), 0)
    assert np.all(scene.depth_gt == scene.depth_gt[:, :1])
    np.testing.assert_allclose(scene.depth_gt[:, 0], 5.0 + 0.5 * np.arange(24))


def test_out_of_range_plane_is_fully_masked():
    scene = render(small_spec(depth_model=ConstantPlane(100.0)), 0)
    assert not prior_flow_mask(scene.prior_flow, scene.rig).any()


def test_render_is_deterministic():
    spec = small_spec(flow_noise_sigma=0.3, illumination_gain=1.2, illumination_bias=-0.05)
    a, b = render(spec, 11), render(spec, 11)
    for name in ("target", "source", "depth_gt", "prior_flow", "occlusion"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.prior_flow, render(spec, 12).prior_flow)


def test_images_in_unit_range():
    scene = render(small_spec(illumination_gain=1.5, illumination_bias=0.2), 0)
    for img in (scene.target, scene.source):
        assert img.shape == (24, 64, 3) and img.min() >= 0 and img.max() <= 1


def test_exact_flow_without_noise(small_scene):
    assert np.array_equal(small_scene.prior_flow, flow_from_depth(small_scene.depth_gt, small_scene.rig))


@given(st.integers(0, 10_000), st.floats(0.05, 5.0))
def test_flow_noise_preserves_sign(seed, sigma):
    spec = small_spec(height=6, width=20, depth_model=ConstantPlane(150.0), flow_noise_sigma=sigma)
    scene = render(spec, seed)
    assert np.all(scene.prior_flow <= -MIN_NOISY_FLOW)
    assert np.all(np.sign(scene.prior_flow) == np.sign(flow_from_depth(scene.depth_gt, scene.rig)))


def zbuffer_occlusion(spec: SceneSpec, depth_gt: np.ndarray, oversample: int = 64):
    """Forward-splat every layer into a fine source-view z-buffer.

    Returns the occlusion estimate and a mask of pixels that are far enough
    from any projected layer edge for the discretisation to be trusted.
    """
    h, w = depth_gt.shape
    fb = spec.rig.fb
    model = spec.depth_model
    layers = [(0, h, -np.inf, np.inf, model.background)]
    layers += [(b.row0, b.row1, b.col0 - 0.5, b.col1 - 0.5, b.depth) for b in model.boxes]
    lo_src = -fb / 0.1 - w
    n = int((w + 1 - lo_src) * oversample)
    occluded = np.zeros((h, w))
    trusted = np.ones((h, w), dtype=bool)
    cols = np.arange(w)
    for r in range(h):
        zbuf = np.full(n, np.inf)
        edges = []
        for r0, r1, c0, c1, z in layers:
            if not r0 <= r < r1:
                continue
            u0, u1 = max(c0, lo_src), min(c1, 2.0 * w + fb / z)
            u = np.arange(u0, u1, 1.0 / oversample)
            bins = np.round((u - fb / z - lo_src) * oversample).astype(int)
            ok = (bins >= 0) & (bins < n)
            np.minimum.at(zbuf, bins[ok], z)
            edges += [c0 - fb / z, c1 - fb / z]
        xs = cols - fb / depth_gt[r]
        bins = np.round((xs - lo_src) * oversample).astype(int)
        occluded[r] = zbuf[bins] < depth_gt[r] - 1e-9
        for e in edges:
            trusted[r] &= np.abs(xs - e) > 2.0 / oversample
    return occluded, trusted


@pytest.mark.parametrize(
    "boxes",
    [
        (Box(4, 20, 30, 56, 4.0), Box(2, 14, 6, 24, 9.0)),
        (Box(0, 64, 20, 40, 2.0), Box(10, 50, 25, 60, 6.0), Box(30, 60, 5, 15, 1.5)),
        (Box(5, 60, 32, 33, 3.0),),
    ],
)
def test_occlusion_matches_zbuffer_oracle(boxes):
    spec = SceneSpec(height=64, width=64, depth_model=LayeredBoxes(60.0, boxes), texture_model=SmoothRamp())
    scene = render(spec, 0)
    want, trusted = zbuffer_occlusion(spec, scene.depth_gt)
    assert scene.occlusion.any()
    assert trusted.mean() > 0.9
    assert np.array_equal(scene.occlusion[trusted], want[trusted])


# --- stress scene -------------------------------------------------------------------

def test_stress_scene_contract(stress):
    scene, (row, col) = stress
    spec = scene.spec
    assert isinstance(spec.texture_model, PeriodicStripes)
    assert spec.illumination_gain != 1.0
    assert 0 <= row < spec.height and 0 <= col < spec.width
    assert scene.occlusion[row, col] == 0
    assert np.any(scene.depth_gt > 80) and np.any(scene.depth_gt <= 80)
    # textured: nonzero horizontal gradient at the designated pixel
    assert np.abs(scene.target[row, col + 1] - scene.target[row, col - 1]).max() > 0


# --- serialization ---------------------------------------------------------------------

@pytest.mark.parametrize(
    "spec",
    [
        small_spec(),
        small_spec(depth_model=SlantedPlane(3.0, 0.25), texture_model=SmoothRamp(), flow_noise_sigma=0.2),
        small_spec(depth_model=ConstantPlane(0.1 + 0.2), texture_model=PeriodicStripes(7.5, 0.3, 0.1)),
        stress_scene()[0],
    ],
)
def test_spec_config_round_trip(spec):
    from flowdistill.config import format_config

    assert spec_from_config(parse_config(format_config(spec_to_config(spec)))) == spec


@pytest.mark.parametrize(
    "text",
    ["colour=red\n", "depth_model=sphere\n", "texture=plaid\n", "depth_model=layered_boxes\nboxes=1:2:3\n"],
)
def test_spec_config_errors(text):
    with pytest.raises(SpecError):
        spec_from_config(parse_config(text))


def test_save_load_scene(tmp_path, small_scene):
    written = save_scene(small_scene, tmp_path / "s")
    names = {p.name for p in written}
    assert set(SCENE_FILES) <= names and {"target.pgm", "source.pgm", "scene.cfg"} <= names
    back = load_scene(tmp_path / "s")
    assert back.spec == small_scene.spec
    for name in ("target", "source", "depth_gt", "prior_flow", "occlusion"):
        a, b = getattr(small_scene, name), getattr(back, name)
        assert np.array_equal(b, a.astype(np.float32))


def test_load_scene_missing_file(tmp_path, small_scene):
    save_scene(small_scene, tmp_path)
    (tmp_path / "occlusion.pfm").unlink()
    with pytest.raises(FormatError):
        load_scene(tmp_path)


def test_prior_flow_io(tmp_path):
    flow = -np.arange(1, 13, dtype=np.float32).reshape(3, 4).astype(np.float64) / 4
    save_prior_flow(tmp_path / "f.pfm", flow)
    assert np.array_equal(load_prior_flow(tmp_path / "f.pfm"), flow)

    blob = (tmp_path / "f.pfm").read_bytes()
    (tmp_path / "short.pfm").write_bytes(blob[:-5])
    with pytest.raises(FormatError):
        load_prior_flow(tmp_path / "short.pfm")

    bad = flow.copy()
    bad[1, 2] = np.nan
    write_pfm(tmp_path / "nan.pfm", bad)
    with pytest.raises(DataError):
        load_prior_flow(tmp_path / "nan.pfm")

    write_pfm(tmp_path / "rgb.pfm", np.zeros((2, 2, 3)))
    with pytest.raises(FormatError):
        load_prior_flow(tmp_path / "rgb.pfm")
