from __future__ import annotations

import json
import math

import numpy as np
import pytest

from volfuse.analysis import fwhm_vs_depth, profile_fwhm
from volfuse.experiments import write_sources
from volfuse.phantom import (
    PRESET_FOCI_INDEX,
    BeamModel,
    Branch,
    PhantomScene,
    SceneError,
    TiltedFiber,
    VesselTree,
    apply_defocus,
    gaussian_kernel_1d,
    generate_multifocus,
    load_scene,
    preset_scene,
    rasterize,
    scene_from_dict,
    scene_to_dict,
)
from volfuse.volume import Volume


def point_segment_distance(p, a, b):
    d = b - a
    t = np.clip(np.dot(p - a, d) / np.dot(d, d), 0.0, 1.0)
    return np.linalg.norm(p - (a + t * d))


def test_beam_defaults():
    beam = BeamModel()
    assert beam.waist_um == pytest.approx(0.532 / (math.pi * 0.2))
    assert beam.waist_um == pytest.approx(0.8467, abs=1e-4)
    assert beam.rayleigh_um == pytest.approx(4.2335, abs=1e-4)
    assert beam.sigma0_um == pytest.approx(beam.waist_um / 2)


def test_sigma_profile():
    beam = BeamModel(focal_depth_um=30.0)
    s0, zr = beam.sigma0_um, beam.rayleigh_um
    assert beam.sigma_at(30.0) == pytest.approx(s0)
    assert beam.sigma_at(30.0 + zr) == pytest.approx(s0 * math.sqrt(2))
    assert beam.sigma_at(30.0 - zr) == pytest.approx(s0 * math.sqrt(2))
    z = np.linspace(0, 60, 61)
    s = beam.sigma_at(z)
    assert np.argmin(s) == 30
    override = BeamModel(waist_override_um=2.0, rayleigh_override_um=10.0)
    assert (override.sigma0_um, override.rayleigh_um) == (1.0, 10.0)
    with pytest.raises(SceneError):
        BeamModel(na=0)


def test_gaussian_kernel():
    k = gaussian_kernel_1d(1.0)
    assert k.size == 9
    assert k.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(k, k[::-1])
    assert gaussian_kernel_1d(0.05).size == 3


def test_impulse_blur_width():
    # an off-focus impulse spreads to a Gaussian of FWHM 2.355 * sigma(z)
    data = np.zeros((41, 41, 12))
    data[20, 20, :] = 1.0
    beam = BeamModel(focal_depth_um=0.0)
    zr = beam.rayleigh_um
    spacing = (0.25, 0.25, zr)
    out = apply_defocus(Volume(data, spacing), beam)
    k = 3  # three Rayleigh ranges from focus: sigma = sigma0 * sqrt(10)
    expect = 2 * math.sqrt(2 * math.log(2)) * beam.sigma0_um * math.sqrt(10)
    measured = profile_fwhm(out.data[20, :, k], spacing[1])
    assert measured == pytest.approx(expect, rel=0.1)


def test_blur_preserves_slice_energy(rng):
    # structure well inside the lateral margin, so no energy reaches the zero padding
    data = np.zeros((40, 40, 10))
    data[15:25, 15:25, :] = rng.random((10, 10, 10))
    truth = Volume(data, (1.0, 1.0, 2.0))
    out = apply_defocus(truth, BeamModel(focal_depth_um=4.0))
    np.testing.assert_allclose(out.data.sum(axis=(0, 1)), data.sum(axis=(0, 1)), rtol=1e-12)
    assert not np.allclose(out.data, data)


def test_rasterize_matches_brute_force():
    scene = PhantomScene(
        dims=(10, 9, 8),
        spacing=(1.0, 1.5, 2.0),
        geometry=VesselTree((Branch(((1.0, 2.0, 3.0), (7.0, 9.0, 11.0), (8.0, 3.0, 13.0)), (1.2, 1.0, 0.8)),)),
    )
    vol = rasterize(scene)
    pts = [np.array(p) for p in scene.geometry.branches[0].points]
    radii = scene.geometry.branches[0].radii
    expect = np.zeros(scene.dims)
    for idx in np.ndindex(*scene.dims):
        c = np.array(idx) * np.array(scene.spacing)
        for i in range(2):
            a, b = pts[i], pts[i + 1]
            d = b - a
            t = np.clip(np.dot(c - a, d) / np.dot(d, d), 0, 1)
            r = radii[i] + t * (radii[i + 1] - radii[i])
            if np.linalg.norm(c - (a + t * d)) <= r + 1e-9:
                expect[idx] = 1.0
    np.testing.assert_array_equal(vol.data, expect)


def test_rasterize_fiber():
    scene = PhantomScene((12, 12, 12), (1.0, 1.0, 1.0), TiltedFiber((2.0, 6.0, 1.0), (9.0, 6.0, 10.0), 2.0), 3.0)
    vol = rasterize(scene)
    assert set(np.unique(vol.data)) == {0.0, 3.0}
    a, b = np.array([2.0, 6.0, 1.0]), np.array([9.0, 6.0, 10.0])
    for idx in zip(*np.nonzero(vol.data)):
        assert point_segment_distance(np.array(idx, float), a, b) <= 1.0 + 1e-9


def test_scene_validation():
    with pytest.raises(SceneError):
        PhantomScene((10, 10, 10), (1.0, 1.0, 1.0), TiltedFiber((0.0, 0.0, 0.0), (20.0, 0.0, 0.0))).validate()
    with pytest.raises(SceneError):
        Branch(((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)), (1.0,))


def test_scene_from_dict_errors():
    with pytest.raises(SceneError, match="geometry.type"):
        scene_from_dict({"geometry": {"type": "blob"}})
    with pytest.raises(SceneError, match="geometry.start"):
        scene_from_dict({"geometry": {"type": "fiber", "end": [1, 1, 1]}})
    with pytest.raises(SceneError, match="dims"):
        scene_from_dict({"dims": [10, 10]})
    with pytest.raises(SceneError, match=r"branches\[0\]"):
        scene_from_dict({"geometry": {"type": "vessels", "branches": [{"points": [[1, 1, 1], [2, 2, 2]]}]}})


@pytest.mark.parametrize("name", ["fiber", "vessel"])
def test_preset_round_trip(name):
    scene = preset_scene(name)
    assert scene.dims == (80, 80, 80)
    assert scene_from_dict(json.loads(json.dumps(scene_to_dict(scene)))) == scene
    with pytest.raises(ValueError):
        preset_scene("nope")


def test_written_scene_reloads(tmp_path, small_pair):
    from conftest import small_scene

    sources, truth = small_pair
    scene = small_scene()
    beam = BeamModel()
    write_sources(tmp_path, sources, truth, scene, beam, [8.0, 22.0])
    back, back_beam = load_scene(tmp_path / "scene.json")
    assert back == scene
    assert back_beam.waist_um == pytest.approx(beam.waist_um)
    meta = json.loads((tmp_path / "scene.json").read_text())
    assert "acoustic_metadata" in meta


def test_fiber_sources_sharpest_near_focus():
    scene = preset_scene("fiber")
    dz = scene.spacing[2]
    foci = PRESET_FOCI_INDEX["fiber"]
    sources, truth = generate_multifocus(scene, [i * dz for i in foci])
    for k, v in zip(foci, sources):
        curve = fwhm_vs_depth(v)
        assert abs(curve.nadir_depth / dz - k) <= 2
    np.testing.assert_allclose(sources[0].data.sum(axis=(0, 1)), truth.data.sum(axis=(0, 1)), rtol=1e-9, atol=1e-9)


def test_vessel_preset_has_two_layers():
    truth = rasterize(preset_scene("vessel"))
    layers = np.nonzero(truth.data.sum(axis=(0, 1)))[0]
    foci = PRESET_FOCI_INDEX["vessel"]
    assert any(abs(k - foci[0]) <= 2 for k in layers)
    assert any(abs(k - foci[1]) <= 2 for k in layers)
