import math
from dataclasses import replace

import numpy as np
import pytest
from shapely.geometry import box

from rainbow_vectors import detector, geometry as geo, io, synth
from rainbow_vectors import vectorize as vz
from rainbow_vectors.errors import ConfigError, DataError
from rainbow_vectors.mask_ops import EllipseFit, ProbMask
from rainbow_vectors.sensor import SKYSAT, SUPERDOVE, rainbow_from_speed


def _bundle(rgb, sensor=SKYSAT):
    return io.RasterBundle(rgb, sensor, "2023-04-15T08:00:00Z", io.default_geotransform(sensor), "t")


def _chip(plane):
    return vz.Chip(np.stack([plane, plane, plane]).astype(float), (0, 0))


def _one_vehicle(speed, heading, sensor=SKYSAT, size=96, noise=2.0, seed=0):
    v = synth.VehicleSpec(((size - 1) / 2, (size - 1) / 2), speed_kmh=speed, heading_deg=heading)
    spec = synth.SceneSpec(size, size, sensor, [v], background_level=90, noise_sigma=noise, rng_seed=seed)
    return synth.render_scene(spec)


# --- chips ------------------------------------------------------------------

def test_chip_covers_ellipse_plus_pad():
    b = _bundle(np.zeros((64, 64, 3), np.uint8))
    chip = vz.extract_chip(b, EllipseFit((32.0, 32.0), 5.0, 2.0, 90.0), pad_px=2)
    assert chip.bands.shape[2] >= 14
    assert chip.bands.shape[1] >= 2 * 2 + 2 * 2


def test_chip_pad_zero_is_bounding_box():
    b = _bundle(np.zeros((64, 64, 3), np.uint8))
    chip = vz.extract_chip(b, EllipseFit((32.0, 32.0), 5.0, 2.0, 90.0), pad_px=0)
    assert chip.origin == (30, 27)
    assert chip.bands.shape[1:] == (5, 11)


def test_chip_clipped_at_corner():
    b = _bundle(np.zeros((64, 64, 3), np.uint8))
    chip = vz.extract_chip(b, EllipseFit((1.0, 0.0), 6.0, 2.0, 45.0), pad_px=3)
    assert chip.origin == (0, 0)
    assert chip.bands.shape[1] < 2 * 6 + 6


def test_chip_centre_outside():
    b = _bundle(np.zeros((10, 10, 3), np.uint8))
    with pytest.raises(DataError):
        vz.extract_chip(b, EllipseFit((12.0, 3.0), 2.0, 1.0, 0.0))


# --- peaks ------------------------------------------------------------------

def test_single_bright_pixel():
    p = np.zeros((8, 8))
    p[3, 4] = 200
    assert vz.band_peak(_chip(p), "red", smooth_sigma_px=0) == (3, 4)


def test_tie_goes_to_first():
    p = np.zeros((8, 8))
    p[1, 1] = p[5, 5] = 200
    assert vz.band_peak(_chip(p), "blue", smooth_sigma_px=0, subpixel=False) == (1, 1)
    assert vz.band_peak(_chip(p), "blue", smooth_sigma_px=1.0) == pytest.approx((1, 1), abs=0.5)


def test_constant_plane_has_no_peak():
    assert vz.band_peak(_chip(np.full((5, 5), 7.0)), "green") is None


def test_subpixel_peak_in_parent_coordinates():
    p = np.zeros((9, 9))
    p[4, 4], p[4, 5] = 100, 100
    chip = vz.Chip(np.stack([p, p, p]), (10, 20))
    r, c = vz.band_peak(chip, "red", smooth_sigma_px=0.7)
    assert r == pytest.approx(14.0, abs=1e-9) and c == pytest.approx(24.5, abs=1e-6)


@pytest.mark.parametrize("sensor", [SKYSAT, SUPERDOVE])
@pytest.mark.parametrize("speed,heading", [(54, 30), (90, 200), (120, 300)])
def test_mover_peaks_separated_by_rainbow(sensor, speed, heading):
    b, t = _one_vehicle(speed, heading, sensor=sensor, size=64)
    rec = t.records[0]
    r, c = rec.centroid_px
    e = EllipseFit(((r + rec.blue_centroid_px[0]) / 2, (c + rec.blue_centroid_px[1]) / 2),
                   rec.blur_length_px / 2 + rec.body_length_px / 2, 1.0, heading % 180)
    # a long body has a flat-topped profile; smoothing on its own scale makes the maximum well defined
    sigma = max(1.0, rec.body_length_px / 2)
    chip = vz.extract_chip(b, e, int(4 + 2 * sigma))
    red, blue = vz.band_peak(chip, "red", sigma), vz.band_peak(chip, "blue", sigma)
    sep = math.hypot(blue[0] - red[0], blue[1] - red[1])
    assert sep == pytest.approx(rainbow_from_speed(speed, sensor), abs=1.0)


# --- heading ----------------------------------------------------------------

def _displaced(heading, d=5.0, start=(20.0, 20.0)):
    ur, uc = geo.heading_unit(heading)
    return start, (start[0] + d * ur, start[1] + d * uc)


def test_heading_81():
    e = EllipseFit((20.0, 20.0), 8.0, 2.0, 81.0)
    red, blue = _displaced(81.0)
    assert vz.resolve_heading(e, red, blue) == (pytest.approx(81.0), vz.RESOLVED)
    assert vz.resolve_heading(e, blue, red) == (pytest.approx(261.0), vz.RESOLVED)


def test_perpendicular_is_ambiguous():
    e = EllipseFit((20.0, 20.0), 8.0, 2.0, 81.0)
    red, blue = _displaced(171.0)
    assert vz.resolve_heading(e, red, blue)[1] == vz.AMBIGUOUS


def test_close_or_missing_peaks_are_ambiguous():
    e = EllipseFit((20.0, 20.0), 8.0, 2.0, 130.0)
    red, blue = _displaced(130.0, d=0.5)
    assert vz.resolve_heading(e, red, blue)[1] == vz.AMBIGUOUS
    assert vz.resolve_heading(e, None, blue) == (130.0, vz.AMBIGUOUS)


# --- vectors ------------------------------------------------------------------

def _component_ellipse(bundle):
    dets = [d for d in detector.detect(bundle) if d.cls != "static_car"]
    assert len(dets) == 1
    return dets[0]


@pytest.mark.parametrize("heading", [0, 81, 145, 230, 333])
def test_54_kmh_skysat_round_trip(heading):
    b, t = _one_vehicle(54.0, heading, noise=8.0, seed=heading)
    d = _component_ellipse(b)
    v = d.velocity
    assert v.speed.speed_kmh == pytest.approx(54.0, rel=0.30)
    assert abs(geo.angle_diff(v.heading_deg, heading)) <= 10
    assert v.heading_confidence == vz.RESOLVED
    # resolved heading agrees with the ellipse axis
    assert geo.axis_diff(v.heading_deg, d.ellipse.orientation_deg) <= math.degrees(math.acos(0.5))


def test_axis_method_uses_full_major_axis():
    b = _bundle(np.full((40, 40, 3), 90, np.uint8))
    e = EllipseFit((20.0, 20.0), 4.0, 4.0, 90.0)
    v = vz.infer_vector(b, e, SKYSAT)
    assert v.heading_confidence == vz.AMBIGUOUS
    assert v.speed.rainbow_len_px == pytest.approx(8.0)
    v2 = vz.infer_vector(b, e, SKYSAT, vz.VectorizeConfig(body_length_px=3.0))
    assert v2.speed.rainbow_len_px == pytest.approx(5.0)


def test_centroid_method_on_mover():
    b, t = _one_vehicle(80.0, 60.0, noise=4.0)
    d = _component_ellipse(b)
    cfg = vz.VectorizeConfig(length_method="centroid")
    assert vz.rainbow_length(b, d.ellipse, cfg) == pytest.approx(t.records[0].blur_length_px, rel=0.1)


def test_bad_length_method():
    with pytest.raises(ConfigError):
        vz.VectorizeConfig(length_method="guess")


def test_static_car_yields_no_vector():
    b, _ = _one_vehicle(0.0, 0.0, noise=4.0)
    dets = detector.detect(b)
    assert [d.cls for d in dets] == ["static_car"]
    assert dets[0].velocity is None


def test_rotation_equivariance():
    spec = synth.random_scene("skysat", n_moving=8, n_static=0, seed=5, snr=10, size=(160, 160),
                              texture_sigma=0)
    b, _ = synth.render_scene(spec)
    base = sorted(d.velocity.heading_deg for d in detector.detect(b))
    for k in (1, 2, 3):
        # np.rot90 turns the picture counter-clockwise, so compass headings drop by 90 per turn
        rb = replace(b, rgb=np.ascontiguousarray(np.rot90(b.rgb, k)))
        got = sorted((d.velocity.heading_deg + 90 * k) % 360 for d in detector.detect(rb))
        assert len(got) == len(base)
        for g in got:
            assert min(abs(geo.angle_diff(g, h)) for h in base) <= 2.0


def test_detection_invariants():
    fp = box(0, 0, 1, 1)
    sp = vz.speed_from_rainbow(1.0, SKYSAT)
    with pytest.raises(DataError):
        vz.Detection(0, "static_car", fp, vz.VelocityVector(sp, 0.0, vz.RESOLVED))
    with pytest.raises(DataError):
        vz.Detection(0, "moving_car", fp)
    with pytest.raises(DataError):
        vz.Detection(0, "bus", fp)


def test_vectorize_external_mask():
    b, t = _one_vehicle(100.0, 120.0, sensor=SKYSAT, noise=2.0)
    truth_mask = synth.render_truth_mask(t, SKYSAT, "skysat")
    dets = vz.vectorize_mask(b, truth_mask, 128)
    assert [d.cls for d in dets] == ["moving_car"]
    assert abs(geo.angle_diff(dets[0].velocity.heading_deg, 120.0)) <= 10
    with pytest.raises(DataError):
        vz.vectorize_mask(b, ProbMask(np.zeros((1, 5, 5), np.uint8), ("moving_car",)), 128)
    with pytest.raises(DataError):
        vz.vectorize_mask(b, ProbMask(np.zeros((1, 96, 96), np.uint8), ("car",)), 128)
