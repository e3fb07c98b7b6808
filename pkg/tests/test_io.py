import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rainbow_vectors import detector, geometry as geo, io
from rainbow_vectors.errors import DataError
from rainbow_vectors.sensor import SKYSAT


def test_compass_helpers():
    assert geo.heading_unit(0) == pytest.approx((-1.0, 0.0))
    assert geo.heading_unit(90) == pytest.approx((0.0, 1.0))
    assert geo.compass_of(0, 1) == pytest.approx(90.0)
    assert geo.compass_of(1, 0) == pytest.approx(180.0)
    assert geo.angle_diff(350, 10) == pytest.approx(-20.0)
    assert geo.axis_diff(10, 170) == pytest.approx(20.0)


@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
def test_geotransform_inverse(r, c):
    t = io.GeoTransform((500000.0, 0.5, 0.1, 4000000.0, -0.05, -0.5))
    X, Y = t.to_geo(r, c)
    r2, c2 = t.to_pixel(X, Y)
    assert abs(r2 - r) < 1e-6 and abs(c2 - c) < 1e-6


def test_geotransform_corner_convention():
    t = io.GeoTransform(io.default_geotransform(SKYSAT))
    # centre of pixel (0, 0) is half a pixel inside the top-left corner
    X, Y = t.to_geo(0, 0)
    assert (X, Y) == pytest.approx((500000.25, 3999999.75))


def test_singular_geotransform():
    with pytest.raises(DataError):
        io.GeoTransform((0, 0, 0, 0, 0, 0))


def test_bundle_round_trip(tmp_path, skysat_scene):
    bundle, _ = skysat_scene
    io.write_bundle(bundle, tmp_path / "b")
    back = io.read_bundle(tmp_path / "b")
    assert back.rgb.tobytes() == bundle.rgb.tobytes()
    assert back.sidecar() == bundle.sidecar()
    assert back.sensor == bundle.sensor


def _write_sidecar(path, side):
    (path / io.SIDECAR_NAME).write_text(json.dumps(side))


def test_missing_gsd_named(tmp_path, skysat_scene):
    bundle, _ = skysat_scene
    io.write_bundle(bundle, tmp_path)
    side = bundle.sidecar()
    del side["sensor"]["gsd_m"]
    _write_sidecar(tmp_path, side)
    with pytest.raises(DataError) as ei:
        io.read_bundle(tmp_path)
    assert ei.value.field == "gsd_m"


def test_size_mismatch(tmp_path, skysat_scene):
    bundle, _ = skysat_scene
    io.write_bundle(bundle, tmp_path)
    side = bundle.sidecar()
    side["width"] += 1
    _write_sidecar(tmp_path, side)
    with pytest.raises(DataError, match="does not match"):
        io.read_bundle(tmp_path)


def test_missing_plane_file_and_sidecar(tmp_path, skysat_scene):
    bundle, _ = skysat_scene
    with pytest.raises(DataError):
        io.read_bundle(tmp_path)
    io.write_bundle(bundle, tmp_path)
    (tmp_path / io.IMAGE_NAME).unlink()
    with pytest.raises(DataError) as ei:
        io.read_bundle(tmp_path)
    assert ei.value.field == "image"


def test_malformed_sidecar(tmp_path, skysat_scene):
    io.write_bundle(skysat_scene[0], tmp_path)
    (tmp_path / io.SIDECAR_NAME).write_text("{not json")
    with pytest.raises(DataError) as ei:
        io.read_bundle(tmp_path)
    assert ei.value.field == "sidecar"


def test_from_planes_validation():
    a = np.zeros((4, 5), np.uint8)
    kw = dict(sensor=SKYSAT, timestamp="t", geotransform=io.default_geotransform(SKYSAT), scene_id="s")
    with pytest.raises(DataError) as ei:
        io.RasterBundle.from_planes({"red": a, "green": a}, **kw)
    assert ei.value.field == "blue"
    with pytest.raises(DataError):
        io.RasterBundle.from_planes({"red": a, "green": a, "blue": np.zeros((5, 5), np.uint8)}, **kw)
    with pytest.raises(DataError):
        io.RasterBundle.from_planes({"red": a, "green": a, "blue": a.astype(float)}, **kw)


def test_detection_file_round_trip(tmp_path, skysat_scene):
    bundle, _ = skysat_scene
    dets = detector.detect(bundle)
    assert dets
    path = tmp_path / "d.geojson"
    io.write_geojson(path, io.detections_to_geojson(dets, bundle))
    back = io.detections_from_geojson(io.read_geojson(path))
    assert len(back) == len(dets)
    for a, b in zip(dets, back):
        assert (a.id, a.cls, a.timestamp, a.scene_id) == (b.id, b.cls, b.timestamp, b.scene_id)
        assert a.velocity == b.velocity
        assert a.ellipse == b.ellipse
        assert a.footprint.hausdorff_distance(b.footprint) < 1e-6
    # writing what was read gives the same bytes
    io.write_geojson(tmp_path / "e.geojson", io.detections_to_geojson(back, bundle))
    assert (tmp_path / "e.geojson").read_bytes() == path.read_bytes()


def test_truth_file_round_trip(skysat_scene):
    bundle, truth = skysat_scene
    doc = json.loads(json.dumps(io._plain(io.truth_to_geojson(truth, bundle.geotransform))))
    props = doc["features"][0]["properties"]
    assert {"id", "class", "speed_kmh", "heading_deg"} <= set(props)
    back = io.truth_from_geojson(doc)
    assert len(back) == len(truth)
    for a, b in zip(truth.records, back.records):
        assert (a.id, a.cls, a.true_speed_kmh, a.true_heading_deg) == (b.id, b.cls, b.true_speed_kmh,
                                                                       b.true_heading_deg)
        assert a.footprint.hausdorff_distance(b.footprint) < 1e-6


def test_geojson_validation(tmp_path):
    p = tmp_path / "x.geojson"
    p.write_text('{"type": "Feature"}')
    with pytest.raises(DataError):
        io.read_geojson(p)
    doc = io.feature_collection([{"type": "Feature", "properties": {"id": 0}, "geometry": None}],
                                geotransform=[0, 1, 0, 0, 0, -1])
    with pytest.raises(DataError):
        io.detections_from_geojson(doc)
    with pytest.raises(DataError) as ei:
        io.detections_from_geojson(io.feature_collection([]))
    assert ei.value.field == "geotransform"


def test_atomic_write_leaves_no_temp(tmp_path):
    io.atomic_write_text(tmp_path / "a.txt", "hello")
    assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]
