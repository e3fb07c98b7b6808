"""Raster bundles, GeoJSON detection/truth files and atomic file writes.

A bundle is a directory holding ``image.png`` (8-bit RGB, plane order
red/green/blue) and ``bundle.json``, a sidecar with the embedded sensor,
ISO-8601 UTC timestamp, GDAL-ordered geotransform and scene id.

The geotransform follows the GDAL convention on pixel *corners*::

    X = gt[0] + x * gt[1] + y * gt[2]
    Y = gt[3] + x * gt[4] + y * gt[5]

with ``x = col + 0.5`` and ``y = row + 0.5`` for package pixel coordinates,
whose pixel centres sit on integers.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from shapely.geometry import Polygon, mapping, shape
from shapely.ops import transform as shapely_transform

from .errors import DataError
from .sensor import BANDS, SensorModel

IMAGE_NAME = "image.png"
SIDECAR_NAME = "bundle.json"
SIDECAR_VERSION = 1


def default_geotransform(sensor, origin=(500000.0, 4000000.0)):
    """North-up transform in a local metric CRS with ``gsd_m`` pixels."""
    return (origin[0], sensor.gsd_m, 0.0, origin[1], 0.0, -sensor.gsd_m)


class GeoTransform:
    """Affine pixel <-> geographic mapping."""

    def __init__(self, gt):
        gt = tuple(float(v) for v in gt)
        if len(gt) != 6:
            raise DataError("geotransform must have 6 values", field="geotransform")
        det = gt[1] * gt[5] - gt[2] * gt[4]
        if det == 0:
            raise DataError("geotransform is singular", field="geotransform")
        self.gt = gt
        self._det = det

    def to_geo(self, row, col):
        g = self.gt
        x, y = np.asarray(col, dtype=float) + 0.5, np.asarray(row, dtype=float) + 0.5
        return g[0] + x * g[1] + y * g[2], g[3] + x * g[4] + y * g[5]

    def to_pixel(self, X, Y):
        g = self.gt
        dx, dy = np.asarray(X, dtype=float) - g[0], np.asarray(Y, dtype=float) - g[3]
        x = (g[5] * dx - g[2] * dy) / self._det
        y = (-g[4] * dx + g[1] * dy) / self._det
        return y - 0.5, x - 0.5

    def polygon_to_geo(self, poly):
        def f(x, y, z=None):
            X, Y = self.to_geo(y, x)
            return X, Y

        return shapely_transform(f, poly)

    def polygon_to_pixel(self, poly):
        def f(X, Y, z=None):
            r, c = self.to_pixel(X, Y)
            return c, r

        return shapely_transform(f, poly)


@dataclass
class RasterBundle:
    """Co-registered red/green/blue planes plus acquisition metadata."""

    rgb: np.ndarray  # (H, W, 3) uint8
    sensor: SensorModel
    timestamp: str
    geotransform: tuple
    scene_id: str
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        rgb = np.asarray(self.rgb)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise DataError(f"expected (H, W, 3) planes, got shape {rgb.shape}", field="planes")
        if rgb.dtype != np.uint8:
            raise DataError(f"planes must be uint8, got {rgb.dtype}", field="planes")
        self.rgb = rgb
        self.geotransform = tuple(float(v) for v in self.geotransform)
        GeoTransform(self.geotransform)

    @classmethod
    def from_planes(cls, planes, **kw):
        """Build from a ``{band: 2-D array}`` mapping, checking plane sizes."""
        missing = [b for b in BANDS if b not in planes]
        if missing:
            raise DataError(f"missing plane(s): {missing}", field=missing[0])
        shapes = {b: np.shape(planes[b]) for b in BANDS}
        if len(set(shapes.values())) != 1:
            raise DataError(f"plane dimensions differ: {shapes}", field="planes")
        return cls(np.stack([np.asarray(planes[b]) for b in BANDS], axis=-1), **kw)

    @property
    def shape(self):
        return self.rgb.shape[:2]

    def band(self, name):
        return self.rgb[..., BANDS.index(name)]

    @property
    def transform(self):
        return GeoTransform(self.geotransform)

    def sidecar(self):
        h, w = self.shape
        d = {
            "version": SIDECAR_VERSION,
            "scene_id": self.scene_id,
            "timestamp": self.timestamp,
            "geotransform": list(self.geotransform),
            "width": w,
            "height": h,
            "plane_order": list(BANDS),
            "image": IMAGE_NAME,
            "sensor": self.sensor.to_dict(),
        }
        if self.extra:
            d["extra"] = self.extra
        return d


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def png_bytes(array) -> bytes:
    """Encode a uint8 array as PNG without any time-dependent chunks."""
    import io as _io

    buf = _io.BytesIO()
    Image.fromarray(np.ascontiguousarray(array)).save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def write_bundle(bundle: RasterBundle, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(path / IMAGE_NAME, png_bytes(bundle.rgb))
    atomic_write_text(path / SIDECAR_NAME, dumps_json(bundle.sidecar()))


def _require(d, key, where):
    if key not in d:
        raise DataError(f"{where} is missing required field {key!r}", field=key)
    return d[key]


def read_bundle(path) -> RasterBundle:
    path = Path(path)
    side_path = path / SIDECAR_NAME
    if not side_path.exists():
        raise DataError(f"no {SIDECAR_NAME} in {path}", field="sidecar")
    try:
        side = json.loads(side_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed sidecar {side_path}: {exc}", field="sidecar") from exc
    if not isinstance(side, dict):
        raise DataError("sidecar must be a JSON object", field="sidecar")
    sensor_d = _require(side, "sensor", "sidecar")
    if not isinstance(sensor_d, dict):
        raise DataError("sensor must be an object", field="sensor")
    sensor = SensorModel.from_dict(sensor_d)
    for key in ("scene_id", "timestamp", "geotransform", "width", "height"):
        _require(side, key, "sidecar")
    order = side.get("plane_order", list(BANDS))
    if sorted(order) != sorted(BANDS):
        raise DataError(f"plane_order must list {BANDS}, got {order}", field="plane_order")
    img_path = path / side.get("image", IMAGE_NAME)
    if not img_path.exists():
        raise DataError(f"missing image plane file {img_path.name}", field="image")
    with Image.open(img_path) as im:
        arr = np.array(im)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"image must hold 3 planes, found shape {arr.shape}", field="planes")
    if arr.shape[:2] != (side["height"], side["width"]):
        raise DataError(
            f"plane size {arr.shape[1]}x{arr.shape[0]} does not match sidecar "
            f"{side['width']}x{side['height']}",
            field="width",
        )
    rgb = arr[..., [order.index(b) for b in BANDS]]
    return RasterBundle(
        rgb=np.ascontiguousarray(rgb),
        sensor=sensor,
        timestamp=side["timestamp"],
        geotransform=tuple(side["geotransform"]),
        scene_id=side["scene_id"],
        extra=side.get("extra", {}),
    )


# --- GeoJSON --------------------------------------------------------------

def _round_coords(geom, ndigits):
    if ndigits is None:
        return geom
    return shapely_transform(lambda x, y, z=None: (np.round(x, ndigits), np.round(y, ndigits)), geom)


def feature_collection(features, **members):
    fc = {"type": "FeatureCollection"}
    fc.update(members)
    fc["features"] = features
    return fc


def geometry_to_geojson(poly_px, transform: GeoTransform):
    return mapping(transform.polygon_to_geo(poly_px))


def geometry_from_geojson(geom, transform: GeoTransform):
    poly = shape(geom)
    if not isinstance(poly, Polygon):
        raise DataError(f"expected Polygon geometry, got {poly.geom_type}", field="geometry")
    return transform.polygon_to_pixel(poly)


def read_geojson(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read GeoJSON {path}: {exc}", field="file") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise DataError(f"{path} is not a GeoJSON FeatureCollection", field="type")
    if not isinstance(doc.get("features"), list):
        raise DataError(f"{path} has no features array", field="features")
    return doc


def _plain(obj):
    """Convert shapely mapping output (tuples) to JSON lists for stable output."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_geojson(path, doc):
    atomic_write_text(path, json.dumps(_plain(doc), indent=1) + "\n")


def _num(v):
    return None if v is None else float(v)


def detection_to_feature(det, transform: GeoTransform):
    props = {
        "id": int(det.id),
        "class": det.cls,
        "speed_kmh": None,
        "speed_err_kmh": None,
        "rainbow_len_px": None,
        "heading_deg": None,
        "heading_confidence": None,
        "timestamp": det.timestamp,
        "scene_id": det.scene_id,
    }
    if det.velocity is not None:
        sp = det.velocity.speed
        props.update(
            speed_kmh=float(sp.speed_kmh),
            speed_err_kmh=float(sp.speed_err_kmh),
            rainbow_len_px=float(sp.rainbow_len_px),
            heading_deg=float(det.velocity.heading_deg),
            heading_confidence=det.velocity.heading_confidence,
        )
    if det.ellipse is not None:
        e = det.ellipse
        props["ellipse_px"] = {
            "center": [float(e.center_px[0]), float(e.center_px[1])],
            "semi_major": float(e.semi_major_px),
            "semi_minor": float(e.semi_minor_px),
            "orientation_deg": float(e.orientation_deg),
        }
    return {"type": "Feature", "id": int(det.id), "geometry": geometry_to_geojson(det.footprint, transform),
            "properties": props}


def detections_to_geojson(dets, bundle: RasterBundle):
    """DetectionFile document for one scene.  Footprints are in geographic units."""
    t = bundle.transform
    return feature_collection(
        [detection_to_feature(d, t) for d in dets],
        kind="detections",
        scene_id=bundle.scene_id,
        timestamp=bundle.timestamp,
        geotransform=list(bundle.geotransform),
        sensor=bundle.sensor.to_dict(),
    )


def _collection_transform(doc):
    gt = doc.get("geotransform")
    if gt is None:
        raise DataError("FeatureCollection lacks a 'geotransform' member", field="geotransform")
    return GeoTransform(gt)


def _feature_parts(feat, i):
    if not isinstance(feat, dict) or feat.get("type") != "Feature":
        raise DataError(f"feature #{i} is not a GeoJSON Feature", field="features")
    props = feat.get("properties")
    if not isinstance(props, dict):
        raise DataError(f"feature #{i} has no properties object", field="properties")
    if "geometry" not in feat or feat["geometry"] is None:
        raise DataError(f"feature #{i} has no geometry", field="geometry")
    return props


def detections_from_geojson(doc):
    """Inverse of :func:`detections_to_geojson`; footprints come back in pixels."""
    from .mask_ops import EllipseFit
    from .sensor import SpeedEstimate
    from .vectorize import Detection, VelocityVector

    t = _collection_transform(doc)
    out = []
    for i, feat in enumerate(doc["features"]):
        props = _feature_parts(feat, i)
        for key in ("id", "class"):
            _require(props, key, f"feature #{i} properties")
        vel = None
        if props.get("speed_kmh") is not None:
            for key in ("speed_err_kmh", "heading_deg", "heading_confidence"):
                _require(props, key, f"feature #{i} properties")
            sp = SpeedEstimate(float(props["speed_kmh"]), float(props["speed_err_kmh"]),
                               _num(props.get("rainbow_len_px")))
            vel = VelocityVector(sp, float(props["heading_deg"]), props["heading_confidence"])
        ell = None
        if props.get("ellipse_px") is not None:
            e = props["ellipse_px"]
            ell = EllipseFit(tuple(e["center"]), e["semi_major"], e["semi_minor"], e["orientation_deg"])
        out.append(Detection(
            id=int(props["id"]),
            cls=props["class"],
            footprint=geometry_from_geojson(feat["geometry"], t),
            velocity=vel,
            timestamp=props.get("timestamp", doc.get("timestamp")),
            scene_id=props.get("scene_id", doc.get("scene_id")),
            ellipse=ell,
        ))
    return out


def truth_to_geojson(truth, geotransform):
    """Ground-truth records as a FeatureCollection (footprints in geographic units)."""
    t = GeoTransform(geotransform)
    feats = []
    for r in truth.records:
        props = {
            "id": int(r.id),
            "class": r.cls,
            "speed_kmh": float(r.true_speed_kmh),
            "heading_deg": _num(r.true_heading_deg),
            "timestamp": r.timestamp,
            "centroid_px": [float(v) for v in r.centroid_px],
            "blue_centroid_px": [float(v) for v in r.blue_centroid_px],
            "body_length_px": float(r.body_length_px),
            "blur_length_px": float(r.blur_length_px),
            "out_of_frame": bool(r.out_of_frame),
        }
        feats.append({"type": "Feature", "id": int(r.id), "geometry": geometry_to_geojson(r.footprint, t),
                      "properties": props})
    return feature_collection(
        feats,
        kind="truth",
        scene_id=truth.scene_id,
        timestamp=truth.timestamp,
        width_px=truth.width_px,
        height_px=truth.height_px,
        geotransform=list(geotransform),
    )


def truth_from_geojson(doc):
    from .synth import GroundTruthSet, TruthRecord

    t = _collection_transform(doc)
    recs = []
    for i, feat in enumerate(doc["features"]):
        props = _feature_parts(feat, i)
        for key in ("id", "class", "speed_kmh"):
            _require(props, key, f"feature #{i} properties")
        recs.append(TruthRecord(
            id=int(props["id"]),
            cls=props["class"],
            footprint=geometry_from_geojson(feat["geometry"], t),
            true_speed_kmh=float(props["speed_kmh"]),
            true_heading_deg=_num(props.get("heading_deg")),
            timestamp=props.get("timestamp", doc.get("timestamp", "")),
            centroid_px=tuple(props.get("centroid_px", (0.0, 0.0))),
            blue_centroid_px=tuple(props.get("blue_centroid_px", (0.0, 0.0))),
            body_length_px=float(props.get("body_length_px", 0.0)),
            blur_length_px=float(props.get("blur_length_px", 0.0)),
            out_of_frame=bool(props.get("out_of_frame", False)),
        ))
    return GroundTruthSet(recs, int(doc.get("width_px", 0)), int(doc.get("height_px", 0)),
                          doc.get("scene_id", ""), doc.get("timestamp", ""))


def read_items(path):
    """Detections or truth records from a GeoJSON file, by its ``kind`` member."""
    doc = read_geojson(path)
    if doc.get("kind") == "truth":
        return truth_from_geojson(doc).records
    return detections_from_geojson(doc)
