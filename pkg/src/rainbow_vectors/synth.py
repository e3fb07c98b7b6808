"""Forward model for sequential-band imagery of moving objects.

Each band images the scene at its own capture time, so an object moving at
``v`` is drawn in band ``b`` displaced by ``rainbow_from_speed(v) * f_b``
pixels along its heading, where ``f_b`` is the band's fraction of the
red->blue delay.  Static objects land on the same pixels in every band.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import erfc
from shapely.ops import unary_union

from . import geometry as geo
from .errors import ConfigError, DataError
from .io import RasterBundle, default_geotransform
from .mask_ops import ProbMask
from .sensor import BANDS, SensorModel, get_preset, rainbow_from_speed, SCHEMA_FOR_PRESET

log = logging.getLogger(__name__)

CAR_SIZE_M = (4.5, 2.0)
TRUCK_SIZE_M = (12.0, 2.5)
TRUCK_MIN_LENGTH_M = 8.0
MIN_CLOUD_RADIUS_PX = 15.0
MIN_CLOUD_SOFTNESS_PX = 3.0
SUPERSAMPLE = 5

# ground-truth mask buffers (metres) per schema
TRUTH_BUFFER_M = {"skysat": 0.75, "planetscope": 2.0}
SCHEMA_LAYERS = {
    "skysat": ("static_car", "moving_car"),
    "planetscope": ("moving_car", "moving_truck"),
}


@dataclass
class VehicleSpec:
    centroid_px: tuple  # (row, col) at red-band time
    cls: str = "car"
    speed_kmh: float = 0.0
    heading_deg: float = 0.0
    length_m: float | None = None
    width_m: float | None = None
    intensity: tuple = (230.0, 230.0, 230.0)

    def __post_init__(self):
        if self.cls not in ("car", "truck"):
            raise ConfigError(f"vehicle class must be 'car' or 'truck', got {self.cls!r}")
        default = CAR_SIZE_M if self.cls == "car" else TRUCK_SIZE_M
        if self.length_m is None:
            self.length_m = default[0]
        if self.width_m is None:
            self.width_m = default[1]
        if not self.length_m >= self.width_m > 0:
            raise ConfigError("vehicle needs length_m >= width_m > 0")
        if self.cls == "truck" and self.length_m < TRUCK_MIN_LENGTH_M:
            raise ConfigError(f"trucks must be at least {TRUCK_MIN_LENGTH_M} m long")
        if self.speed_kmh < 0:
            raise ConfigError("speed_kmh must be non-negative")
        self.heading_deg = geo.wrap_angle(float(self.heading_deg))
        self.centroid_px = tuple(float(v) for v in self.centroid_px)
        self.intensity = _per_band(self.intensity)

    @property
    def truth_class(self):
        if self.speed_kmh == 0:
            return "static_car"
        return "moving_truck" if self.cls == "truck" else "moving_car"


@dataclass
class CloudSpec:
    centroid_px: tuple
    radius_px: float = 25.0
    intensity: tuple = (245.0, 245.0, 245.0)
    drift_speed_kmh: float = 0.0
    drift_heading_deg: float = 0.0
    softness: float = 5.0
    opacity: float = 0.85

    def __post_init__(self):
        if self.radius_px < MIN_CLOUD_RADIUS_PX:
            raise ConfigError(f"cloud radius must be >= {MIN_CLOUD_RADIUS_PX} px")
        if self.softness < MIN_CLOUD_SOFTNESS_PX:
            raise ConfigError(f"cloud softness must be >= {MIN_CLOUD_SOFTNESS_PX} px")
        if not 0 < self.opacity <= 1:
            raise ConfigError("cloud opacity must lie in (0, 1]")
        self.centroid_px = tuple(float(v) for v in self.centroid_px)
        self.intensity = _per_band(self.intensity)


def _per_band(v):
    if np.isscalar(v):
        v = (v, v, v)
    v = tuple(float(x) for x in v)
    if len(v) != 3 or not all(0 <= x <= 255 for x in v):
        raise ConfigError(f"per-band intensities must be three values in [0, 255], got {v}")
    return v


@dataclass
class SceneSpec:
    width_px: int
    height_px: int
    sensor: SensorModel
    vehicles: list = field(default_factory=list)
    clouds: list = field(default_factory=list)
    background_level: tuple = (90.0, 90.0, 90.0)
    texture_sigma: float = 0.0
    texture_scale_px: float = 3.0
    noise_sigma: float = 2.0
    rng_seed: int = 0
    timestamp: str = "2023-04-15T08:00:00Z"
    scene_id: str = "scene-0000"
    geotransform: tuple | None = None

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ConfigError("scene dimensions must be positive")
        self.background_level = _per_band(self.background_level)
        for i, v in enumerate(self.vehicles):
            r, c = v.centroid_px
            if not (-0.5 <= r <= self.height_px - 0.5 and -0.5 <= c <= self.width_px - 0.5):
                raise ConfigError(f"vehicle {i} centroid {v.centroid_px} lies outside the image")
        if self.geotransform is None:
            self.geotransform = default_geotransform(self.sensor)

    # JSON-friendly form used by the CLI ``synth --spec``
    def to_dict(self):
        return {
            "width_px": self.width_px,
            "height_px": self.height_px,
            "sensor": self.sensor.to_dict(),
            "background_level": list(self.background_level),
            "texture_sigma": self.texture_sigma,
            "texture_scale_px": self.texture_scale_px,
            "noise_sigma": self.noise_sigma,
            "rng_seed": self.rng_seed,
            "timestamp": self.timestamp,
            "scene_id": self.scene_id,
            "geotransform": list(self.geotransform),
            "vehicles": [
                {
                    "centroid_px": list(v.centroid_px),
                    "cls": v.cls,
                    "speed_kmh": v.speed_kmh,
                    "heading_deg": v.heading_deg,
                    "length_m": v.length_m,
                    "width_m": v.width_m,
                    "intensity": list(v.intensity),
                }
                for v in self.vehicles
            ],
            "clouds": [
                {
                    "centroid_px": list(c.centroid_px),
                    "radius_px": c.radius_px,
                    "intensity": list(c.intensity),
                    "drift_speed_kmh": c.drift_speed_kmh,
                    "drift_heading_deg": c.drift_heading_deg,
                    "softness": c.softness,
                    "opacity": c.opacity,
                }
                for c in self.clouds
            ],
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        sensor = d.pop("sensor")
        if isinstance(sensor, str):
            sensor = get_preset(sensor)
        elif isinstance(sensor, dict):
            sensor = SensorModel.from_dict(sensor)
        else:
            raise DataError("scene 'sensor' must be a preset name or an object", field="sensor")
        try:
            vehicles = [VehicleSpec(**v) for v in d.pop("vehicles", [])]
            clouds = [CloudSpec(**c) for c in d.pop("clouds", [])]
            if d.get("geotransform") is not None:
                d["geotransform"] = tuple(d["geotransform"])
            return cls(sensor=sensor, vehicles=vehicles, clouds=clouds, **d)
        except TypeError as exc:
            raise DataError(f"bad scene spec: {exc}", field="scene") from exc


@dataclass
class TruthRecord:
    id: int
    cls: str  # static_car | moving_car | moving_truck
    footprint: object  # shapely Polygon, pixel coordinates
    true_speed_kmh: float
    true_heading_deg: float | None
    timestamp: str
    centroid_px: tuple = (0.0, 0.0)
    blue_centroid_px: tuple = (0.0, 0.0)
    body_length_px: float = 0.0
    blur_length_px: float = 0.0
    out_of_frame: bool = False


@dataclass
class GroundTruthSet:
    records: list
    width_px: int
    height_px: int
    scene_id: str = ""
    timestamp: str = ""

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


# --- rendering -------------------------------------------------------------

def _band_offsets(sensor, speed_kmh, heading_deg):
    """Per-band (drow, dcol) displacement relative to the red-band position."""
    if speed_kmh == 0:
        return {b: (0.0, 0.0) for b in BANDS}
    d = rainbow_from_speed(speed_kmh, sensor)
    ur, uc = geo.heading_unit(heading_deg)
    return {b: (d * sensor.band_fraction(b) * ur, d * sensor.band_fraction(b) * uc) for b in BANDS}


def _rect_coverage(shape, center_rc, length_px, width_px, heading_deg, ss=SUPERSAMPLE):
    """Anti-aliased coverage of an oriented rectangle; returns (slices, coverage)."""
    h, w = shape
    ur, uc = geo.heading_unit(heading_deg)
    vr, vc = uc, -ur
    half = 0.5 * math.hypot(length_px, width_px) + 1.0
    r0 = max(int(math.floor(center_rc[0] - half)), 0)
    r1 = min(int(math.ceil(center_rc[0] + half)) + 1, h)
    c0 = max(int(math.floor(center_rc[1] - half)), 0)
    c1 = min(int(math.ceil(center_rc[1] + half)) + 1, w)
    if r0 >= r1 or c0 >= c1:
        return None, None
    sub = (np.arange(ss) + 0.5) / ss - 0.5
    rr = np.arange(r0, r1)[:, None, None, None] + sub[None, None, :, None] - center_rc[0]
    cc = np.arange(c0, c1)[None, :, None, None] + sub[None, None, None, :] - center_rc[1]
    along = rr * ur + cc * uc
    across = rr * vr + cc * vc
    inside = (np.abs(along) <= length_px / 2.0) & (np.abs(across) <= width_px / 2.0)
    cov = inside.mean(axis=(2, 3))
    return (slice(r0, r1), slice(c0, c1)), cov


def _cloud_coverage(shape, center_rc, radius, softness):
    h, w = shape
    rows, cols = np.ogrid[0:h, 0:w]
    dist = np.hypot(rows - center_rc[0], cols - center_rc[1])
    return 0.5 * erfc((dist - radius) / (softness * math.sqrt(2.0)))


def _texture(rng, shape, sigma, scale):
    if sigma <= 0:
        return np.zeros(shape)
    t = ndimage.gaussian_filter(rng.standard_normal(shape), scale, mode="wrap")
    std = t.std()
    return t * (sigma / std) if std > 0 else t


def vehicle_envelope(v: VehicleSpec, sensor: SensorModel):
    """Union of the vehicle body over the red->blue capture interval (pixel polygon)."""
    L, W = v.length_m / sensor.gsd_m, v.width_m / sensor.gsd_m
    offs = _band_offsets(sensor, v.speed_kmh, v.heading_deg)
    r, c = v.centroid_px
    bodies = [
        geo.oriented_rect((r + offs[b][0], c + offs[b][1]), L, W, v.heading_deg)
        for b in ("red", "blue")
    ]
    return unary_union(bodies).convex_hull


def render_scene(spec: SceneSpec):
    """Render a scene to a :class:`RasterBundle` plus its :class:`GroundTruthSet`."""
    sensor = spec.sensor
    moving = any(v.speed_kmh > 0 for v in spec.vehicles) or any(
        c.drift_speed_kmh > 0 for c in spec.clouds
    )
    if moving and sensor.is_degenerate:
        raise ConfigError("moving objects need a sensor with red/blue timing separation")
    rng = np.random.default_rng(spec.rng_seed)
    shape = (spec.height_px, spec.width_px)
    texture = _texture(rng, shape, spec.texture_sigma, spec.texture_scale_px)
    planes = {b: np.full(shape, spec.background_level[i]) + texture for i, b in enumerate(BANDS)}

    bounds = geo.image_bounds(*shape)
    records = []
    for vid, v in enumerate(spec.vehicles):
        L, W = v.length_m / sensor.gsd_m, v.width_m / sensor.gsd_m
        offs = _band_offsets(sensor, v.speed_kmh, v.heading_deg)
        for i, b in enumerate(BANDS):
            center = (v.centroid_px[0] + offs[b][0], v.centroid_px[1] + offs[b][1])
            sl, cov = _rect_coverage(shape, center, L, W, v.heading_deg)
            if sl is None:
                continue
            p = planes[b][sl]
            planes[b][sl] = p * (1.0 - cov) + v.intensity[i] * cov
        env = vehicle_envelope(v, sensor)
        blue = (v.centroid_px[0] + offs["blue"][0], v.centroid_px[1] + offs["blue"][1])
        records.append(
            TruthRecord(
                id=vid,
                cls=v.truth_class,
                footprint=env.intersection(bounds) if env.intersects(bounds) else env,
                true_speed_kmh=float(v.speed_kmh),
                true_heading_deg=v.heading_deg if v.speed_kmh > 0 else None,
                timestamp=spec.timestamp,
                centroid_px=v.centroid_px,
                blue_centroid_px=blue,
                body_length_px=L,
                blur_length_px=rainbow_from_speed(v.speed_kmh, sensor) if v.speed_kmh > 0 else 0.0,
                out_of_frame=not env.intersects(bounds) or env.intersection(bounds).area == 0,
            )
        )

    for cl in spec.clouds:
        offs = _band_offsets(sensor, cl.drift_speed_kmh, cl.drift_heading_deg)
        for i, b in enumerate(BANDS):
            center = (cl.centroid_px[0] + offs[b][0], cl.centroid_px[1] + offs[b][1])
            a = cl.opacity * _cloud_coverage(shape, center, cl.radius_px, cl.softness)
            planes[b] = planes[b] * (1.0 - a) + cl.intensity[i] * a

    out = {}
    for b in BANDS:
        noisy = planes[b] + rng.normal(0.0, spec.noise_sigma, shape) if spec.noise_sigma > 0 else planes[b]
        out[b] = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)

    bundle = RasterBundle.from_planes(
        out,
        sensor=sensor,
        timestamp=spec.timestamp,
        geotransform=spec.geotransform,
        scene_id=spec.scene_id,
    )
    truth = GroundTruthSet(records, spec.width_px, spec.height_px, spec.scene_id, spec.timestamp)
    return bundle, truth


def render_truth_mask(truth: GroundTruthSet, sensor: SensorModel, schema: str) -> ProbMask:
    """Rasterise truth as a two-layer training-style mask (values 0 or 255).

    skysat: layer 0 static cars as disks at the centroid, layer 1 movers as
    the red->blue centroid segment buffered.  planetscope: layer 0 moving
    cars, layer 1 moving trucks, both as buffered segments.
    """
    if schema not in SCHEMA_LAYERS:
        raise ConfigError(f"unknown mask schema {schema!r}")
    expected = SCHEMA_FOR_PRESET.get(sensor.name)
    if expected is not None and expected != schema:
        raise ConfigError(f"schema {schema!r} does not match sensor {sensor.name!r}")
    radius = TRUTH_BUFFER_M[schema] / sensor.gsd_m
    if radius < 1.0:
        log.warning("buffer of %.2f px is below one pixel; clamping to 1 px", radius)
        radius = 1.0
    labels = SCHEMA_LAYERS[schema]
    h, w = truth.height_px, truth.width_px
    planes = np.zeros((2, h, w), dtype=np.uint8)
    for rec in truth.records:
        if rec.cls not in labels:
            continue
        layer = labels.index(rec.cls)
        p0, p1 = rec.centroid_px, rec.blue_centroid_px
        lo_r = max(int(math.floor(min(p0[0], p1[0]) - radius)), 0)
        hi_r = min(int(math.ceil(max(p0[0], p1[0]) + radius)) + 1, h)
        lo_c = max(int(math.floor(min(p0[1], p1[1]) - radius)), 0)
        hi_c = min(int(math.ceil(max(p0[1], p1[1]) + radius)) + 1, w)
        if lo_r >= hi_r or lo_c >= hi_c:
            continue
        rows, cols = np.mgrid[lo_r:hi_r, lo_c:hi_c]
        inside = geo.segment_distance(rows, cols, p0, p1) <= radius
        planes[layer, lo_r:hi_r, lo_c:hi_c][inside] = 255
    return ProbMask(planes, labels)


# --- random scene generation ----------------------------------------------

def snr_noise_sigma(contrast, snr):
    """Noise sigma giving ``snr`` for an object ``contrast`` levels above background."""
    return abs(contrast) / snr


def random_scene(
    preset="skysat",
    n_moving=20,
    n_static=10,
    n_clouds=0,
    seed=0,
    size=None,
    speed_range=(40.0, 120.0),
    truck_fraction=None,
    snr=8.0,
    contrast=(110.0, 150.0),
    background=90.0,
    texture_sigma=None,
    timestamp="2023-04-15T08:00:00Z",
    scene_id=None,
    max_tries=20000,
):
    """Random non-overlapping scene for round-trip experiments.

    Vehicle envelopes keep a clearance of a few metres so distinct vehicles
    never touch.  ``snr`` is the smallest vehicle contrast over noise sigma.
    """
    sensor = get_preset(preset) if isinstance(preset, str) else preset
    rng = np.random.default_rng(seed)
    if size is None:
        # base tile, grown so crowded requests keep about the same vehicle density
        base, per_vehicle = (256, 2200.0) if sensor.gsd_m < 1 else (160, 1280.0)
        side = max(base, 32 * math.ceil(math.sqrt(per_vehicle * (n_moving + n_static)) / 32))
        size = (side, side)
    h, w = size
    if truck_fraction is None:
        truck_fraction = 0.0 if sensor.gsd_m < 1 else 0.3
    if texture_sigma is None:
        texture_sigma = 3.0
    if sensor.gsd_m >= 1 and n_static:
        raise ConfigError("static vehicles are only generated for sub-metre sensors")
    clearance = max(8.0 / sensor.gsd_m, 8.0)
    margin = 4.0
    vehicles, hulls = [], []

    def place(speed, cls):
        for _ in range(max_tries):
            heading = float(rng.uniform(0.0, 360.0))
            r = float(rng.uniform(margin, h - 1 - margin))
            c = float(rng.uniform(margin, w - 1 - margin))
            level = float(rng.uniform(*contrast)) + background
            v = VehicleSpec((r, c), cls=cls, speed_kmh=speed, heading_deg=heading,
                            intensity=min(level, 255.0))
            env = vehicle_envelope(v, sensor)
            minx, miny, maxx, maxy = env.bounds
            if minx < margin or miny < margin or maxx > w - 1 - margin or maxy > h - 1 - margin:
                continue
            grown = env.buffer(clearance)
            if any(grown.intersects(o) for o in hulls):
                continue
            hulls.append(env)
            vehicles.append(v)
            return
        raise ConfigError("could not place all vehicles; enlarge the scene or reduce counts")

    for _ in range(n_moving):
        cls = "truck" if rng.uniform() < truck_fraction else "car"
        place(float(rng.uniform(*speed_range)), cls)
    for _ in range(n_static):
        place(0.0, "car")

    clouds = []
    for _ in range(n_clouds):
        radius = float(rng.uniform(18.0, 40.0))
        clouds.append(
            CloudSpec(
                centroid_px=(float(rng.uniform(0, h - 1)), float(rng.uniform(0, w - 1))),
                radius_px=radius,
                intensity=float(rng.uniform(200.0, 250.0)),
                drift_speed_kmh=float(rng.uniform(20.0, 120.0)),
                drift_heading_deg=float(rng.uniform(0.0, 360.0)),
                softness=float(rng.uniform(4.0, 10.0)),
                opacity=float(rng.uniform(0.5, 0.9)),
            )
        )
    return SceneSpec(
        width_px=w,
        height_px=h,
        sensor=sensor,
        vehicles=vehicles,
        clouds=clouds,
        background_level=background,
        texture_sigma=texture_sigma,
        noise_sigma=snr_noise_sigma(contrast[0], snr),
        rng_seed=int(rng.integers(0, 2**31 - 1)),
        timestamp=timestamp,
        scene_id=scene_id or f"{sensor.name}-{seed:06d}",
    )
