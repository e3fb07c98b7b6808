"""Classical (training-free) mask source and end-to-end detection.

Moving vehicles are found from inter-band disagreement: a mover occupies
different pixels in red, green and blue, so the per-pixel spread between
locally background-subtracted bands is large along its rainbow and near zero
on static content.  Static bright vehicles come from a white top-hat of the
band-mean image, restricted to pixels without chromatic disagreement.  Like
the morphology detectors it imitates, the top-hat only sees vehicles
brighter than their surroundings.

Both masks are :class:`~rainbow_vectors.mask_ops.ProbMask` objects, so a
learned model's masks can replace them without touching later steps.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DataError
from .mask_ops import (
    ProbMask,
    extract_components,
    fit_ellipse,
    static_box,
    threshold_mask,
)
from .sensor import SCHEMA_FOR_PRESET, rainbow_from_speed
from . import geometry as geo
from .vectorize import Detection, VectorizeConfig, band_signal, extract_chip, infer_vector

log = logging.getLogger(__name__)

CAR_LENGTH_M = 4.5


@dataclass
class DetectorConfig:
    """Detector settings.  Pixel sizes left as ``None`` derive from the sensor."""

    schema: str | None = None  # skysat | planetscope; default from sensor name/GSD
    local_norm_window_px: int | None = None
    smooth_sigma_px: float | None = None
    anomaly_thresh: float = 90.0
    anomaly_low_thresh: float = 60.0
    noise_k_high: float = 6.0
    noise_k_low: float = 4.0
    min_rainbow_px: float | None = None
    max_speed_kmh: float = 130.0
    close_radius_px: int | None = None
    link_px: float | None = None
    tophat_radius_px: int | None = None
    static_thresh: float = 90.0
    min_area_px: int | None = None
    max_area_px: int | None = None
    min_edge_gradient: float = 6.0
    truck_min_body_m2: float | None = 20.0  # None disables the truck class
    nominal_contrast_dn: float = 130.0
    min_axis_ratio: float = 1.3
    max_minor_px: float | None = None  # wider components are not single vehicles
    car_length_m: float = 4.5
    truck_length_m: float = 12.0
    body_scale: float = 1.0  # body-length subtraction as a multiple of the class length
    vectorize: VectorizeConfig = field(
        default_factory=lambda: VectorizeConfig(axis_scale=math.sqrt(3.0) / 2.0, length_method="centroid")
    )

    def __post_init__(self):
        if isinstance(self.vectorize, dict):
            self.vectorize = VectorizeConfig(**self.vectorize)
        for name in ("anomaly_thresh", "anomaly_low_thresh", "static_thresh"):
            v = getattr(self, name)
            if not 0 <= v <= 255:
                raise ConfigError(f"{name} must lie in [0, 255], got {v}")
        for name in ("local_norm_window_px", "close_radius_px", "tophat_radius_px"):
            v = getattr(self, name)
            if v is not None and v < 1 and name != "close_radius_px":
                raise ConfigError(f"{name} must be >= 1")
        if self.anomaly_low_thresh > self.anomaly_thresh:
            raise ConfigError("anomaly_low_thresh must not exceed anomaly_thresh")
        if self.schema is not None and self.schema not in ("skysat", "planetscope"):
            raise ConfigError(f"unknown schema {self.schema!r}")

    def resolved(self, sensor) -> "DetectorConfig":
        """Copy with every sensor-dependent default filled in."""
        gsd = sensor.gsd_m
        d = asdict(self)
        d["vectorize"] = VectorizeConfig(**d["vectorize"])
        car_px = CAR_LENGTH_M / gsd
        if d["schema"] is None:
            d["schema"] = SCHEMA_FOR_PRESET.get(sensor.name, "skysat" if gsd <= 1.0 else "planetscope")
        if d["smooth_sigma_px"] is None:
            d["smooth_sigma_px"] = 1.0 if gsd <= 1.0 else 0.5
        if d["local_norm_window_px"] is None:
            d["local_norm_window_px"] = int(2 * round(max(8.0, 4.0 * car_px)) + 1)
        max_rainbow = rainbow_from_speed(d["max_speed_kmh"], sensor)
        # band copies of the fastest mover sit max_rainbow/2 apart, centre to centre
        gap = max(max_rainbow / 2.0 - car_px, 0.0)
        if d["close_radius_px"] is None:
            d["close_radius_px"] = 0
        if d["link_px"] is None:
            d["link_px"] = float(math.ceil(gap) + 1)
        if d["tophat_radius_px"] is None:
            d["tophat_radius_px"] = max(int(math.ceil(car_px * 0.75)), 2)
        if d["min_area_px"] is None:
            d["min_area_px"] = 2 if gsd > 1.0 else max(int(round(0.3 * car_px * car_px / 2.0)), 3)
        if d["max_area_px"] is None:
            max_rainbow = rainbow_from_speed(d["max_speed_kmh"], sensor)
            longest = max_rainbow + 14.0 / gsd
            d["max_area_px"] = int(math.ceil(longest * (4.0 / gsd + 2 * d["close_radius_px"] + 2)))
        if d["max_minor_px"] is None:
            d["max_minor_px"] = max(2.5 / gsd, 2.0)
        if d["min_rainbow_px"] is None:
            d["min_rainbow_px"] = 1.0
        return DetectorConfig(**d)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown detector config keys: {sorted(unknown)}")
        vec = d.get("vectorize", {})
        if isinstance(vec, dict):
            vknown = {f.name for f in fields(VectorizeConfig)}
            bad = set(vec) - vknown
            if bad:
                raise ConfigError(f"unknown vectorize config keys: {sorted(bad)}")
        return cls(**d)


def _disk(radius):
    r = int(radius)
    y, x = np.ogrid[-r:r + 1, -r:r + 1]
    return x * x + y * y <= radius * radius + 1e-9


def _line(length, angle_deg):
    """Boolean footprint of a digital line segment through the centre."""
    half = (length - 1) / 2.0
    r = int(math.ceil(half))
    fp = np.zeros((2 * r + 1, 2 * r + 1), dtype=bool)
    t = np.linspace(-half, half, 4 * length + 1)
    a = math.radians(angle_deg)
    fp[np.rint(r - t * math.cos(a)).astype(int), np.rint(r + t * math.sin(a)).astype(int)] = True
    return fp


def directional_closing(score, length, n_angles=12):
    """Max over orientations of grey closings with line footprints.

    Bridges gaps up to ``length - 1`` pixels along any direction without
    the fattening an isotropic disk closing would need to do the same.
    """
    out = score.copy()
    for k in range(n_angles):
        fp = _line(length, 180.0 * k / n_angles)
        np.maximum(out, ndimage.grey_closing(score, footprint=fp, mode="reflect"), out=out)
    return out


def _require_rgb(raster):
    rgb = getattr(raster, "rgb", None)
    if rgb is None or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DataError("detector needs a raster with red, green and blue planes", field="planes")
    return rgb.astype(float)


def _residuals(rgb, cfg):
    """Band residuals against a local mean background, lightly smoothed."""
    w = cfg.local_norm_window_px
    bg = np.stack([ndimage.uniform_filter(rgb[..., i], w, mode="reflect") for i in range(3)], -1)
    res = rgb - bg
    if cfg.smooth_sigma_px > 0:
        res = np.stack(
            [ndimage.gaussian_filter(res[..., i], cfg.smooth_sigma_px, mode="reflect") for i in range(3)],
            -1,
        )
    level = np.maximum(bg.mean(axis=-1), 1.0)
    return res, level


def _to_score(x):
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def noise_floor(score):
    """Median of a score plane; on mostly-empty imagery this tracks the noise level."""
    return float(np.median(score))


def effective_thresholds(score, cfg):
    """(high, low) thresholds: the configured floors or ``k * noise``, whichever is larger."""
    n = noise_floor(score)
    return max(cfg.anomaly_thresh, cfg.noise_k_high * n), max(cfg.anomaly_low_thresh, cfg.noise_k_low * n)


def chromatic_anomaly_mask(raster, cfg: DetectorConfig | None = None) -> ProbMask:
    """Score plane ``moving`` from inter-band disagreement.

    Per pixel, the spread (max - min) of the three background-subtracted
    bands, divided by the local mean level and scaled so that a spread equal
    to the local level scores 255.  Scores under the low hysteresis
    threshold are zeroed.  With ``close_radius_px > 0`` a directional closing
    then bridges the band copies of fast movers; by default the detector
    groups them by component linking instead.
    """
    rgb = _require_rgb(raster)
    cfg = (cfg or DetectorConfig()).resolved(raster.sensor)
    res, level = _residuals(rgb, cfg)
    spread = res.max(axis=-1) - res.min(axis=-1)
    score = 255.0 * spread / level
    _, low = effective_thresholds(score, cfg)
    score[score < low] = 0.0
    if cfg.close_radius_px > 0:
        score = directional_closing(score, 2 * cfg.close_radius_px + 1)
    return ProbMask(_to_score(score)[None], ("moving",))


def tophat_static_mask(raster, cfg: DetectorConfig | None = None) -> ProbMask:
    """White top-hat of the band-mean image, scored like the chromatic mask."""
    if raster.sensor.gsd_m > 1.0:
        raise ConfigError(
            f"static detection needs sub-metre imagery; {raster.sensor.name} has "
            f"{raster.sensor.gsd_m} m pixels, where individual parked cars are not resolvable"
        )
    rgb = _require_rgb(raster)
    cfg = (cfg or DetectorConfig()).resolved(raster.sensor)
    gray = rgb.mean(axis=-1)
    if cfg.smooth_sigma_px > 0:
        gray = ndimage.gaussian_filter(gray, cfg.smooth_sigma_px, mode="reflect")
    th = ndimage.white_tophat(gray, footprint=_disk(cfg.tophat_radius_px), mode="reflect")
    level = np.maximum(ndimage.uniform_filter(gray, cfg.local_norm_window_px, mode="reflect"), 1.0)
    return ProbMask(_to_score(255.0 * th / level)[None], ("static_car",))


def edge_gradient(component, grad):
    """Mean gradient magnitude over the component's boundary pixels."""
    px = component.pixels
    r0, c0 = px.min(axis=0)
    r1, c1 = px.max(axis=0)
    sub = np.zeros((r1 - r0 + 3, c1 - c0 + 3), dtype=bool)
    sub[px[:, 0] - r0 + 1, px[:, 1] - c0 + 1] = True
    inner = ndimage.binary_erosion(sub, structure=np.ones((3, 3), bool))
    br, bc = np.nonzero(sub & ~inner)
    return float(grad[br + r0 - 1, bc + c0 - 1].mean())


def _gradient_magnitude(rgb):
    mx = rgb.max(axis=-1)
    return np.hypot(ndimage.sobel(mx, 0, mode="reflect"), ndimage.sobel(mx, 1, mode="reflect")) / 8.0


def rainbow_separation(component, res, pad=2):
    """Distance between red- and blue-residual centroids around a component.

    Noise blobs show no systematic red/blue offset; a mover's red image
    trails its blue image by the rainbow length.
    """
    px = component.pixels
    h, w = res.shape[:2]
    r0, c0 = np.maximum(px.min(axis=0) - pad, 0)
    r1, c1 = np.minimum(px.max(axis=0) + pad + 1, (h, w))
    sub = np.zeros((r1 - r0, c1 - c0), dtype=bool)
    sub[px[:, 0] - r0, px[:, 1] - c0] = True
    sub = ndimage.binary_dilation(sub, iterations=pad)
    rr, cc = np.nonzero(sub)
    cents = []
    for i in (0, 2):
        wgt = np.clip(res[r0:r1, c0:c1, i][sub], 0, None)
        if wgt.sum() <= 0:
            return 0.0
        cents.append(((rr * wgt).sum() / wgt.sum(), (cc * wgt).sum() / wgt.sum()))
    return math.hypot(cents[1][0] - cents[0][0], cents[1][1] - cents[0][1])


def body_area_m2(raster, e, cfg):
    """Vehicle plan area implied by its integrated band contrast at ``nominal_contrast_dn``."""
    chip = extract_chip(raster, e, cfg.vectorize.pad_px)
    sig = band_signal(chip, e, cfg.vectorize.centroid_noise_k)
    return sig / cfg.nominal_contrast_dn * raster.sensor.gsd_m ** 2


def detect(raster, sensor=None, cfg: DetectorConfig | None = None):
    """Run masks -> threshold -> components -> gates -> geometry -> vectors.

    Moving components are kept when they (1) reach ``anomaly_thresh`` somewhere
    while extending down to ``anomaly_low_thresh`` (hysteresis), (2) pass the
    area gates, (3) have sharp edges (clouds do not), and (4) show a red/blue
    centroid offset of at least ``min_rainbow_px``.
    """
    sensor = sensor or raster.sensor
    if sensor.is_degenerate:
        raise ConfigError(f"sensor {sensor.name!r} cannot image motion")
    cfg = (cfg or DetectorConfig()).resolved(sensor)
    rgb = _require_rgb(raster)
    shape = raster.shape
    grad = _gradient_magnitude(rgb)
    res, level = _residuals(rgb, cfg)

    moving_mask = chromatic_anomaly_mask(raster, cfg)
    score = moving_mask.planes[0]
    high, low = effective_thresholds(255.0 * (res.max(axis=-1) - res.min(axis=-1)) / level, cfg)
    moving_bin = threshold_mask(moving_mask, {"moving": min(low, 255.0)})
    movers = extract_components(moving_bin, cfg.min_area_px, cfg.max_area_px, link_px=cfg.link_px)

    out = []
    claimed = np.zeros(shape, dtype=bool)
    for comp in movers:
        rows, cols = comp.pixels[:, 0], comp.pixels[:, 1]
        if score[rows, cols].max() < high:
            continue
        if comp.area_px < 3 or edge_gradient(comp, grad) < cfg.min_edge_gradient:
            continue
        if rainbow_separation(comp, res) < cfg.min_rainbow_px:
            continue
        e = fit_ellipse(comp)
        if e.semi_minor_px > cfg.max_minor_px:
            continue
        claimed[rows, cols] = True
        if cfg.schema == "skysat" and e.axis_ratio < cfg.min_axis_ratio:
            out.append(("static_car", comp, e))
            continue
        if cfg.schema == "planetscope" and cfg.truck_min_body_m2 is not None and (
            body_area_m2(raster, e, cfg) >= cfg.truck_min_body_m2
        ):
            out.append(("moving_truck", comp, e))
        else:
            out.append(("moving_car", comp, e))

    if cfg.schema == "skysat" and sensor.gsd_m <= 1.0:
        static_mask = tophat_static_mask(raster, cfg)
        static_bin = threshold_mask(static_mask, {"static_car": cfg.static_thresh})
        near_moving = ndimage.binary_dilation(score >= low, structure=_disk(2))
        plane = static_bin.planes[0] & ~near_moving & ~claimed
        for comp in extract_components(plane, cfg.min_area_px, cfg.max_area_px):
            out.append(("static_car", comp, None))

    out.sort(key=lambda t: (t[1].centroid_px, t[0]))
    bounds = geo.image_bounds(*shape)
    dets = []
    for cls, comp, e in out:
        vec = None
        if cls == "static_car":
            fp = static_box(comp, sensor, shape)
        else:
            body_m = cfg.truck_length_m if cls == "moving_truck" else cfg.car_length_m
            vcfg = replace(cfg.vectorize, body_length_px=cfg.body_scale * body_m / sensor.gsd_m)
            try:
                vec = infer_vector(raster, e, sensor, vcfg)
            except DataError as exc:
                log.debug("no vector for component at %s: %s", comp.centroid_px, exc)
                continue
            if vec.speed.rainbow_len_px < cfg.min_rainbow_px:
                continue
            fp = e.polygon().intersection(bounds)
        dets.append(Detection(len(dets), cls, fp, vec, raster.timestamp, raster.scene_id, e))
    return dets
