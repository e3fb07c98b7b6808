"""Heading and speed from a fitted ellipse and the band peaks around it.

The ellipse's major axis fixes the direction of travel up to 180 degrees.
Because red is captured before blue, the blue-band image of a mover sits
ahead of the red-band image; the red->blue peak displacement picks the
branch.  Speed follows from the major-axis length via the sensor model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import geometry as geo
from .errors import ConfigError, DataError
from .mask_ops import EllipseFit
from .sensor import BANDS, SensorModel, SpeedEstimate, speed_from_rainbow

RESOLVED = "resolved"
AMBIGUOUS = "ambiguous"
CLASSES = ("static_car", "moving_car", "moving_truck")
LENGTH_METHODS = ("axis", "centroid")


@dataclass
class VectorizeConfig:
    pad_px: int = 3
    smooth_sigma_px: float = 1.0
    min_peak_sep_px: float = 1.0
    align_cos: float = 0.5
    axis_scale: float = 1.0  # major axis -> rainbow length; sqrt(3)/2 suits uniform streaks
    body_length_px: float = 0.0  # subtracted after scaling
    min_axis_ratio: float = 1.3  # below this the major-axis direction is unreliable
    length_method: str = "axis"  # "axis": scaled major axis; "centroid": red->blue centroid offset
    centroid_noise_k: float = 2.0  # soft threshold, in robust noise units, for centroid weights

    def __post_init__(self):
        if self.length_method not in LENGTH_METHODS:
            raise ConfigError(f"length_method must be one of {LENGTH_METHODS}, got {self.length_method!r}")


@dataclass
class Chip:
    bands: np.ndarray  # (3, h, w) float, red/green/blue
    origin: tuple  # (row, col) of bands[:, 0, 0] in the parent raster

    def band(self, name):
        return self.bands[BANDS.index(name)]


@dataclass
class VelocityVector:
    speed: SpeedEstimate
    heading_deg: float
    heading_confidence: str


@dataclass
class Detection:
    id: int
    cls: str
    footprint: object  # shapely Polygon in pixel coordinates
    velocity: VelocityVector | None = None
    timestamp: str | None = None
    scene_id: str | None = None
    ellipse: EllipseFit | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise DataError(f"unknown detection class {self.cls!r}", field="class")
        if self.cls == "static_car" and self.velocity is not None:
            raise DataError("static detections carry no velocity", field="velocity")
        if self.cls != "static_car" and self.velocity is None:
            raise DataError("moving detections need a velocity", field="velocity")


def _ellipse_half_extents(e: EllipseFit):
    ur, uc = geo.heading_unit(e.orientation_deg)
    a, b = e.semi_major_px, e.semi_minor_px
    # minor axis direction is (uc, -ur)
    half_r = math.hypot(a * ur, b * uc)
    half_c = math.hypot(a * uc, b * ur)
    return half_r, half_c


def extract_chip(raster, e: EllipseFit, pad_px=3) -> Chip:
    """Image patch covering the ellipse's bounding box plus ``pad_px``."""
    h, w = raster.shape
    r, c = e.center_px
    if not (-0.5 <= r < h - 0.5 and -0.5 <= c < w - 0.5):
        raise DataError(f"ellipse centre {e.center_px} lies outside the raster", field="center_px")
    half_r, half_c = _ellipse_half_extents(e)
    r0 = int(math.floor(r - half_r - pad_px + 0.5))
    r1 = int(math.ceil(r + half_r + pad_px - 0.5)) + 1
    c0 = int(math.floor(c - half_c - pad_px + 0.5))
    c1 = int(math.ceil(c + half_c + pad_px - 0.5)) + 1
    # grow to at least 3x3 around the centre before clipping
    rc, cc = int(round(r)), int(round(c))
    r0, r1 = min(r0, rc - 1), max(r1, rc + 2)
    c0, c1 = min(c0, cc - 1), max(c1, cc + 2)
    r0, r1 = max(r0, 0), min(r1, h)
    c0, c1 = max(c0, 0), min(c1, w)
    bands = np.moveaxis(raster.rgb[r0:r1, c0:c1, :], -1, 0).astype(float)
    return Chip(bands, (r0, c0))


def _parabolic_offset(m1, m0, p1):
    denom = m1 - 2.0 * m0 + p1
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (m1 - p1) / denom, -0.5, 0.5))


def band_peak(chip: Chip, band, smooth_sigma_px=1.0, subpixel=True):
    """Location of the maximum of the smoothed band plane, in parent coordinates.

    Ties go to the smallest (row, col).  With ``subpixel`` a three-point
    parabola refines each axis around the integer peak.  Returns ``None``
    for a constant plane.
    """
    plane = chip.band(band)
    if plane.size == 0:
        raise DataError("empty chip", field="chip")
    if plane.max() == plane.min():
        return None
    sm = ndimage.gaussian_filter(plane, smooth_sigma_px, mode="nearest") if smooth_sigma_px > 0 else plane
    i = int(np.argmax(sm))
    pr, pc = divmod(i, sm.shape[1])
    dr = dc = 0.0
    if subpixel:
        if 0 < pr < sm.shape[0] - 1:
            dr = _parabolic_offset(sm[pr - 1, pc], sm[pr, pc], sm[pr + 1, pc])
        if 0 < pc < sm.shape[1] - 1:
            dc = _parabolic_offset(sm[pr, pc - 1], sm[pr, pc], sm[pr, pc + 1])
    return (chip.origin[0] + pr + dr, chip.origin[1] + pc + dc)


def resolve_heading(e: EllipseFit, red_peak, blue_peak, min_peak_sep_px=1.0, align_cos=0.5):
    """Pick the heading branch (orientation or orientation+180) from band peaks.

    Returns ``(heading_deg, confidence)``.  The chosen branch is the one with
    a positive projection of the red->blue displacement; the result is
    ambiguous when peaks are missing, closer than ``min_peak_sep_px``, or
    poorly aligned with the major axis.
    """
    theta = geo.wrap_angle(e.orientation_deg, 180.0)
    if red_peak is None or blue_peak is None:
        return theta, AMBIGUOUS
    dr = blue_peak[0] - red_peak[0]
    dc = blue_peak[1] - red_peak[1]
    sep = math.hypot(dr, dc)
    if sep == 0:
        return theta, AMBIGUOUS
    ur, uc = geo.heading_unit(theta)
    cos = (dr * ur + dc * uc) / sep
    heading = theta if cos >= 0 else geo.wrap_angle(theta + 180.0)
    if sep < min_peak_sep_px or abs(cos) < align_cos:
        return heading, AMBIGUOUS
    return heading, RESOLVED


def _region(chip: Chip, e: EllipseFit, grow_px):
    h, w = chip.bands.shape[1:]
    rr, cc = np.mgrid[0:h, 0:w]
    rr = rr + chip.origin[0]
    cc = cc + chip.origin[1]
    ur, uc = geo.heading_unit(e.orientation_deg)
    dr, dc = rr - e.center_px[0], cc - e.center_px[1]
    along = dr * ur + dc * uc
    across = dr * uc - dc * ur
    a = e.semi_major_px + grow_px
    b = e.semi_minor_px + grow_px
    return rr, cc, (along / a) ** 2 + (across / b) ** 2 <= 1.0


def _weights(plane, inside, noise_k):
    bg_px = plane[~inside]
    bg = np.median(bg_px)
    noise = 1.4826 * np.median(np.abs(bg_px - bg))
    return np.clip(np.abs(plane - bg) - noise_k * noise, 0.0, None) * inside


def band_centroids(chip: Chip, e: EllipseFit, noise_k=2.0, grow_px=1.5):
    """Intensity-weighted red and blue centroids inside the grown ellipse.

    Background and noise come from chip pixels outside the region (median
    and MAD).  Weights are ``|band - bg|`` soft-thresholded at ``noise_k``
    noise units, so bright and dark vehicles both work.  Returns
    ``(red, blue)`` in parent coordinates, or ``None`` when either band has
    no weight left.
    """
    rr, cc, inside = _region(chip, e, grow_px)
    if inside.all() or not inside.any():
        return None
    out = []
    for band in ("red", "blue"):
        wgt = _weights(chip.band(band), inside, noise_k)
        tot = wgt.sum()
        if tot <= 0:
            return None
        out.append(((rr * wgt).sum() / tot, (cc * wgt).sum() / tot))
    return tuple(out)


def band_signal(chip: Chip, e: EllipseFit, noise_k=2.0, grow_px=1.5):
    """Mean over bands of the summed soft-thresholded contrast in the region (DN * px)."""
    _, _, inside = _region(chip, e, grow_px)
    if inside.all() or not inside.any():
        return 0.0
    return float(np.mean([_weights(chip.band(b), inside, noise_k).sum() for b in BANDS]))


def rainbow_length(raster, e: EllipseFit, cfg: VectorizeConfig, chip: Chip | None = None):
    """Rainbow length in pixels under ``cfg.length_method``."""
    if cfg.length_method == "axis":
        return max(cfg.axis_scale * 2.0 * e.semi_major_px - cfg.body_length_px, 0.0)
    chip = chip if chip is not None else extract_chip(raster, e, cfg.pad_px)
    cents = band_centroids(chip, e, cfg.centroid_noise_k)
    if cents is None:
        return 0.0
    (r0, c0), (r1, c1) = cents
    ur, uc = geo.heading_unit(e.orientation_deg)
    return abs((r1 - r0) * ur + (c1 - c0) * uc)


def infer_vector(raster, e: EllipseFit, sensor: SensorModel, cfg: VectorizeConfig | None = None):
    """Full velocity vector for one moving component."""
    cfg = cfg or VectorizeConfig()
    chip = extract_chip(raster, e, cfg.pad_px)
    speed = speed_from_rainbow(rainbow_length(raster, e, cfg, chip), sensor)
    red = band_peak(chip, "red", cfg.smooth_sigma_px)
    blue = band_peak(chip, "blue", cfg.smooth_sigma_px)
    heading, conf = resolve_heading(e, red, blue, cfg.min_peak_sep_px, cfg.align_cos)
    if e.axis_ratio < cfg.min_axis_ratio:
        conf = AMBIGUOUS
    return VelocityVector(speed, heading, conf)


def vectorize_mask(raster, mask, thresholds, sensor=None, cfg: VectorizeConfig | None = None,
                   min_area_px=3, max_area_px=2000, link_px=0.0, body_length_m=None):
    """Threshold -> components -> ellipses -> vectors for an external score mask.

    ``mask`` is a :class:`~rainbow_vectors.mask_ops.ProbMask` whose labels are
    detection classes.  ``body_length_m`` optionally maps a moving class to
    a vehicle length subtracted from the axis-based rainbow length.
    Detections are numbered in centroid order.
    """
    from .mask_ops import extract_components, fit_ellipse, static_box, threshold_mask

    sensor = sensor or raster.sensor
    cfg = cfg or VectorizeConfig()
    bad = [lab for lab in mask.labels if lab not in CLASSES]
    if bad:
        raise DataError(f"mask labels must be detection classes {CLASSES}, got {bad}", field="labels")
    if tuple(mask.shape) != tuple(raster.shape):
        raise DataError(f"mask size {mask.shape} differs from raster size {raster.shape}", field="mask")
    comps = extract_components(threshold_mask(mask, thresholds), max(min_area_px, 3), max_area_px, link_px)
    bounds = geo.image_bounds(*raster.shape)
    out = []
    for comp in comps:
        if comp.label == "static_car":
            out.append(Detection(len(out), "static_car", static_box(comp, sensor, raster.shape),
                                 None, raster.timestamp, raster.scene_id, fit_ellipse(comp)))
            continue
        e = fit_ellipse(comp)
        vcfg = cfg
        if body_length_m and comp.label in body_length_m:
            vcfg = replace(cfg, body_length_px=body_length_m[comp.label] / sensor.gsd_m)
        vec = infer_vector(raster, e, sensor, vcfg)
        out.append(Detection(len(out), comp.label, e.polygon().intersection(bounds), vec,
                             raster.timestamp, raster.scene_id, e))
    return out
