"""Thresholding, connected components and moment-based geometry.

These are the first post-processing steps applied to any per-class score
mask, whether it comes from a trained segmentation model or from the
classical detector in :mod:`rainbow_vectors.detector`.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from shapely.geometry import box

from . import geometry as geo
from .errors import ConfigError, DataError

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
PIXEL_VAR = 1.0 / 12.0  # variance of a unit square along one axis


@dataclass
class ProbMask:
    """Per-class uint8 score planes of shape ``(C, H, W)``."""

    planes: np.ndarray
    labels: tuple

    def __post_init__(self):
        planes = np.asarray(self.planes)
        if planes.ndim == 2:
            planes = planes[None]
        if planes.ndim != 3:
            raise DataError(f"mask planes must be (C, H, W), got {planes.shape}", field="planes")
        if planes.dtype != np.uint8:
            raise DataError(f"mask planes must be uint8, got {planes.dtype}", field="planes")
        self.labels = tuple(self.labels)
        if len(self.labels) != planes.shape[0]:
            raise DataError("one label is needed per mask plane", field="labels")
        if len(set(self.labels)) != len(self.labels):
            raise DataError(f"mask labels must be unique, got {self.labels}", field="labels")
        self.planes = planes

    @property
    def shape(self):
        return self.planes.shape[1:]

    def plane(self, label):
        return self.planes[self.labels.index(label)]


@dataclass
class BinaryMask:
    planes: np.ndarray  # (C, H, W) bool
    labels: tuple

    def plane(self, label):
        return self.planes[self.labels.index(label)]


@dataclass
class Component:
    pixels: np.ndarray  # (N, 2) int (row, col)
    label: str | None = None

    @property
    def area_px(self):
        return len(self.pixels)

    @property
    def centroid_px(self):
        return tuple(float(v) for v in self.pixels.mean(axis=0))


@dataclass
class EllipseFit:
    center_px: tuple
    semi_major_px: float
    semi_minor_px: float
    orientation_deg: float  # compass direction of the major axis, [0, 180)

    @property
    def axis_ratio(self):
        return math.inf if self.semi_minor_px == 0 else self.semi_major_px / self.semi_minor_px

    def polygon(self, min_axis=0.5, n=32):
        return geo.ellipse_polygon(
            self.center_px,
            max(self.semi_major_px, min_axis),
            max(self.semi_minor_px, min_axis),
            self.orientation_deg,
            n=n,
        )


class ComponentList(list):
    """List of components plus a tally of size-gated drops."""

    def __init__(self, items=(), n_undersize=0, n_oversize=0):
        super().__init__(items)
        self.n_undersize = n_undersize
        self.n_oversize = n_oversize


def threshold_mask(mask: ProbMask, per_class_thresh) -> BinaryMask:
    """Keep pixels whose score is >= the class threshold.

    ``per_class_thresh`` is a mapping from label to threshold, or a single
    number applied to every plane.
    """
    if np.isscalar(per_class_thresh):
        per_class_thresh = {lab: per_class_thresh for lab in mask.labels}
    out = np.zeros(mask.planes.shape, dtype=bool)
    for i, lab in enumerate(mask.labels):
        if lab not in per_class_thresh:
            raise ConfigError(f"no threshold configured for class {lab!r}")
        t = per_class_thresh[lab]
        if not 0 <= t <= 255:
            raise ConfigError(f"threshold for {lab!r} must lie in [0, 255], got {t}")
        out[i] = mask.planes[i] >= t
    return BinaryMask(out, mask.labels)


def _link_labels(plane, link_px):
    """Label ``plane`` so pixels within ``link_px`` of each other share a label."""
    if link_px <= 0:
        return ndimage.label(plane, structure=EIGHT_CONNECTED)
    r = int(math.floor(link_px / 2.0))
    y, x = np.ogrid[-r:r + 1, -r:r + 1]
    grown = ndimage.binary_dilation(plane, structure=x * x + y * y <= (link_px / 2.0) ** 2 + 1e-9)
    lab, n = ndimage.label(grown, structure=EIGHT_CONNECTED)
    return np.where(plane, lab, 0), n


def _components_of_plane(plane, label, min_area, max_area, link_px=0):
    lab, n = _link_labels(plane, link_px)
    comps, under, over = [], 0, 0
    if n == 0:
        return comps, under, over
    rows, cols = np.nonzero(lab)
    ids = lab[rows, cols]
    order = np.argsort(ids, kind="stable")
    rows, cols, ids = rows[order], cols[order], ids[order]
    splits = np.flatnonzero(np.diff(ids)) + 1
    for r, c in zip(np.split(rows, splits), np.split(cols, splits)):
        area = len(r)
        if area < min_area:
            under += 1
        elif area > max_area:
            over += 1
        else:
            comps.append(Component(np.column_stack([r, c]).astype(np.int64), label))
    return comps, under, over


def _sort_key(c):
    r, col = c.centroid_px
    return (r, col, c.label or "")


def extract_components(bin_mask, min_area_px=2, max_area_px=2000, link_px=0) -> ComponentList:
    """8-connected components with ``min_area <= area <= max_area``.

    With ``link_px > 0``, pieces separated by gaps of up to about ``link_px``
    pixels are grouped into one component (each keeps only its own pixels).

    ``bin_mask`` is a :class:`BinaryMask` or a 2-D boolean array.  The result
    is sorted by centroid (row, col); dropped components are tallied on the
    returned list's ``n_undersize`` / ``n_oversize`` attributes.
    """
    if not 0 <= min_area_px <= max_area_px:
        raise ConfigError("need 0 <= min_area_px <= max_area_px")
    if isinstance(bin_mask, BinaryMask):
        planes = list(zip(bin_mask.planes, bin_mask.labels))
    else:
        planes = [(np.asarray(bin_mask, dtype=bool), None)]
    out = ComponentList()
    for plane, label in planes:
        comps, under, over = _components_of_plane(plane, label, min_area_px, max_area_px, link_px)
        out.extend(comps)
        out.n_undersize += under
        out.n_oversize += over
    out.sort(key=_sort_key)
    return out


def extract_components_tiled(plane, tile_px=256, overlap_px=64, min_area_px=2,
                             max_area_px=2000, jobs=1, label=None) -> ComponentList:
    """Tile-parallel variant of :func:`extract_components` for one plane.

    Tiles overlap by ``overlap_px`` (which must exceed the largest component
    diameter); a component is kept only by the tile whose core contains its
    centroid, so seam-spanning components appear exactly once.  Components
    touching a tile's outer edge (not the image edge) are discarded by that
    tile because they may be truncated.
    """
    plane = np.asarray(plane, dtype=bool)
    h, w = plane.shape
    if overlap_px < 1 or tile_px < 1:
        raise ConfigError("tile_px and overlap_px must be positive")
    jobs_list = []
    for r0 in range(0, h, tile_px):
        for c0 in range(0, w, tile_px):
            core = (r0, min(r0 + tile_px, h), c0, min(c0 + tile_px, w))
            jobs_list.append(core)

    def run(core):
        cr0, cr1, cc0, cc1 = core
        wr0, wr1 = max(cr0 - overlap_px, 0), min(cr1 + overlap_px, h)
        wc0, wc1 = max(cc0 - overlap_px, 0), min(cc1 + overlap_px, w)
        comps, under, over = _components_of_plane(plane[wr0:wr1, wc0:wc1], label, 0, math.inf)
        kept, n_under, n_over = [], 0, 0
        for comp in comps:
            px = comp.pixels + np.array([wr0, wc0])
            r, c = px[:, 0], px[:, 1]
            touches = (
                (wr0 > 0 and r.min() == wr0) or (wr1 < h and r.max() == wr1 - 1)
                or (wc0 > 0 and c.min() == wc0) or (wc1 < w and c.max() == wc1 - 1)
            )
            cr, ccol = r.mean(), c.mean()
            in_core = cr0 - 0.5 <= cr < cr1 - 0.5 and cc0 - 0.5 <= ccol < cc1 - 0.5
            if not in_core or touches:
                continue
            if len(px) < min_area_px:
                n_under += 1
            elif len(px) > max_area_px:
                n_over += 1
            else:
                kept.append(Component(px, label))
        return kept, n_under, n_over

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(run, jobs_list))
    else:
        results = [run(core) for core in jobs_list]
    out = ComponentList()
    for kept, under, over in results:
        out.extend(kept)
        out.n_undersize += under
        out.n_oversize += over
    for comp in out:
        comp.pixels = comp.pixels[np.lexsort((comp.pixels[:, 1], comp.pixels[:, 0]))]
    out.sort(key=_sort_key)
    return out


def moments(pixels):
    """Centroid and population covariance terms of a pixel set.

    Returns ``(mean_row, mean_col, var_row, var_col, cov_row_col)``.
    """
    p = np.asarray(pixels, dtype=float)
    mr, mc = p[:, 0].mean(), p[:, 1].mean()
    dr, dc = p[:, 0] - mr, p[:, 1] - mc
    return mr, mc, float(np.mean(dr * dr)), float(np.mean(dc * dc)), float(np.mean(dr * dc))


def fit_ellipse(c: Component) -> EllipseFit:
    """Moment-based ellipse: axes ``2*sqrt(eigenvalue)`` of the pixel covariance.

    Pixels count as unit squares (area moments), so each axis variance gains
    1/12 over the point-sample value; a one-pixel-wide bar therefore has
    ``b = 2/sqrt(12)`` rather than 0.  The factor 2 is exact for a uniformly
    filled ellipse.  Orientation is the compass direction of the major axis
    folded into [0, 180); a perfectly isotropic component reports 90.
    """
    if c.area_px < 3:
        raise DataError(f"ellipse fit needs at least 3 pixels, got {c.area_px}", field="area_px")
    mr, mc, vrr, vcc, vrc = moments(c.pixels)
    vrr += PIXEL_VAR
    vcc += PIXEL_VAR
    # east/north frame: x = col, y = -row
    sxx, syy, sxy = vcc, vrr, -vrc
    half_tr = 0.5 * (sxx + syy)
    disc = math.hypot(0.5 * (sxx - syy), sxy)
    lam1, lam2 = half_tr + disc, max(half_tr - disc, 0.0)
    phi = 0.5 * math.degrees(math.atan2(2.0 * sxy, sxx - syy))  # CCW from east
    orientation = geo.wrap_angle(90.0 - phi, 180.0)
    return EllipseFit((mr, mc), 2.0 * math.sqrt(lam1), 2.0 * math.sqrt(lam2), orientation)


def static_box(c: Component, sensor, image_shape=None, side_m=3.0):
    """Axis-aligned ``side_m`` square (in pixels) centred on the component."""
    side = side_m / sensor.gsd_m
    r, col = c.centroid_px
    sq = box(col - side / 2.0, r - side / 2.0, col + side / 2.0, r + side / 2.0)
    if image_shape is not None:
        sq = sq.intersection(geo.image_bounds(*image_shape))
    return sq
