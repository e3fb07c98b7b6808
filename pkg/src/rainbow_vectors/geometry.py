"""Pixel-space geometry helpers.

Pixel coordinates throughout the package are ``(row, col)`` with pixel
centres on integers.  Polygons are shapely objects in ``(x, y) = (col, row)``
order, so pixel ``(r, c)`` covers the square ``[c-0.5, c+0.5] x [r-0.5, r+0.5]``.

Headings are compass degrees: 0 = up (decreasing row, north in a north-up
raster), 90 = right (increasing col, east), clockwise positive.
"""
import math

import numpy as np
from shapely.geometry import LineString, Point, Polygon, box


def wrap_angle(a, period=360.0):
    """``a`` folded into ``[0, period)``; plain ``%`` can return ``period`` itself for tiny negatives."""
    w = a % period
    return 0.0 if w >= period else w


def heading_unit(heading_deg):
    """Unit vector ``(drow, dcol)`` pointing along a compass heading."""
    h = math.radians(heading_deg)
    return -math.cos(h), math.sin(h)


def compass_of(drow, dcol):
    """Compass heading in [0, 360) of a ``(drow, dcol)`` displacement."""
    return wrap_angle(math.degrees(math.atan2(dcol, -drow)))


def angle_diff(a, b):
    """Smallest signed difference ``a - b`` between two angles, in (-180, 180]."""
    d = (a - b) % 360.0
    return d - 360.0 if d > 180.0 else d


def axis_diff(a, b):
    """Smallest difference between two undirected axes (mod 180), in [0, 90]."""
    d = abs(a - b) % 180.0
    return min(d, 180.0 - d)


def image_bounds(height, width):
    return box(-0.5, -0.5, width - 0.5, height - 0.5)


def oriented_rect(center_rc, length, width, heading_deg):
    """Rectangle polygon with its long side along ``heading_deg``."""
    ur, uc = heading_unit(heading_deg)
    vr, vc = uc, -ur  # perpendicular
    r0, c0 = center_rc
    hl, hw = length / 2.0, width / 2.0
    corners = []
    for sl, sw in ((1, 1), (1, -1), (-1, -1), (-1, 1)):
        r = r0 + sl * hl * ur + sw * hw * vr
        c = c0 + sl * hl * uc + sw * hw * vc
        corners.append((c, r))
    return Polygon(corners)


def ellipse_polygon(center_rc, semi_major, semi_minor, orientation_deg, n=32):
    """Polygon outline of an ellipse whose major axis points along ``orientation_deg``."""
    ur, uc = heading_unit(orientation_deg)
    vr, vc = uc, -ur
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    ca, sb = semi_major * np.cos(t), semi_minor * np.sin(t)
    rows = center_rc[0] + ca * ur + sb * vr
    cols = center_rc[1] + ca * uc + sb * vc
    return Polygon(list(zip(cols.tolist(), rows.tolist())))


def buffered_segment(p0_rc, p1_rc, radius):
    """Stadium around the segment p0->p1 (a disk when the points coincide)."""
    a = (p0_rc[1], p0_rc[0])
    b = (p1_rc[1], p1_rc[0])
    if a == b:
        return Point(a).buffer(radius, 16)
    return LineString([a, b]).buffer(radius, 16)


def segment_distance(rows, cols, p0_rc, p1_rc):
    """Distance from pixel centres to the segment p0->p1 (vectorised)."""
    pr = np.asarray(rows, dtype=float) - p0_rc[0]
    pc = np.asarray(cols, dtype=float) - p0_rc[1]
    dr, dc = p1_rc[0] - p0_rc[0], p1_rc[1] - p0_rc[1]
    ll = dr * dr + dc * dc
    if ll == 0:
        return np.hypot(pr, pc)
    t = np.clip((pr * dr + pc * dc) / ll, 0.0, 1.0)
    return np.hypot(pr - t * dr, pc - t * dc)
