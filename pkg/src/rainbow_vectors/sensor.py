"""Sensor timing model and the rainbow-length <-> speed conversion.

Sequential-band imagers capture red, green and blue at slightly different
instants, so a moving object is displaced between bands.  With ground sample
distance ``gsd_m`` and a red-to-blue capture delay ``delta_rb_ms`` an object
moving at ``v`` m/s leaves a red->blue displacement of
``v * delta_rb_ms / 1000 / gsd_m`` pixels.

Coefficients are evaluated exactly: 0.5 m / 0.560 s gives 3.2142... km/h per
pixel and 3 m / 0.800 s gives 13.5 km/h per pixel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError

BANDS = ("red", "green", "blue")
MS_TO_KMH = 3.6  # (m/s) -> (km/h)


@dataclass(frozen=True)
class SpeedEstimate:
    speed_kmh: float
    speed_err_kmh: float
    rainbow_len_px: float


@dataclass(frozen=True, eq=True)
class SensorModel:
    """Imaging geometry and per-band capture timing of one constellation.

    ``band_time_offsets_ms`` maps each of red/green/blue to its capture time
    relative to the first band.  The mapping is treated as read-only.
    """

    name: str
    gsd_m: float
    band_time_offsets_ms: dict = field(hash=False)
    speed_rel_error: float = 0.30

    def __post_init__(self):
        if not self.gsd_m > 0:
            raise ConfigError(f"gsd_m must be positive, got {self.gsd_m!r}")
        missing = [b for b in BANDS if b not in self.band_time_offsets_ms]
        if missing:
            raise ConfigError(f"band_time_offsets_ms missing bands: {missing}")
        extra = set(self.band_time_offsets_ms) - set(BANDS)
        if extra:
            raise ConfigError(f"unknown bands in band_time_offsets_ms: {sorted(extra)}")
        for band, off in self.band_time_offsets_ms.items():
            if off < 0:
                raise ConfigError(f"offset for {band} must be non-negative, got {off}")
        if self.speed_rel_error < 0:
            raise ConfigError("speed_rel_error must be non-negative")
        # normalise to plain floats so equality and JSON round trips are stable
        object.__setattr__(
            self,
            "band_time_offsets_ms",
            {b: float(self.band_time_offsets_ms[b]) for b in BANDS},
        )

    @property
    def delta_rb_ms(self) -> float:
        return abs(self.band_time_offsets_ms["blue"] - self.band_time_offsets_ms["red"])

    @property
    def is_degenerate(self) -> bool:
        offsets = list(self.band_time_offsets_ms.values())
        return self.delta_rb_ms == 0 or max(offsets) == min(offsets)

    @property
    def kmh_per_pixel(self) -> float:
        """Speed represented by one pixel of red->blue displacement."""
        self._require_motion_capable()
        return MS_TO_KMH * self.gsd_m / (self.delta_rb_ms / 1000.0)

    def band_fraction(self, band: str) -> float:
        """Fraction of the red->blue displacement reached at ``band``'s capture time."""
        self._require_motion_capable()
        red = self.band_time_offsets_ms["red"]
        return (self.band_time_offsets_ms[band] - red) / (
            self.band_time_offsets_ms["blue"] - red
        )

    def _require_motion_capable(self):
        if self.is_degenerate:
            raise ConfigError(
                f"sensor {self.name!r} has no red/blue timing separation; "
                "velocity inference is undefined"
            )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "gsd_m": self.gsd_m,
            "band_time_offsets_ms": dict(self.band_time_offsets_ms),
            "speed_rel_error": self.speed_rel_error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorModel":
        from .errors import DataError

        for key in ("name", "gsd_m", "band_time_offsets_ms"):
            if key not in d:
                raise DataError(f"sensor is missing required field {key!r}", field=key)
        return cls(
            name=str(d["name"]),
            gsd_m=float(d["gsd_m"]),
            band_time_offsets_ms=dict(d["band_time_offsets_ms"]),
            speed_rel_error=float(d.get("speed_rel_error", 0.30)),
        )


def _evenly_ordered(delta_rb_ms: float) -> dict:
    return {"red": 0.0, "green": delta_rb_ms / 2.0, "blue": delta_rb_ms}


SKYSAT = SensorModel("skysat", 0.5, _evenly_ordered(560.0))
SUPERDOVE = SensorModel("superdove", 3.0, _evenly_ordered(800.0))
PRESETS = {"skysat": SKYSAT, "superdove": SUPERDOVE}
# schema name used for training-style masks of each preset
SCHEMA_FOR_PRESET = {"skysat": "skysat", "superdove": "planetscope"}


def get_preset(name: str) -> SensorModel:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown sensor preset {name!r}; choose from {sorted(PRESETS)}")


def speed_from_rainbow(d_pix: float, sensor: SensorModel) -> SpeedEstimate:
    """Convert a red->blue rainbow length in pixels to ground speed.

    >>> speed_from_rainbow(4, SUPERDOVE).speed_kmh
    54.0
    """
    if d_pix < 0:
        raise ValueError(f"rainbow length must be non-negative, got {d_pix}")
    speed = sensor.kmh_per_pixel * d_pix
    return SpeedEstimate(
        speed_kmh=speed,
        speed_err_kmh=sensor.speed_rel_error * speed,
        rainbow_len_px=float(d_pix),
    )


def rainbow_from_speed(speed_kmh: float, sensor: SensorModel) -> float:
    """Red->blue displacement in pixels for an object moving at ``speed_kmh``."""
    if speed_kmh < 0:
        raise ValueError(f"speed must be non-negative, got {speed_kmh}")
    return speed_kmh / sensor.kmh_per_pixel
