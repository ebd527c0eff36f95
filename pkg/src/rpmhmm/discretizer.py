"""Banding of continuous health readings into alphabet symbols.

A profile stores the mean and (population) standard deviation of a device's
training readings.  Readings in ``(mu, mu + 2 sigma]`` map to the upper-band
symbol, ``[mu - 2 sigma, mu]`` to the lower-band symbol and anything further
than two sigma from the mean to the outlier symbol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import InvalidReadingError, ProfileError

# kind -> (upper, lower, outlier, off)
BAND_SYMBOLS = {
    "oximeter": ("ox1", "ox2", "ox3", "ox_off"),
    "scale": ("sc1", "sc2", "sc3", "sc_off"),
}


@dataclass(frozen=True)
class DeviceProfile:
    kind: str
    mu: float
    sigma: float

    def __post_init__(self):
        if self.kind not in BAND_SYMBOLS:
            raise ProfileError(f"no banding defined for device kind {self.kind!r}")
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise ProfileError("profile parameters must be finite")
        if self.sigma <= 0:
            raise ProfileError("profile sigma must be positive")

    @property
    def upper(self) -> str:
        return BAND_SYMBOLS[self.kind][0]

    @property
    def lower(self) -> str:
        return BAND_SYMBOLS[self.kind][1]

    @property
    def outlier(self) -> str:
        return BAND_SYMBOLS[self.kind][2]

    @property
    def off(self) -> str:
        return BAND_SYMBOLS[self.kind][3]

    @property
    def upper_band(self) -> tuple[float, float]:
        return (self.mu, self.mu + 2 * self.sigma)

    @property
    def lower_band(self) -> tuple[float, float]:
        return (self.mu - 2 * self.sigma, self.mu)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mu": self.mu,
            "sigma": self.sigma,
            "bands": {"upper": self.upper, "lower": self.lower, "outlier": self.outlier, "off": self.off},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DeviceProfile":
        try:
            prof = cls(str(doc["kind"]), float(doc["mu"]), float(doc["sigma"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProfileError(f"malformed profile document: {exc}") from None
        bands = doc.get("bands")
        if bands is not None:
            expected = {"upper": prof.upper, "lower": prof.lower, "outlier": prof.outlier, "off": prof.off}
            if bands != expected:
                raise ProfileError(f"profile bands {bands} do not match kind {prof.kind!r}")
        return prof


def fit_profile(kind: str, readings: Iterable[float]) -> DeviceProfile:
    values = np.asarray(list(readings), dtype=np.float64)
    if values.size < 2:
        raise ProfileError(f"need at least 2 readings to fit a {kind} profile, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise ProfileError("readings must be finite")
    sigma = float(values.std())
    if sigma == 0.0:
        raise ProfileError(f"{kind} readings have zero variance")
    return DeviceProfile(kind, float(values.mean()), sigma)


def discretize(profile: DeviceProfile, reading: float) -> str:
    if not math.isfinite(reading):
        raise InvalidReadingError(f"reading {reading!r} is not finite")
    dev = reading - profile.mu
    if abs(dev) > 2 * profile.sigma:
        return profile.outlier
    return profile.upper if dev > 0 else profile.lower
