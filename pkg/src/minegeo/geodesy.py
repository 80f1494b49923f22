"""WGS84 <-> UTM conversion and the NED/ENU/camera frame algebra.

UTM uses the 6th-order Krueger series (Karney 2011), good to well under a
millimetre inside a zone. Altitude is carried through untouched as the "up"
coordinate; no geoid model is applied.

Frames:
    NED  north, east, down (attitude metadata)
    ENU  east, north, up (UTM easting/northing/altitude)
    cam  x right, y down, z forward (pinhole convention)
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import GeoDomainError, ValidationError

# WGS84
A_WGS84 = 6378137.0
F_WGS84 = 1 / 298.257223563

UTM_K0 = 0.9996
UTM_FALSE_EASTING = 500000.0
UTM_FALSE_NORTHING_SOUTH = 10000000.0
UTM_MAX_ABS_LAT = 84.0

_N = F_WGS84 / (2 - F_WGS84)
_E = math.sqrt(F_WGS84 * (2 - F_WGS84))
_A_RECT = A_WGS84 / (1 + _N) * (1 + _N**2 / 4 + _N**4 / 64 + _N**6 / 256)


def _series(coeffs):
    return sum(c * _N**p for p, c in coeffs)


_ALPHA = np.array([
    _series([(1, 1 / 2), (2, -2 / 3), (3, 5 / 16), (4, 41 / 180), (5, -127 / 288), (6, 7891 / 37800)]),
    _series([(2, 13 / 48), (3, -3 / 5), (4, 557 / 1440), (5, 281 / 630), (6, -1983433 / 1935360)]),
    _series([(3, 61 / 240), (4, -103 / 140), (5, 15061 / 26880), (6, 167603 / 181440)]),
    _series([(4, 49561 / 161280), (5, -179 / 168), (6, 6601661 / 7257600)]),
    _series([(5, 34729 / 80640), (6, -3418889 / 1995840)]),
    _series([(6, 212378941 / 319334400)]),
])
_BETA = np.array([
    _series([(1, 1 / 2), (2, -2 / 3), (3, 37 / 96), (4, -1 / 360), (5, -81 / 512), (6, 96199 / 604800)]),
    _series([(2, 1 / 48), (3, 1 / 15), (4, -437 / 1440), (5, 46 / 105), (6, -1118711 / 3870720)]),
    _series([(3, 17 / 480), (4, -37 / 840), (5, -209 / 4480), (6, 5569 / 90720)]),
    _series([(4, 4397 / 161280), (5, -11 / 504), (6, -830251 / 7257600)]),
    _series([(5, 4583 / 161280), (6, -108847 / 3991680)]),
    _series([(6, 20648693 / 638668800)]),
])
_J2 = 2 * np.arange(1, 7)


@dataclass(frozen=True)
class GeoPosition:
    latitude: float
    longitude: float
    altitude: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValidationError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValidationError(f"longitude {self.longitude} outside [-180, 180]")


@dataclass(frozen=True)
class UtmCoord:
    easting: float
    northing: float
    up: float
    zone: int
    hemisphere: str = "N"

    def __post_init__(self):
        if not 1 <= int(self.zone) <= 60:
            raise GeoDomainError(f"UTM zone {self.zone} outside 1..60")
        if self.hemisphere not in ("N", "S"):
            raise GeoDomainError(f"hemisphere must be 'N' or 'S', got {self.hemisphere!r}")

    @property
    def enu(self):
        return np.array([self.easting, self.northing, self.up])


@dataclass(frozen=True)
class EulerNed:
    """Attitude in degrees; normalized on construction."""

    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        roll, pitch, yaw = normalize_euler(self.roll, self.pitch, self.yaw)
        object.__setattr__(self, "roll", roll)
        object.__setattr__(self, "pitch", pitch)
        object.__setattr__(self, "yaw", yaw)


def _wrap180(a):
    # (-180, 180]
    a = math.fmod(a, 360.0)
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    return a


def normalize_euler(roll, pitch, yaw):
    """Map any Z-Y-X angle triple to roll, yaw in (-180, 180], pitch in [-90, 90]."""
    pitch = _wrap180(float(pitch))
    roll, yaw = float(roll), float(yaw)
    if pitch > 90.0:
        pitch, roll, yaw = 180.0 - pitch, roll + 180.0, yaw + 180.0
    elif pitch < -90.0:
        pitch, roll, yaw = -180.0 - pitch, roll + 180.0, yaw + 180.0
    return _wrap180(roll), pitch, _wrap180(yaw)


def natural_zone(latitude, longitude):
    """Standard UTM zone number, including the Norway/Svalbard exceptions."""
    if longitude == 180.0:
        longitude = -180.0
    zone = int(math.floor((longitude + 180.0) / 6.0)) + 1
    if 56.0 <= latitude < 64.0 and 3.0 <= longitude < 12.0:
        zone = 32
    elif 72.0 <= latitude <= 84.0 and longitude >= 0.0:
        if longitude < 9.0:
            zone = 31
        elif longitude < 21.0:
            zone = 33
        elif longitude < 33.0:
            zone = 35
        elif longitude < 42.0:
            zone = 37
    return zone


def central_meridian(zone):
    return (int(zone) - 1) * 6.0 - 180.0 + 3.0


def _check_zone(zone):
    if not 1 <= int(zone) <= 60:
        raise GeoDomainError(f"UTM zone {zone} outside 1..60")


def latlon_to_utm(lat, lon, zone, south=False):
    """Vectorized forward projection in a fixed zone.

    Returns (easting, northing) arrays. No zone selection is done here.
    """
    _check_zone(zone)
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if np.any(np.abs(lat) > UTM_MAX_ABS_LAT):
        raise GeoDomainError(f"latitude outside [-{UTM_MAX_ABS_LAT}, {UTM_MAX_ABS_LAT}]")
    phi = np.radians(lat)
    dlam = np.radians(lon - central_meridian(zone))
    dlam = (dlam + np.pi) % (2 * np.pi) - np.pi

    sphi = np.sin(phi)
    t = np.sinh(np.arctanh(sphi) - _E * np.arctanh(_E * sphi))
    xi_p = np.arctan2(t, np.cos(dlam))
    eta_p = np.arctanh(np.sin(dlam) / np.sqrt(1 + t * t))

    xi_p_ = xi_p[..., None]
    eta_p_ = eta_p[..., None]
    xi = xi_p + np.sum(_ALPHA * np.sin(_J2 * xi_p_) * np.cosh(_J2 * eta_p_), axis=-1)
    eta = eta_p + np.sum(_ALPHA * np.cos(_J2 * xi_p_) * np.sinh(_J2 * eta_p_), axis=-1)

    easting = UTM_FALSE_EASTING + UTM_K0 * _A_RECT * eta
    northing = UTM_K0 * _A_RECT * xi
    if south:
        northing = northing + UTM_FALSE_NORTHING_SOUTH
    return easting, northing


def _tau_from_conformal(taup):
    # Newton iteration for tan(phi) given the conformal tan(phi'); Karney 2011.
    e2m = 1 - _E * _E
    tau = taup / e2m
    for _ in range(10):
        tau1 = np.sqrt(1 + tau * tau)
        sig = np.sinh(_E * np.arctanh(_E * tau / tau1))
        taui = tau * np.sqrt(1 + sig * sig) - sig * tau1
        dtau = (taup - taui) / np.sqrt(1 + taui * taui) * (1 + e2m * tau * tau) / (e2m * tau1)
        tau = tau + dtau
        if np.all(np.abs(dtau) <= 1e-14 * np.maximum(1.0, np.abs(tau))):
            break
    return tau


def utm_to_latlon(easting, northing, zone, south=False):
    """Vectorized inverse projection. Returns (lat, lon) in degrees."""
    _check_zone(zone)
    easting = np.asarray(easting, dtype=float)
    northing = np.asarray(northing, dtype=float)
    if np.any(~np.isfinite(easting)) or np.any(~np.isfinite(northing)):
        raise GeoDomainError("non-finite UTM coordinate")
    if np.any(np.abs(easting - UTM_FALSE_EASTING) > 1.0e6):
        raise GeoDomainError("easting outside projection validity")
    if south:
        northing = northing - UTM_FALSE_NORTHING_SOUTH
        if np.any(northing > 0.0) or np.any(northing < -1.0e7):
            raise GeoDomainError("northing outside southern-hemisphere range")
    elif np.any(northing < 0.0) or np.any(northing > 1.0e7):
        raise GeoDomainError("northing outside northern-hemisphere range")

    xi = northing / (UTM_K0 * _A_RECT)
    eta = (easting - UTM_FALSE_EASTING) / (UTM_K0 * _A_RECT)
    xi_ = xi[..., None]
    eta_ = eta[..., None]
    xi_p = xi - np.sum(_BETA * np.sin(_J2 * xi_) * np.cosh(_J2 * eta_), axis=-1)
    eta_p = eta - np.sum(_BETA * np.cos(_J2 * xi_) * np.sinh(_J2 * eta_), axis=-1)

    sinh_eta = np.sinh(eta_p)
    cos_xi = np.cos(xi_p)
    taup = np.sin(xi_p) / np.sqrt(sinh_eta * sinh_eta + cos_xi * cos_xi)
    tau = _tau_from_conformal(taup)
    lat = np.degrees(np.arctan(tau))
    lon = central_meridian(zone) + np.degrees(np.arctan2(sinh_eta, cos_xi))
    return lat, lon


def wgs84_to_utm(p: GeoPosition, forced_zone: int | None = None) -> UtmCoord:
    if abs(p.latitude) > UTM_MAX_ABS_LAT:
        raise GeoDomainError(f"latitude {p.latitude} outside UTM coverage")
    zone = natural_zone(p.latitude, p.longitude)
    if forced_zone is not None:
        forced_zone = int(forced_zone)
        _check_zone(forced_zone)
        gap = (forced_zone - zone) % 60
        if gap not in (0, 1, 59):
            raise GeoDomainError(
                f"forced zone {forced_zone} is more than one zone from natural zone {zone}"
            )
        zone = forced_zone
    south = p.latitude < 0.0
    e, n = latlon_to_utm(p.latitude, p.longitude, zone, south)
    return UtmCoord(float(e), float(n), float(p.altitude), zone, "S" if south else "N")


def utm_to_wgs84(c: UtmCoord) -> GeoPosition:
    lat, lon = utm_to_latlon(c.easting, c.northing, c.zone, c.hemisphere == "S")
    lon = float(lon)
    if lon > 180.0:
        lon -= 360.0
    elif lon < -180.0:
        lon += 360.0
    return GeoPosition(float(lat), lon, float(c.up))


# ---------------------------------------------------------------- rotations

def rot_x(deg):
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg):
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg):
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


_ENU_FROM_NED = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
_NED_FROM_CAM = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def rotation_enu_from_ned():
    return _ENU_FROM_NED.copy()


def rotation_ned_from_camera():
    """cam-x -> east, cam-y -> down, cam-z -> north."""
    return _NED_FROM_CAM.copy()


def rotation_ned_from_body(e: EulerNed):
    """Intrinsic Z-Y-X (yaw, pitch, roll) body-to-NED rotation."""
    r, p, y = (math.radians(a) for a in (e.roll, e.pitch, e.yaw))
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def rotation_enu_from_camera(e: EulerNed):
    return _ENU_FROM_NED @ rotation_ned_from_body(e) @ _NED_FROM_CAM


def is_rotation(r, tol=1e-9):
    r = np.asarray(r, dtype=float)
    return (
        r.shape == (3, 3)
        and np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=tol)
        and abs(np.linalg.det(r) - 1.0) <= tol
    )
