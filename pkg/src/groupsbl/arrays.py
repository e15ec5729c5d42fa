"""Array geometries, steering vectors, and sensing-matrix construction.

Supports uniform linear arrays and arbitrary planar arrays whose sensors
are given in polar coordinates (radius in wavelengths, bearing in radians)
relative to the first sensor, which sits at the phase reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class UniformLinearArray:
    """Equispaced line of antennas; spacing measured in wavelengths."""

    n_antennas: int
    spacing_over_wavelength: float = 0.5

    def __post_init__(self):
        if self.n_antennas < 2:
            raise ValueError("need at least two antennas")
        if self.spacing_over_wavelength <= 0:
            raise ValueError("spacing must be positive")

    @property
    def n_elements(self) -> int:
        return self.n_antennas

    @property
    def radii(self) -> np.ndarray:
        return np.arange(self.n_antennas) * self.spacing_over_wavelength

    @property
    def bearings(self) -> np.ndarray:
        return np.zeros(self.n_antennas)

    @property
    def azimuth_span(self) -> tuple[float, float]:
        return (-np.pi / 2.0, np.pi / 2.0)

    @property
    def has_elevation(self) -> bool:
        return False


@dataclass(frozen=True)
class PlanarArray:
    """Arbitrary 2D array; sensor n at polar position (radius_n, bearing_n).

    The first sensor must sit at radius zero: it is the phase reference and
    its steering entry is identically one.
    """

    radii_over_wavelength: np.ndarray
    bearings_rad: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "radii_over_wavelength",
            np.asarray(self.radii_over_wavelength, dtype=float))
        object.__setattr__(
            self, "bearings_rad", np.asarray(self.bearings_rad, dtype=float))
        if self.radii_over_wavelength.ndim != 1:
            raise ValueError("radii must be a flat sequence")
        if self.radii_over_wavelength.shape != self.bearings_rad.shape:
            raise ValueError("radii and bearings must have equal length")
        if self.radii_over_wavelength.size < 2:
            raise ValueError("need at least two sensors")
        if self.radii_over_wavelength[0] != 0.0:
            raise ValueError("first sensor must be the phase reference (radius 0)")

    @property
    def n_elements(self) -> int:
        return self.radii_over_wavelength.size

    @property
    def radii(self) -> np.ndarray:
        return self.radii_over_wavelength

    @property
    def bearings(self) -> np.ndarray:
        return self.bearings_rad

    @property
    def azimuth_span(self) -> tuple[float, float]:
        return (-np.pi, np.pi)

    @property
    def has_elevation(self) -> bool:
        return True

    @classmethod
    def grid(cls, nx: int, ny: int, spacing_over_wavelength: float = 0.5) -> "PlanarArray":
        """Rectangular lattice converted to polar form about element (0, 0)."""
        if nx < 1 or ny < 1 or nx * ny < 2:
            raise ValueError("lattice must contain at least two sensors")
        xs, ys = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        x = xs.ravel() * spacing_over_wavelength
        y = ys.ravel() * spacing_over_wavelength
        return cls(np.hypot(x, y), np.arctan2(y, x))


ArrayGeometry = UniformLinearArray | PlanarArray


@dataclass
class AngleGrid:
    """Fixed azimuth sampling grid plus per-user off-grid corrections.

    ``points`` are cell centers with uniform ``interval`` (span / size), so
    a gap clamped to half an interval keeps every point inside its own cell.
    ``azimuth_gap`` and ``elevation`` hold one row per user.
    """

    points: np.ndarray
    interval: float
    azimuth_gap: np.ndarray
    elevation: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.azimuth_gap = np.asarray(self.azimuth_gap, dtype=float)
        self.elevation = np.asarray(self.elevation, dtype=float)
        if self.points.ndim != 1 or self.points.size < 1:
            raise ValueError("grid needs at least one point")
        if self.azimuth_gap.shape != self.elevation.shape:
            raise ValueError("gap and elevation arrays must match")
        if self.azimuth_gap.ndim != 2 or self.azimuth_gap.shape[1] != self.points.size:
            raise ValueError("per-user arrays must be (n_users, grid size)")

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def n_users(self) -> int:
        return self.azimuth_gap.shape[0]

    def validate(self):
        """Check the structural invariants; raises on violation."""
        if self.points.size > 1:
            steps = np.diff(self.points)
            if np.any(steps <= 0):
                raise ValueError("grid points must be strictly increasing")
            if not np.allclose(steps, self.interval, rtol=1e-9, atol=1e-12):
                raise ValueError("grid points must be uniformly spaced")
        half = self.interval / 2.0 + 1e-12
        if np.any(np.abs(self.azimuth_gap) > half):
            raise ValueError("azimuth gap outside its grid cell")
        if np.any(self.elevation < -1e-12) or np.any(self.elevation > np.pi / 2 + 1e-12):
            raise ValueError("elevation outside [0, pi/2]")

    @classmethod
    def uniform(cls, lo: float, hi: float, size: int, n_users: int = 1) -> "AngleGrid":
        """Cell-center grid over [lo, hi] with zero gaps and elevations."""
        interval = (hi - lo) / size
        points = lo + (np.arange(size) + 0.5) * interval
        zeros = np.zeros((n_users, size))
        return cls(points, interval, zeros, zeros.copy())

    @classmethod
    def for_geometry(cls, geometry: ArrayGeometry, size: int, n_users: int = 1) -> "AngleGrid":
        lo, hi = geometry.azimuth_span
        return cls.uniform(lo, hi, size, n_users)

    @classmethod
    def sin_space(cls, size: int, n_users: int = 1) -> "AngleGrid":
        """Grid whose sines cover [-1, 1] uniformly (DFT-matched for a
        half-wavelength linear array with size equal to the element count).
        Spacing in angle is non-uniform, so ``validate`` does not apply."""
        sines = -1.0 + (np.arange(size) + 0.5) * (2.0 / size)
        points = np.arcsin(sines)
        zeros = np.zeros((n_users, size))
        return cls(points, float(np.pi / size), zeros, zeros.copy())


def steering(geometry: ArrayGeometry, azimuth: float, elevation: float = 0.0) -> np.ndarray:
    """Complex array response for one direction; first entry is always 1.

    Entry n is exp(-j 2 pi r_n cos(elevation) sin(azimuth - bearing_n));
    a linear array has zero bearings and ignores elevation.
    """
    if not geometry.has_elevation:
        elevation = 0.0
    phase = (geometry.radii * np.cos(elevation)
             * np.sin(azimuth - geometry.bearings))
    return np.exp(-1j * TWO_PI * phase)


def steering_grad(geometry: ArrayGeometry, azimuth: float, elevation: float = 0.0,
                  wrt: str = "azimuth") -> np.ndarray:
    """Elementwise derivative of the steering vector.

    ``wrt`` selects the azimuth gap or the elevation angle.  The elevation
    derivative of a linear array is identically zero.
    """
    if wrt not in ("azimuth", "elevation"):
        raise ValueError("wrt must be 'azimuth' or 'elevation'")
    if not geometry.has_elevation:
        if wrt == "elevation":
            return np.zeros(geometry.n_elements, dtype=complex)
        elevation = 0.0
    base = steering(geometry, azimuth, elevation)
    rel = azimuth - geometry.bearings
    if wrt == "azimuth":
        factor = -1j * TWO_PI * geometry.radii * np.cos(elevation) * np.cos(rel)
    else:
        factor = 1j * TWO_PI * geometry.radii * np.sin(elevation) * np.sin(rel)
    return factor * base


def build_dictionary(geometry: ArrayGeometry, grid: AngleGrid, user: int = 0) -> np.ndarray:
    """N x L steering dictionary at the user's corrected grid angles."""
    angles = grid.points + grid.azimuth_gap[user]
    elev = grid.elevation[user] if geometry.has_elevation else np.zeros(grid.size)
    rel = angles[None, :] - geometry.bearings[:, None]
    phase = geometry.radii[:, None] * np.cos(elev)[None, :] * np.sin(rel)
    return np.exp(-1j * TWO_PI * phase)


def build_dictionaries_batch(geometry: ArrayGeometry, grid: AngleGrid,
                             users: np.ndarray) -> np.ndarray:
    """Stacked (len(users), N, L) dictionaries at the users' corrected angles."""
    angles = grid.points[None, :] + grid.azimuth_gap[users]          # (U, L)
    rel = angles[:, None, :] - geometry.bearings[None, :, None]      # (U, N, L)
    if geometry.has_elevation:
        cos_elev = np.cos(grid.elevation[users])[:, None, :]
    else:
        cos_elev = 1.0
    phase = geometry.radii[None, :, None] * cos_elev * np.sin(rel)
    return np.exp(-1j * TWO_PI * phase)


def dictionary_derivative(geometry: ArrayGeometry, grid: AngleGrid, user: int = 0,
                          wrt: str = "azimuth") -> np.ndarray:
    """Columnwise steering derivatives for the user's dictionary."""
    if wrt not in ("azimuth", "elevation"):
        raise ValueError("wrt must be 'azimuth' or 'elevation'")
    if not geometry.has_elevation and wrt == "elevation":
        return np.zeros((geometry.n_elements, grid.size), dtype=complex)
    angles = grid.points + grid.azimuth_gap[user]
    elev = grid.elevation[user] if geometry.has_elevation else np.zeros(grid.size)
    rel = angles[None, :] - geometry.bearings[:, None]
    base = np.exp(-1j * TWO_PI * geometry.radii[:, None] * np.cos(elev)[None, :] * np.sin(rel))
    if wrt == "azimuth":
        factor = -1j * TWO_PI * geometry.radii[:, None] * np.cos(elev)[None, :] * np.cos(rel)
    else:
        factor = 1j * TWO_PI * geometry.radii[:, None] * np.sin(elev)[None, :] * np.sin(rel)
    return factor * base


def effective_sensing(pilots: np.ndarray, dictionary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pilot-projected dictionary and its horizontally duplicated stack."""
    pilots = np.asarray(pilots)
    dictionary = np.asarray(dictionary)
    if pilots.ndim != 2 or dictionary.ndim != 2:
        raise ValueError("pilots and dictionary must be matrices")
    if pilots.shape[1] != dictionary.shape[0]:
        raise ValueError(
            f"shape mismatch: pilots {pilots.shape} vs dictionary {dictionary.shape}")
    sensing = pilots @ dictionary
    return sensing, np.hstack((sensing, sensing))


def load_geometry(path) -> ArrayGeometry:
    """Read a geometry file.

    Either a single line ``ula <n_antennas> <spacing_over_wavelength>`` or
    one ``sensor <radius_over_wavelength> <bearing_radians>`` line per
    element.  Blank lines and ``#`` comments are ignored.
    """
    records = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            records.append(line.split())
    if not records:
        raise ValueError(f"no geometry records in {path}")
    kinds = {rec[0] for rec in records}
    if kinds == {"ula"}:
        if len(records) != 1 or len(records[0]) != 3:
            raise ValueError("ula shorthand must be a single 3-field record")
        return UniformLinearArray(int(records[0][1]), float(records[0][2]))
    if kinds == {"sensor"}:
        if any(len(rec) != 3 for rec in records):
            raise ValueError("sensor records must have 3 fields")
        radii = np.array([float(rec[1]) for rec in records])
        bearings = np.array([float(rec[2]) for rec in records])
        return PlanarArray(radii, bearings)
    raise ValueError("geometry file mixes record kinds or uses unknown kinds")


def save_geometry(geometry: ArrayGeometry, path):
    lines = []
    if isinstance(geometry, UniformLinearArray):
        lines.append(f"ula {geometry.n_antennas} "
                     f"{float(geometry.spacing_over_wavelength)!r}")
    else:
        for r, b in zip(geometry.radii, geometry.bearings):
            lines.append(f"sensor {float(r)!r} {float(b)!r}")
    Path(path).write_text("\n".join(lines) + "\n")
