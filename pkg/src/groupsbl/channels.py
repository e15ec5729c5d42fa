"""Ground-truth generation: grouped clustered channels, pilots, observations.

Each group shares a set of scattering-cluster centers; every user adds its
own individual clusters.  Sub-path angles scatter uniformly inside the
cluster's angular spread and carry complex gains normalized so the expected
channel energy equals the element count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .arrays import AngleGrid, ArrayGeometry, steering


@dataclass(frozen=True)
class GroupScenario:
    """Generator settings for one grouped multi-user channel draw."""

    n_groups_true: int
    n_users: int
    shared_clusters: int
    individual_clusters: int
    subpaths_per_cluster: int = 20
    angular_spread_deg: float = 10.0
    seed: int = 0
    gain_distribution: str = "complex_gaussian"  # or "unit_modulus"
    angle_placement: str = "continuous"          # or "on_grid"
    grid_size: int | None = None                 # required for on_grid

    def __post_init__(self):
        if self.n_groups_true < 1 or self.n_users < 1:
            raise ValueError("need at least one group and one user")
        if self.shared_clusters < 0 or self.individual_clusters < 0:
            raise ValueError("cluster counts must be nonnegative")
        if self.shared_clusters + self.individual_clusters < 1:
            raise ValueError("need at least one cluster in total")
        if self.subpaths_per_cluster < 1:
            raise ValueError("need at least one sub-path per cluster")
        if self.gain_distribution not in ("complex_gaussian", "unit_modulus"):
            raise ValueError("unknown gain distribution")
        if self.angle_placement not in ("continuous", "on_grid"):
            raise ValueError("unknown angle placement")
        if self.angle_placement == "on_grid" and not self.grid_size:
            raise ValueError("on_grid placement requires grid_size")

    @property
    def n_clusters(self) -> int:
        return self.shared_clusters + self.individual_clusters


@dataclass
class ChannelRealization:
    """One drawn multi-user channel, fully determined by the scenario seed."""

    azimuths: np.ndarray            # (K, n_paths) radians
    elevations: np.ndarray | None   # (K, n_paths) radians, planar arrays only
    gains: np.ndarray               # (K, n_paths) complex
    group_labels: np.ndarray        # (K,) in 1..G*
    shared_center_azimuths: np.ndarray       # (G*, L_s)
    individual_center_azimuths: np.ndarray   # (K, L_v)
    channels: np.ndarray | None = None       # (K, N) once synthesized

    @property
    def n_users(self) -> int:
        return self.azimuths.shape[0]


@dataclass(frozen=True)
class ObservationSet:
    """Pilot matrix plus the per-user noisy received vectors."""

    pilots: np.ndarray         # (T, N) complex
    received: np.ndarray       # (K, T) complex
    noise_variance: float
    snr_db: float

    @property
    def n_pilots(self) -> int:
        return self.pilots.shape[0]

    @property
    def n_users(self) -> int:
        return self.received.shape[0]


def _snap_to_grid(angle, grid_points):
    idx = int(np.argmin(np.abs(grid_points - angle)))
    return float(grid_points[idx]), idx


def _draw_centers(rng, count, span, grid_points, taken, max_tries=1000):
    """Draw ``count`` centers uniform over ``span``; with a grid, snap each
    to its nearest point and reject indices already in ``taken``."""
    lo, hi = span
    centers = np.empty(count)
    for i in range(count):
        for _ in range(max_tries):
            cand = rng.uniform(lo, hi)
            if grid_points is None:
                centers[i] = cand
                break
            snapped, idx = _snap_to_grid(cand, grid_points)
            if idx not in taken:
                taken.add(idx)
                centers[i] = snapped
                break
        else:
            raise RuntimeError("could not draw distinct cluster centers")
    return centers


def draw_scenario(scenario: GroupScenario, geometry: ArrayGeometry) -> ChannelRealization:
    """Draw cluster centers, sub-path angles, gains, and group labels.

    Users of the same group reuse identical shared centers; individual
    centers are drawn per user.  All randomness comes from the scenario
    seed, so equal seeds give bit-identical realizations.
    """
    if scenario.n_groups_true > scenario.n_users:
        raise ValueError("more true groups than users")
    rng = np.random.default_rng(scenario.seed)
    span = geometry.azimuth_span
    n_groups = scenario.n_groups_true
    n_users = scenario.n_users
    l_s, l_v = scenario.shared_clusters, scenario.individual_clusters
    n_sub = scenario.subpaths_per_cluster
    spread = np.deg2rad(scenario.angular_spread_deg)

    grid_points = None
    if scenario.angle_placement == "on_grid":
        grid_points = AngleGrid.for_geometry(geometry, scenario.grid_size).points

    # Balanced assignment after a shuffle: marginally uniform over groups
    # and no group is left empty when K >= G*.
    order = rng.permutation(n_users)
    labels = np.empty(n_users, dtype=int)
    labels[order] = np.arange(n_users) % n_groups + 1

    group_taken = [set() for _ in range(n_groups)]
    shared_az = np.empty((n_groups, l_s))
    shared_el = np.empty((n_groups, l_s))
    for g in range(n_groups):
        shared_az[g] = _draw_centers(rng, l_s, span, grid_points, group_taken[g])
        shared_el[g] = rng.uniform(0.0, np.pi / 2.0, size=l_s)

    indiv_az = np.empty((n_users, l_v))
    indiv_el = np.empty((n_users, l_v))
    for k in range(n_users):
        taken = set(group_taken[labels[k] - 1])
        indiv_az[k] = _draw_centers(rng, l_v, span, grid_points, taken)
        indiv_el[k] = rng.uniform(0.0, np.pi / 2.0, size=l_v)

    n_paths = scenario.n_clusters * n_sub
    azimuths = np.empty((n_users, n_paths))
    elevations = np.empty((n_users, n_paths))
    gains = np.empty((n_users, n_paths), dtype=complex)
    scale = 1.0 / np.sqrt(scenario.n_clusters * n_sub)
    lo, hi = span
    for k in range(n_users):
        centers_az = np.concatenate((shared_az[labels[k] - 1], indiv_az[k]))
        centers_el = np.concatenate((shared_el[labels[k] - 1], indiv_el[k]))
        az = np.repeat(centers_az, n_sub) + rng.uniform(-spread / 2, spread / 2, n_paths)
        el = np.repeat(centers_el, n_sub) + rng.uniform(-spread / 2, spread / 2, n_paths)
        az = np.clip(az, lo, hi)
        if grid_points is not None:
            az = np.array([_snap_to_grid(a, grid_points)[0] for a in az])
        if scenario.gain_distribution == "complex_gaussian":
            xi = (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)) / np.sqrt(2)
        else:
            xi = np.exp(1j * rng.uniform(0.0, 2 * np.pi, n_paths))
        azimuths[k] = az
        elevations[k] = np.clip(el, 0.0, np.pi / 2)
        gains[k] = scale * xi

    return ChannelRealization(
        azimuths=azimuths,
        elevations=elevations if geometry.has_elevation else None,
        gains=gains,
        group_labels=labels,
        shared_center_azimuths=shared_az,
        individual_center_azimuths=indiv_az,
    )


def synthesize_channels(realization: ChannelRealization, geometry: ArrayGeometry) -> np.ndarray:
    """Sum the per-path steering responses into the (K, N) channel matrix."""
    n_users, n_paths = realization.azimuths.shape
    channels = np.zeros((n_users, geometry.n_elements), dtype=complex)
    for k in range(n_users):
        for p in range(n_paths):
            elev = realization.elevations[k, p] if realization.elevations is not None else 0.0
            channels[k] += realization.gains[k, p] * steering(
                geometry, realization.azimuths[k, p], elev)
    realization.channels = channels
    return channels


def generate_pilots(n_pilots: int, n_antennas: int, power: float = 1.0, seed=0) -> np.ndarray:
    """I.i.d. complex Gaussian pilots rescaled so the total pilot energy is
    exactly power * T * N."""
    if n_pilots < 1 or n_antennas < 1:
        raise ValueError("pilot matrix must be nonempty")
    if power <= 0:
        raise ValueError("power must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    raw = (rng.standard_normal((n_pilots, n_antennas))
           + 1j * rng.standard_normal((n_pilots, n_antennas))) / np.sqrt(2)
    energy = float(np.sum(np.abs(raw) ** 2))
    return raw * np.sqrt(power * n_pilots * n_antennas / energy)


def observe(pilots: np.ndarray, channel: np.ndarray, snr_db: float, seed=0):
    """Noisy received vector for one user; returns (y, noise variance).

    The per-element noise variance is P / 10^(snr/10) with P the average
    pilot symbol power.  Pass snr_db=inf for a noiseless observation.
    """
    pilots = np.asarray(pilots)
    channel = np.asarray(channel)
    if pilots.shape[1] != channel.shape[0]:
        raise ValueError("pilot and channel dimensions disagree")
    clean = pilots @ channel
    power = float(np.sum(np.abs(pilots) ** 2)) / pilots.size
    if np.isinf(snr_db):
        return clean, 0.0
    sigma2 = power / 10.0 ** (snr_db / 10.0)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = np.sqrt(sigma2 / 2) * (rng.standard_normal(clean.shape)
                                   + 1j * rng.standard_normal(clean.shape))
    return clean + noise, sigma2


def observe_users(pilots: np.ndarray, channels: np.ndarray, snr_db: float, seed=0) -> ObservationSet:
    """Apply ``observe`` to every user's channel with one noise stream."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    received = np.empty((channels.shape[0], pilots.shape[0]), dtype=complex)
    sigma2 = 0.0
    for k in range(channels.shape[0]):
        received[k], sigma2 = observe(pilots, channels[k], snr_db, rng)
    return ObservationSet(pilots=pilots, received=received,
                          noise_variance=sigma2, snr_db=float(snr_db))


def export_realization_csv(realization: ChannelRealization, path):
    """Per-path angle/gain listing for external inspection."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["user", "group", "path", "azimuth_rad",
                         "elevation_rad", "gain_re", "gain_im"])
        for k in range(realization.n_users):
            for p in range(realization.azimuths.shape[1]):
                elev = (realization.elevations[k, p]
                        if realization.elevations is not None else 0.0)
                writer.writerow([
                    k, int(realization.group_labels[k]), p,
                    repr(float(realization.azimuths[k, p])),
                    repr(float(elev)),
                    repr(float(realization.gains[k, p].real)),
                    repr(float(realization.gains[k, p].imag)),
                ])
