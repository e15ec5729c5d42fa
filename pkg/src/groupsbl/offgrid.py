"""Gradient-based refinement of per-user grid gaps and elevation angles.

Each outer inference iteration takes one signed fixed-size step per angle:
azimuth gaps move by a fixed fraction of the grid interval and stay clamped
inside their grid cell; elevations move by a decaying step inside
[0, pi/2].  Gradients are the exact derivatives of the expected data-fit
part of the objective with respect to each angle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import TWO_PI, dictionary_derivative


@dataclass(frozen=True)
class OffgridStepConfig:
    """Fixed-step schedule for the angle refinement moves."""

    azimuth_step_fraction: float = 0.01          # of the grid interval
    elevation_step_base: float = np.pi / 36.0
    elevation_step_decay: float = 0.98
    elevation_step_floor: float = 0.001

    def __post_init__(self):
        if not 0.9474 < self.elevation_step_decay < 1.0:
            raise ValueError("elevation step decay must lie in (0.9474, 1)")
        if self.azimuth_step_fraction <= 0 or self.elevation_step_base <= 0:
            raise ValueError("step sizes must be positive")
        if self.elevation_step_floor <= 0:
            raise ValueError("step floor must be positive")


def _fit_gradient(state, workspace, user: int, wrt: str) -> np.ndarray:
    """Derivative of -alpha * (||y - Phi mu||^2 + tr(Phi Cov Phi^H)) with
    respect to the named per-column angle of user ``user``.

    Only column l of the sensing matrix depends on angle l, which collapses
    the derivative to 2 alpha Re(dPhi_l^H (mu_l^* r - (Phi Cov)_l)) with r
    the posterior-mean residual.
    """
    sensing = workspace.sensing[user]
    deriv_cols = workspace.pilots @ dictionary_derivative(
        workspace.geometry, state.grid, user, wrt)
    mu = state.mean_w[user]
    residual = workspace.received[user] - sensing @ mu
    lone = residual[:, None] * np.conj(mu)[None, :]
    coupled = sensing @ state.cov_w[user]
    alpha = state.noise_mean
    return 2.0 * alpha * np.real(
        np.einsum("tl,tl->l", np.conj(deriv_cols), lone - coupled))


def azimuth_gap_gradient(state, workspace, user: int) -> np.ndarray:
    """Objective derivative w.r.t. each azimuth gap of one user."""
    return _fit_gradient(state, workspace, user, "azimuth")


def elevation_gradient(state, workspace, user: int) -> np.ndarray:
    """Objective derivative w.r.t. each elevation angle of one user.

    Identically zero for a linear array, where elevation is undefined.
    """
    if not workspace.geometry.has_elevation:
        return np.zeros(state.grid.size)
    return _fit_gradient(state, workspace, user, "elevation")


def _all_user_gradients(state, workspace):
    """Azimuth and elevation gradients for every user in one batch.

    The derivative dictionaries reuse the cached steering columns: the
    derivative of each entry is the entry itself times a real rotation
    factor, so no fresh exponentials are required.
    """
    geometry = workspace.geometry
    grid = state.grid
    has_elev = geometry.has_elevation
    angles = grid.points[None, :] + grid.azimuth_gap                 # (K, L)
    rel = angles[:, None, :] - geometry.bearings[None, :, None]      # (K, N, L)
    radii = geometry.radii[None, :, None]
    cos_elev = np.cos(grid.elevation)[:, None, :] if has_elev else 1.0

    fitted = np.matmul(workspace.sensing, state.mean_w[:, :, None])[..., 0]
    residual = workspace.received - fitted                            # (K, T)
    lone = residual[:, :, None] * np.conj(state.mean_w)[:, None, :]   # (K, T, L)
    coupled = np.matmul(workspace.sensing, state.cov_w)               # (K, T, L)
    diff = lone - coupled
    alpha = state.noise_mean

    az_factor = -1j * TWO_PI * radii * cos_elev * np.cos(rel)
    d_sensing = np.matmul(workspace.pilots[None, :, :],
                          az_factor * workspace.dictionaries)
    az_grads = 2.0 * alpha * np.einsum(
        "ktl,ktl->kl", np.conj(d_sensing), diff).real

    el_grads = np.zeros_like(az_grads)
    if has_elev:
        sin_elev = np.sin(grid.elevation)[:, None, :]
        el_factor = 1j * TWO_PI * radii * sin_elev * np.sin(rel)
        d_sensing = np.matmul(workspace.pilots[None, :, :],
                              el_factor * workspace.dictionaries)
        el_grads = 2.0 * alpha * np.einsum(
            "ktl,ktl->kl", np.conj(d_sensing), diff).real
    return az_grads, el_grads


def apply_offgrid_step(state, azimuth_grads, elevation_grads,
                       config: OffgridStepConfig, iteration: int,
                       update_elevation: bool) -> np.ndarray:
    """Signed fixed-size move of all users' angles; returns the (K, L)
    boolean mask of angles that actually changed (clamped angles with an
    outward gradient stay put)."""
    grid = state.grid
    half = grid.interval / 2.0
    step = grid.interval * config.azimuth_step_fraction
    old_gap = grid.azimuth_gap
    new_gap = np.clip(old_gap + step * np.sign(azimuth_grads), -half, half)
    changed = new_gap != old_gap
    grid.azimuth_gap = new_gap
    if update_elevation:
        scale = max(config.elevation_step_decay ** iteration,
                    config.elevation_step_floor)
        estep = config.elevation_step_base * scale
        old_el = grid.elevation
        new_el = np.clip(old_el + estep * np.sign(elevation_grads), 0.0, np.pi / 2.0)
        changed = changed | (new_el != old_el)
        grid.elevation = new_el
    return changed


def refine_iteration(state, workspace, config: OffgridStepConfig, iteration: int):
    """One full refinement pass: gradients at the current angles for every
    user, one azimuth step, one elevation step (planar arrays only), then a
    sensing refresh restricted to the users whose angles moved."""
    az, el = _all_user_gradients(state, workspace)
    changed = apply_offgrid_step(state, az, el, config, iteration,
                                 workspace.geometry.has_elevation)
    moved_users = np.flatnonzero(changed.any(axis=1))
    if moved_users.size:
        workspace.rebuild_users(moved_users, changed)
