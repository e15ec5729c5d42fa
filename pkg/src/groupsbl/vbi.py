"""Alternating variational inference for joint recovery and user grouping.

The posterior over noise precision, stacked coefficient vectors, per-group
shared precisions, per-user individual precisions, and group assignments is
factorized, and each factor has a closed-form coordinate update.  A full
iteration runs the five block updates in a fixed order and, when enabled,
one fixed-size refinement step of the per-user grid angles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError
from scipy.linalg.lapack import get_lapack_funcs

from .arrays import (AngleGrid, ArrayGeometry, build_dictionaries_batch,
                     build_dictionary)
from .channels import ObservationSet
from .elbo import NumericalError, compute_elbo, residual_and_trace, stacked_second_moments
from .offgrid import OffgridStepConfig, refine_iteration
from .special import digamma

MODES = ("general", "group_only", "common")
INDIV_SHAPE_RULES = ("pooled", "per_user")
ASSIGN_INITS = ("clustered", "uniform")


class InferenceDivergenceError(RuntimeError):
    """The bound decreased where the update rules guarantee it cannot."""


@dataclass(frozen=True)
class Hyperparams:
    """Engine configuration.

    ``individual_scale`` is the small constant that makes the individual
    coefficient prior sparser than the shared one.  ``indiv_shape_rule``
    selects the gamma-shape convention of the individual precision update:
    "per_user" adds one to the prior shape, which is the exact
    coordinate-ascent rule and the only setting under which the bound is
    guaranteed monotone in general mode; "pooled" adds the user count,
    which prunes the individual component far more aggressively.
    """

    prior_shape: float = 1e-4
    prior_rate: float = 1e-4
    individual_scale: float = 1e-3
    n_groups: int = 2
    grid_size: int | None = None
    max_iters: int = 500
    min_iters: int = 10
    tol: float = 1e-4
    mode: str = "general"
    offgrid_enabled: bool = False
    indiv_shape_rule: str = "per_user"
    assign_init: str = "clustered"
    support_threshold: float = 0.01
    precision_cap: float = 1e12
    init_seed: int = 0
    track_elbo: bool = True
    step: OffgridStepConfig = field(default_factory=OffgridStepConfig)

    def __post_init__(self):
        if self.prior_shape <= 0 or self.prior_rate <= 0:
            raise ValueError("gamma prior shape and rate must be positive")
        if not 0.0 < self.individual_scale < 1.0:
            raise ValueError("individual prior scale must lie in (0, 1)")
        if self.n_groups < 1:
            raise ValueError("group budget must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.indiv_shape_rule not in INDIV_SHAPE_RULES:
            raise ValueError(f"indiv_shape_rule must be one of {INDIV_SHAPE_RULES}")
        if self.assign_init not in ASSIGN_INITS:
            raise ValueError(f"assign_init must be one of {ASSIGN_INITS}")
        if self.max_iters < 1 or self.tol <= 0:
            raise ValueError("max_iters must be >= 1 and tol > 0")
        if self.min_iters < 1:
            raise ValueError("min_iters must be >= 1")
        if self.support_threshold <= 0 or self.support_threshold >= 1:
            raise ValueError("support threshold must lie in (0, 1)")


class Workspace:
    """Per-run observation bundle and per-user sensing caches.

    Holds the pilot matrix, received vectors, and for every user the
    current dictionary, sensing matrix, Gram matrix, and projected data,
    kept in sync with the user's off-grid angles.
    """

    def __init__(self, observations: ObservationSet, geometry: ArrayGeometry,
                 grid: AngleGrid):
        if grid.n_users != observations.n_users:
            raise ValueError("grid rows must match the user count")
        if observations.pilots.shape[1] != geometry.n_elements:
            raise ValueError("pilot width must match antenna count")
        self.pilots = np.asarray(observations.pilots, dtype=complex)
        self.received = np.asarray(observations.received, dtype=complex)
        self.geometry = geometry
        self.grid = grid
        n_users = observations.n_users
        size = grid.size
        n_pilots = self.pilots.shape[0]
        n_elem = geometry.n_elements
        self.dictionaries = np.empty((n_users, n_elem, size), dtype=complex)
        self.sensing = np.empty((n_users, n_pilots, size), dtype=complex)
        self.gram = np.empty((n_users, size, size), dtype=complex)
        self.proj = np.empty((n_users, size), dtype=complex)
        for k in range(n_users):
            self.rebuild_user(k)

    def rebuild_user(self, user: int, columns=None):
        """Refresh the user's sensing caches; with ``columns`` given, only
        those dictionary/sensing columns are recomputed (the Gram matrix
        couples all columns and is always rebuilt in full)."""
        if columns is None:
            self.dictionaries[user] = build_dictionary(self.geometry, self.grid, user)
            self.sensing[user] = self.pilots @ self.dictionaries[user]
        else:
            fresh = build_dictionary(self.geometry, self.grid, user)[:, columns]
            self.dictionaries[user][:, columns] = fresh
            self.sensing[user][:, columns] = self.pilots @ fresh
        phi = self.sensing[user]
        self.gram[user] = phi.conj().T @ phi
        self.proj[user] = phi.conj().T @ self.received[user]

    def rebuild_users(self, users, changed=None):
        """Batched cache refresh for several users at once.

        A refinement step typically moves nearly every column, so the
        dictionaries are rebuilt whole; ``changed`` is accepted for parity
        with ``rebuild_user`` but only its user-level extent matters here.
        """
        users = np.asarray(users, dtype=int)
        fresh = build_dictionaries_batch(self.geometry, self.grid, users)
        self.dictionaries[users] = fresh
        sensing = np.matmul(self.pilots[None, :, :], fresh)
        self.sensing[users] = sensing
        herm = sensing.conj().transpose(0, 2, 1)
        self.gram[users] = np.matmul(herm, sensing)
        self.proj[users] = np.matmul(herm, self.received[users][:, :, None])[..., 0]


@dataclass
class VariationalState:
    """All factor parameters plus the combined coefficient moments."""

    mean_stacked: np.ndarray        # (K, 2L) complex
    cov_stacked: np.ndarray         # (K, 2L, 2L) complex Hermitian PSD
    noise_shape: float
    noise_rate: float
    shared_shape: np.ndarray        # (G, L)
    shared_rate: np.ndarray         # (G, L)
    indiv_shape: np.ndarray         # (K, L)
    indiv_rate: np.ndarray          # (K, L)
    assign_probs: np.ndarray        # (K, G) rows on the simplex
    grid: AngleGrid                 # carries per-user gaps and elevations
    mean_w: np.ndarray              # (K, L) combined posterior mean
    cov_w: np.ndarray               # (K, L, L) combined covariance
    gamma_cap: float = 1e12
    indiv_frozen: bool = False

    @property
    def noise_mean(self) -> float:
        return min(self.noise_shape / self.noise_rate, self.gamma_cap)

    @property
    def shared_mean(self) -> np.ndarray:
        return np.minimum(self.shared_shape / self.shared_rate, self.gamma_cap)

    @property
    def shared_log_mean(self) -> np.ndarray:
        return digamma(self.shared_shape) - np.log(self.shared_rate)

    @property
    def indiv_mean(self) -> np.ndarray:
        if self.indiv_frozen:
            return np.full(self.indiv_shape.shape, self.gamma_cap)
        return np.minimum(self.indiv_shape / self.indiv_rate, self.gamma_cap)

    @property
    def azimuth_gap(self) -> np.ndarray:
        return self.grid.azimuth_gap

    @property
    def elevation(self) -> np.ndarray:
        return self.grid.elevation

    def copy(self) -> "VariationalState":
        grid = AngleGrid(self.grid.points.copy(), self.grid.interval,
                         self.grid.azimuth_gap.copy(), self.grid.elevation.copy())
        return VariationalState(
            mean_stacked=self.mean_stacked.copy(),
            cov_stacked=self.cov_stacked.copy(),
            noise_shape=self.noise_shape,
            noise_rate=self.noise_rate,
            shared_shape=self.shared_shape.copy(),
            shared_rate=self.shared_rate.copy(),
            indiv_shape=self.indiv_shape.copy(),
            indiv_rate=self.indiv_rate.copy(),
            assign_probs=self.assign_probs.copy(),
            grid=grid,
            mean_w=self.mean_w.copy(),
            cov_w=self.cov_w.copy(),
            gamma_cap=self.gamma_cap,
            indiv_frozen=self.indiv_frozen,
        )

    def validate(self):
        """Structural invariants; raises on violation."""
        if self.noise_shape <= 0 or self.noise_rate <= 0:
            raise ValueError("noise gamma parameters must be positive")
        for name, arr in (("shared_shape", self.shared_shape),
                          ("shared_rate", self.shared_rate),
                          ("indiv_shape", self.indiv_shape),
                          ("indiv_rate", self.indiv_rate)):
            if np.any(arr <= 0):
                raise ValueError(f"{name} contains non-positive entries")
        rows = self.assign_probs.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-12):
            raise ValueError("assignment rows must sum to one")
        if np.any(self.assign_probs < -1e-15) or np.any(self.assign_probs > 1 + 1e-15):
            raise ValueError("assignment probabilities outside [0, 1]")
        for k in range(self.cov_stacked.shape[0]):
            sym = 0.5 * (self.cov_stacked[k] + self.cov_stacked[k].conj().T)
            if float(np.linalg.eigvalsh(sym).min()) < -1e-10:
                raise ValueError("stacked covariance not PSD")
        self.grid.validate()


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=1, keepdims=True)


def _invert_psd_inplace(buffer: np.ndarray, refill, out: np.ndarray,
                        strict_lower: np.ndarray):
    """Invert the Hermitian PD matrix in the F-ordered ``buffer`` into the
    C-ordered ``out`` (full matrix, symmetrized, real diagonal).

    ``buffer`` is destroyed.  ``refill`` rebuilds it for the jitter
    fallback on an indefinite factorization; ``strict_lower`` is a cached
    below-diagonal boolean mask.  Returns log det of the inverse.
    """
    potrf, potri = get_lapack_funcs(("potrf", "potri"), (buffer,))
    dim = buffer.shape[0]
    diag = np.diag_indices(dim)
    factor, info = potrf(buffer, lower=1, overwrite_a=1, clean=0)
    if info != 0:
        refill(buffer)
        jitter = 1e-10 * float(np.trace(buffer).real) / dim
        for _ in range(6):
            refill(buffer)
            buffer[diag] += jitter
            factor, info = potrf(buffer, lower=1, overwrite_a=1, clean=0)
            if info == 0:
                warnings.warn("ill-conditioned coefficient system, added "
                              f"jitter {jitter:.3e}", RuntimeWarning)
                break
            jitter *= 10.0
        else:
            raise LinAlgError("coefficient precision matrix is not positive definite")
    logdet_cov = -2.0 * float(np.sum(np.log(np.diagonal(factor).real)))
    inv, info = potri(factor, lower=1, overwrite_c=1)
    if info != 0:
        raise LinAlgError(f"inverse from Cholesky factor failed (info={info})")
    np.copyto(out, inv)
    out.T[strict_lower] = np.conj(out[strict_lower])
    out[diag] = out[diag].real
    return logdet_cov


def _hermitian_inverse(precision: np.ndarray):
    """Invert a Hermitian positive-definite matrix; returns
    (covariance, log det covariance).  Convenience wrapper that copies."""
    precision = np.asarray(precision)
    dim = precision.shape[0]
    buffer = np.asfortranarray(precision.copy())
    out = np.empty((dim, dim), dtype=complex)
    mask = np.tril(np.ones((dim, dim), dtype=bool), -1)
    logdet = _invert_psd_inplace(buffer, lambda b: np.copyto(b, precision),
                                 out, mask)
    return out, logdet


def _refresh_combined(state: "VariationalState", user: int):
    size = state.grid.size
    mu = state.mean_stacked[user]
    cov = state.cov_stacked[user]
    state.mean_w[user] = mu[:size] + mu[size:]
    state.cov_w[user] = (cov[:size, :size] + cov[size:, size:]
                         + cov[:size, size:] + cov[size:, :size])


def init_state(hyper: Hyperparams, workspace: Workspace, rng=None) -> VariationalState:
    """Deterministic coefficient start plus unit gamma factors.

    The stacked covariance starts from the data-independent regularized
    inverse, all gamma shapes and rates start at one (frozen individual
    precisions start at the cap), gaps start at zero, and elevations start
    uniform on [0, pi/2] for planar refinement runs.  Assignments start
    from the fingerprint clustering by default, or from uniform draws
    pushed through the softmax with assign_init="uniform".
    """
    rng = np.random.default_rng(hyper.init_seed) if rng is None else rng
    n_users = workspace.received.shape[0]
    size = workspace.grid.size
    n_groups = 1 if hyper.mode == "common" else hyper.n_groups
    frozen = hyper.mode in ("group_only", "common")
    rho = hyper.individual_scale
    cap = hyper.precision_cap

    raw_scores = rng.uniform(0.0, 1.0, size=(n_users, n_groups))
    assign = _softmax_rows(raw_scores)

    # Elevations start random only when refinement will move them; the
    # coefficient start below must see the dictionaries they produce.
    if workspace.geometry.has_elevation and hyper.offgrid_enabled:
        workspace.grid.elevation = rng.uniform(0.0, np.pi / 2.0, (n_users, size))
        for k in range(n_users):
            workspace.rebuild_user(k)

    mean_stacked = np.empty((n_users, 2 * size), dtype=complex)
    cov_stacked = np.empty((n_users, 2 * size, 2 * size), dtype=complex)
    lower_diag = (cap / rho) if frozen else (1.0 / rho)
    idx = np.arange(size)
    for k in range(n_users):
        gram = workspace.gram[k]
        prec = np.empty((2 * size, 2 * size), dtype=complex)
        prec[:size, :size] = gram
        prec[:size, size:] = gram
        prec[size:, :size] = gram
        prec[size:, size:] = gram
        prec[idx, idx] += 1.0
        prec[size + idx, size + idx] += lower_diag
        cov, _ = _hermitian_inverse(prec)
        cov_stacked[k] = cov
        rhs = np.concatenate((workspace.proj[k], workspace.proj[k]))
        mean_stacked[k] = cov @ rhs

    state = VariationalState(
        mean_stacked=mean_stacked,
        cov_stacked=cov_stacked,
        noise_shape=1.0,
        noise_rate=1.0,
        shared_shape=np.ones((n_groups, size)),
        shared_rate=np.ones((n_groups, size)),
        indiv_shape=np.ones((n_users, size)),
        indiv_rate=np.ones((n_users, size)),
        assign_probs=assign,
        grid=workspace.grid,
        mean_w=np.empty((n_users, size), dtype=complex),
        cov_w=np.empty((n_users, size, size), dtype=complex),
        gamma_cap=cap,
        indiv_frozen=frozen,
    )
    for k in range(n_users):
        _refresh_combined(state, k)
    if hyper.assign_init == "clustered" and n_groups > 1:
        _seed_assignments(state, workspace, hyper, rng)
    return state


_PILOT_ITERATIONS = 10


def _seed_assignments(state: VariationalState, workspace: Workspace,
                      hyper: Hyperparams, rng):
    """Data-driven one-hot starting assignments.

    A near-uniform random start lets the heaviest group attract every user
    before the coefficient posteriors can tell users apart, and an emptied
    group is permanently repellent, so the start must already carry a
    composition split for the group precisions to specialize against.
    A short pilot phase with exactly uniform assignments and untouched
    individual precisions sparsifies the shared-block moments; a seeded
    k-means over those fingerprints then hard-assigns the groups.
    """
    n_users, n_groups = state.assign_probs.shape
    state.assign_probs = np.full((n_users, n_groups), 1.0 / n_groups)
    for _ in range(_PILOT_ITERATIONS):
        update_noise(state, workspace, hyper)
        update_weights(state, workspace, hyper)
        update_shared_precisions(state, hyper)
    prints, _ = stacked_second_moments(state)
    prints = prints / np.maximum(prints.sum(axis=1, keepdims=True), 1e-300)
    centers = [prints[int(rng.integers(n_users))]]
    while len(centers) < n_groups:
        dist = np.min([np.sum((prints - c) ** 2, axis=1) for c in centers], axis=0)
        centers.append(prints[int(np.argmax(dist))])
    centers = np.array(centers)
    labels = np.zeros(n_users, dtype=int)
    for _ in range(20):
        dist = ((prints[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        fresh = np.argmin(dist, axis=1)
        if np.array_equal(fresh, labels):
            break
        labels = fresh
        for g in range(n_groups):
            members = labels == g
            if members.any():
                centers[g] = prints[members].mean(axis=0)
    onehot = np.zeros((n_users, n_groups))
    onehot[np.arange(n_users), labels] = 1.0
    state.assign_probs = onehot


def update_noise(state: VariationalState, workspace: Workspace,
                 hyper: Hyperparams):
    """Gamma update of the noise precision from the current coefficient
    moments; returns (shape, rate, mean)."""
    n_users, n_pilots = workspace.received.shape
    resid, trace = residual_and_trace(state, workspace)
    rate = hyper.prior_rate + float(np.sum(resid + trace))
    if rate <= 0:
        raise NumericalError("noise_rate", rate)
    state.noise_shape = hyper.prior_shape + n_users * n_pilots
    state.noise_rate = rate
    return state.noise_shape, state.noise_rate, state.noise_mean


def update_weights(state: VariationalState, workspace: Workspace,
                   hyper: Hyperparams):
    """Gaussian update of every user's stacked coefficient posterior.

    The precision couples the two blocks through the shared sensing
    matrix; the prior diagonal carries the mixed shared precisions on the
    first block and the scaled individual precisions on the second.
    """
    size = state.grid.size
    rho = hyper.individual_scale
    alpha = state.noise_mean
    mixed = state.assign_probs @ state.shared_mean      # (K, L)
    indiv = state.indiv_mean / rho                       # (K, L)
    n_users = state.mean_stacked.shape[0]
    idx = np.arange(size)
    buffer = np.empty((2 * size, 2 * size), dtype=complex, order="F")
    rhs = np.empty(2 * size, dtype=complex)
    strict_lower = np.tril(np.ones((2 * size, 2 * size), dtype=bool), -1)
    for k in range(n_users):
        def fill(buf, k=k):
            gram = workspace.gram[k]
            buf[:size, :size] = gram
            buf[:size, size:] = gram
            buf[size:, :size] = gram
            buf[size:, size:] = gram
            buf *= alpha
            buf[idx, idx] += mixed[k]
            buf[size + idx, size + idx] += indiv[k]
        fill(buffer)
        _invert_psd_inplace(buffer, fill, state.cov_stacked[k], strict_lower)
        rhs[:size] = workspace.proj[k]
        rhs[size:] = workspace.proj[k]
        state.mean_stacked[k] = alpha * (state.cov_stacked[k] @ rhs)
        _refresh_combined(state, k)


def update_shared_precisions(state: VariationalState, hyper: Hyperparams):
    """Gamma update of the per-group shared precisions.

    Every user contributes its block second moments weighted by its
    current assignment probability; the log-mean byproduct feeds the
    assignment update.
    """
    s_shared, _ = stacked_second_moments(state)
    counts = state.assign_probs.sum(axis=0)              # (G,)
    state.shared_shape = np.broadcast_to(
        hyper.prior_shape + counts[:, None], state.shared_shape.shape).copy()
    state.shared_rate = hyper.prior_rate + state.assign_probs.T @ s_shared
    if np.any(state.shared_rate <= 0):
        raise NumericalError("shared_rate", float(state.shared_rate.min()))


def update_individual_precisions(state: VariationalState, hyper: Hyperparams):
    """Gamma update of the per-user individual precisions.

    The shape adds the user count under the "pooled" rule or one under the
    exact "per_user" rule; the rate always carries the scaled second
    moments of the individual block.
    """
    if state.indiv_frozen:
        return
    _, s_indiv = stacked_second_moments(state)
    n_users = state.mean_stacked.shape[0]
    added = n_users if hyper.indiv_shape_rule == "pooled" else 1
    state.indiv_shape = np.full(state.indiv_shape.shape, hyper.prior_shape + added)
    state.indiv_rate = hyper.prior_rate + s_indiv / hyper.individual_scale
    if np.any(state.indiv_rate <= 0):
        raise NumericalError("indiv_rate", float(state.indiv_rate.min()))


def update_assignments(state: VariationalState, hyper: Hyperparams):
    """Categorical update of the group assignment probabilities via an
    overflow-safe softmax of the per-group affinity scores."""
    s_shared, _ = stacked_second_moments(state)
    row_logmean = state.shared_log_mean.sum(axis=1)          # (G,)
    scores = row_logmean[None, :] - s_shared @ (state.shared_shape / state.shared_rate).T
    state.assign_probs = _softmax_rows(scores)


@dataclass
class PosteriorSummary:
    """Final grouping, reconstructed channels, and run diagnostics."""

    group_labels: np.ndarray        # (K,) in 1..G
    channels: np.ndarray            # (K, N) complex
    elbo: float
    iterations: int
    supports: list

    @property
    def n_users(self) -> int:
        return self.group_labels.size


def extract_groups(state: VariationalState, threshold: float = 0.01):
    """Hard group labels (ties resolve to the lowest index) and per-user
    supports thresholded at a fraction of the peak coefficient energy."""
    labels = np.argmax(state.assign_probs, axis=1) + 1
    supports = []
    for k in range(state.mean_w.shape[0]):
        energy = np.abs(state.mean_w[k]) ** 2
        peak = float(energy.max()) if energy.size else 0.0
        if peak == 0.0:
            warnings.warn(f"user {k}: all-zero posterior mean, empty support",
                          RuntimeWarning)
            supports.append(np.empty(0, dtype=int))
        else:
            supports.append(np.flatnonzero(energy >= threshold * peak))
    return labels, supports


def reconstruct_channels(state: VariationalState, workspace: Workspace,
                         supports=None, threshold: float = 0.01) -> np.ndarray:
    """Least-squares channel estimates on each user's support columns.

    Falls back to the dictionary-weighted posterior mean when the support
    exceeds the pilot count (underdetermined least squares).
    """
    if supports is None:
        _, supports = extract_groups(state, threshold)
    n_users = state.mean_w.shape[0]
    n_pilots = workspace.pilots.shape[0]
    channels = np.zeros((n_users, workspace.geometry.n_elements), dtype=complex)
    for k in range(n_users):
        idx = supports[k]
        if idx.size == 0:
            warnings.warn(f"user {k}: empty support, zero channel estimate",
                          RuntimeWarning)
            continue
        if idx.size > n_pilots:
            warnings.warn(f"user {k}: support larger than pilot count, "
                          "using posterior-mean reconstruction", RuntimeWarning)
            channels[k] = workspace.dictionaries[k] @ state.mean_w[k]
            continue
        coeffs, *_ = np.linalg.lstsq(workspace.sensing[k][:, idx],
                                     workspace.received[k], rcond=1e-10)
        channels[k] = workspace.dictionaries[k][:, idx] @ coeffs
    return channels


def export_state_csv(state: VariationalState, trace, out_dir):
    """Debug snapshot: bound trace, precision-mean heatmaps, and the
    assignment matrix, one CSV each."""
    import csv
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "bound_trace.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iteration", "bound"])
        for i, value in enumerate(np.atleast_1d(trace)):
            writer.writerow([i, repr(float(value))])

    def dump_matrix(name, matrix, row_label):
        with open(out / name, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow([row_label] + [f"col{l}" for l in range(matrix.shape[1])])
            for r in range(matrix.shape[0]):
                writer.writerow([r] + [repr(float(v)) for v in matrix[r]])

    dump_matrix("shared_precision_means.csv", np.asarray(state.shared_mean), "group")
    dump_matrix("indiv_precision_means.csv", np.asarray(state.indiv_mean), "user")
    dump_matrix("assign_probs.csv", state.assign_probs, "user")
    return out


def run_inference(hyper: Hyperparams, observations: ObservationSet,
                  geometry: ArrayGeometry, grid: AngleGrid | None = None,
                  initial_state: VariationalState | None = None):
    """Run the alternating updates to convergence.

    Returns (state, summary, bound trace).  Stops when the largest
    relative change of any user's combined posterior mean drops below
    ``tol`` or after ``max_iters`` iterations.  With refinement disabled
    and exact update rules in effect, a bound decrease beyond 1e-6
    relative raises InferenceDivergenceError rather than passing silently.
    A provided ``initial_state`` is advanced in place and its grid is used.
    """
    eff = hyper
    if eff.mode == "common" and eff.n_groups != 1:
        eff = replace(eff, n_groups=1)
    if eff.grid_size is None:
        eff = replace(eff, grid_size=geometry.n_elements)
    if initial_state is not None:
        grid = initial_state.grid
    elif grid is None:
        grid = AngleGrid.for_geometry(geometry, eff.grid_size, observations.n_users)
    workspace = Workspace(observations, geometry, grid)
    if initial_state is not None:
        state = initial_state
    else:
        state = init_state(eff, workspace)

    guarded = (not eff.offgrid_enabled
               and (eff.mode != "general" or eff.indiv_shape_rule == "per_user"))
    tracking = eff.track_elbo or guarded
    trace = [compute_elbo(state, workspace, eff)] if tracking else []

    iterations = 0
    for i in range(eff.max_iters):
        previous = state.mean_w.copy()
        update_noise(state, workspace, eff)
        update_weights(state, workspace, eff)
        update_shared_precisions(state, eff)
        if eff.mode == "general":
            update_individual_precisions(state, eff)
        update_assignments(state, eff)
        if eff.offgrid_enabled:
            refine_iteration(state, workspace, eff.step, i)
        if tracking:
            bound = compute_elbo(state, workspace, eff)
            if guarded and bound < trace[-1] - 1e-6 * abs(trace[-1]):
                raise InferenceDivergenceError(
                    f"bound fell from {trace[-1]:.12g} to {bound:.12g} "
                    f"at iteration {i}")
            trace.append(bound)
        iterations = i + 1
        norms = np.linalg.norm(previous, axis=1)
        deltas = np.linalg.norm(state.mean_w - previous, axis=1)
        rel = deltas / np.maximum(norms, 1e-300)
        # The floor keeps a near-unit noise precision at the start (which
        # makes the first coefficient update echo the initialization) from
        # stopping the run before the precision updates have taken hold.
        if iterations >= eff.min_iters and float(rel.max()) < eff.tol:
            break

    if not tracking:
        trace = [compute_elbo(state, workspace, eff)]
    labels, supports = extract_groups(state, eff.support_threshold)
    channels = reconstruct_channels(state, workspace, supports)
    summary = PosteriorSummary(group_labels=labels, channels=channels,
                               elbo=trace[-1], iterations=iterations,
                               supports=supports)
    return state, summary, np.asarray(trace)
