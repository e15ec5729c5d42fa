"""Reference recoverers: per-user standard SBL, greedy joint pursuit, and a
genie-aided least-squares bound."""

from __future__ import annotations

import numpy as np

from .arrays import ArrayGeometry, steering
from .vbi import Hyperparams, _hermitian_inverse


def individual_sbl(received: np.ndarray, pilots: np.ndarray,
                   dictionary: np.ndarray, hyper: Hyperparams | None = None):
    """Classic single-vector SBL on a fixed on-grid dictionary.

    Iterates the Gaussian coefficient posterior against gamma updates for
    one precision vector plus the noise precision; stops on the relative
    change of the posterior mean.  Returns (mean, support, channel
    estimate, iterations).
    """
    hyper = hyper or Hyperparams()
    a, b = hyper.prior_shape, hyper.prior_rate
    sensing = pilots @ dictionary
    n_pilots, size = sensing.shape
    gram = sensing.conj().T @ sensing
    proj = sensing.conj().T @ received

    # Start from the same regularized solution the joint engine uses.
    cov, _ = _hermitian_inverse(gram + np.eye(size, dtype=complex))
    mean = cov @ proj
    noise_shape, noise_rate = 1.0, 1.0
    prec_shape = np.ones(size)
    prec_rate = np.ones(size)

    iterations = 0
    for _ in range(hyper.max_iters):
        previous = mean.copy()
        resid = float(np.sum(np.abs(received - sensing @ mean) ** 2))
        trace = float(np.sum(cov * gram.T).real)
        noise_shape = a + n_pilots
        noise_rate = b + resid + trace
        alpha = min(noise_shape / noise_rate, hyper.precision_cap)
        gamma = np.minimum(prec_shape / prec_rate, hyper.precision_cap)
        system = alpha * gram + np.diag(gamma.astype(complex))
        cov, _ = _hermitian_inverse(system)
        mean = alpha * (cov @ proj)
        second = np.abs(mean) ** 2 + np.diagonal(cov).real
        prec_shape = np.full(size, a + 1.0)
        prec_rate = b + second
        iterations += 1
        denom = max(float(np.linalg.norm(previous)), 1e-300)
        if (iterations >= hyper.min_iters
                and float(np.linalg.norm(mean - previous)) / denom < hyper.tol):
            break

    energy = np.abs(mean) ** 2
    peak = float(energy.max()) if energy.size else 0.0
    if peak == 0.0:
        support = np.empty(0, dtype=int)
        estimate = np.zeros(dictionary.shape[0], dtype=complex)
    else:
        support = np.flatnonzero(energy >= hyper.support_threshold * peak)
        if support.size > n_pilots:
            estimate = dictionary @ mean
        else:
            coeffs, *_ = np.linalg.lstsq(sensing[:, support], received, rcond=1e-10)
            estimate = dictionary[:, support] @ coeffs
    return mean, support, estimate, iterations


def joint_omp(received: np.ndarray, pilots: np.ndarray, dictionary: np.ndarray,
              sparsity_common: int, sparsity_individual: int):
    """Two-stage greedy pursuit over multiple users.

    Stage one picks atoms maximizing the summed squared correlation across
    all users' residuals, refitting every user jointly after each pick.
    Stage two lets each user add atoms against its own residual.  Channel
    estimates come from least squares on the final per-user supports.
    Returns (supports, estimates (K, N)).
    """
    if sparsity_common < 0 or sparsity_individual < 0:
        raise ValueError("sparsity budgets must be nonnegative")
    sensing = pilots @ dictionary
    n_pilots = sensing.shape[0]
    if sparsity_common + sparsity_individual > n_pilots:
        raise ValueError("sparsity budget exceeds the pilot count")
    n_users = received.shape[0]

    def refit(indices, y):
        if not indices:
            return y.copy()
        coeffs, *_ = np.linalg.lstsq(sensing[:, indices], y, rcond=None)
        return y - sensing[:, indices] @ coeffs

    shared: list[int] = []
    residuals = received.copy()
    for _ in range(sparsity_common):
        corr = residuals @ np.conj(sensing)             # (K, L)
        scores = np.sum(np.abs(corr) ** 2, axis=0)
        scores[shared] = -np.inf
        if not np.isfinite(scores.max()) or scores.max() <= 0.0:
            break
        shared.append(int(np.argmax(scores)))
        for k in range(n_users):
            residuals[k] = refit(shared, received[k])

    supports = []
    estimates = np.zeros((n_users, dictionary.shape[0]), dtype=complex)
    for k in range(n_users):
        chosen = list(shared)
        resid = refit(chosen, received[k])
        for _ in range(sparsity_individual):
            scores = np.abs(resid @ np.conj(sensing)) ** 2
            scores[chosen] = -np.inf
            if not np.isfinite(scores.max()) or scores.max() <= 0.0:
                break
            chosen.append(int(np.argmax(scores)))
            resid = refit(chosen, received[k])
        idx = np.array(sorted(chosen), dtype=int)
        supports.append(idx)
        if idx.size:
            coeffs, *_ = np.linalg.lstsq(sensing[:, idx], received[k], rcond=None)
            estimates[k] = dictionary[:, idx] @ coeffs
    return supports, estimates


def genie_ls(received: np.ndarray, pilots: np.ndarray, geometry: ArrayGeometry,
             azimuths: np.ndarray, elevations: np.ndarray | None = None) -> np.ndarray:
    """Least squares on the true steering columns at the true angles.

    A simulation-only lower-bound reference; any practical estimator's
    error should exceed it on average.
    """
    columns = []
    for i, az in enumerate(np.atleast_1d(azimuths)):
        elev = float(elevations[i]) if elevations is not None else 0.0
        columns.append(steering(geometry, float(az), elev))
    basis = np.stack(columns, axis=1)
    sensing = pilots @ basis
    coeffs, *_ = np.linalg.lstsq(sensing, received, rcond=1e-10)
    return basis @ coeffs
