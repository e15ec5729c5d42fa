"""Evidence-lower-bound evaluation for the factorized posterior.

The bound is assembled from closed-form Gaussian, gamma, and categorical
expectations and entropies, as a pure function of the current variational
parameters.  Coordinate updates must never decrease it (up to round-off)
when the exact per-user precision update rule is in effect and no angle
refinement moves are interleaved.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg.lapack import get_lapack_funcs
from scipy.special import gammaln

from .special import digamma

LOG_PI = float(np.log(np.pi))


def _logdets_psd(matrices: np.ndarray) -> np.ndarray:
    """Log determinants of a stack of Hermitian PD matrices."""
    potrf, = get_lapack_funcs(("potrf",), (matrices[0],))
    out = np.empty(matrices.shape[0])
    for k in range(matrices.shape[0]):
        factor, info = potrf(matrices[k], lower=1, overwrite_a=0, clean=0)
        if info != 0:
            raise np.linalg.LinAlgError(f"matrix {k} is not positive definite")
        out[k] = 2.0 * float(np.sum(np.log(np.diagonal(factor).real)))
    return out


class NumericalError(RuntimeError):
    """A bound term evaluated to a non-finite value."""

    def __init__(self, term: str, value):
        super().__init__(f"non-finite bound term {term!r}: {value}")
        self.term = term


def gamma_entropy(shape, rate):
    """Differential entropy of a gamma distribution (shape/rate form)."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    return shape - np.log(rate) + gammaln(shape) + (1.0 - shape) * digamma(shape)


def stacked_second_moments(state):
    """Per-entry posterior second moments of the two coefficient blocks.

    Returns (s_shared, s_indiv), each (K, L): |mean|^2 plus the covariance
    diagonal of the corresponding block.
    """
    size = state.grid.size
    diag = np.einsum("kii->ki", state.cov_stacked).real
    s_shared = np.abs(state.mean_stacked[:, :size]) ** 2 + diag[:, :size]
    s_indiv = np.abs(state.mean_stacked[:, size:]) ** 2 + diag[:, size:]
    return s_shared, s_indiv


def residual_and_trace(state, workspace):
    """Expected data misfit split into the mean residual energy and the
    covariance trace term, one entry per user."""
    fitted = np.matmul(workspace.sensing, state.mean_w[:, :, None])[..., 0]
    resid = np.sum(np.abs(workspace.received - fitted) ** 2, axis=1)
    trace = np.einsum("kij,kji->k", state.cov_w, workspace.gram).real
    return resid, trace


def compute_elbo(state, workspace, hyper) -> float:
    """Evaluate the bound for the current variational state.

    Gamma-factor means enter exactly (no cap), so the value is the true
    bound of the current factors.  When the individual precisions are
    frozen, they act as a deterministic prior precision and contribute no
    prior or entropy terms of their own.

    Raises NumericalError naming the first non-finite term.
    """
    a = hyper.prior_shape
    b = hyper.prior_rate
    rho = hyper.individual_scale
    n_users, n_pilots = workspace.received.shape
    size = state.grid.size
    n_groups = state.assign_probs.shape[1]

    s_shared, s_indiv = stacked_second_moments(state)
    resid, trace = residual_and_trace(state, workspace)

    alpha_hat = state.noise_shape / state.noise_rate
    eln_alpha = digamma(state.noise_shape) - np.log(state.noise_rate)
    shared_hat = state.shared_shape / state.shared_rate
    eln_shared = digamma(state.shared_shape) - np.log(state.shared_rate)

    terms = {}
    terms["likelihood"] = (n_users * n_pilots * (eln_alpha - LOG_PI)
                           - alpha_hat * float(np.sum(resid + trace)))
    terms["noise_prior"] = (a * np.log(b) - gammaln(a)
                            + (a - 1.0) * eln_alpha - b * alpha_hat)

    row_logmean = eln_shared.sum(axis=1)                       # (G,)
    quad = s_shared @ shared_hat.T                             # (K, G)
    terms["shared_coeff_prior"] = (
        float(np.sum(state.assign_probs * row_logmean[None, :]))
        - n_users * size * LOG_PI
        - float(np.sum(state.assign_probs * quad)))

    if state.indiv_frozen:
        cap = state.gamma_cap
        terms["indiv_coeff_prior"] = float(
            n_users * size * (np.log(cap) - np.log(np.pi * rho))
            - (cap / rho) * np.sum(s_indiv))
    else:
        indiv_hat = state.indiv_shape / state.indiv_rate
        eln_indiv = digamma(state.indiv_shape) - np.log(state.indiv_rate)
        terms["indiv_coeff_prior"] = float(
            np.sum(eln_indiv) - n_users * size * np.log(np.pi * rho)
            - np.sum(indiv_hat * s_indiv) / rho)
        terms["indiv_prec_prior"] = float(np.sum(
            a * np.log(b) - gammaln(a) + (a - 1.0) * eln_indiv - b * indiv_hat))
        terms["indiv_prec_entropy"] = float(np.sum(
            gamma_entropy(state.indiv_shape, state.indiv_rate)))

    terms["shared_prec_prior"] = float(np.sum(
        a * np.log(b) - gammaln(a) + (a - 1.0) * eln_shared - b * shared_hat))
    terms["assign_prior"] = -n_users * float(np.log(n_groups))

    terms["noise_entropy"] = float(gamma_entropy(state.noise_shape, state.noise_rate))
    try:
        logdets = _logdets_psd(state.cov_stacked)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("coeff_entropy", str(exc)) from exc
    terms["coeff_entropy"] = float(
        n_users * 2 * size * (LOG_PI + 1.0) + np.sum(logdets))
    terms["shared_prec_entropy"] = float(np.sum(
        gamma_entropy(state.shared_shape, state.shared_rate)))
    probs = state.assign_probs
    plogp = np.where(probs > 0.0, probs * np.log(np.maximum(probs, 1e-300)), 0.0)
    terms["assign_entropy"] = -float(np.sum(plogp))

    total = 0.0
    for name, value in terms.items():
        if not np.isfinite(value):
            raise NumericalError(name, value)
        total += value
    return float(total)
