"""Scalar special functions needed by the gamma-posterior updates."""

import numpy as np

# Bernoulli-number coefficients B_{2n}/(2n) of the asymptotic expansion,
# highest order last.  Six terms keep the error below 1e-13 once the
# argument has been shifted to >= 6.
_ASYMPTOTIC_COEFFS = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
)

_SHIFT_TO = 6.0


def digamma(x):
    """Digamma (derivative of log-gamma) for positive real arguments.

    Small arguments are shifted upward with the recurrence
    psi(x) = psi(x + 1) - 1/x until x >= 6, then the asymptotic series
    ln x - 1/(2x) - sum_n B_{2n} / (2n x^{2n}) is evaluated.
    Accepts scalars or arrays; accurate to about 1e-12.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0.0):
        raise ValueError("digamma requires strictly positive arguments")
    scalar = arr.ndim == 0
    work = np.atleast_1d(arr).astype(float).copy()
    acc = np.zeros_like(work)
    # Each pass lifts every remaining small argument by one; at most six
    # passes are needed to move anything positive past the threshold.
    mask = work < _SHIFT_TO
    while np.any(mask):
        acc[mask] -= 1.0 / work[mask]
        work[mask] += 1.0
        mask = work < _SHIFT_TO
    inv_sq = 1.0 / (work * work)
    series = np.zeros_like(work)
    for coeff in reversed(_ASYMPTOTIC_COEFFS):
        series = (series + coeff) * inv_sq
    result = acc + np.log(work) - 0.5 / work - series
    if scalar:
        return float(result[0])
    return result.reshape(arr.shape)
