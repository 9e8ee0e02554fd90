"""Frequency-domain data, Cholesky-parameterised spectra and the Whittle likelihood.

The inverse spectral matrix is factored as f^{-1} = Theta Psi^{-1} Theta* with
Theta complex unit-lower-triangular and Psi^{-1} positive diagonal.  The
component functions theta_kl sampled by the MCMC are regression coefficients
(channel l regressed on the later channels), so the Cholesky factor entry is
Theta_kl = -conj(theta_kl); `cholesky_factor` applies that map.  The residual
quantities v_kjm feeding the diagonal-coefficient updates expand to squared
moduli of the whitened residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import FrequencyGrid
from .dataset import MultiSubjectSeries
from .errors import NumericalError, ValidationError

MAX_CONDITION = 1e14


@dataclass(frozen=True)
class DftData:
    """Per-subject DFT coefficients Y[j, m, p] on a Fourier grid."""

    Y: np.ndarray              # complex (N, M, P)
    grid: FrequencyGrid

    def __post_init__(self):
        if self.Y.ndim != 3:
            raise ValidationError("Y must be (subjects, frequencies, channels)")
        if self.Y.shape[1] != self.grid.M:
            raise ValidationError("frequency axis does not match grid.M")

    @property
    def n_subjects(self) -> int:
        return self.Y.shape[0]

    @property
    def n_channels(self) -> int:
        return self.Y.shape[2]


def dft(series: MultiSubjectSeries) -> DftData:
    """DFT at omega_m = m/n, m = 1..floor((n-1)/2); excludes mean and Nyquist.

    Convention: Y_m = n^{-1/2} sum_{t=1..n} X_t exp(-2 pi i m t / n), i.e. the
    time index starts at 1, which contributes the phase exp(-2 pi i m / n)
    relative to an FFT of the 0-based array.
    """
    grid = FrequencyGrid.for_length(series.n_time)
    x = series.data                     # (N, n, P)
    n = series.n_time
    spec = np.fft.rfft(x, axis=1)[:, 1:grid.M + 1, :]
    phase = np.exp(-2j * np.pi * grid.omegas)[None, :, None]
    return DftData(Y=spec * phase / np.sqrt(n), grid=grid)


def periodogram(dft_data: DftData, j: int, m: int) -> np.ndarray:
    """Rank-one periodogram matrix Y_jm Y_jm* (Hermitian PSD)."""
    y = dft_data.Y[j, m]
    return np.outer(y, y.conj())


@dataclass(frozen=True)
class CholeskyComponents:
    """One modified-Cholesky pair: unit-lower Theta and the Psi^{-1} diagonal."""

    theta: np.ndarray        # complex (..., P, P), unit lower triangular
    psi_inv: np.ndarray      # positive (..., P)


def spectrum_to_cholesky(f) -> CholeskyComponents:
    """Unique (Theta, Psi^{-1}) with f^{-1} = Theta Psi^{-1} Theta*.

    Accepts a single Hermitian PD matrix or a stack of them.
    """
    f = np.asarray(f, dtype=complex)
    if f.shape[-1] != f.shape[-2]:
        raise ValidationError("spectral matrices must be square")
    if np.max(np.abs(f - np.conj(np.swapaxes(f, -1, -2)))) > 1e-8 * max(np.max(np.abs(f)), 1.0):
        raise ValidationError("spectral matrix is not Hermitian")
    try:
        g = np.linalg.inv(f)
        # symmetrise before factoring; inv need not return exact Hermitian
        g = 0.5 * (g + np.conj(np.swapaxes(g, -1, -2)))
        low = np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"spectral matrix not positive definite: {exc}") from None
    diag = np.diagonal(low, axis1=-2, axis2=-1).real
    theta = low / diag[..., None, :]
    return CholeskyComponents(theta=theta, psi_inv=diag ** 2)


def cholesky_to_spectrum(components: CholeskyComponents) -> np.ndarray:
    """f = (Theta Psi^{-1} Theta*)^{-1}; raises on near-singular factors."""
    theta = np.asarray(components.theta, dtype=complex)
    psi_inv = np.asarray(components.psi_inv, dtype=float)
    if np.any(psi_inv <= 0):
        raise ValidationError("psi_inv entries must be positive")
    finv = (theta * psi_inv[..., None, :]) @ np.conj(np.swapaxes(theta, -1, -2))
    cond = np.linalg.cond(finv)
    if np.any(~np.isfinite(cond)) or np.any(cond > MAX_CONDITION):
        raise NumericalError("Theta Psi^{-1} Theta* numerically singular")
    f = np.linalg.inv(finv)
    return 0.5 * (f + np.conj(np.swapaxes(f, -1, -2)))


def cholesky_factor(theta_components, n_channels: int):
    """Cholesky-factor entries from sampled component functions.

    `theta_components` maps (k, l) with 1-based k > l to arrays of
    theta_kl values; entries of the factor are Theta_kl = -conj(theta_kl).
    Returns a stack (..., P, P) of unit-lower-triangular matrices.
    """
    shape = np.broadcast_shapes(*(np.shape(v) for v in theta_components.values())) \
        if theta_components else ()
    out = np.zeros(shape + (n_channels, n_channels), dtype=complex)
    idx = np.arange(n_channels)
    out[..., idx, idx] = 1.0
    for (k, l), val in theta_components.items():
        out[..., k - 1, l - 1] = -np.conj(val)
    return out


def spectra_from_components(theta_components, psi_inv, n_channels: int) -> np.ndarray:
    """Spectral matrices from component functions, in closed form.

    With B = Theta^{-1} (unit lower) and psi = 1/psi_inv,
    f = B* diag(psi) B; for P <= 3 the B entries are short polynomials in the
    theta_kl, which keeps the reconstruction elementwise and fast.
    """
    psi = [1.0 / np.asarray(psi_inv[k], dtype=float) for k in range(1, n_channels + 1)]
    if n_channels == 1:
        return psi[0][..., None, None].astype(complex)
    t21 = np.asarray(theta_components[(2, 1)], dtype=complex)
    # B = Theta^{-1} with Theta_kl = -conj(theta_kl):  B_21 = conj(theta_21),
    # B_32 = conj(theta_32), B_31 = conj(theta_31 + theta_32 theta_21).
    if n_channels == 2:
        b21 = np.conj(t21)
        shape = np.broadcast_shapes(b21.shape, psi[0].shape, psi[1].shape)
        f = np.empty(shape + (2, 2), dtype=complex)
        f[..., 0, 0] = psi[0] + psi[1] * np.abs(b21) ** 2
        f[..., 1, 1] = psi[1]
        f[..., 0, 1] = np.conj(b21) * psi[1]
        f[..., 1, 0] = np.conj(f[..., 0, 1])
        return f
    if n_channels == 3:
        t31 = np.asarray(theta_components[(3, 1)], dtype=complex)
        t32 = np.asarray(theta_components[(3, 2)], dtype=complex)
        b21 = np.conj(t21)
        b32 = np.conj(t32)
        b31 = np.conj(t31 + t32 * t21)
        shape = np.broadcast_shapes(b21.shape, b31.shape, b32.shape,
                                    psi[0].shape, psi[1].shape, psi[2].shape)
        f = np.empty(shape + (3, 3), dtype=complex)
        f[..., 0, 0] = psi[0] + psi[1] * np.abs(b21) ** 2 + psi[2] * np.abs(b31) ** 2
        f[..., 1, 1] = psi[1] + psi[2] * np.abs(b32) ** 2
        f[..., 2, 2] = psi[2]
        f[..., 0, 1] = np.conj(b21) * psi[1] + np.conj(b31) * psi[2] * b32
        f[..., 0, 2] = np.conj(b31) * psi[2]
        f[..., 1, 2] = np.conj(b32) * psi[2]
        f[..., 1, 0] = np.conj(f[..., 0, 1])
        f[..., 2, 0] = np.conj(f[..., 0, 2])
        f[..., 2, 1] = np.conj(f[..., 1, 2])
        return f
    raise ValidationError("spectra_from_components supports P in {1, 2, 3}")


def whittle_loglik(dft_data: DftData, f_eval) -> float:
    """Conditional Whittle log likelihood sum_{j,m} [log|f^{-1}| - Y* f^{-1} Y]."""
    y = dft_data.Y
    f = np.asarray(f_eval, dtype=complex)
    if f.shape != y.shape + (y.shape[-1],):
        raise ValidationError("f_eval must be (N, M, P, P)")
    try:
        low = np.linalg.cholesky(f)
    except np.linalg.LinAlgError:
        raise NumericalError("spectral matrix not positive definite") from None
    z = np.linalg.solve(low, y[..., None])[..., 0]
    quad = np.sum(np.abs(z) ** 2)
    logdet = 2.0 * np.sum(np.log(np.diagonal(low, axis1=-2, axis2=-1).real))
    return float(-logdet - quad)


def residual_v(k: int, dft_data: DftData, theta_components) -> np.ndarray:
    """Residual quantities v_kjm for the diagonal-coefficient conditionals.

    Literal expansion (P = 3; drop the theta_31 terms for P = 2):
        v_1 = |Y1|^2 + |t21 Y2|^2 + |t31 Y3|^2
              - 2 Re{t21 Y1* Y2 + t31 Y1* Y3 - conj(t21) t31 Y2* Y3}
        v_2 = |Y2|^2 + |t32 Y3|^2 - 2 Re{t32 Y2* Y3}
        v_3 = |Y3|^2
    which equal |Y_l - sum_{k>l} theta_kl Y_k|^2; nonnegative by construction.
    """
    y = dft_data.Y
    n_ch = y.shape[-1]
    if not 1 <= k <= n_ch:
        raise ValidationError(f"channel index {k} outside 1..{n_ch}")
    if k == n_ch:
        return np.abs(y[..., k - 1]) ** 2
    y1 = y[..., k - 1]
    if k == 1:
        t21 = theta_components[(2, 1)]
        y2 = y[..., 1]
        v = np.abs(y1) ** 2 + np.abs(t21 * y2) ** 2
        cross = t21 * np.conj(y1) * y2
        if n_ch == 3:
            t31 = theta_components[(3, 1)]
            y3 = y[..., 2]
            v = v + np.abs(t31 * y3) ** 2
            cross = cross + t31 * np.conj(y1) * y3 - np.conj(t21) * t31 * np.conj(y2) * y3
        return v - 2.0 * cross.real
    if k == 2 and n_ch == 3:
        t32 = theta_components[(3, 2)]
        y2, y3 = y[..., 1], y[..., 2]
        return (np.abs(y2) ** 2 + np.abs(t32 * y3) ** 2
                - 2.0 * (t32 * np.conj(y2) * y3).real)
    raise ValidationError(f"no residual defined for channel {k} with P={n_ch}")
