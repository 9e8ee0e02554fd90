"""Posterior functionals: spectral surfaces and band-collapsed curves.

Every functional is evaluated per retained draw and then summarised by the
sample mean and the 2.5/97.5 empirical percentiles (order statistics at index
ceil(alpha * S), no interpolation).  Band membership on the Fourier grid is
half-open [lo, hi), and all band operations use in-band averages, so LF/HF is
a ratio of band averages and a flat spectrum gives ratio 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .sampler import PosteriorDraws, theta_block_order
from .whittle import spectra_from_components

logger = logging.getLogger("condspec")

HF_BAND = (0.15, 0.40)
LF_BAND = (0.04, 0.15)
DEFAULT_U_GRID = 101
COHERENCE_CLAMP = 1e-12


@dataclass(frozen=True)
class SurfaceEstimate:
    """Pointwise posterior summary of a surface over an (omega, u) grid."""

    omegas: np.ndarray
    us: np.ndarray
    mean: np.ndarray       # (n_omega, n_u)
    lower95: np.ndarray
    upper95: np.ndarray
    scale: str


@dataclass(frozen=True)
class BandCurve:
    """Pointwise posterior summary of a band-collapsed curve over u."""

    us: np.ndarray
    mean: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray
    band: tuple
    kind: str


def default_u_grid(num: int = DEFAULT_U_GRID) -> np.ndarray:
    return np.linspace(0.0, 1.0, num)


def percentile_bounds(values, alpha: float = 0.025):
    """Empirical order-statistic bounds at levels alpha and 1 - alpha.

    The k-th order statistic with k = ceil(level * S), 1-based, no
    interpolation: with 1500 draws the lower bound is the 38th smallest.
    """
    values = np.asarray(values)
    s = values.shape[0]
    if s < 1:
        raise ValidationError("no draws to summarise")
    srt = np.sort(values, axis=0)
    k_lo = max(math.ceil(alpha * s), 1)
    k_hi = max(math.ceil((1.0 - alpha) * s), 1)
    return srt[k_lo - 1], srt[k_hi - 1]


def _summarise(values, check_label=None):
    mean = values.mean(axis=0)
    lo, hi = percentile_bounds(values)
    if check_label is not None:
        outside = (mean < lo) | (mean > hi)
        if np.any(outside):
            logger.warning("%s: posterior mean exits the central 95%% band at %d points",
                           check_label, int(outside.sum()))
    return mean, lo, hi


def _component_draws(draws: PosteriorDraws, rows):
    """theta and psi_inv component values at given design rows, per draw."""
    theta = {}
    for kl in theta_block_order(draws.n_channels):
        theta[kl] = draws.eta_r[kl] @ rows.T + 1j * (draws.eta_i[kl] @ rows.T)
    psi_inv = {}
    for k in range(1, draws.n_channels + 1):
        with np.errstate(over="ignore"):
            psi_inv[k] = np.exp(draws.eta_d[k] @ rows.T)
    return theta, psi_inv


def _f_draws_at(draws: PosteriorDraws, omegas, us):
    """Spectral matrices (S, T, P, P) at paired (omega, u) targets, all draws."""
    rows = draws.basis.rows_at(omegas, us)
    theta, psi_inv = _component_draws(draws, rows)
    f = spectra_from_components(theta, psi_inv, draws.n_channels)
    if not np.all(np.isfinite(f.view(float))):
        raise NumericalError("non-finite spectral reconstruction (psi over/underflow)")
    return f


def evaluate_spectrum_draw(draws: PosteriorDraws, s: int, targets):
    """Spectral matrices of retained draw `s` at (omega, u) pairs."""
    omegas = np.asarray([t[0] for t in targets], dtype=float)
    us = np.asarray([t[1] for t in targets], dtype=float)
    rows = draws.basis.rows_at(omegas, us)
    theta = {}
    for kl in theta_block_order(draws.n_channels):
        theta[kl] = rows @ (draws.eta_r[kl][s] + 1j * draws.eta_i[kl][s])
    psi_inv = {k: np.exp(rows @ draws.eta_d[k][s]) for k in range(1, draws.n_channels + 1)}
    f = spectra_from_components(theta, psi_inv, draws.n_channels)
    if not np.all(np.isfinite(f.view(float))):
        raise NumericalError("non-finite spectral reconstruction")
    return f


def log_spectrum_surface(draws: PosteriorDraws, p: int, omegas=None, us=None) -> SurfaceEstimate:
    """Posterior summary of log f_pp over the grid."""
    _check_channel(draws, p)
    omegas = draws.basis.freq_basis.points if omegas is None else np.asarray(omegas, float)
    us = default_u_grid() if us is None else np.asarray(us, float)
    n_om = omegas.size
    mean = np.empty((n_om, us.size))
    lo = np.empty_like(mean)
    hi = np.empty_like(mean)
    for j, u in enumerate(us):
        f = _f_draws_at(draws, omegas, np.full(n_om, u))
        vals = np.log(f[:, :, p - 1, p - 1].real)
        mean[:, j], lo[:, j], hi[:, j] = _summarise(vals, f"log-spectrum p={p}")
    return SurfaceEstimate(omegas=omegas, us=us, mean=mean, lower95=lo,
                           upper95=hi, scale="log-spectrum")


def coherence_surface(draws: PosteriorDraws, p: int, q: int, omegas=None, us=None,
                      scale: str = "logit-squared-coherence") -> SurfaceEstimate:
    """Posterior summary of (logit) squared coherence between channels p and q."""
    _check_channel(draws, p)
    _check_channel(draws, q)
    if p == q:
        raise ValidationError("coherence needs two distinct channels")
    omegas = draws.basis.freq_basis.points if omegas is None else np.asarray(omegas, float)
    us = default_u_grid() if us is None else np.asarray(us, float)
    n_om = omegas.size
    mean = np.empty((n_om, us.size))
    lo = np.empty_like(mean)
    hi = np.empty_like(mean)
    for j, u in enumerate(us):
        f = _f_draws_at(draws, omegas, np.full(n_om, u))
        rho2 = (np.abs(f[:, :, p - 1, q - 1]) ** 2
                / (f[:, :, p - 1, p - 1].real * f[:, :, q - 1, q - 1].real))
        vals = _logit(rho2) if scale.startswith("logit") else rho2
        mean[:, j], lo[:, j], hi[:, j] = _summarise(vals, f"coherence {p}{q}")
    return SurfaceEstimate(omegas=omegas, us=us, mean=mean, lower95=lo,
                           upper95=hi, scale=scale)


def _logit(rho2):
    clipped = np.clip(rho2, COHERENCE_CLAMP, 1.0 - COHERENCE_CLAMP)
    return np.log(clipped) - np.log1p(-clipped)


def band_frequencies(draws_or_omegas, band) -> np.ndarray:
    """Indices of training Fourier frequencies in the half-open band [lo, hi)."""
    lo, hi = band
    if not 0.0 < lo < hi <= 0.5:
        raise ValidationError(f"band {band} must satisfy 0 < lo < hi <= 1/2")
    omegas = (draws_or_omegas.basis.freq_basis.points
              if isinstance(draws_or_omegas, PosteriorDraws)
              else np.asarray(draws_or_omegas, dtype=float))
    idx = np.flatnonzero((omegas >= lo - 1e-12) & (omegas < hi - 1e-12))
    if idx.size == 0:
        raise ValidationError(f"no Fourier frequency falls in band {band}")
    return idx


def _band_draw_values(draws, us, bands, needs):
    """Per-draw band averages at each u.

    `needs` is a list of (name, p, q) with q == p meaning the diagonal average
    of channel p over band `bands[name]`; returns dict name -> (S, n_u) real
    or complex arrays.
    """
    union = sorted({name for name, _, _ in needs})
    idx = {name: band_frequencies(draws, bands[name]) for name in union}
    all_idx = np.unique(np.concatenate([idx[name] for name in union]))
    pos = {name: np.searchsorted(all_idx, idx[name]) for name in union}
    omegas = draws.basis.freq_basis.points[all_idx]
    out = {key: [] for key in range(len(needs))}
    for u in np.asarray(us, dtype=float):
        f = _f_draws_at(draws, omegas, np.full(omegas.size, u))
        for i, (name, p, q) in enumerate(needs):
            sel = f[:, pos[name], p - 1, q - 1]
            if p == q:
                out[i].append(sel.real.mean(axis=1))
            else:
                out[i].append(sel.mean(axis=1))
    return [np.stack(cols, axis=1) for cols in out.values()]


def band_power(draws: PosteriorDraws, p: int, band=HF_BAND, us=None) -> BandCurve:
    """Band-averaged power of channel p as a function of u."""
    _check_channel(draws, p)
    us = default_u_grid() if us is None else np.asarray(us, float)
    (vals,) = _band_draw_values(draws, us, {"band": band}, [("band", p, p)])
    mean, lo, hi = _summarise(vals, f"band power p={p}")
    return BandCurve(us=us, mean=mean, lower95=lo, upper95=hi, band=tuple(band),
                     kind="HF power" if tuple(band) == HF_BAND else "band power")


def band_ratio(draws: PosteriorDraws, p: int, lf=LF_BAND, hf=HF_BAND, us=None) -> BandCurve:
    """Ratio of LF to HF band averages for channel p."""
    _check_channel(draws, p)
    us = default_u_grid() if us is None else np.asarray(us, float)
    lf_vals, hf_vals = _band_draw_values(
        draws, us, {"lf": lf, "hf": hf}, [("lf", p, p), ("hf", p, p)])
    mean, lo, hi = _summarise(lf_vals / hf_vals, f"LF/HF p={p}")
    return BandCurve(us=us, mean=mean, lower95=lo, upper95=hi,
                     band=(tuple(lf), tuple(hf)), kind="LF/HF ratio")


def band_coherence(draws: PosteriorDraws, p: int, q: int, band=HF_BAND, us=None,
                   scale: str = "linear") -> BandCurve:
    """Band-collapsed squared coherence |avg f_pq|^2 / (avg f_pp avg f_qq)."""
    _check_channel(draws, p)
    _check_channel(draws, q)
    if p == q:
        raise ValidationError("band coherence needs two distinct channels")
    us = default_u_grid() if us is None else np.asarray(us, float)
    vals = _band_coherence_draws(draws, p, q, band, us)
    if scale == "logit":
        vals = _logit(vals)
    mean, lo, hi = _summarise(vals, f"band coherence {p}{q}")
    return BandCurve(us=us, mean=mean, lower95=lo, upper95=hi, band=tuple(band),
                     kind="HF squared coherence" if scale == "linear"
                     else "logit HF squared coherence")


def _band_coherence_draws(draws, p, q, band, us):
    cross, pwr_p, pwr_q = _band_draw_values(
        draws, us, {"band": band},
        [("band", p, q), ("band", p, p), ("band", q, q)])
    return np.abs(cross) ** 2 / (pwr_p * pwr_q)


def band_coherence_derivative(draws: PosteriorDraws, p: int, q: int, band=HF_BAND,
                              us=None) -> BandCurve:
    """du-derivative of band coherence by central differences on the u grid."""
    us = default_u_grid() if us is None else np.asarray(us, float)
    if us.size < 5:
        raise ValidationError("derivative grid needs at least 5 points")
    h = np.diff(us)
    if np.max(np.abs(h - h[0])) > 1e-9 * max(abs(h[0]), 1e-12):
        raise ValidationError("derivative grid must be equally spaced")
    vals = _band_coherence_draws(draws, p, q, band, us)
    deriv = central_difference(vals, h[0])
    mean, lo, hi = _summarise(deriv, f"coherence derivative {p}{q}")
    return BandCurve(us=us, mean=mean, lower95=lo, upper95=hi, band=tuple(band),
                     kind="HF coherence derivative")


def central_difference(values, spacing):
    """Second-order central differences along the last axis, one-sided at the ends."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    out[..., 1:-1] = (values[..., 2:] - values[..., :-2]) / (2.0 * spacing)
    out[..., 0] = (values[..., 1] - values[..., 0]) / spacing
    out[..., -1] = (values[..., -1] - values[..., -2]) / spacing
    return out


def band_measures(draws: PosteriorDraws, us=None, lf=LF_BAND, hf=HF_BAND) -> dict:
    """All band-collapsed measures in one pass over the draws.

    Returns {('hf', p): BandCurve, ('lfhf', p): ..., ('cohhf', p, q): ...} for
    every channel p and pair p < q.
    """
    us = default_u_grid() if us is None else np.asarray(us, float)
    n_ch = draws.n_channels
    needs = []
    for p in range(1, n_ch + 1):
        needs.append(("hf", p, p))
        needs.append(("lf", p, p))
    pairs = [(p, q) for p in range(1, n_ch + 1) for q in range(p + 1, n_ch + 1)]
    for p, q in pairs:
        needs.append(("hf", p, q))
    values = _band_draw_values(draws, us, {"hf": hf, "lf": lf}, needs)
    by_key = dict(zip([(name, p, q) for name, p, q in needs], values))
    out = {}
    for p in range(1, n_ch + 1):
        hf_vals = by_key[("hf", p, p)]
        mean, lo, hi = _summarise(hf_vals, f"HF p={p}")
        out[("hf", p)] = BandCurve(us=us, mean=mean, lower95=lo, upper95=hi,
                                   band=tuple(hf), kind="HF power")
        ratio = by_key[("lf", p, p)] / hf_vals
        mean, lo, hi = _summarise(ratio, f"LF/HF p={p}")
        out[("lfhf", p)] = BandCurve(us=us, mean=mean, lower95=lo, upper95=hi,
                                     band=(tuple(lf), tuple(hf)), kind="LF/HF ratio")
    for p, q in pairs:
        coh = (np.abs(by_key[("hf", p, q)]) ** 2
               / (by_key[("hf", p, p)] * by_key[("hf", q, q)]))
        mean, lo, hi = _summarise(coh, f"coh HF {p}{q}")
        out[("cohhf", p, q)] = BandCurve(us=us, mean=mean, lower95=lo, upper95=hi,
                                         band=tuple(hf), kind="HF squared coherence")
    return out


def surface_summaries(draws: PosteriorDraws, omegas=None, us=None) -> dict:
    """All log-spectrum and logit-coherence surfaces in one pass over the grid.

    Returns {('logspec', p): SurfaceEstimate, ('coherence', p, q): ...}.
    """
    omegas = draws.basis.freq_basis.points if omegas is None else np.asarray(omegas, float)
    us = default_u_grid() if us is None else np.asarray(us, float)
    n_ch = draws.n_channels
    pairs = [(p, q) for p in range(1, n_ch + 1) for q in range(p + 1, n_ch + 1)]
    shape = (omegas.size, us.size)
    acc = {("logspec", p): [np.empty(shape) for _ in range(3)] for p in range(1, n_ch + 1)}
    acc.update({("coherence", p, q): [np.empty(shape) for _ in range(3)] for p, q in pairs})
    for j, u in enumerate(us):
        f = _f_draws_at(draws, omegas, np.full(omegas.size, u))
        for p in range(1, n_ch + 1):
            vals = np.log(f[:, :, p - 1, p - 1].real)
            m, lo, hi = _summarise(vals, f"log-spectrum p={p}")
            for arr, col in zip(acc[("logspec", p)], (m, lo, hi)):
                arr[:, j] = col
        for p, q in pairs:
            rho2 = (np.abs(f[:, :, p - 1, q - 1]) ** 2
                    / (f[:, :, p - 1, p - 1].real * f[:, :, q - 1, q - 1].real))
            m, lo, hi = _summarise(_logit(rho2), f"coherence {p}{q}")
            for arr, col in zip(acc[("coherence", p, q)], (m, lo, hi)):
                arr[:, j] = col
    out = {}
    for key, (m, lo, hi) in acc.items():
        scale = "log-spectrum" if key[0] == "logspec" else "logit-squared-coherence"
        out[key] = SurfaceEstimate(omegas=omegas, us=us, mean=m, lower95=lo,
                                   upper95=hi, scale=scale)
    return out


def _check_channel(draws: PosteriorDraws, p: int):
    if not 1 <= p <= draws.n_channels:
        raise ValidationError(f"channel {p} outside 1..{draws.n_channels}")
