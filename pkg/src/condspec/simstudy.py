"""Conditional MA(2) benchmark: generator, closed-form truth, metrics, baselines.

The generating model is a 3-channel MA(2) with scalar coefficient matrices
(theta1 = -I, theta2 = 0.6 I) and equicorrelated innovations whose variance
and correlation vary with the outcome u: sigma^2(u) = (2 - u)^2 and
rho(u) = 0.6 + 0.25 cos(pi u).  Because the MA polynomial is scalar, the true
spectrum factors as f(omega, u) = |theta(omega)|^2 Omega(u) and the true
squared coherence is rho(u)^2 at every frequency.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import FrequencyGrid, kernel_h
from .dataset import MultiSubjectSeries, OutcomeTransform
from .errors import CondSpecError, ValidationError
from .sampler import ModelConfig, run_chain
from .summaries import HF_BAND, LF_BAND, band_frequencies, band_measures
from .whittle import dft

MA_THETA1 = -1.0
MA_THETA2 = 0.6

MEASURES = ("hf_1", "hf_2", "hf_3", "lfhf_1", "lfhf_2", "lfhf_3",
            "cohhf_12", "cohhf_23", "cohhf_13")
WITHIN_MEASURES = MEASURES[:6]

# paper-style reporting multipliers for ISE columns
ISE_SCALE = {"hf": 1e3, "lfhf": 1e5, "cohhf": 1e3}


@dataclass(frozen=True)
class Ma2Config:
    n_subjects: int = 25
    n_time: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ValidationError("need at least 2 subjects")
        if self.n_time < 15:
            raise ValidationError("series length must be >= 15")


def sigma2_of_u(u):
    return (2.0 - np.asarray(u, dtype=float)) ** 2


def rho_of_u(u):
    return 0.6 + 0.25 * np.cos(np.pi * np.asarray(u, dtype=float))


def innovation_covariance(u):
    """Omega(u): equicorrelation matrix scaled by sigma^2(u); PD on [0, 1]."""
    u = np.asarray(u, dtype=float)
    rho = rho_of_u(u)
    eye = np.eye(3)
    omega = rho[..., None, None] * np.ones((3, 3)) + (1.0 - rho)[..., None, None] * eye
    return sigma2_of_u(u)[..., None, None] * omega


def generate_ma2(cfg: Ma2Config) -> MultiSubjectSeries:
    """Simulate X_t = e_t + theta1 e_{t-1} + theta2 e_{t-2}, u_j = j/N.

    Innovations for t = -1, 0 are drawn too, so X_1 is exactly stationary.
    The u_j are already unit-scale covariate values and are kept as-is
    (identity outcome transform).
    """
    n_sub, n = cfg.n_subjects, cfg.n_time
    u = np.arange(1, n_sub + 1) / n_sub
    rng = np.random.default_rng(cfg.seed)
    chol = np.linalg.cholesky(innovation_covariance(u))      # (N, 3, 3)
    z = rng.standard_normal((n_sub, n + 2, 3))
    eps = np.einsum("jtp,jqp->jtq", z, chol)
    x = eps[:, 2:, :] + MA_THETA1 * eps[:, 1:-1, :] + MA_THETA2 * eps[:, :-2, :]
    return MultiSubjectSeries(data=x, outcomes_raw=u, outcomes=u,
                              outcome_transform=OutcomeTransform(0.0, 1.0),
                              subject_ids=tuple(str(j + 1) for j in range(n_sub)))


def ma2_transfer(omega):
    """Scalar MA transfer function theta(omega) = 1 + theta1 e^{-2pi i w} + theta2 e^{-4pi i w}."""
    omega = np.asarray(omega, dtype=float)
    return 1.0 + MA_THETA1 * np.exp(-2j * np.pi * omega) + MA_THETA2 * np.exp(-4j * np.pi * omega)


def true_spectrum_ma2(omega, u) -> np.ndarray:
    """Closed-form conditional spectrum |theta(omega)|^2 Omega(u), (..., 3, 3)."""
    gain = np.abs(ma2_transfer(omega)) ** 2
    return gain[..., None, None] * innovation_covariance(u)


def true_band_measures(n_time: int, us, lf=LF_BAND, hf=HF_BAND) -> dict:
    """Truth curves under the same Fourier-grid band-average convention."""
    grid = FrequencyGrid.for_length(n_time)
    us = np.asarray(us, dtype=float)
    out = {}
    gains = np.abs(ma2_transfer(grid.omegas)) ** 2
    hf_gain = gains[band_frequencies(grid.omegas, hf)].mean()
    lf_gain = gains[band_frequencies(grid.omegas, lf)].mean()
    sig2 = sigma2_of_u(us)
    rho = rho_of_u(us)
    for p in (1, 2, 3):
        out[f"hf_{p}"] = hf_gain * sig2
        out[f"lfhf_{p}"] = np.full_like(us, lf_gain / hf_gain)
    for p, q in ((1, 2), (2, 3), (1, 3)):
        out[f"cohhf_{p}{q}"] = rho ** 2
    return out


def ise(estimate, truth, us) -> float:
    """Trapezoidal integrated squared error of a curve over the u grid."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    us = np.asarray(us, dtype=float)
    if estimate.shape != truth.shape or estimate.shape != us.shape:
        raise ValidationError("estimate, truth and grid must share a shape")
    return float(np.trapezoid((estimate - truth) ** 2, us))


def coverage(lower, upper, truth) -> float:
    """Fraction of grid points with lower <= truth <= upper (closed intervals)."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if lower.shape != truth.shape or upper.shape != truth.shape:
        raise ValidationError("curves must share a grid")
    return float(np.mean((lower <= truth) & (truth <= upper)))


# ---------------------------------------------------------------------------
# two-stage baselines

def raw_band_measures(data: MultiSubjectSeries, lf=LF_BAND, hf=HF_BAND, sums=False):
    """Stage 1: per-subject, per-channel periodogram band averages (or sums)."""
    spec = dft(data)
    pgram = np.abs(spec.Y) ** 2                       # (N, M, P)
    omegas = spec.grid.omegas
    hf_idx = band_frequencies(omegas, hf)
    lf_idx = band_frequencies(omegas, lf)
    reduce = np.sum if sums else np.mean
    hf_raw = reduce(pgram[:, hf_idx, :], axis=1)      # (N, P)
    lf_raw = reduce(pgram[:, lf_idx, :], axis=1)
    return {"hf": hf_raw, "lfhf": lf_raw / hf_raw}


def smoothing_spline_gcv(x, y, eval_at, lambdas=None):
    """Cubic smoothing spline on [0, 1] with GCV-selected penalty.

    Solves the reproducing-kernel system [[K + lam I, L], [L', 0]] [z; a] =
    [y; 0] with K the spline-kernel Gram matrix and L = (1 | x); fitted values
    are y - lam z and GCV(lam) = N ||y - yhat||^2 / tr(I - A)^2.
    Returns (fit on eval_at, lam, gcv curve over the lambda grid).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.unique(x).size < 3:
        raise ValidationError("GCV smoothing needs at least 3 distinct u values")
    if lambdas is None:
        lambdas = np.logspace(-10, 4, 71)
    n = x.size
    gram = kernel_h(x[:, None], x[None, :])
    lmat = np.column_stack([np.ones(n), x])
    sys_rhs = np.zeros((n + 2, n + 1))
    sys_rhs[:n, 0] = y
    sys_rhs[:n, 1:] = np.eye(n)
    gcv = np.empty(len(lambdas))
    sols = []
    for i, lam in enumerate(lambdas):
        system = np.zeros((n + 2, n + 2))
        system[:n, :n] = gram + lam * np.eye(n)
        system[:n, n:] = lmat
        system[n:, :n] = lmat.T
        sol = np.linalg.solve(system, sys_rhs)
        z = sol[:n, 0]
        rss = lam ** 2 * float(z @ z)
        tr_res = lam * np.trace(sol[:n, 1:])
        gcv[i] = n * rss / tr_res ** 2 if tr_res > 0 else np.inf
        sols.append(sol[:, 0])
    best = int(np.argmin(gcv))
    z, a = sols[best][:n], sols[best][n:]
    eval_at = np.asarray(eval_at, dtype=float)
    fit = a[0] + a[1] * eval_at + kernel_h(eval_at[:, None], x[None, :]) @ z
    return fit, float(lambdas[best]), gcv


def gcv_score(x, y, lam):
    """Standalone GCV score for one penalty value (grid-search oracle hook)."""
    _, _, gcv = smoothing_spline_gcv(x, y, x, lambdas=np.array([lam]))
    return float(gcv[0])


def plug_in_bandwidth(x, factor: float = 1.0) -> float:
    """Rule-of-thumb bandwidth 1.06 sd(x) N^(-1/5), times a calibration factor."""
    x = np.asarray(x, dtype=float)
    return 1.06 * float(np.std(x, ddof=1)) * x.size ** (-0.2) * factor


def local_linear(x, y, eval_at, bandwidth) -> np.ndarray:
    """Local linear regression with the Epanechnikov kernel."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    eval_at = np.asarray(eval_at, dtype=float)
    gaps = np.diff(np.sort(x))
    if gaps.size and bandwidth < gaps.max():
        raise ValidationError(
            f"bandwidth {bandwidth:.4g} smaller than the largest u gap {gaps.max():.4g}")
    out = np.empty(eval_at.size)
    for i, u0 in enumerate(eval_at):
        t = (x - u0) / bandwidth
        w = np.where(np.abs(t) < 1.0, 0.75 * (1.0 - t ** 2), 0.0)
        active = w > 0
        if not np.any(active):
            raise ValidationError(f"no support points within bandwidth of u={u0:.4g}")
        sw = np.sqrt(w[active])
        design = np.column_stack([np.ones(active.sum()), x[active] - u0])
        beta, *_ = np.linalg.lstsq(design * sw[:, None], y[active] * sw, rcond=None)
        out[i] = beta[0]
    return out


def two_stage_spline(data: MultiSubjectSeries, us, lf=LF_BAND, hf=HF_BAND, sums=False) -> dict:
    """Per-subject band measures smoothed across u by a GCV cubic spline."""
    raw = raw_band_measures(data, lf=lf, hf=hf, sums=sums)
    us = np.asarray(us, dtype=float)
    out = {}
    for name in ("hf", "lfhf"):
        for p in range(1, data.n_channels + 1):
            fit, _, _ = smoothing_spline_gcv(data.outcomes, raw[name][:, p - 1], us)
            out[f"{name}_{p}"] = fit
    return out


def two_stage_local(data: MultiSubjectSeries, us, lf=LF_BAND, hf=HF_BAND,
                    bandwidth=None, bandwidth_factor=1.0, sums=False) -> dict:
    """Per-subject band measures smoothed across u by local linear regression."""
    raw = raw_band_measures(data, lf=lf, hf=hf, sums=sums)
    us = np.asarray(us, dtype=float)
    h = plug_in_bandwidth(data.outcomes, bandwidth_factor) if bandwidth is None else bandwidth
    out = {}
    for name in ("hf", "lfhf"):
        for p in range(1, data.n_channels + 1):
            out[f"{name}_{p}"] = local_linear(data.outcomes, raw[name][:, p - 1], us, h)
    return out


# ---------------------------------------------------------------------------
# study driver

@dataclass
class StudyReport:
    """Aggregated ISE / coverage over replicates, Tables-style."""

    replicates: int
    measures: tuple
    bayes_ise: dict                 # measure -> (mean, sd)
    bayes_coverage: dict            # measure -> (mean, sd)
    spline_ise: dict                # within-period measure -> (mean, sd)
    local_ise: dict
    seconds_per_iteration: tuple    # (mean, sd)
    failed: tuple = ()
    metadata: dict = field(default_factory=dict)

    def rows(self):
        """(measure, estimator, ise_mean, ise_sd, scale, cov_mean, cov_sd) rows."""
        rows = []
        for m in self.measures:
            scale = ISE_SCALE[m.split("_")[0]]
            mean, sd = self.bayes_ise[m]
            cmean, csd = self.bayes_coverage[m]
            rows.append((m, "bayes", mean * scale, sd * scale, scale, cmean, csd))
        for m in self.measures:
            if m not in self.spline_ise:
                continue
            scale = ISE_SCALE[m.split("_")[0]]
            mean, sd = self.spline_ise[m]
            rows.append((m, "two-stage-spline", mean * scale, sd * scale, scale, "", ""))
            mean, sd = self.local_ise[m]
            rows.append((m, "two-stage-local", mean * scale, sd * scale, scale, "", ""))
        return rows


def _measure_key(key) -> str:
    if key[0] == "cohhf":
        return f"cohhf_{key[1]}{key[2]}"
    return f"{key[0]}_{key[1]}"


def run_replicate(index: int, study: Ma2Config, model: ModelConfig,
                  sums=False, lf=LF_BAND, hf=HF_BAND, bandwidth_factor=1.0) -> dict:
    """One full replicate: simulate, fit all three estimators, score them."""
    seq = np.random.SeedSequence(entropy=study.seed, spawn_key=(index,))
    data_seed, chain_seed = (int(s) for s in seq.generate_state(2))
    data = generate_ma2(replace(study, seed=data_seed))
    draws = run_chain(data, replace(model, seed=chain_seed))
    us = data.outcomes
    est = band_measures(draws, us, lf=lf, hf=hf)
    truth = true_band_measures(study.n_time, us, lf=lf, hf=hf)
    result = {"bayes_ise": {}, "bayes_coverage": {}, "spline_ise": {}, "local_ise": {},
              "seconds_per_iteration": float(np.mean(draws.seconds_per_iteration)),
              "acceptance": draws.acceptance}
    for key, curve in est.items():
        name = _measure_key(key)
        result["bayes_ise"][name] = ise(curve.mean, truth[name], us)
        result["bayes_coverage"][name] = coverage(curve.lower95, curve.upper95, truth[name])
    spline = two_stage_spline(data, us, lf=lf, hf=hf, sums=sums)
    local = two_stage_local(data, us, lf=lf, hf=hf, sums=sums,
                            bandwidth_factor=bandwidth_factor)
    for name, fit in spline.items():
        result["spline_ise"][name] = ise(fit, truth[name], us)
    for name, fit in local.items():
        result["local_ise"][name] = ise(fit, truth[name], us)
    return result


def _replicate_worker(args):
    index, study, model, sums, lf, hf, bandwidth_factor = args
    return index, run_replicate(index, study, model, sums=sums, lf=lf, hf=hf,
                                bandwidth_factor=bandwidth_factor)


def run_study(replicates: int, study: Ma2Config, model: ModelConfig,
              threads: int = 1, sums=False, lf=LF_BAND, hf=HF_BAND,
              bandwidth_factor: float = 1.0) -> StudyReport:
    """The full coverage/ISE study; replicate seeds derive from the master seed."""
    if replicates < 1:
        raise ValidationError("need at least one replicate")
    jobs = [(i, study, model, sums, lf, hf, bandwidth_factor) for i in range(replicates)]
    results = {}
    failed = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(_replicate_worker, job): job[0] for job in jobs}
            for future, index in futures.items():
                try:
                    _, res = future.result()
                    results[index] = res
                except CondSpecError as exc:
                    failed.append((index, str(exc)))
    else:
        for job in jobs:
            try:
                index, res = _replicate_worker(job)
                results[index] = res
            except CondSpecError as exc:
                failed.append((job[0], str(exc)))
    ok = [results[i] for i in sorted(results)]
    if not ok:
        raise ValidationError("every replicate failed")

    def agg(field_name, name):
        vals = np.array([r[field_name][name] for r in ok])
        return float(vals.mean()), float(vals.std(ddof=1)) if len(vals) > 1 else 0.0

    bayes_ise = {m: agg("bayes_ise", m) for m in MEASURES}
    bayes_cov = {m: agg("bayes_coverage", m) for m in MEASURES}
    spline_ise = {m: agg("spline_ise", m) for m in WITHIN_MEASURES}
    local_ise = {m: agg("local_ise", m) for m in WITHIN_MEASURES}
    secs = np.array([r["seconds_per_iteration"] for r in ok])
    return StudyReport(
        replicates=replicates, measures=MEASURES,
        bayes_ise=bayes_ise, bayes_coverage=bayes_cov,
        spline_ise=spline_ise, local_ise=local_ise,
        seconds_per_iteration=(float(secs.mean()),
                               float(secs.std(ddof=1)) if len(secs) > 1 else 0.0),
        failed=tuple(failed),
        metadata={"n_subjects": study.n_subjects, "n_time": study.n_time,
                  "master_seed": study.seed, "iterations": model.iterations,
                  "burn_in": model.burn_in, "n_j": model.n_j, "n_h": model.n_h,
                  "half_t_scale": model.half_t_scale, "sums": sums,
                  "lf": list(lf), "hf": list(hf),
                  "bandwidth_factor": bandwidth_factor,
                  "u_grid": "observed outcomes u_j = j/N"})
