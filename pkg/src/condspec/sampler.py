"""Three-step MCMC for the tensor-product Cholesky model.

Per iteration: (1) Gaussian draws for the off-diagonal component coefficients,
block order (2,1) -> (3,1) -> (3,2), real then imaginary part, with the
exact closed-form conditional moments; (2) a Metropolis-Hastings draw for
each diagonal coefficient vector, proposing from a multivariate t located at
the Newton mode of the conditional log density with scale equal to the
inverse observed information; (3) conjugate inverse-gamma draws for the
smoothing parameters under the half-t scale-mixture prior.

All target-density arithmetic stays in log space; overflow in exp() terms
yields a -inf log target and a rejected proposal rather than a crash.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .basis import BlockMap, TensorBasis, build_tensor_basis, frequency_rank_for_length
from .dataset import MultiSubjectSeries, OutcomeTransform
from .errors import ConvergenceError, NumericalError, ValidationError
from .whittle import DftData, dft


@dataclass(frozen=True)
class ModelConfig:
    """Fit configuration; seed is mandatory and wall-clock seeding is never used."""

    iterations: int = 2000
    burn_in: int = 500
    n_j: int | None = None          # None: rank rule for the series length
    n_h: int = 10
    sigma2_alpha: float = 1e5
    half_t_scale: float = 1e5       # G
    half_t_df: float = 3.0          # nu
    # location-scale t proposal for the diagonal blocks; large df keeps the
    # independence sampler close to the Laplace approximation (IACT ~ 1-2)
    # where df = nu = 3 mixes an order of magnitude slower
    proposal_df: float | None = 50.0
    seed: int = 0
    newton_tol: float = 1e-8
    newton_max_iter: int = 100
    fix_tau2: float | None = None   # pin all smoothing parameters (testing hook)

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise ValidationError("need iterations > burn_in >= 0")
        if self.half_t_scale <= 0 or self.sigma2_alpha <= 0:
            raise ValidationError("half_t_scale and sigma2_alpha must be positive")
        if self.half_t_df < 1:
            raise ValidationError("half_t_df must be >= 1")
        if self.proposal_df is not None and self.proposal_df < 1:
            raise ValidationError("proposal_df must be >= 1")

    @property
    def t_df(self) -> float:
        # proposal_df=None falls back to the half-t prior df
        return self.half_t_df if self.proposal_df is None else self.proposal_df

    def resolve(self, n_time: int) -> "ModelConfig":
        if self.n_j is not None:
            return self
        return replace(self, n_j=frequency_rank_for_length(n_time))


def theta_block_order(n_channels: int):
    """Off-diagonal blocks in sampling order."""
    if n_channels == 3:
        return ((2, 1), (3, 1), (3, 2))
    if n_channels == 2:
        return ((2, 1),)
    if n_channels == 1:
        return ()
    raise ValidationError("channel count must be 1, 2 or 3")


def prior_diagonal(block_map: BlockMap, sigma2_alpha: float, tau2) -> np.ndarray:
    """Prior variance diagonal for one component's coefficient vector."""
    tau2 = np.asarray(tau2, dtype=float)
    d = np.empty(block_map.total)
    d[block_map.a] = sigma2_alpha
    d[block_map.b] = tau2[0]
    d[block_map.c] = tau2[1]
    d[block_map.d] = tau2[2]
    return d


def _weighted_gram(design, weights):
    return (design * weights[:, None]).T @ design


def gaussian_block_moments(block, part, design, products, psi_inv, theta, prior_diag):
    """Sigma^{-1} and Sigma^{-1} mu for one off-diagonal coefficient block.

    `products` holds the DFT cross-products (abs2 per channel, a12 = Y1 Y2*,
    a13 = Y1 Y3*, b23 = Y2 Y3*); `psi_inv` and `theta` are the cached current
    component values keyed by channel and (k, l).
    """
    if block == (2, 1):
        w_psi = psi_inv[1]
        amp = products["abs2"][2]
        adj = np.conj(theta[(3, 1)]) * products["b23"] if (3, 1) in theta else 0.0
        tgt = (products["a12"] - adj).real if part == "r" else (products["a12"] + adj).imag
    elif block == (3, 1):
        w_psi = psi_inv[1]
        amp = products["abs2"][3]
        adj = np.conj(theta[(2, 1)]) * np.conj(products["b23"])
        tgt = (products["a13"] - adj).real if part == "r" else (products["a13"] + adj).imag
    elif block == (3, 2):
        w_psi = psi_inv[2]
        amp = products["abs2"][3]
        tgt = products["b23"].real if part == "r" else products["b23"].imag
    else:
        raise ValidationError(f"unknown theta block {block}")
    sigma_inv = 2.0 * _weighted_gram(design, w_psi * amp)
    sigma_inv[np.diag_indices_from(sigma_inv)] += 1.0 / prior_diag
    rhs = 2.0 * design.T @ (w_psi * tgt)
    return sigma_inv, rhs


def draw_gaussian(sigma_inv, rhs, rng):
    """Sample N(mu, Sigma) given Sigma^{-1} and Sigma^{-1} mu, via one factorisation."""
    try:
        low = np.linalg.cholesky(sigma_inv)
    except np.linalg.LinAlgError:
        raise NumericalError("Gaussian block precision not positive definite") from None
    mu = cho_solve((low, True), rhs, check_finite=False)
    z = rng.standard_normal(rhs.shape[0])
    return mu + solve_triangular(low.T, z, lower=False, check_finite=False)


def log_target_eta_d(design, v, prior_diag, eta, qeta=None):
    """Conditional log density of a diagonal coefficient vector (up to a constant)."""
    if qeta is None:
        qeta = design @ eta
    with np.errstate(over="ignore"):
        e = np.exp(qeta)
    val = qeta.sum() - (v * e).sum() - 0.5 * float(eta @ (eta / prior_diag))
    return val if np.isfinite(val) else -np.inf


def newton_mode_eta_d(design, v, prior_diag, start, tol=1e-8, max_iter=100):
    """Mode and observed information of the diagonal-coefficient conditional.

    Newton iterations with step halving; converged when the gradient
    max-norm drops below `tol`.  Raises ConvergenceError (with a trace of
    (iteration, gradient norm, step) tuples) on failure.
    """
    if np.any(v < 0):
        raise ValidationError("residuals v must be nonnegative")
    d_inv = 1.0 / prior_diag
    eta = np.array(start, dtype=float)
    qeta = design @ eta
    obj = log_target_eta_d(design, v, prior_diag, eta, qeta)
    trace = []
    for it in range(max_iter):
        with np.errstate(over="ignore"):
            w = v * np.exp(qeta)
        grad = design.T @ (1.0 - w) - d_inv * eta
        gnorm = np.max(np.abs(grad))
        if gnorm < tol:
            info = _weighted_gram(design, w)
            info[np.diag_indices_from(info)] += d_inv
            return eta, info
        info = _weighted_gram(design, w)
        info[np.diag_indices_from(info)] += d_inv
        low = _robust_cholesky(info)
        step = cho_solve((low, True), grad, check_finite=False)
        qstep = design @ step
        # once the quadratic-model gain drops below the objective's float
        # resolution the line search cannot measure progress; take the full
        # Newton step and let the gradient test decide
        gain_floor = 64.0 * np.finfo(float).eps * (1.0 + abs(obj))
        predicted_gain = 0.5 * float(grad @ step)
        t = 1.0
        for _ in range(30):
            cand = eta + t * step
            cand_obj = log_target_eta_d(design, v, prior_diag, cand, qeta + t * qstep)
            if cand_obj > obj or (predicted_gain <= gain_floor
                                  and cand_obj >= obj - gain_floor):
                break
            t *= 0.5
        else:
            raise ConvergenceError(
                f"Newton line search stalled at iteration {it}", trace + [(it, gnorm, 0.0)])
        trace.append((it, float(gnorm), t))
        eta = cand
        qeta = qeta + t * qstep
        obj = cand_obj
    raise ConvergenceError(
        f"Newton did not reach tolerance {tol} in {max_iter} iterations", trace)


def _robust_cholesky(matrix):
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        bumped = matrix.copy()
        bump = 1e-10 * np.trace(matrix) / matrix.shape[0]
        bumped[np.diag_indices_from(bumped)] += bump
        try:
            return np.linalg.cholesky(bumped)
        except np.linalg.LinAlgError:
            raise NumericalError("observed information not positive definite") from None


def draw_eta_d_mh(design, v, prior_diag, current, rng, t_df,
                  newton_tol=1e-8, newton_max_iter=100):
    """Independence MH step for one diagonal coefficient vector.

    Proposal: multivariate t with location at the Newton mode, scale the
    inverse observed information, `t_df` degrees of freedom.  Returns
    (new_eta, accepted, cached exp-linear-predictor for the new state).
    """
    mode, info = newton_mode_eta_d(design, v, prior_diag, current,
                                   tol=newton_tol, max_iter=newton_max_iter)
    low = _robust_cholesky(info)
    dim = current.shape[0]
    z = rng.standard_normal(dim)
    chi2 = rng.chisquare(t_df)
    scale = np.sqrt(t_df / chi2)
    prop = mode + solve_triangular(low.T, z, lower=False, check_finite=False) * scale

    log_r = mh_log_ratio(design, v, prior_diag, current, prop, mode, low, t_df)
    if np.log(rng.uniform()) < log_r:
        with np.errstate(over="ignore"):
            return prop, True, np.exp(design @ prop)
    return current, False, None


def mh_log_ratio(design, v, prior_diag, current, proposal, mode, info_chol, t_df):
    """log of the acceptance ratio p(prop) f_T(cur) / (p(cur) f_T(prop))."""
    dim = current.shape[0]

    def log_t_density(x):
        quad = float(np.sum((info_chol.T @ (x - mode)) ** 2))
        return -0.5 * (t_df + dim) * np.log1p(quad / t_df)

    lp_prop = log_target_eta_d(design, v, prior_diag, proposal)
    lp_cur = log_target_eta_d(design, v, prior_diag, current)
    return lp_prop + log_t_density(current) - lp_cur - log_t_density(proposal)


def draw_smoothing_for_component(eta, block_map: BlockMap, g, nu, half_t_scale, rng):
    """Inverse-gamma updates of (tau^2_beta, tau^2_gamma, tau^2_delta) and g's.

    tau^2 ~ IG((n_block + nu)/2, ||block||^2/2 + nu/g), then
    g ~ IG((nu + 1)/2, nu/tau^2 + 1/G^2).
    """
    sizes = (block_map.b.stop - block_map.b.start,
             block_map.c.stop - block_map.c.start,
             block_map.d.stop - block_map.d.start)
    slices = (block_map.b, block_map.c, block_map.d)
    tau2_new = np.empty(3)
    g_new = np.empty(3)
    for i, (size, sl) in enumerate(zip(sizes, slices)):
        ss = float(eta[sl] @ eta[sl])
        shape = 0.5 * (size + nu)
        rate = 0.5 * ss + nu / g[i]
        tau2_new[i] = rate / rng.gamma(shape)
    for i in range(3):
        shape = 0.5 * (nu + 1.0)
        rate = nu / tau2_new[i] + 1.0 / half_t_scale ** 2
        g_new[i] = rate / rng.gamma(shape)
    return tau2_new, g_new


@dataclass
class PosteriorDraws:
    """Retained post-burn-in coefficient states plus everything needed to
    evaluate spectral functionals from them."""

    config: ModelConfig
    basis: TensorBasis
    n_channels: int
    n_time: int
    outcomes: np.ndarray
    outcome_transform: OutcomeTransform
    eta_r: dict            # (k, l) -> (S_ret, K)
    eta_i: dict
    eta_d: dict            # k -> (S_ret, K)
    tau2: dict             # label -> (S_ret, 3)
    acceptance: dict       # k -> rate over the whole run
    seconds_per_iteration: np.ndarray = field(repr=False, default=None)
    subject_ids: tuple = None

    @property
    def n_retained(self) -> int:
        return next(iter(self.eta_d.values())).shape[0]

    def component_labels(self):
        labels = []
        for k, l in theta_block_order(self.n_channels):
            labels.append(("r", k, l))
            labels.append(("i", k, l))
        for k in range(1, self.n_channels + 1):
            labels.append(("d", k, k))
        return labels


class Sampler:
    """One chain over one dataset; deterministic given the config seed."""

    def __init__(self, dft_data: DftData, outcomes, config: ModelConfig,
                 outcome_transform: OutcomeTransform | None = None,
                 subject_ids=None):
        self.config = config.resolve(dft_data.grid.n)
        self.n_channels = dft_data.n_channels
        if self.n_channels > 3:
            raise ValidationError("sampler supports at most 3 channels")
        self.dft_data = dft_data
        self.outcomes = np.asarray(outcomes, dtype=float)
        self.outcome_transform = outcome_transform or OutcomeTransform(0.0, 1.0)
        self.subject_ids = subject_ids
        self.basis = build_tensor_basis(dft_data.grid.n, self.outcomes,
                                        n_j=self.config.n_j, n_h=self.config.n_h)
        self.design = self.basis.Q
        self.block_map = self.basis.block_map
        n, m = dft_data.n_subjects, dft_data.grid.M
        y = dft_data.Y.reshape(n * m, self.n_channels)
        self.products = {"abs2": {k + 1: np.abs(y[:, k]) ** 2 for k in range(self.n_channels)}}
        if self.n_channels >= 2:
            self.products["a12"] = y[:, 0] * np.conj(y[:, 1])
        if self.n_channels == 3:
            self.products["a13"] = y[:, 0] * np.conj(y[:, 2])
            self.products["b23"] = y[:, 1] * np.conj(y[:, 2])
        self.y_flat = y
        self.blocks = theta_block_order(self.n_channels)
        nm = n * m
        k_dim = self.block_map.total
        self.eta = {}
        self.tau2 = {}
        self.g = {}
        self.theta = {}
        self.psi_inv = {}
        for k, l in self.blocks:
            for part in ("r", "i"):
                self.eta[(part, k, l)] = np.zeros(k_dim)
                self.tau2[(part, k, l)] = np.ones(3)
                self.g[(part, k, l)] = np.ones(3)
            self.theta[(k, l)] = np.zeros(nm, dtype=complex)
        for k in range(1, self.n_channels + 1):
            self.eta[("d", k, k)] = np.zeros(k_dim)
            self.tau2[("d", k, k)] = np.ones(3)
            self.g[("d", k, k)] = np.ones(3)
            self.psi_inv[k] = np.ones(nm)
        self.accept_counts = {k: 0 for k in range(1, self.n_channels + 1)}

    def _prior_diag(self, label):
        return prior_diagonal(self.block_map, self.config.sigma2_alpha, self.tau2[label])

    def residuals(self, k):
        from .whittle import residual_v
        return residual_v(k, _FlatView(self.y_flat), self.theta)

    def _theta_step(self, rng):
        for k, l in self.blocks:
            new = {}
            for part in ("r", "i"):
                label = (part, k, l)
                sigma_inv, rhs = gaussian_block_moments(
                    (k, l), part, self.design, self.products,
                    self.psi_inv, self.theta, self._prior_diag(label))
                new[part] = draw_gaussian(sigma_inv, rhs, rng)
                self.eta[label] = new[part]
            self.theta[(k, l)] = self.design @ new["r"] + 1j * (self.design @ new["i"])

    def _diag_step(self, rng):
        cfg = self.config
        for k in range(1, self.n_channels + 1):
            label = ("d", k, k)
            v = self.residuals(k)
            eta, accepted, expq = draw_eta_d_mh(
                self.design, v, self._prior_diag(label), self.eta[label], rng,
                cfg.t_df, newton_tol=cfg.newton_tol, newton_max_iter=cfg.newton_max_iter)
            if accepted:
                self.eta[label] = eta
                self.psi_inv[k] = expq
                self.accept_counts[k] += 1

    def _smoothing_step(self, rng):
        if self.config.fix_tau2 is not None:
            for label in self._label_order():
                self.tau2[label] = np.full(3, self.config.fix_tau2)
            return
        for label in self._label_order():
            tau2, g = draw_smoothing_for_component(
                self.eta[label], self.block_map, self.g[label],
                self.config.half_t_df, self.config.half_t_scale, rng)
            self.tau2[label] = tau2
            self.g[label] = g

    def _label_order(self):
        labels = []
        for k, l in self.blocks:
            labels.append(("r", k, l))
            labels.append(("i", k, l))
        for k in range(1, self.n_channels + 1):
            labels.append(("d", k, k))
        return labels

    def _check_caches(self):
        for (k, l) in self.blocks:
            ref = self.design @ self.eta[("r", k, l)] + 1j * (self.design @ self.eta[("i", k, l)])
            if np.max(np.abs(ref - self.theta[(k, l)])) > 1e-10 * max(1.0, np.max(np.abs(ref))):
                raise NumericalError(f"theta cache diverged for block {(k, l)}")
        for k in range(1, self.n_channels + 1):
            ref = np.exp(self.design @ self.eta[("d", k, k)])
            if np.max(np.abs(ref - self.psi_inv[k])) > 1e-10 * max(1.0, np.max(np.abs(ref))):
                raise NumericalError(f"psi cache diverged for channel {k}")

    def run(self) -> PosteriorDraws:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        retained = cfg.iterations - cfg.burn_in
        k_dim = self.block_map.total
        out_r = {bl: np.empty((retained, k_dim)) for bl in self.blocks}
        out_i = {bl: np.empty((retained, k_dim)) for bl in self.blocks}
        out_d = {k: np.empty((retained, k_dim)) for k in range(1, self.n_channels + 1)}
        out_tau2 = {label: np.empty((retained, 3)) for label in self._label_order()}
        seconds = np.empty(cfg.iterations)
        for s in range(1, cfg.iterations + 1):
            tic = time.perf_counter()
            self._theta_step(rng)
            self._diag_step(rng)
            self._smoothing_step(rng)
            if s % 100 == 0:
                self._check_caches()
            seconds[s - 1] = time.perf_counter() - tic
            if s > cfg.burn_in:
                idx = s - cfg.burn_in - 1
                for bl in self.blocks:
                    out_r[bl][idx] = self.eta[("r", *bl)]
                    out_i[bl][idx] = self.eta[("i", *bl)]
                for k in range(1, self.n_channels + 1):
                    out_d[k][idx] = self.eta[("d", k, k)]
                for label in self._label_order():
                    out_tau2[label][idx] = self.tau2[label]
        acceptance = {k: self.accept_counts[k] / cfg.iterations
                      for k in range(1, self.n_channels + 1)}
        return PosteriorDraws(
            config=cfg, basis=self.basis, n_channels=self.n_channels,
            n_time=self.dft_data.grid.n, outcomes=self.outcomes,
            outcome_transform=self.outcome_transform,
            eta_r=out_r, eta_i=out_i, eta_d=out_d, tau2=out_tau2,
            acceptance=acceptance, seconds_per_iteration=seconds,
            subject_ids=self.subject_ids)


class _FlatView:
    """Adapter presenting flattened (NM, P) DFT values as `.Y` for residual_v."""

    def __init__(self, y_flat):
        self.Y = y_flat


def run_chain(data: MultiSubjectSeries, config: ModelConfig) -> PosteriorDraws:
    """Fit the model to a dataset: DFT, basis construction, full MCMC run."""
    dft_data = dft(data)
    sampler = Sampler(dft_data, data.outcomes, config,
                      outcome_transform=data.outcome_transform,
                      subject_ids=data.subject_ids)
    return sampler.run()


def run_chain_from_dft(dft_data: DftData, outcomes, config: ModelConfig) -> PosteriorDraws:
    """Fit directly from frequency-domain data (used by small synthetic studies)."""
    return Sampler(dft_data, outcomes, config).run()
