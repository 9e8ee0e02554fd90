"""condspec: Bayesian conditional spectral analysis of replicated multichannel
time series.

The model ties a subject-level scalar outcome u to the full P x P power
spectrum f(omega, u) through tensor-product spline expansions of the modified
Cholesky components of f^{-1}, fitted by a Whittle-likelihood MCMC.  Posterior
draws turn into conditional log-spectrum and coherence surfaces and
band-collapsed curves (HF power, LF/HF ratio, HF coherence and its
u-derivative) with pointwise credible intervals.
"""

__version__ = "0.1.0"

from .basis import (FrequencyGrid, KernelBasis, TensorBasis, build_frequency_basis,
                    build_outcome_basis, build_tensor_basis, frequency_rank_for_length,
                    kernel_h, kernel_j, select_rank_fve, tensor_design)
from .dataset import (MultiSubjectSeries, OutcomeTransform, detrend, from_arrays,
                      load_dataset, save_dataset, scale_outcomes)
from .errors import CondSpecError, ConvergenceError, NumericalError, ValidationError
from .sampler import ModelConfig, PosteriorDraws, run_chain, run_chain_from_dft
from .simstudy import (Ma2Config, StudyReport, coverage, generate_ma2, ise,
                       run_study, true_spectrum_ma2, two_stage_local, two_stage_spline)
from .summaries import (BandCurve, SurfaceEstimate, band_coherence,
                        band_coherence_derivative, band_measures, band_power,
                        band_ratio, coherence_surface, log_spectrum_surface,
                        surface_summaries)
from .whittle import (CholeskyComponents, DftData, cholesky_to_spectrum, dft,
                      periodogram, residual_v, spectrum_to_cholesky, whittle_loglik)

__all__ = [name for name in dir() if not name.startswith("_")]
