"""Multicoil MRI reconstruction by coarse-to-fine stochastic MAP ascent.

The prior enters only through a denoiser and its vector-Jacobian product;
the likelihood is Laplace-approximated around the denoiser output and solved
with conjugate gradients.
"""

from .baselines import cg_sense, zero_filled_recon
from .cg import CgReport, cg_solve
from .container import read_imrd, write_imrd
from .core import DimensionError, ModelError, NumericalError, child_seed, draw_complex_gaussian, hermitian_inner, make_rng
from .denoisers import (
    Denoiser,
    FunctionDenoiser,
    GaussianDenoiser,
    GMMDenoiser,
    IdentityDenoiser,
    WaveletDenoiser,
    finite_diff_vjp,
    make_denoiser,
)
from .estimators import ImmapReconstructor, PriorSampler, SenseReconstructor, ZeroFilledReconstructor
from .metrics import MetricReport, evaluate, nrmse, psnr, ssim
from .operators import EncodingOperator, LinearOperator, NoiseModel, SamplingMask, adjoint_check, fft2c, ifft2c
from .simulation import (
    AcquisitionSpec,
    cartesian_mask,
    estimate_noise_cov,
    shepp_logan,
    simulate_acquisition,
    synth_sensitivities,
    whiten,
)
from .solver import ImmapConfig, ImmapTrace, immap_reconstruct, likelihood_gradient, prior_sample

__version__ = "0.1.0"
