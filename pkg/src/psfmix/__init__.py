"""Gaussian-mixture PSF calibration for fluorescence microscopy.

Simulates point-source image stacks through diffraction or Gaussian optics,
calibrates sparse Gaussian-mixture PSF models from them by split-Bregman
Poisson deconvolution, and benchmarks the calibrated models on localization
tasks.
"""

from .imaging import (
    CameraModel,
    GridGeometry,
    ImageStack,
    PointSource,
    StackKind,
    estimate_background,
    grey_from_photons,
    grey_stack,
    identity_camera,
    photon_stack,
    photons_from_grey,
)
from .psf import (
    BornWolfParams,
    BornWolfPsf,
    GaussianMixturePsf,
    GaussianParams,
    GaussianPsf,
    TabulatedBornWolf,
    born_wolf_intensity,
    gaussian_density,
    theoretical_gaussian,
)
from .blur import (
    DenseBlurOperator,
    Dictionary,
    IdentityOperator,
    SpectralBlurOperator,
    build_digital_dictionary,
    build_operators,
    dense_blur_matrix,
)
from .likelihood import deviance_gradient, mixture_means, poisson_deviance, poisson_prox
from .simulate import Scene, exposure_for_psnr, mean_stack, sample_photons, simulate
from .cmaes import CmaResult, cma_minimize
from .solver import (
    CalibrationResult,
    SupportEstimate,
    asb_minimize,
    estimate_support,
    project_nonneg,
    soft_threshold,
    solve_calibration,
    support_threshold,
)
from .estimate import (
    BwFit,
    DebiasResult,
    Localization,
    SgFit,
    debias,
    fit_blind_bw,
    fit_blind_sg,
    localize_ps,
    mixture_from_calibration,
)
from .experiments import (
    BenchmarkReport,
    BenchmarkRow,
    CalibrationReport,
    FanoBin,
    PipelineCell,
    RobustnessReport,
    TradeoffReport,
    TradeoffRow,
    localization_benchmark,
    robustness_study,
    run_calibration,
    tradeoff_sweep,
)
from .io import (
    load_dictionary_spec,
    load_mixture_model,
    load_mixture_psf,
    load_scene,
    load_stack,
    psf_from_spec,
    read_json,
    scene_from_spec,
    save_dictionary_spec,
    save_mixture_model,
    save_scene,
    save_stack,
    stack_to_csv,
    write_json,
)
from .presets import DatasetPreset, lscm, preset_by_name, sbw, synthetic_1d, wffm

__version__ = "0.1.0"
