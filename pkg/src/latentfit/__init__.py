"""latentfit: decay-signal parameter extraction with latent-space autoencoders.

Dense tanh autoencoders whose bottleneck neurons are tied to the physical
parameters of exponentially decaying signals (decay time, and for damped
oscillations frequency and phase). Includes the synthetic-signal
generators, a from-scratch dense network engine, the three-stage training
protocol, least-squares and FFT reference estimators with Cramér-Rao
bounds, and the evaluation/benchmark harness behind the `latentfit` CLI.
"""

from . import autoencoder, baselines, evaluate, nn, signals
from .autoencoder import (
    AutoencoderModel,
    LatentMapping,
    TrainReport,
    build,
    encode,
    encode_values,
    from_latent,
    load,
    reconstruct,
    save,
    to_latent,
    train_stage1_only,
    train_three_stage,
)
from .baselines import (
    CrlbInputs,
    FitResult,
    crlb_sigma_f,
    crlb_sigma_tau,
    fft_coarse_estimate,
    fisher_sigmas,
    fit_damped_osc,
    fit_exp_decay,
    xi,
)
from .errors import (
    EstimateUnavailableError,
    FitDegenerateError,
    FormatError,
    InvalidStateError,
    LatentFitError,
    TrainingDivergedError,
)
from .evaluate import (
    BenchReport,
    DistributionSummary,
    ScanScenario,
    SweepRow,
    bench_encoder,
    estimate_distribution,
    run_scan,
    snr_sweep,
)
from .nn import DenseLayer, DenseNetwork, TrainConfig, flop_count
from .signals import (
    DEFAULT_GRID,
    DampedOscParams,
    Dataset,
    ExpDecayParams,
    NoiseSpec,
    ParamDistribution,
    ParamSpec,
    SamplingGrid,
    Signal,
    gen_damped_osc,
    gen_exp_decay,
    load_dataset,
    make_dataset,
    save_dataset,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
