"""Model signals, calibrated noise, and dataset generation.

Two signal families are supported on a uniform sampling grid:

    exp-decay:   y(t) = A0 * exp(-t / tau) + y0
    damped-osc:  y(t) = A0 * exp(-t / tau) * cos(2 pi f t + phi) + y0

Noise is i.i.d. Gaussian per sample with variance sigma^2 = A0 / SNR, i.e.
the signal-to-noise ratio is defined as initial amplitude over noise
variance; with A0 = 1 the noise stddev is SNR**-0.5.

All times are seconds and frequencies Hz. Generators are pure functions of
their arguments (including RNG seeds), built on numpy's seedable PCG64
generator (ziggurat Gaussian transform), so identical inputs reproduce
bit-identical output on any platform.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

KIND_EXP = "exp-decay"
KIND_OSC = "damped-osc"

_KIND_ALIASES = {
    "exp": KIND_EXP,
    "exp-decay": KIND_EXP,
    "osc": KIND_OSC,
    "damped-osc": KIND_OSC,
}

DEFAULT_TRAINING_SNR = float(2**20)
DEFAULT_DATASET_SIZE = {KIND_EXP: 200, KIND_OSC: 1000}


def normalize_kind(kind: str) -> str:
    try:
        return _KIND_ALIASES[kind]
    except KeyError:
        raise ValueError(f"unknown signal kind {kind!r}; expected 'exp' or 'osc'") from None


@dataclass(frozen=True)
class SamplingGrid:
    """Uniform time grid: sample k lies at t0 + k / sample_rate."""

    n_samples: int
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) / self.sample_rate


DEFAULT_GRID = SamplingGrid(n_samples=1000, sample_rate=200e6)


@dataclass(frozen=True)
class ExpDecayParams:
    """Ground-truth or estimated parameters of an exponential decay."""

    tau: float
    amplitude: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def kind(self) -> str:
        return KIND_EXP


@dataclass(frozen=True)
class DampedOscParams:
    """Parameters of an exponentially damped cosine."""

    tau: float
    f: float
    phi: float
    amplitude: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.f > 0:
            raise ValueError("f must be positive")

    @property
    def kind(self) -> str:
        return KIND_OSC


SignalParams = ExpDecayParams | DampedOscParams


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian noise level expressed through the SNR convention.

    snr may be math.inf for noiseless generation. The seed feeds a fresh
    numpy Generator; the same (snr, seed) always reproduces the same noise.
    """

    snr: float = math.inf
    seed: int | tuple[int, ...] | None = None

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("snr must be positive")

    def sigma(self, amplitude: float = 1.0) -> float:
        if math.isinf(self.snr):
            return 0.0
        return math.sqrt(amplitude / self.snr)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    grid: SamplingGrid

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.shape != (self.grid.n_samples,):
            raise ValueError("samples length must equal grid.n_samples")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")


def _clean_exp(params: ExpDecayParams, t: np.ndarray) -> np.ndarray:
    return params.amplitude * np.exp(-t / params.tau) + params.offset


def _clean_osc(params: DampedOscParams, t: np.ndarray) -> np.ndarray:
    envelope = params.amplitude * np.exp(-t / params.tau)
    return envelope * np.cos(2.0 * np.pi * params.f * t + params.phi) + params.offset


def _with_noise(clean: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0.0:
        return clean
    return clean + rng.normal(0.0, sigma, clean.shape)


def gen_exp_decay(params: ExpDecayParams, grid: SamplingGrid, noise: NoiseSpec = NoiseSpec()) -> Signal:
    """Generate one exponential-decay signal, optionally with noise."""
    clean = _clean_exp(params, grid.times())
    samples = _with_noise(clean, noise.sigma(params.amplitude), noise.rng())
    return Signal(samples, grid)


def gen_damped_osc(params: DampedOscParams, grid: SamplingGrid, noise: NoiseSpec = NoiseSpec()) -> Signal:
    """Generate one damped-oscillation signal, optionally with noise."""
    clean = _clean_osc(params, grid.times())
    samples = _with_noise(clean, noise.sigma(params.amplitude), noise.rng())
    return Signal(samples, grid)


def clean_signal(params: SignalParams, grid: SamplingGrid) -> Signal:
    """Noiseless signal for either kind."""
    if isinstance(params, ExpDecayParams):
        return gen_exp_decay(params, grid)
    return gen_damped_osc(params, grid)


@dataclass(frozen=True)
class ParamSpec:
    """One free parameter: name, Gaussian moments, and draw transform."""

    name: str
    mean: float
    stddev: float
    transform: str = "identity"  # identity | abs

    def __post_init__(self):
        if not self.stddev >= 0:
            raise ValueError("stddev must be non-negative")
        if self.transform not in ("identity", "abs"):
            raise ValueError(f"unknown transform {self.transform!r}")


@dataclass(frozen=True)
class ParamDistribution:
    """Ordered free-parameter distributions for one signal kind."""

    kind: str
    specs: tuple[ParamSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", normalize_kind(self.kind))
        expected = ("tau",) if self.kind == KIND_EXP else ("tau", "f", "phi")
        names = tuple(s.name for s in self.specs)
        if names != expected:
            raise ValueError(f"{self.kind} distribution must define {expected}, got {names}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.specs)

    def means(self) -> np.ndarray:
        return np.array([s.mean for s in self.specs])

    def stddevs(self) -> np.ndarray:
        return np.array([s.stddev for s in self.specs])


def default_distribution(kind: str) -> ParamDistribution:
    """Training distributions: tau ~ |N(1 us, 0.5 us)|, f ~ N(3 MHz, 0.1 MHz), phi ~ N(0, 0.1)."""
    kind = normalize_kind(kind)
    tau = ParamSpec("tau", 1e-6, 0.5e-6, transform="abs")
    if kind == KIND_EXP:
        return ParamDistribution(kind, (tau,))
    return ParamDistribution(kind, (tau, ParamSpec("f", 3e6, 0.1e6), ParamSpec("phi", 0.0, 0.1)))


def params_from_values(kind: str, values) -> SignalParams:
    kind = normalize_kind(kind)
    values = [float(v) for v in values]
    if kind == KIND_EXP:
        return ExpDecayParams(tau=values[0])
    return DampedOscParams(tau=values[0], f=values[1], phi=values[2])


def free_values(params: SignalParams) -> np.ndarray:
    """Free-parameter vector in distribution order (tau[, f, phi])."""
    if isinstance(params, ExpDecayParams):
        return np.array([params.tau])
    return np.array([params.tau, params.f, params.phi])


def sample_params(
    kind: str,
    dist: ParamDistribution,
    rng: np.random.Generator,
    max_abs_latent: float | None = None,
) -> SignalParams:
    """Draw one free-parameter set from `dist`.

    Parameters marked transform="abs" are folded (absolute value of the
    Gaussian draw), so tau support stays positive. When max_abs_latent is
    given, draws whose scaled offset |x - mean| / (3 stddev) exceeds it are
    redrawn per parameter; this keeps latent training targets inside the
    representable range of a tanh latent layer.

    Returns
    -------
    ExpDecayParams or DampedOscParams
    """
    kind = normalize_kind(kind)
    if dist.kind != kind:
        raise ValueError(f"distribution is for {dist.kind}, not {kind}")
    values = []
    for spec in dist.specs:
        for _ in range(1000):
            x = rng.normal(spec.mean, spec.stddev)
            if spec.transform == "abs":
                x = abs(x)
            if x == 0.0 and spec.name == "tau":
                continue  # tau = 0 is outside the model's domain
            if max_abs_latent is not None and spec.stddev > 0:
                if abs(x - spec.mean) > 3.0 * spec.stddev * max_abs_latent:
                    continue
            values.append(x)
            break
        else:
            raise ValueError(f"could not draw {spec.name} within constraints")
    return params_from_values(kind, values)


@dataclass
class Dataset:
    """Signals plus ground truth, all on one grid.

    samples holds one signal per row; truths holds the matching parameter
    objects. Iterating yields (Signal, params) pairs.
    """

    kind: str
    grid: SamplingGrid
    samples: np.ndarray
    truths: list
    dist: ParamDistribution
    snr: float
    seed: int
    max_abs_latent: float | None = None
    latent_overflow_fraction: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.truths) != self.samples.shape[0]:
            raise ValueError("samples / truths length mismatch")
        if self.samples.shape[0] == 0:
            raise ValueError("dataset must be non-empty")
        if self.samples.shape[1] != self.grid.n_samples:
            raise ValueError("sample rows must match grid.n_samples")

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __iter__(self):
        for row, truth in zip(self.samples, self.truths):
            yield Signal(row, self.grid), truth

    def signal(self, i: int) -> Signal:
        return Signal(self.samples[i], self.grid)

    def truth_matrix(self) -> np.ndarray:
        return np.stack([free_values(p) for p in self.truths])


def _signal_rng(seed: int, index: int) -> np.random.Generator:
    # One independent stream per signal index: parallel-safe and identical
    # to sequential generation.
    return np.random.default_rng((int(seed), int(index)))


def make_dataset(
    kind: str,
    n: int | None = None,
    dist: ParamDistribution | None = None,
    grid: SamplingGrid = DEFAULT_GRID,
    snr: float = DEFAULT_TRAINING_SNR,
    seed: int = 0,
    max_abs_latent: float | None = None,
) -> Dataset:
    """Generate n (signal, ground-truth) pairs.

    Defaults follow the training configurations: 200 exp-decay or 1000
    damped-osc signals, SNR 2**20, 1000 samples at 200 MHz. The result is a
    pure function of all arguments; signal i consumes RNG stream (seed, i).
    """
    kind = normalize_kind(kind)
    if n is None:
        n = DEFAULT_DATASET_SIZE[kind]
    if n < 1:
        raise ValueError("n must be >= 1")
    if not snr > 0:
        raise ValueError("snr must be positive")
    if dist is None:
        dist = default_distribution(kind)
    elif dist.kind != kind:
        raise ValueError(f"distribution is for {dist.kind}, not {kind}")

    t = grid.times()
    sigma = 0.0 if math.isinf(snr) else math.sqrt(1.0 / snr)
    samples = np.empty((n, grid.n_samples))
    truths = []
    overflow = 0
    for i in range(n):
        rng = _signal_rng(seed, i)
        params = sample_params(kind, dist, rng, max_abs_latent=max_abs_latent)
        values = free_values(params)
        scaled = np.abs(values - dist.means()) / (3.0 * dist.stddevs())
        overflow += int(np.any(scaled >= 1.0))
        clean = _clean_exp(params, t) if kind == KIND_EXP else _clean_osc(params, t)
        samples[i] = _with_noise(clean, sigma, rng)
        truths.append(params)
    return Dataset(
        kind=kind,
        grid=grid,
        samples=samples,
        truths=truths,
        dist=dist,
        snr=snr,
        seed=seed,
        max_abs_latent=max_abs_latent,
        latent_overflow_fraction=overflow / n,
    )


# ---------------------------------------------------------------------------
# Persistence: versioned binary container + JSON export.

_MAGIC = b"LFDS"
_VERSION = 1
_KIND_CODE = {KIND_EXP: 1, KIND_OSC: 2}
_KIND_FROM_CODE = {v: k for k, v in _KIND_CODE.items()}
_TRANSFORM_CODE = {"identity": 0, "abs": 1}
_TRANSFORM_FROM_CODE = {v: k for k, v in _TRANSFORM_CODE.items()}
_TRUTH_WIDTH = {KIND_EXP: 3, KIND_OSC: 5}  # amplitude, tau[, f, phi], offset


def _truth_record(params: SignalParams) -> list[float]:
    if isinstance(params, ExpDecayParams):
        return [params.amplitude, params.tau, params.offset]
    return [params.amplitude, params.tau, params.f, params.phi, params.offset]


def _truth_from_record(kind: str, rec) -> SignalParams:
    if kind == KIND_EXP:
        return ExpDecayParams(amplitude=rec[0], tau=rec[1], offset=rec[2])
    return DampedOscParams(amplitude=rec[0], tau=rec[1], f=rec[2], phi=rec[3], offset=rec[4])


def save_dataset(dataset: Dataset, path) -> None:
    """Write the single-file binary container (little-endian float64 blocks)."""
    header = struct.pack(
        "<4sIBQQdddqdd",
        _MAGIC,
        _VERSION,
        _KIND_CODE[dataset.kind],
        len(dataset),
        dataset.grid.n_samples,
        dataset.grid.sample_rate,
        dataset.grid.t0,
        dataset.snr,
        int(dataset.seed),
        math.nan if dataset.max_abs_latent is None else dataset.max_abs_latent,
        dataset.latent_overflow_fraction,
    )
    parts = [header, struct.pack("<I", len(dataset.dist.specs))]
    for spec in dataset.dist.specs:
        name = spec.name.encode()
        parts.append(struct.pack("<B", len(name)) + name)
        parts.append(struct.pack("<ddB", spec.mean, spec.stddev, _TRANSFORM_CODE[spec.transform]))
    truth = np.array([_truth_record(p) for p in dataset.truths])
    parts.append(np.ascontiguousarray(truth, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(dataset.samples, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    head_fmt = "<4sIBQQdddqdd"
    head_size = struct.calcsize(head_fmt)
    if len(raw) < head_size:
        raise FormatError("dataset file truncated")
    (magic, version, kind_code, n, n_samples, rate, t0, snr, seed, max_lat, overflow) = struct.unpack_from(head_fmt, raw)
    if magic != _MAGIC:
        raise FormatError("not a latentfit dataset file (bad magic)")
    if version != _VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    if kind_code not in _KIND_FROM_CODE:
        raise FormatError(f"unknown kind code {kind_code}")
    kind = _KIND_FROM_CODE[kind_code]
    off = head_size
    (n_params,) = struct.unpack_from("<I", raw, off)
    off += 4
    specs = []
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<B", raw, off)
        off += 1
        name = raw[off : off + name_len].decode()
        off += name_len
        mean, stddev, tcode = struct.unpack_from("<ddB", raw, off)
        off += struct.calcsize("<ddB")
        if tcode not in _TRANSFORM_FROM_CODE:
            raise FormatError(f"unknown transform code {tcode}")
        specs.append(ParamSpec(name, mean, stddev, _TRANSFORM_FROM_CODE[tcode]))
    width = _TRUTH_WIDTH[kind]
    truth_bytes = n * width * 8
    sample_bytes = n * n_samples * 8
    if len(raw) != off + truth_bytes + sample_bytes:
        raise FormatError("dataset payload size mismatch")
    truth = np.frombuffer(raw, dtype="<f8", count=n * width, offset=off).reshape(n, width)
    off += truth_bytes
    samples = np.frombuffer(raw, dtype="<f8", count=n * n_samples, offset=off).reshape(n, n_samples).copy()
    return Dataset(
        kind=kind,
        grid=SamplingGrid(n_samples=n_samples, sample_rate=rate, t0=t0),
        samples=samples,
        truths=[_truth_from_record(kind, rec) for rec in truth],
        dist=ParamDistribution(kind, tuple(specs)),
        snr=snr,
        seed=seed,
        max_abs_latent=None if math.isnan(max_lat) else max_lat,
        latent_overflow_fraction=overflow,
    )


def dataset_to_json(dataset: Dataset) -> str:
    """Lossless JSON export for inspection (floats via repr round-trip)."""
    doc = {
        "kind": dataset.kind,
        "n": len(dataset),
        "grid": {
            "n_samples": dataset.grid.n_samples,
            "sample_rate": dataset.grid.sample_rate,
            "t0": dataset.grid.t0,
        },
        "snr": "inf" if math.isinf(dataset.snr) else dataset.snr,
        "seed": dataset.seed,
        "max_abs_latent": dataset.max_abs_latent,
        "latent_overflow_fraction": dataset.latent_overflow_fraction,
        "distribution": [
            {"name": s.name, "mean": s.mean, "stddev": s.stddev, "transform": s.transform}
            for s in dataset.dist.specs
        ],
        "truths": [_truth_record(p) for p in dataset.truths],
        "samples": [list(row) for row in dataset.samples],
    }
    return json.dumps(doc)
