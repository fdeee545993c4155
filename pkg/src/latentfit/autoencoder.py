"""Hourglass autoencoders whose latent layer holds physical parameters.

The latent convention maps parameter x with distribution moments (mu, zeta)
to x_lat = (x - mu) / (3 zeta) and back; three latent units span (tau, f,
phi) for damped oscillations, one spans tau for plain decays. Training runs
the three-stage protocol: (1) full net input->input, (2) encoder
input->latent truth, (3) decoder latent-truth->input, repeated over fresh
datasets.
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import FormatError, InvalidStateError
from .signals import (
    DEFAULT_GRID,
    DEFAULT_TRAINING_SNR,
    KIND_EXP,
    KIND_OSC,
    ParamDistribution,
    SamplingGrid,
    Signal,
    SignalParams,
    default_distribution,
    free_values,
    make_dataset,
    normalize_kind,
    params_from_values,
)

TOPOLOGY = {
    KIND_EXP: ([50, 1, 50], 2),  # hidden widths, encoder depth in weight layers
    KIND_OSC: ([50, 10, 3, 10, 50], 3),
}

# Latent targets beyond this magnitude are resampled at dataset generation;
# a tanh latent neuron cannot represent values at or beyond +-1.
LATENT_CLIP = 0.995


@dataclass(frozen=True)
class LatentMapping:
    """Ordered (name, mu, zeta) triples, one per latent unit."""

    channels: tuple[tuple[str, float, float], ...]

    def __post_init__(self):
        for name, _, zeta in self.channels:
            if not zeta > 0:
                raise ValueError(f"zeta for {name!r} must be positive")

    def __len__(self) -> int:
        return len(self.channels)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c[0] for c in self.channels)

    def mus(self) -> np.ndarray:
        return np.array([c[1] for c in self.channels])

    def zetas(self) -> np.ndarray:
        return np.array([c[2] for c in self.channels])

    @classmethod
    def from_distribution(cls, dist: ParamDistribution) -> "LatentMapping":
        return cls(tuple((s.name, s.mean, s.stddev) for s in dist.specs))


def to_latent(params, mapping: LatentMapping) -> np.ndarray:
    """(x - mu) / (3 zeta) per channel; accepts params objects or value arrays."""
    if hasattr(params, "tau"):
        values = free_values(params)
    else:
        values = np.asarray(params, dtype=np.float64)
    if values.shape[-1] != len(mapping):
        raise ValueError("parameter count does not match mapping length")
    return (values - mapping.mus()) / (3.0 * mapping.zetas())


def from_latent(latent, mapping: LatentMapping) -> np.ndarray:
    """Inverse latent map: x = 3 zeta x_lat + mu."""
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape[-1] != len(mapping):
        raise ValueError("latent length does not match mapping length")
    return 3.0 * mapping.zetas() * latent + mapping.mus()


@dataclass
class AutoencoderModel:
    network: nn.DenseNetwork
    latent_layer_index: int
    mapping: LatentMapping
    kind: str
    grid: SamplingGrid
    trained: bool = False

    def __post_init__(self):
        self.kind = normalize_kind(self.kind)
        latent_width = self.network.layers[self.latent_layer_index - 1].n_out
        if latent_width != len(self.mapping):
            raise ValueError("latent layer width does not match mapping length")

    @property
    def encoder(self) -> nn.DenseNetwork:
        return self.network.sub(0, self.latent_layer_index)

    @property
    def decoder(self) -> nn.DenseNetwork:
        return self.network.sub(self.latent_layer_index, len(self.network.layers))


def build(kind: str, grid: SamplingGrid = DEFAULT_GRID, dist: ParamDistribution | None = None, init_seed: int = 0) -> AutoencoderModel:
    """Freshly initialized reference topology for the kind.

    exp-decay: widths [n, 50, 1, 50, n]; damped-osc: [n, 50, 10, 3, 10, 50, n]
    with n = grid.n_samples, tanh on every layer after the input.
    """
    kind = normalize_kind(kind)
    hidden, enc_depth = TOPOLOGY[kind]
    widths = [grid.n_samples] + hidden + [grid.n_samples]
    rng = np.random.default_rng((int(init_seed), 0))
    network = nn.glorot_uniform_init(widths, rng, activation="tanh")
    if dist is None:
        dist = default_distribution(kind)
    return AutoencoderModel(
        network=network,
        latent_layer_index=enc_depth,
        mapping=LatentMapping.from_distribution(dist),
        kind=kind,
        grid=grid,
    )


def encode_latent(model: AutoencoderModel, samples: np.ndarray) -> np.ndarray:
    """Raw latent activations; runs encoder layers only, never the decoder."""
    if not model.trained:
        raise InvalidStateError("model has not been trained")
    return model.network.forward(samples, up_to_layer=model.latent_layer_index)


def encode_values(model: AutoencoderModel, samples: np.ndarray) -> np.ndarray:
    """Physical parameter values for one signal vector or a batch matrix."""
    return from_latent(encode_latent(model, samples), model.mapping)


def encode(model: AutoencoderModel, signal: Signal) -> SignalParams:
    """Parameter estimate for one signal, via the latent layer only."""
    values = encode_values(model, signal.samples)
    return params_from_values(model.kind, values)


def reconstruct(model: AutoencoderModel, signal: Signal) -> Signal:
    """Full autoencoder pass; output lives on the model's grid."""
    if not model.trained:
        raise InvalidStateError("model has not been trained")
    return Signal(model.network.forward(signal.samples), model.grid)


@dataclass
class TrainReport:
    """Loss history of a training run.

    records rows are (stage, dataset_index, rep_index, epoch, train_loss,
    val_loss); losses are MSE per output neuron. Wall time is informational
    and excluded from the CSV export so identical seeds yield identical
    bytes.
    """

    kind: str
    n_datasets: int
    reps_per_dataset: int
    stage_epochs: tuple[int, int, int]
    config: nn.TrainConfig
    records: list = field(default_factory=list)
    latent_overflow_fraction: float = 0.0
    final_val_losses: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    def series(self, stage: int, which: str = "train") -> np.ndarray:
        col = 4 if which == "train" else 5
        return np.array([r[col] for r in self.records if r[0] == stage])

    def to_csv_text(self) -> str:
        lines = ["stage,dataset,rep,epoch,train_loss_per_neuron,val_loss_per_neuron"]
        for r in self.records:
            lines.append(f"{r[0]},{r[1]},{r[2]},{r[3]},{r[4]:.17g},{r[5]:.17g}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv_text())


def _dataset_seed(seed: int, dataset_index: int) -> int:
    ss = np.random.SeedSequence((int(seed), 3, int(dataset_index)))
    return int(ss.generate_state(1, np.uint32)[0])


def _val_loss(net: nn.DenseNetwork, inputs: np.ndarray, targets: np.ndarray) -> float:
    return nn.mse_loss(net.forward(inputs), targets)


def train_three_stage(
    model: AutoencoderModel,
    config: nn.TrainConfig = nn.TrainConfig(),
    n_datasets: int = 10,
    reps_per_dataset: int = 10,
    stage_epochs: tuple[int, int, int] = (100, 100, 100),
    snr: float = DEFAULT_TRAINING_SNR,
    dataset_size: int | None = None,
    val_fraction: float = 0.1,
    progress=None,
) -> TrainReport:
    """Run the three-stage protocol in place on `model`.

    Per dataset, stages 1-3 repeat reps_per_dataset times; a fresh dataset
    (new parameters and noise at `snr`) is generated for each outer
    iteration. 10% of each dataset is held out for the reported validation
    losses. Deterministic given (model init, config.seed). `progress`, if
    given, is called as progress(stage, dataset, rep, epoch, loss) after
    every epoch.
    """
    dist = ParamDistribution(model.kind, tuple(
        _spec_from_channel(c) for c in model.mapping.channels
    ))
    net = model.network
    enc = model.encoder
    dec = model.decoder
    shuffle_rng = np.random.default_rng((int(config.seed), 2))
    report = TrainReport(model.kind, n_datasets, reps_per_dataset, tuple(stage_epochs), config)
    t_start = time.monotonic()
    overflow = []
    val_inputs = val_latent = None
    for d in range(n_datasets):
        ds = make_dataset(model.kind, n=dataset_size, dist=dist, grid=model.grid,
                          snr=snr, seed=_dataset_seed(config.seed, d), max_abs_latent=LATENT_CLIP)
        overflow.append(ds.latent_overflow_fraction)
        n_val = max(1, int(round(val_fraction * len(ds)))) if val_fraction > 0 else 0
        train_inputs = ds.samples[: len(ds) - n_val]
        val_inputs = ds.samples[len(ds) - n_val :]
        latent_targets = to_latent(ds.truth_matrix(), model.mapping)
        train_latent = latent_targets[: len(ds) - n_val]
        val_latent = latent_targets[len(ds) - n_val :]
        for rep in range(reps_per_dataset):
            stages = (
                (1, net, train_inputs, train_inputs, val_inputs, val_inputs),
                (2, enc, train_inputs, train_latent, val_inputs, val_latent),
                (3, dec, train_latent, train_inputs, val_latent, val_inputs),
            )
            for stage, sub, x, y, vx, vy in stages:
                epochs = stage_epochs[stage - 1]
                for epoch in range(epochs):
                    loss = nn.train_epochs(sub, x, y, 1, config.learning_rate,
                                           config.batch_size, shuffle_rng, stage=f"stage{stage}")[0]
                    vloss = _val_loss(sub, vx, vy) if n_val else math.nan
                    report.records.append((stage, d, rep, epoch, loss, vloss))
                    if progress is not None:
                        progress(stage, d, rep, epoch, loss)
    model.trained = True
    report.latent_overflow_fraction = float(np.mean(overflow))
    if val_inputs is not None and len(val_inputs):
        report.final_val_losses = {
            "reconstruction": _val_loss(net, val_inputs, val_inputs),
            "encoder_latent": _val_loss(enc, val_inputs, val_latent),
        }
    report.wall_time_s = time.monotonic() - t_start
    return report


def train_stage1_only(
    model: AutoencoderModel,
    config: nn.TrainConfig = nn.TrainConfig(),
    n_datasets: int = 10,
    reps_per_dataset: int = 10,
    epochs_per_rep: int = 300,
    snr: float = DEFAULT_TRAINING_SNR,
    dataset_size: int | None = None,
    val_fraction: float = 0.1,
    progress=None,
) -> TrainReport:
    """Control run: input->input training only, matched data and epoch budget.

    With the default 300 epochs per repetition this consumes the same
    datasets and the same total epoch count as the three-stage protocol.
    """
    dist = ParamDistribution(model.kind, tuple(
        _spec_from_channel(c) for c in model.mapping.channels
    ))
    net = model.network
    shuffle_rng = np.random.default_rng((int(config.seed), 2))
    report = TrainReport(model.kind, n_datasets, reps_per_dataset, (epochs_per_rep, 0, 0), config)
    t_start = time.monotonic()
    val_inputs = val_latent = None
    for d in range(n_datasets):
        ds = make_dataset(model.kind, n=dataset_size, dist=dist, grid=model.grid,
                          snr=snr, seed=_dataset_seed(config.seed, d), max_abs_latent=LATENT_CLIP)
        n_val = max(1, int(round(val_fraction * len(ds)))) if val_fraction > 0 else 0
        train_inputs = ds.samples[: len(ds) - n_val]
        val_inputs = ds.samples[len(ds) - n_val :]
        latent_targets = to_latent(ds.truth_matrix(), model.mapping)
        val_latent = latent_targets[len(ds) - n_val :]
        for rep in range(reps_per_dataset):
            for epoch in range(epochs_per_rep):
                loss = nn.train_epochs(net, train_inputs, train_inputs, 1, config.learning_rate,
                                       config.batch_size, shuffle_rng, stage="stage1")[0]
                vloss = _val_loss(net, val_inputs, val_inputs) if n_val else math.nan
                report.records.append((1, d, rep, epoch, loss, vloss))
                if progress is not None:
                    progress(1, d, rep, epoch, loss)
    model.trained = True
    if val_inputs is not None and len(val_inputs):
        report.final_val_losses = {
            "reconstruction": _val_loss(net, val_inputs, val_inputs),
            "encoder_latent": _val_loss(model.encoder, val_inputs, val_latent),
        }
    report.wall_time_s = time.monotonic() - t_start
    return report


def _spec_from_channel(channel):
    from .signals import ParamSpec

    name, mu, zeta = channel
    transform = "abs" if name == "tau" else "identity"
    return ParamSpec(name, mu, zeta, transform)


# ---------------------------------------------------------------------------
# Model file: versioned container wrapping the packed network.

_MAGIC = b"LFAE"
_VERSION = 1
_KIND_CODE = {KIND_EXP: 1, KIND_OSC: 2}
_KIND_FROM_CODE = {v: k for k, v in _KIND_CODE.items()}


def save(model: AutoencoderModel, path) -> None:
    parts = [
        struct.pack(
            "<4sIBBIQdd",
            _MAGIC,
            _VERSION,
            _KIND_CODE[model.kind],
            1 if model.trained else 0,
            model.latent_layer_index,
            model.grid.n_samples,
            model.grid.sample_rate,
            model.grid.t0,
        ),
        struct.pack("<I", len(model.mapping)),
    ]
    for name, mu, zeta in model.mapping.channels:
        raw = name.encode()
        parts.append(struct.pack("<B", len(raw)) + raw + struct.pack("<dd", mu, zeta))
    parts.append(nn.pack_network(model.network))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load(path) -> AutoencoderModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    head_fmt = "<4sIBBIQdd"
    if len(raw) < struct.calcsize(head_fmt):
        raise FormatError("model file truncated")
    magic, version, kind_code, trained, latent_idx, n_samples, rate, t0 = struct.unpack_from(head_fmt, raw)
    if magic != _MAGIC:
        raise FormatError("not a latentfit model file (bad magic)")
    if version != _VERSION:
        raise FormatError(f"unsupported model version {version}")
    if kind_code not in _KIND_FROM_CODE:
        raise FormatError(f"unknown kind code {kind_code}")
    off = struct.calcsize(head_fmt)
    (n_channels,) = struct.unpack_from("<I", raw, off)
    off += 4
    channels = []
    for _ in range(n_channels):
        (name_len,) = struct.unpack_from("<B", raw, off)
        off += 1
        name = raw[off : off + name_len].decode()
        off += name_len
        mu, zeta = struct.unpack_from("<dd", raw, off)
        off += 16
        channels.append((name, mu, zeta))
    network, off = nn.unpack_network(raw, off)
    if off != len(raw):
        raise FormatError("model payload size mismatch")
    kind = _KIND_FROM_CODE[kind_code]
    latent_width = network.layers[latent_idx - 1].n_out
    if latent_width != n_channels:
        raise FormatError(
            f"latent width {latent_width} does not match mapping length {n_channels}"
        )
    try:
        return AutoencoderModel(
            network=network,
            latent_layer_index=latent_idx,
            mapping=LatentMapping(tuple(channels)),
            kind=kind,
            grid=SamplingGrid(n_samples=n_samples, sample_rate=rate, t0=t0),
            trained=bool(trained),
        )
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def model_to_json(model: AutoencoderModel, include_weights: bool = False) -> dict:
    doc = {
        "kind": model.kind,
        "trained": model.trained,
        "grid": {
            "n_samples": model.grid.n_samples,
            "sample_rate": model.grid.sample_rate,
            "t0": model.grid.t0,
        },
        "widths": model.network.widths,
        "latent_layer_index": model.latent_layer_index,
        "mapping": [
            {"name": name, "mu": mu, "zeta": zeta} for name, mu, zeta in model.mapping.channels
        ],
        "activations": [l.activation for l in model.network.layers],
        "encoder_flops": nn.flop_count(model.network, model.latent_layer_index),
        "total_flops": nn.flop_count(model.network),
    }
    if include_weights:
        doc["layers"] = [
            {"weights": l.weights.tolist(), "biases": l.biases.tolist()} for l in model.network.layers
        ]
    return doc
