"""Evaluation protocols: estimate histograms, SNR sweeps against the CRLB,
spectral-scan tracking, and encoder throughput benchmarks.

Everything here is reproducible from (model, seed): Monte-Carlo draws use
per-index RNG streams, estimators are pure, and the CSV renderers format
floats with full round-trip precision so identical runs give identical
bytes.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .autoencoder import AutoencoderModel, encode_values
from .baselines import fisher_sigmas, fit_for_kind, lm_curve_fit
from .errors import EstimateUnavailableError, FitDegenerateError
from .signals import (
    DampedOscParams,
    ExpDecayParams,
    KIND_EXP,
    KIND_OSC,
    SamplingGrid,
    Signal,
    SignalParams,
    clean_signal,
    free_values,
)

PARAM_UNITS = {"tau": "s", "f": "Hz", "phi": "rad", "amplitude": "1", "offset": "1"}

METHOD_AE = "autoencoder"
METHOD_LS = "least-squares"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


# ---------------------------------------------------------------------------
# Estimate distributions (histogram + Gaussian fit).


@dataclass(frozen=True)
class DistributionSummary:
    """Moments of (estimate - reference) plus an optional Gaussian fit."""

    n: int
    mean: float
    stddev: float
    center: float | None = None
    center_sigma: float | None = None
    sigma: float | None = None
    sigma_sigma: float | None = None

    @property
    def has_fit(self) -> bool:
        return self.center is not None

    @property
    def fwhm(self) -> float | None:
        if self.sigma is None:
            return None
        return 2.0 * math.sqrt(2.0 * math.log(2.0)) * self.sigma

    @property
    def fwhm_sigma(self) -> float | None:
        if self.sigma_sigma is None:
            return None
        return 2.0 * math.sqrt(2.0 * math.log(2.0)) * self.sigma_sigma

    @property
    def center_significance(self) -> float | None:
        if self.center is None or not self.center_sigma:
            return None
        return self.center / self.center_sigma


def _gauss_model(x, p):
    a, c, s = p
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        return a * np.exp(-((x - c) ** 2) / (2.0 * s * s))


def _gauss_jacobian(x, p):
    a, c, s = p
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        u = x - c
        g = np.exp(-(u**2) / (2.0 * s * s))
        return np.column_stack([g, a * g * u / (s * s), a * g * u**2 / (s**3)])


def freedman_diaconis_bins(values: np.ndarray) -> np.ndarray:
    """Bin edges with width 2 IQR / n^(1/3), clamped to [5, 200] bins."""
    values = np.asarray(values, dtype=np.float64)
    q75, q25 = np.percentile(values, [75, 25])
    width = 2.0 * (q75 - q25) / len(values) ** (1.0 / 3.0)
    span = float(values.max() - values.min())
    if width <= 0 or span <= 0:
        raise ValueError("degenerate value range for binning")
    n_bins = int(np.clip(math.ceil(span / width), 5, 200))
    return np.linspace(values.min(), values.max(), n_bins + 1)


def estimate_distribution(estimates, reference: float) -> DistributionSummary:
    """Histogram (estimate - reference) and fit a Gaussian to the counts.

    Needs n >= 50 for the fit; below that, or for zero-variance input, the
    moments are reported without a fit. The fit is plain least squares on
    Freedman-Diaconis binned counts; center uncertainty supports the
    "significance of the offset" readout.
    """
    deltas = np.asarray(estimates, dtype=np.float64) - reference
    if deltas.ndim != 1 or len(deltas) < 2:
        raise ValueError("need a 1-D vector of at least 2 estimates")
    n = len(deltas)
    mean = float(np.mean(deltas))
    stddev = float(np.std(deltas, ddof=1))
    if n < 50 or stddev == 0.0:
        return DistributionSummary(n=n, mean=mean, stddev=stddev)
    try:
        edges = freedman_diaconis_bins(deltas)
    except ValueError:
        return DistributionSummary(n=n, mean=mean, stddev=stddev)
    counts, edges = np.histogram(deltas, bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    p0 = np.array([float(counts.max()), mean, stddev])
    try:
        p, sig, _, _, _, _ = lm_curve_fit(centers, counts.astype(np.float64), _gauss_model, _gauss_jacobian, p0)
    except FitDegenerateError:
        return DistributionSummary(n=n, mean=mean, stddev=stddev)
    return DistributionSummary(
        n=n,
        mean=mean,
        stddev=stddev,
        center=float(p[1]),
        center_sigma=float(sig[1]),
        sigma=float(abs(p[2])),
        sigma_sigma=float(sig[2]),
    )


def summary_to_csv(summary: DistributionSummary, unit: str = "1") -> str:
    header = (
        "n,mean,stddev,gauss_center,gauss_center_sigma,gauss_sigma,"
        "gauss_sigma_sigma,gauss_fwhm,gauss_fwhm_sigma,center_significance,unit"
    )
    row = ",".join(
        [
            str(summary.n),
            _fmt(summary.mean),
            _fmt(summary.stddev),
            _fmt(summary.center),
            _fmt(summary.center_sigma),
            _fmt(summary.sigma),
            _fmt(summary.sigma_sigma),
            _fmt(summary.fwhm),
            _fmt(summary.fwhm_sigma),
            _fmt(summary.center_significance),
            unit,
        ]
    )
    return header + "\n" + row + "\n"


# ---------------------------------------------------------------------------
# Monte-Carlo draws shared by sweep and scan.


def _default_true_params(model: AutoencoderModel) -> SignalParams:
    mus = model.mapping.mus()
    if model.kind == KIND_EXP:
        return ExpDecayParams(tau=float(mus[0]))
    return DampedOscParams(tau=float(mus[0]), f=float(mus[1]), phi=float(mus[2]))


def draw_signals(params: SignalParams, grid: SamplingGrid, snr: float, seed: int, block: int, n: int) -> np.ndarray:
    clean = clean_signal(params, grid).samples
    sigma = math.sqrt(params.amplitude / snr) if math.isfinite(snr) else 0.0
    out = np.empty((n, grid.n_samples))
    for i in range(n):
        rng = np.random.default_rng((int(seed), int(block), int(i)))
        out[i] = clean + rng.normal(0.0, sigma, grid.n_samples) if sigma else clean
    return out


def ls_estimates(fit_fn, samples: np.ndarray, grid: SamplingGrid, names, threads: int = 1):
    """Fit each row; returns (values (m, k) for successes, failure count).

    A failure is an estimator error or a fit that did not converge; both
    are counted rather than raised so one bad draw cannot abort a sweep.
    """

    def one(row):
        try:
            res = fit_fn(Signal(row, grid))
        except (FitDegenerateError, EstimateUnavailableError, ValueError):
            return None
        if not res.converged:
            return None
        return [res.value(n_) for n_ in names]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, samples))
    else:
        results = [one(row) for row in samples]
    good = [r for r in results if r is not None]
    return np.array(good) if good else np.empty((0, len(names))), len(results) - len(good)


@dataclass(frozen=True)
class SweepRow:
    snr: float
    method: str
    sigmas: dict
    crlb: dict
    n: int
    failures: int

    @property
    def flagged(self) -> bool:
        return self.failures > 0.1 * self.n

    def __post_init__(self):
        for v in self.sigmas.values():
            if not (v >= 0 or math.isnan(v)):
                raise ValueError("empirical sigma must be >= 0")
        for v in self.crlb.values():
            if not v > 0:
                raise ValueError("CRLB must be positive")


def snr_sweep(
    model: AutoencoderModel,
    snr_list,
    n_per_point: int = 100,
    seed: int = 0,
    fit_fn=None,
    true_params: SignalParams | None = None,
    threads: int = 1,
) -> list[SweepRow]:
    """Empirical sigma of both estimators vs the CRLB over an SNR grid.

    True parameters stay fixed (default: the model's mapping centers);
    only the noise changes. Each SNR point draws n_per_point signals with
    per-index RNG streams, so results do not depend on thread count.
    """
    snrs = [float(s) for s in snr_list]
    if not snrs:
        raise ValueError("snr_list must be non-empty")
    if any(not (s > 0 and math.isfinite(s)) for s in snrs):
        raise ValueError("every snr must be positive and finite")
    if true_params is None:
        true_params = _default_true_params(model)
    if fit_fn is None:
        fit_fn = fit_for_kind(model.kind)
    names = model.mapping.names
    rows: list[SweepRow] = []
    for block, snr in enumerate(snrs):
        samples = draw_signals(true_params, model.grid, snr, seed, block, n_per_point)
        crlb_all = fisher_sigmas(model.kind, true_params, model.grid, snr)
        crlb = {n_: crlb_all[n_] for n_ in names}
        ae_vals = encode_values(model, samples)
        ae_sig = {n_: float(np.std(ae_vals[:, j], ddof=1)) for j, n_ in enumerate(names)}
        rows.append(SweepRow(snr, METHOD_AE, ae_sig, crlb, n_per_point, 0))
        ls_vals, failures = ls_estimates(fit_fn, samples, model.grid, names, threads)
        if len(ls_vals) >= 2:
            ls_sig = {n_: float(np.std(ls_vals[:, j], ddof=1)) for j, n_ in enumerate(names)}
        else:
            ls_sig = {n_: math.nan for n_ in names}
        rows.append(SweepRow(snr, METHOD_LS, ls_sig, crlb, n_per_point, failures))
    return rows


def sweep_to_csv(rows: list[SweepRow]) -> str:
    lines = ["snr,method,param,unit,sigma_empirical,sigma_crlb,n,failures,flagged"]
    for row in rows:
        for name, sig in row.sigmas.items():
            lines.append(
                ",".join(
                    [
                        _fmt(row.snr),
                        row.method,
                        name,
                        PARAM_UNITS.get(name, "1"),
                        _fmt(sig),
                        _fmt(row.crlb[name]),
                        str(row.n),
                        str(row.failures),
                        str(int(row.flagged)),
                    ]
                )
            )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Spectral-scan scenarios.

FEATURE_ABSORPTION = "lorentzian-absorption"
FEATURE_COTTON = "cotton-effect"


@dataclass(frozen=True)
class ScanScenario:
    """Detuning-dependent true parameters for a simulated spectral scan.

    The absorption feature raises the decay rate by a Lorentzian,
    1/tau = (1 + depth w^2/(d^2+w^2))/tau0, so depth=3/7 gives a 30% tau
    drop at line center. The cotton-effect variant adds the dispersive
    frequency shift f = f0 + 2 df_max d w / (d^2 + w^2).
    """

    feature: str
    detunings: tuple = tuple(np.linspace(-4.0, 4.0, 21))
    width: float = 1.0
    tau0: float = 1e-6
    depth: float = 3.0 / 7.0
    f0: float = 3e6
    df_max: float = 5e4
    phi0: float = 0.0
    snr: float = float(2**5)

    def __post_init__(self):
        if self.feature not in (FEATURE_ABSORPTION, FEATURE_COTTON):
            raise ValueError(f"unknown feature {self.feature!r}")
        if not self.width > 0:
            raise ValueError("width must be positive")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if not (self.tau0 > 0 and self.f0 > 0 and self.snr > 0):
            raise ValueError("tau0, f0 and snr must be positive")
        if len(self.detunings) < 3:
            raise ValueError("need at least 3 detuning points")

    @property
    def kind(self) -> str:
        return KIND_EXP if self.feature == FEATURE_ABSORPTION else KIND_OSC

    def true_tau(self, detuning: float) -> float:
        lorentz = self.width**2 / (detuning**2 + self.width**2)
        return self.tau0 / (1.0 + self.depth * lorentz)

    def true_f(self, detuning: float) -> float:
        disp = detuning * self.width / (detuning**2 + self.width**2)
        return self.f0 + 2.0 * self.df_max * disp

    def true_params(self, detuning: float) -> SignalParams:
        if self.kind == KIND_EXP:
            return ExpDecayParams(tau=self.true_tau(detuning))
        return DampedOscParams(tau=self.true_tau(detuning), f=self.true_f(detuning), phi=self.phi0)


@dataclass(frozen=True)
class ScanRow:
    detuning: float
    method: str
    true: dict
    mean: dict
    stddev: dict
    n: int
    failures: int


def run_scan(
    model: AutoencoderModel,
    scenario: ScanScenario,
    n_per_point: int = 100,
    seed: int = 0,
    fit_fn=None,
    threads: int = 1,
) -> list[ScanRow]:
    """Estimate parameters across the scenario's detuning axis.

    Per detuning point, draws n_per_point noisy signals at the true
    (detuning-dependent) parameters and reports mean +- stddev for both
    estimators.
    """
    if scenario.kind != model.kind:
        raise ValueError(f"scenario expects a {scenario.kind} model, got {model.kind}")
    if fit_fn is None:
        fit_fn = fit_for_kind(model.kind)
    names = model.mapping.names
    rows: list[ScanRow] = []
    for block, detuning in enumerate(scenario.detunings):
        params = scenario.true_params(detuning)
        truth = dict(zip(names, free_values(params)))
        samples = draw_signals(params, model.grid, scenario.snr, seed, block, n_per_point)
        ae_vals = encode_values(model, samples)
        rows.append(
            ScanRow(
                float(detuning),
                METHOD_AE,
                truth,
                {n_: float(np.mean(ae_vals[:, j])) for j, n_ in enumerate(names)},
                {n_: float(np.std(ae_vals[:, j], ddof=1)) for j, n_ in enumerate(names)},
                n_per_point,
                0,
            )
        )
        ls_vals, failures = ls_estimates(fit_fn, samples, model.grid, names, threads)
        if len(ls_vals) >= 2:
            mean = {n_: float(np.mean(ls_vals[:, j])) for j, n_ in enumerate(names)}
            std = {n_: float(np.std(ls_vals[:, j], ddof=1)) for j, n_ in enumerate(names)}
        else:
            mean = {n_: math.nan for n_ in names}
            std = {n_: math.nan for n_ in names}
        rows.append(ScanRow(float(detuning), METHOD_LS, truth, mean, std, n_per_point, failures))
    return rows


def scan_to_csv(rows: list[ScanRow]) -> str:
    lines = ["detuning,method,param,unit,true_value,mean,stddev,n,failures"]
    for row in rows:
        for name in row.true:
            lines.append(
                ",".join(
                    [
                        _fmt(row.detuning),
                        row.method,
                        name,
                        PARAM_UNITS.get(name, "1"),
                        _fmt(row.true[name]),
                        _fmt(row.mean[name]),
                        _fmt(row.stddev[name]),
                        str(row.n),
                        str(row.failures),
                    ]
                )
            )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Encoder throughput benchmark.

BENCH_WIDTHS = (
    (1000, 10, 1),
    (1000, 25, 1),
    (1000, 50, 1),
    (1000, 100, 10, 3),
    (1000, 200, 50, 3),
    (1000, 300, 100, 3),
    (1000, 500, 200, 100, 3),
)


@dataclass(frozen=True)
class BenchReport:
    description: str
    flops: int
    batch: int
    repetitions: int
    median_latency_s: float
    p95_latency_s: float
    threads: int = 1
    threaded_rate_hz: float | None = None

    def __post_init__(self):
        if not self.median_latency_s > 0 or not self.p95_latency_s > 0:
            raise ValueError("latencies must be positive")

    @property
    def rate_hz(self) -> float:
        return 1.0 / self.median_latency_s


def _encoder_callable(model: AutoencoderModel):
    layers = model.network.layers[: model.latent_layer_index]
    wts = [np.ascontiguousarray(l.weights.T) for l in layers]
    biases = [l.biases for l in layers]
    scale = 3.0 * model.mapping.zetas()
    mus = model.mapping.mus()

    def run(row):
        a = row
        for wt, b_ in zip(wts, biases):
            a = np.tanh(a @ wt - b_)
        return scale * a + mus

    return run


def _widths_callable(widths, seed: int = 0):
    net = nn.glorot_uniform_init(list(widths), np.random.default_rng((int(seed), 0)))
    wts = [np.ascontiguousarray(l.weights.T) for l in net.layers]
    biases = [l.biases for l in net.layers]
    k = widths[-1]
    scale = np.ones(k)
    mus = np.zeros(k)

    def run(row):
        a = row
        for wt, b_ in zip(wts, biases):
            a = np.tanh(a @ wt - b_)
        return scale * a + mus

    return run, nn.flop_count(net)


def bench_encoder(
    model: AutoencoderModel | None = None,
    widths=None,
    batch: int = 1000,
    repetitions: int = 5,
    seed: int = 0,
    threads: int = 1,
    noop: bool = False,
) -> BenchReport:
    """Per-signal latency of encode (input -> latent -> parameters).

    Times only the encoder pass plus the latent-to-parameter affine map;
    input generation happens before the clock starts. noop=True times an
    empty callable through the same harness, as the control for harness
    overhead. With threads > 1 an additional pooled throughput figure is
    reported; the latency statistics remain single-threaded.
    """
    if batch < 1000:
        raise ValueError("batch must be >= 1000 signals")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if noop:
        run = lambda row: None  # noqa: E731  (timing floor: call + clock only)
        flops = 0
        n_in = 1000 if widths is None else widths[0]
        description = "noop"
    elif model is not None:
        run = _encoder_callable(model)
        flops = nn.flop_count(model.network, model.latent_layer_index)
        n_in = model.grid.n_samples
        description = "-".join(str(w) for w in ([model.grid.n_samples] + model.network.widths[1 : model.latent_layer_index + 1]))
    elif widths is not None:
        run, flops = _widths_callable(widths, seed)
        n_in = widths[0]
        description = "-".join(str(w) for w in widths)
    else:
        raise ValueError("provide a model, widths, or noop=True")
    rng = np.random.default_rng((int(seed), 1))
    signals = rng.standard_normal((batch, n_in))
    for i in range(min(50, batch)):  # warm-up: caches, BLAS init
        run(signals[i])
    clock = time.perf_counter_ns
    lat = np.empty(batch * repetitions)
    k = 0
    for _ in range(repetitions):
        for i in range(batch):
            t0 = clock()
            run(signals[i])
            lat[k] = clock() - t0
            k += 1
    lat *= 1e-9
    threaded_rate = None
    if threads > 1 and not noop:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, signals[: min(200, batch)]))  # pool warm-up
            t0 = clock()
            for _ in range(repetitions):
                list(pool.map(run, signals))
            threaded_rate = batch * repetitions / ((clock() - t0) * 1e-9)
    return BenchReport(
        description=description,
        flops=flops,
        batch=batch,
        repetitions=repetitions,
        median_latency_s=float(np.median(lat)),
        p95_latency_s=float(np.percentile(lat, 95)),
        threads=threads,
        threaded_rate_hz=threaded_rate,
    )


def bench_to_csv(reports) -> str:
    lines = [
        "widths,flops,batch,repetitions,threads,median_latency_s,p95_latency_s,rate_hz,threaded_rate_hz"
    ]
    for r in [reports] if isinstance(reports, BenchReport) else reports:
        lines.append(
            ",".join(
                [
                    r.description,
                    str(r.flops),
                    str(r.batch),
                    str(r.repetitions),
                    str(r.threads),
                    _fmt(r.median_latency_s),
                    _fmt(r.p95_latency_s),
                    _fmt(r.rate_hz),
                    _fmt(r.threaded_rate_hz),
                ]
            )
        )
    return "\n".join(lines) + "\n"
