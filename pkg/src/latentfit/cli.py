"""Command line interface.

One executable, subcommands mirroring the library: generate / train /
encode / reconstruct / fit / crlb / eval {hist,sweep,scan,bench} / model
inspect. Flags accept plain SI scientific notation plus the convenience
suffixes us/ms/ns for times and kHz/MHz/GHz for frequencies; everything is
stored and written in SI. A JSON config file can stand in for flags
(--config); explicit flags win. Exit codes: 0 success, 1 domain error,
2 usage or file-format error.

Data goes to files or stdout; progress and diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import autoencoder, baselines, evaluate, nn, signals
from .errors import FormatError, LatentFitError

_TIME_SUFFIXES = {"ns": 1e-9, "us": 1e-6, "µs": 1e-6, "ms": 1e-3, "s": 1.0}
_FREQ_SUFFIXES = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}


def parse_time(text) -> float:
    """Seconds from '5e-6', '5us', '1.81us', '3 ms', ..."""
    if isinstance(text, (int, float)):
        return float(text)
    raw = str(text).strip()
    try:
        return float(raw)
    except ValueError:
        pass
    for suffix in sorted(_TIME_SUFFIXES, key=len, reverse=True):
        if raw.endswith(suffix):
            return float(raw[: -len(suffix)].strip()) * _TIME_SUFFIXES[suffix]
    raise ValueError(f"cannot parse time value {text!r}")


def parse_freq(text) -> float:
    """Hz from '3e6', '3MHz', '200 MHz', ..."""
    if isinstance(text, (int, float)):
        return float(text)
    raw = str(text).strip()
    try:
        return float(raw)
    except ValueError:
        pass
    low = raw.lower()
    for suffix in sorted(_FREQ_SUFFIXES, key=len, reverse=True):
        if low.endswith(suffix):
            return float(raw[: -len(suffix)].strip()) * _FREQ_SUFFIXES[suffix]
    raise ValueError(f"cannot parse frequency value {text!r}")


def parse_snr(text) -> float:
    """SNR from '32', '1048576', or power notation '2^20'."""
    if isinstance(text, (int, float)):
        return float(text)
    raw = str(text).strip()
    if "^" in raw:
        base, _, expo = raw.partition("^")
        return float(base) ** float(expo)
    return float(raw)


# ---------------------------------------------------------------------------
# Config file merging. Flags default to None; a JSON config fills the gaps,
# and anything still unset falls back to the schema default.


def merge_config(args: argparse.Namespace, schema: dict) -> dict:
    cfg = {}
    path = getattr(args, "config", None)
    if path:
        with open(path) as fh:
            try:
                cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise FormatError("config must be a JSON object")
        unknown = sorted(set(cfg) - set(schema))
        if unknown:
            raise FormatError(f"unknown config key(s): {', '.join(unknown)}")
    merged = {}
    for key, (parser, default) in schema.items():
        value = getattr(args, key, None)
        if value is None:
            value = cfg.get(key)
        if value is None:
            merged[key] = default
        else:
            merged[key] = parser(value) if parser else value
    return merged


def _seed_or_env(seed) -> int:
    if seed is not None:
        return int(seed)
    env = os.environ.get("LATENTFIT_SEED")
    return int(env) if env else 0


def _default_threads() -> int:
    return os.cpu_count() or 1


def _column(name: str) -> str:
    return {"tau": "tau_s", "f": "f_hz", "phi": "phi_rad"}.get(name, name)


def _write_text(path, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def _figure_path(out_path) -> Path:
    return Path(out_path).with_suffix(".png")


def _load_model(path) -> autoencoder.AutoencoderModel:
    return autoencoder.load(path)


def _check_model_dataset(model, dataset) -> None:
    if dataset.kind != model.kind:
        raise ValueError(f"dataset kind {dataset.kind} does not match model kind {model.kind}")
    if dataset.grid != model.grid:
        raise ValueError("dataset grid does not match the model's grid")


def _dist_from_options(kind: str, opts: dict) -> signals.ParamDistribution:
    base = signals.default_distribution(kind)
    specs = []
    for spec in base.specs:
        mean = opts.get(f"mu_{spec.name}")
        stddev = opts.get(f"zeta_{spec.name}")
        specs.append(
            signals.ParamSpec(
                spec.name,
                spec.mean if mean is None else mean,
                spec.stddev if stddev is None else stddev,
                spec.transform,
            )
        )
    return signals.ParamDistribution(kind, tuple(specs))


def _grid_from_options(opts: dict) -> signals.SamplingGrid:
    return signals.SamplingGrid(
        n_samples=int(opts["samples"]),
        sample_rate=opts["rate"],
        t0=opts["t0"],
    )


_GRID_SCHEMA = {
    "samples": (int, signals.DEFAULT_GRID.n_samples),
    "rate": (parse_freq, signals.DEFAULT_GRID.sample_rate),
    "t0": (parse_time, signals.DEFAULT_GRID.t0),
}

_DIST_SCHEMA = {
    "mu_tau": (parse_time, None),
    "zeta_tau": (parse_time, None),
    "mu_f": (parse_freq, None),
    "zeta_f": (parse_freq, None),
    "mu_phi": (float, None),
    "zeta_phi": (float, None),
}


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--samples", help="samples per signal (default 1000)")
    p.add_argument("--rate", help="sample rate in Hz, suffixes allowed (default 200MHz)")
    p.add_argument("--t0", help="first sample time in s (default 0)")


def _add_dist_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mu-tau", dest="mu_tau", help="tau distribution mean (time)")
    p.add_argument("--zeta-tau", dest="zeta_tau", help="tau distribution stddev (time)")
    p.add_argument("--mu-f", dest="mu_f", help="frequency distribution mean (freq)")
    p.add_argument("--zeta-f", dest="zeta_f", help="frequency distribution stddev (freq)")
    p.add_argument("--mu-phi", dest="mu_phi", help="phase distribution mean (rad)")
    p.add_argument("--zeta-phi", dest="zeta_phi", help="phase distribution stddev (rad)")


# ---------------------------------------------------------------------------
# Subcommand implementations.


def cmd_generate(args) -> int:
    schema = {
        "kind": (signals.normalize_kind, None),
        "n": (int, None),
        "snr": (parse_snr, signals.DEFAULT_TRAINING_SNR),
        "seed": (int, None),
        "max_abs_latent": (float, None),
        **_GRID_SCHEMA,
        **_DIST_SCHEMA,
    }
    opts = merge_config(args, schema)
    if opts["kind"] is None:
        raise ValueError("--kind is required (exp or osc)")
    dist = _dist_from_options(opts["kind"], opts)
    dataset = signals.make_dataset(
        kind=opts["kind"],
        n=opts["n"],
        dist=dist,
        grid=_grid_from_options(opts),
        snr=opts["snr"],
        seed=_seed_or_env(opts["seed"]),
        max_abs_latent=opts["max_abs_latent"],
    )
    signals.save_dataset(dataset, args.out)
    print(
        f"wrote {len(dataset)} {dataset.kind} signals to {args.out} "
        f"(snr={dataset.snr:g}, seed={dataset.seed})",
        file=sys.stderr,
    )
    return 0


def cmd_train(args) -> int:
    schema = {
        "kind": (signals.normalize_kind, None),
        "seed": (int, None),
        "init_seed": (int, None),
        "datasets": (int, 10),
        "reps": (int, 10),
        "stage_epochs": (str, "100,100,100"),
        "snr": (parse_snr, signals.DEFAULT_TRAINING_SNR),
        "size": (int, None),
        "lr": (float, nn.TrainConfig().learning_rate),
        "batch": (int, nn.TrainConfig().batch_size),
        "val_fraction": (float, 0.1),
        "control": (bool, False),
        **_GRID_SCHEMA,
        **_DIST_SCHEMA,
    }
    opts = merge_config(args, schema)
    if opts["kind"] is None:
        raise ValueError("--kind is required (exp or osc)")
    epochs = tuple(int(e) for e in str(opts["stage_epochs"]).split(","))
    if len(epochs) != 3 or any(e < 0 for e in epochs):
        raise ValueError("--stage-epochs needs three non-negative integers, e.g. 100,100,100")
    seed = _seed_or_env(opts["seed"])
    init_seed = seed if opts["init_seed"] is None else int(opts["init_seed"])
    dist = _dist_from_options(opts["kind"], opts)
    model = autoencoder.build(opts["kind"], grid=_grid_from_options(opts), dist=dist, init_seed=init_seed)
    config = nn.TrainConfig(learning_rate=opts["lr"], batch_size=opts["batch"], seed=seed)

    def progress(stage, dataset, rep, epoch, loss):
        print(f"stage={stage} dataset={dataset} rep={rep} epoch={epoch} loss={loss:.6e}", file=sys.stderr)

    if opts["control"]:
        report = autoencoder.train_stage1_only(
            model, config, n_datasets=opts["datasets"], reps_per_dataset=opts["reps"],
            epochs_per_rep=sum(epochs), snr=opts["snr"], dataset_size=opts["size"],
            val_fraction=opts["val_fraction"], progress=progress,
        )
    else:
        report = autoencoder.train_three_stage(
            model, config, n_datasets=opts["datasets"], reps_per_dataset=opts["reps"],
            stage_epochs=epochs, snr=opts["snr"], dataset_size=opts["size"],
            val_fraction=opts["val_fraction"], progress=progress,
        )
    autoencoder.save(model, args.out)
    print(f"wrote model to {args.out} ({report.wall_time_s:.1f}s)", file=sys.stderr)
    if args.report:
        report.to_csv(args.report)
        if not args.no_figure:
            from . import plots

            plots.plot_train_report(report, _figure_path(args.report))
    return 0


def cmd_encode(args) -> int:
    model = _load_model(args.model)
    dataset = signals.load_dataset(args.infile)
    _check_model_dataset(model, dataset)
    values = autoencoder.encode_values(model, dataset.samples)
    names = model.mapping.names
    lines = ["signal_index," + ",".join(_column(n) for n in names)]
    for i, row in enumerate(values):
        lines.append(str(i) + "," + ",".join(repr(float(v)) for v in row))
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_reconstruct(args) -> int:
    model = _load_model(args.model)
    dataset = signals.load_dataset(args.infile)
    _check_model_dataset(model, dataset)
    index = args.index
    if not 0 <= index < len(dataset):
        raise ValueError(f"--index must be in [0, {len(dataset) - 1}]")
    original = dataset.signal(index)
    recon = autoencoder.reconstruct(model, original)
    t = model.grid.times()
    lines = ["t_s,input,reconstruction"]
    for ti, yi, ri in zip(t, original.samples, recon.samples):
        lines.append(f"{ti!r},{yi!r},{ri!r}")
    _write_text(args.out, "\n".join(lines) + "\n")
    if not args.no_figure:
        from . import plots

        plots.plot_reconstruction(t, original.samples, recon.samples, _figure_path(args.out))
    return 0


def cmd_fit(args) -> int:
    kind = signals.normalize_kind(args.model_fn)
    dataset = signals.load_dataset(args.infile)
    if dataset.kind != kind:
        raise ValueError(f"dataset holds {dataset.kind} signals, --model-fn says {kind}")
    fit_fn = baselines.fit_for_kind(kind)
    names = baselines.FIT_PARAM_NAMES[kind]
    threads = args.threads if args.threads else _default_threads()

    def one(i):
        try:
            return fit_fn(dataset.signal(i))
        except LatentFitError as exc:
            return str(exc) or exc.__class__.__name__

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(dataset))))
    else:
        results = [one(i) for i in range(len(dataset))]

    header = ["signal_index"]
    for n_ in names:
        header += [_column(n_), _column(n_) + "_sigma"]
    header += ["converged", "iterations", "residual_rms", "error"]
    lines = [",".join(header)]
    failures = 0
    for i, res in enumerate(results):
        if isinstance(res, str):
            failures += 1
            lines.append(str(i) + "," * (2 * len(names) + 3) + res.replace(",", ";"))
            continue
        cells = [str(i)]
        for n_ in names:
            cells += [repr(res.value(n_)), repr(res.sigma_of(n_))]
        cells += [str(int(res.converged)), str(res.iterations), repr(res.residual_rms), ""]
        lines.append(",".join(cells))
    _write_text(args.out, "\n".join(lines) + "\n")
    if failures:
        print(f"{failures}/{len(dataset)} fits failed; see the error column", file=sys.stderr)
    return 0


def cmd_crlb(args) -> int:
    inputs = baselines.CrlbInputs(
        snr=parse_snr(args.snr),
        f_bw=parse_freq(args.fbw),
        t_m=parse_time(args.tm),
        tau=parse_time(args.tau),
    )
    print(f"sigma_f_hz={baselines.crlb_sigma_f(inputs)!r}")
    print(f"sigma_tau={baselines.crlb_sigma_tau(inputs)!r}")
    return 0


def _hist_method(text: str) -> str:
    aliases = {
        "ae": evaluate.METHOD_AE, "autoencoder": evaluate.METHOD_AE,
        "ls": evaluate.METHOD_LS, "least-squares": evaluate.METHOD_LS,
    }
    try:
        return aliases[text.lower()]
    except KeyError:
        raise ValueError(f"unknown method {text!r} (use ae or ls)") from None


def cmd_eval_hist(args) -> int:
    schema = {
        "method": (_hist_method, evaluate.METHOD_AE),
        "param": (str, None),
        "tau": (parse_time, None),
        "f": (parse_freq, None),
        "phi": (float, None),
        "snr": (parse_snr, float(2**5)),
        "n": (int, 500),
        "seed": (int, None),
        "threads": (int, None),
    }
    opts = merge_config(args, schema)
    model = _load_model(args.model)
    names = model.mapping.names
    param = opts["param"] or "tau"
    if param not in names:
        raise ValueError(f"--param must be one of {names}")
    mus = dict(zip(names, model.mapping.mus()))
    for key in ("tau", "f", "phi"):
        if opts[key] is not None:
            if key not in mus:
                raise ValueError(f"--{key} does not apply to a {model.kind} model")
            mus[key] = opts[key]
    true_params = signals.params_from_values(model.kind, [mus[n_] for n_ in names])
    seed = _seed_or_env(opts["seed"])
    samples = evaluate.draw_signals(true_params, model.grid, opts["snr"], seed, 0, opts["n"])
    if opts["method"] == evaluate.METHOD_AE:
        values = autoencoder.encode_values(model, samples)[:, names.index(param)]
    else:
        threads = opts["threads"] or _default_threads()
        fits, failures = evaluate.ls_estimates(
            baselines.fit_for_kind(model.kind), samples, model.grid, names, threads
        )
        if failures:
            print(f"{failures}/{opts['n']} fits failed and were dropped", file=sys.stderr)
        values = fits[:, names.index(param)]
    reference = mus[param]
    summary = evaluate.estimate_distribution(values, reference)
    _write_text(args.out, evaluate.summary_to_csv(summary, evaluate.PARAM_UNITS.get(param, "1")))
    if not args.no_figure:
        from . import plots

        plots.plot_distribution(values, reference, summary, _figure_path(args.out), evaluate.PARAM_UNITS.get(param, "1"))
    return 0


def _parse_snr_list(text: str) -> list[float]:
    return [parse_snr(tok) for tok in str(text).split(",") if tok.strip()]


def cmd_eval_sweep(args) -> int:
    schema = {
        "snrs": (_parse_snr_list, [float(2**k) for k in range(1, 20, 2)]),
        "n": (int, 100),
        "seed": (int, None),
        "threads": (int, None),
        "tau": (parse_time, None),
        "f": (parse_freq, None),
        "phi": (float, None),
    }
    opts = merge_config(args, schema)
    model = _load_model(args.model)
    true_params = _true_params_override(model, opts)
    rows = evaluate.snr_sweep(
        model,
        opts["snrs"],
        n_per_point=opts["n"],
        seed=_seed_or_env(opts["seed"]),
        true_params=true_params,
        threads=opts["threads"] or _default_threads(),
    )
    _write_text(args.out, evaluate.sweep_to_csv(rows))
    if not args.no_figure:
        from . import plots

        plots.plot_sweep(rows, _figure_path(args.out))
    return 0


def _true_params_override(model, opts):
    names = model.mapping.names
    mus = dict(zip(names, model.mapping.mus()))
    touched = False
    for key in ("tau", "f", "phi"):
        if opts.get(key) is not None:
            if key not in mus:
                raise ValueError(f"--{key} does not apply to a {model.kind} model")
            mus[key] = opts[key]
            touched = True
    if not touched:
        return None
    return signals.params_from_values(model.kind, [mus[n_] for n_ in names])


def cmd_eval_scan(args) -> int:
    schema = {
        "feature": (str, None),
        "snr": (parse_snr, float(2**5)),
        "n": (int, 100),
        "points": (int, 21),
        "span": (float, 4.0),
        "width": (float, 1.0),
        "depth": (float, 3.0 / 7.0),
        "df_max": (parse_freq, 5e4),
        "tau0": (parse_time, None),
        "f0": (parse_freq, None),
        "seed": (int, None),
        "threads": (int, None),
    }
    opts = merge_config(args, schema)
    model = _load_model(args.model)
    feature = opts["feature"]
    if feature is None:
        feature = evaluate.FEATURE_ABSORPTION if model.kind == signals.KIND_EXP else evaluate.FEATURE_COTTON
    mus = dict(zip(model.mapping.names, model.mapping.mus()))
    scenario = evaluate.ScanScenario(
        feature=feature,
        detunings=tuple(np.linspace(-opts["span"], opts["span"], opts["points"])),
        width=opts["width"],
        tau0=opts["tau0"] if opts["tau0"] is not None else mus["tau"],
        depth=opts["depth"],
        f0=opts["f0"] if opts["f0"] is not None else mus.get("f", 3e6),
        df_max=opts["df_max"],
        snr=opts["snr"],
    )
    rows = evaluate.run_scan(
        model,
        scenario,
        n_per_point=opts["n"],
        seed=_seed_or_env(opts["seed"]),
        threads=opts["threads"] or _default_threads(),
    )
    _write_text(args.out, evaluate.scan_to_csv(rows))
    if not args.no_figure:
        from . import plots

        plots.plot_scan(rows, _figure_path(args.out))
    return 0


def _parse_widths_list(text: str) -> list[tuple[int, ...]]:
    out = []
    for chunk in str(text).split(";"):
        chunk = chunk.strip()
        if chunk:
            out.append(tuple(int(w) for w in chunk.split(",")))
    if not out:
        raise ValueError("empty --widths")
    return out


def cmd_eval_bench(args) -> int:
    schema = {
        "widths": (_parse_widths_list, None),
        "batch": (int, 1000),
        "reps": (int, 5),
        "seed": (int, None),
        "threads": (int, 1),
        "no_control": (bool, False),
    }
    opts = merge_config(args, schema)
    seed = _seed_or_env(opts["seed"])
    reports = []
    if args.model:
        model = _load_model(args.model)
        reports.append(
            evaluate.bench_encoder(model=model, batch=opts["batch"], repetitions=opts["reps"], seed=seed, threads=opts["threads"])
        )
    else:
        for widths in opts["widths"] or evaluate.BENCH_WIDTHS:
            reports.append(
                evaluate.bench_encoder(widths=widths, batch=opts["batch"], repetitions=opts["reps"], seed=seed, threads=opts["threads"])
            )
    if not opts["no_control"]:
        reports.append(evaluate.bench_encoder(noop=True, batch=opts["batch"], repetitions=opts["reps"], seed=seed))
    _write_text(args.out, evaluate.bench_to_csv(reports))
    if not args.no_figure:
        from . import plots

        plots.plot_bench(reports, _figure_path(args.out))
    return 0


def cmd_model_inspect(args) -> int:
    model = _load_model(args.model)
    doc = autoencoder.model_to_json(model, include_weights=args.weights)
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
        return 0
    print(f"kind: {doc['kind']}")
    print(f"trained: {doc['trained']}")
    print(f"widths: {'-'.join(str(w) for w in doc['widths'])}")
    print(f"latent layer index: {doc['latent_layer_index']}")
    grid = doc["grid"]
    print(f"grid: {grid['n_samples']} samples @ {grid['sample_rate']:g} Hz (t0={grid['t0']:g}s)")
    print(f"encoder FLOPs: {doc['encoder_flops']}")
    print(f"total FLOPs: {doc['total_flops']}")
    for ch in doc["mapping"]:
        print(f"latent {ch['name']}: mu={ch['mu']:g} zeta={ch['zeta']:g}")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly.


def _add_common(p: argparse.ArgumentParser, *, config=True, seed=True, figure=False, threads=False) -> None:
    if config:
        p.add_argument("--config", help="JSON config file; flags override its values")
    if seed:
        p.add_argument("--seed", help="RNG seed (fallback: LATENTFIT_SEED, then 0)")
    if figure:
        p.add_argument("--no-figure", action="store_true", help="skip the PNG next to the CSV")
    if threads:
        p.add_argument("--threads", type=int, help="worker threads (default: logical cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentfit",
        description="Train and evaluate latent-parameter autoencoders for decaying signals.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a dataset file of synthetic signals")
    p.add_argument("--kind", help="exp or osc")
    p.add_argument("--n", help="number of signals")
    p.add_argument("--snr", help="signal-to-noise ratio (A0 over noise variance); accepts 2^k")
    p.add_argument("--max-abs-latent", dest="max_abs_latent", help="resample draws beyond this |latent| bound")
    p.add_argument("--out", required=True, help="output dataset file")
    _add_grid_flags(p)
    _add_dist_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train an autoencoder and save the model")
    p.add_argument("--kind", help="exp or osc")
    p.add_argument("--init-seed", dest="init_seed", help="weight init seed (default: --seed)")
    p.add_argument("--datasets", help="number of fresh datasets (default 10)")
    p.add_argument("--reps", help="stage repetitions per dataset (default 10)")
    p.add_argument("--stage-epochs", dest="stage_epochs", help="epochs per stage, e.g. 100,100,100")
    p.add_argument("--snr", help="training SNR (default 2^20)")
    p.add_argument("--size", help="signals per dataset (default 200 exp / 1000 osc)")
    p.add_argument("--lr", help="SGD learning rate (default 0.1)")
    p.add_argument("--batch", help="SGD batch size (default 32)")
    p.add_argument("--val-fraction", dest="val_fraction", help="validation holdout (default 0.1)")
    p.add_argument("--control", action="store_const", const=True, help="stage-1-only control with the same epoch budget")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--report", help="training-report CSV path")
    _add_grid_flags(p)
    _add_dist_flags(p)
    _add_common(p, figure=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="estimate parameters for every signal in a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True, help="dataset file")
    p.add_argument("--out", required=True, help="output CSV")
    _add_common(p, config=False, seed=False)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("reconstruct", help="run one signal through the full autoencoder")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True, help="dataset file")
    p.add_argument("--index", type=int, default=0, help="signal index (default 0)")
    p.add_argument("--out", required=True, help="output CSV")
    _add_common(p, config=False, seed=False, figure=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("fit", help="least-squares fit every signal in a dataset")
    p.add_argument("--model-fn", dest="model_fn", required=True, help="exp or osc")
    p.add_argument("--in", dest="infile", required=True, help="dataset file")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--threads", type=int, help="worker threads (default: logical cores)")
    _add_common(p, config=False, seed=False)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("crlb", help="print the closed-form variance bounds")
    p.add_argument("--snr", required=True)
    p.add_argument("--fbw", required=True, help="bandwidth (Hz, suffixes allowed)")
    p.add_argument("--tm", required=True, help="measurement time (s, suffixes allowed)")
    p.add_argument("--tau", required=True, help="decay time (s, suffixes allowed)")
    _add_common(p, config=False, seed=False)
    p.set_defaults(func=cmd_crlb)

    ev = sub.add_parser("eval", help="evaluation protocols (histogram, sweep, scan, bench)")
    evsub = ev.add_subparsers(dest="eval_command", required=True)

    p = evsub.add_parser("hist", help="estimate-distribution histogram at fixed true parameters")
    p.add_argument("--model", required=True)
    p.add_argument("--method", help="ae or ls (default ae)")
    p.add_argument("--param", help="parameter to histogram (default tau)")
    p.add_argument("--tau", help="true decay time")
    p.add_argument("--f", help="true frequency (osc models)")
    p.add_argument("--phi", help="true phase (osc models)")
    p.add_argument("--snr", help="evaluation SNR (default 2^5)")
    p.add_argument("--n", help="number of draws (default 500)")
    p.add_argument("--out", required=True, help="output CSV")
    _add_common(p, figure=True, threads=True)
    p.set_defaults(func=cmd_eval_hist)

    p = evsub.add_parser("sweep", help="empirical sigma vs SNR against the CRLB")
    p.add_argument("--model", required=True)
    p.add_argument("--snrs", help="comma-separated SNRs; accepts 2^k (default odd powers 2^1..2^19)")
    p.add_argument("--n", help="draws per SNR (default 100)")
    p.add_argument("--tau", help="true decay time (default: mapping mean)")
    p.add_argument("--f", help="true frequency (osc models)")
    p.add_argument("--phi", help="true phase (osc models)")
    p.add_argument("--out", required=True, help="output CSV")
    _add_common(p, figure=True, threads=True)
    p.set_defaults(func=cmd_eval_sweep)

    p = evsub.add_parser("scan", help="track parameters across a spectral feature")
    p.add_argument("--model", required=True)
    p.add_argument("--feature", help="lorentzian-absorption or cotton-effect (default by model kind)")
    p.add_argument("--snr", help="evaluation SNR (default 2^5)")
    p.add_argument("--n", help="draws per detuning (default 100)")
    p.add_argument("--points", help="detuning points (default 21)")
    p.add_argument("--span", help="detuning half-range in widths (default 4)")
    p.add_argument("--width", help="feature width (default 1)")
    p.add_argument("--depth", help="fractional decay-rate increase at center (default 3/7)")
    p.add_argument("--df-max", dest="df_max", help="peak dispersive frequency shift (default 0.05MHz)")
    p.add_argument("--tau0", help="baseline decay time (default: mapping mean)")
    p.add_argument("--f0", help="baseline frequency (default: mapping mean)")
    p.add_argument("--out", required=True, help="output CSV")
    _add_common(p, figure=True, threads=True)
    p.set_defaults(func=cmd_eval_scan)

    p = evsub.add_parser("bench", help="encoder throughput benchmark")
    p.add_argument("--model", help="benchmark this model's encoder")
    p.add_argument("--widths", help="semicolon-separated comma width lists (default: standard sweep)")
    p.add_argument("--batch", help="signals per repetition (default 1000)")
    p.add_argument("--reps", help="repetitions (default 5)")
    p.add_argument("--threads", type=int, help="extra pooled-throughput measurement when > 1")
    p.add_argument("--no-control", dest="no_control", action="store_const", const=True, help="skip the no-op harness control row")
    p.add_argument("--out", required=True, help="output CSV")
    _add_common(p, figure=True)
    p.set_defaults(func=cmd_eval_bench)

    mo = sub.add_parser("model", help="model file utilities")
    mosub = mo.add_subparsers(dest="model_command", required=True)
    p = mosub.add_parser("inspect", help="print a model file's structure")
    p.add_argument("--model", required=True)
    p.add_argument("--json", action="store_true", help="JSON output")
    p.add_argument("--weights", action="store_true", help="include weight arrays (JSON only)")
    _add_common(p, config=False, seed=False)
    p.set_defaults(func=cmd_model_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits on usage errors and --help; surface the code
        return int(exc.code or 0)
    try:
        return args.func(args) or 0
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (LatentFitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
