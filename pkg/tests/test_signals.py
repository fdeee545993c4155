import math

import numpy as np
import pytest

from latentfit import signals
from latentfit.errors import FormatError
from latentfit.signals import (
    DEFAULT_GRID,
    DampedOscParams,
    ExpDecayParams,
    NoiseSpec,
    ParamDistribution,
    ParamSpec,
    SamplingGrid,
    Signal,
    clean_signal,
    default_distribution,
    free_values,
    gen_damped_osc,
    gen_exp_decay,
    load_dataset,
    make_dataset,
    params_from_values,
    sample_params,
    save_dataset,
)


def test_default_grid():
    assert DEFAULT_GRID.n_samples == 1000
    assert DEFAULT_GRID.sample_rate == 200e6
    assert DEFAULT_GRID.duration == pytest.approx(5e-6)
    t = DEFAULT_GRID.times()
    assert t[0] == 0.0
    assert t[1] == pytest.approx(5e-9)
    assert len(t) == 1000


def test_grid_validation():
    with pytest.raises(ValueError):
        SamplingGrid(n_samples=0, sample_rate=1.0)
    with pytest.raises(ValueError):
        SamplingGrid(n_samples=10, sample_rate=-1.0)


def test_param_validation():
    with pytest.raises(ValueError):
        ExpDecayParams(tau=0.0)
    with pytest.raises(ValueError):
        ExpDecayParams(tau=-1e-6)
    with pytest.raises(ValueError):
        DampedOscParams(tau=1e-6, f=0.0, phi=0.0)


def test_clean_exp_values():
    p = ExpDecayParams(tau=1e-6, amplitude=2.0, offset=0.5)
    sig = gen_exp_decay(p, DEFAULT_GRID)
    t = DEFAULT_GRID.times()
    expected = 2.0 * np.exp(-t / 1e-6) + 0.5
    np.testing.assert_allclose(sig.samples, expected, rtol=1e-15)


def test_clean_osc_values():
    p = DampedOscParams(tau=1e-6, f=3e6, phi=0.25, amplitude=1.5, offset=-0.1)
    sig = gen_damped_osc(p, DEFAULT_GRID)
    t = DEFAULT_GRID.times()
    expected = 1.5 * np.exp(-t / 1e-6) * np.cos(2 * np.pi * 3e6 * t + 0.25) - 0.1
    np.testing.assert_allclose(sig.samples, expected, rtol=1e-12)


def test_noise_sigma_convention():
    # snr is amplitude over noise variance: sigma = sqrt(A0 / snr)
    assert NoiseSpec(snr=2**5).sigma(1.0) == pytest.approx(2 ** (-2.5))
    assert NoiseSpec(snr=2**5).sigma(4.0) == pytest.approx(2 * 2 ** (-2.5))
    assert NoiseSpec().sigma(1.0) == 0.0  # default: noiseless


def test_noise_stddev_calibration():
    # At SNR 2^5 the additive noise stddev is 2^-2.5 within 1%.
    p = ExpDecayParams(tau=1e-6)
    clean = clean_signal(p, DEFAULT_GRID).samples
    draws = []
    for seed in range(60):
        noisy = gen_exp_decay(p, DEFAULT_GRID, NoiseSpec(snr=2**5, seed=seed)).samples
        draws.append(noisy - clean)
    measured = float(np.std(np.concatenate(draws)))
    assert measured == pytest.approx(2 ** (-2.5), rel=0.01)


def test_noise_reproducible():
    p = ExpDecayParams(tau=1e-6)
    a = gen_exp_decay(p, DEFAULT_GRID, NoiseSpec(snr=32, seed=5)).samples
    b = gen_exp_decay(p, DEFAULT_GRID, NoiseSpec(snr=32, seed=5)).samples
    np.testing.assert_array_equal(a, b)


def test_signal_rejects_nonfinite():
    with pytest.raises(ValueError):
        Signal(np.array([1.0, np.nan] + [0.0] * 998), DEFAULT_GRID)


def test_default_distribution_moments():
    d = default_distribution("exp")
    assert d.names == ("tau",)
    assert d.specs[0].mean == pytest.approx(1e-6)
    assert d.specs[0].stddev == pytest.approx(0.5e-6)
    assert d.specs[0].transform == "abs"
    d = default_distribution("osc")
    assert d.names == ("tau", "f", "phi")
    assert d.specs[1].mean == pytest.approx(3e6)
    assert d.specs[1].stddev == pytest.approx(1e5)
    assert d.specs[2].mean == 0.0
    assert d.specs[2].stddev == pytest.approx(0.1)


def test_distribution_order_enforced():
    with pytest.raises(ValueError):
        ParamDistribution(
            "osc",
            (
                ParamSpec("f", 3e6, 1e5),
                ParamSpec("tau", 1e-6, 5e-7, "abs"),
                ParamSpec("phi", 0.0, 0.1),
            ),
        )


def test_sampled_tau_folded_normal_mean():
    # |N(1, 0.5)| in microseconds has mean 1.00849... (folded normal).
    rng = np.random.default_rng(123)
    dist = default_distribution("exp")
    taus = np.array([sample_params("exp", dist, rng).tau for _ in range(20000)])
    assert np.all(taus > 0)
    mu, s = 1e-6, 0.5e-6
    folded_mean = s * math.sqrt(2 / math.pi) * math.exp(-mu**2 / (2 * s**2)) + mu * math.erf(
        mu / (s * math.sqrt(2))
    )
    assert float(np.mean(taus)) == pytest.approx(folded_mean, rel=0.01)
    # Folding keeps the short-tau tail populated: values well below the mean
    # exist but none reach zero.
    assert float(np.min(taus)) < 0.2e-6
    assert float(np.min(taus)) > 0.0


def test_sample_params_latent_bound():
    rng = np.random.default_rng(7)
    dist = default_distribution("osc")
    for _ in range(500):
        p = sample_params("osc", dist, rng, max_abs_latent=0.995)
        vals = free_values(p)
        scaled = np.abs(vals - dist.means()) / (3.0 * dist.stddevs())
        assert np.all(scaled <= 0.995)


def test_make_dataset_defaults_and_determinism():
    a = make_dataset("exp", seed=4)
    assert len(a) == 200
    assert a.samples.shape == (200, 1000)
    b = make_dataset("exp", seed=4)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert [free_values(x).tolist() for x in a.truths] == [
        free_values(x).tolist() for x in b.truths
    ]
    c = make_dataset("exp", seed=5)
    assert not np.array_equal(a.samples, c.samples)


def test_make_dataset_osc_default_size():
    ds = make_dataset("osc", n=None, seed=0, snr=2**20)
    assert len(ds) == 1000


def test_dataset_signal_access():
    ds = make_dataset("exp", n=5, seed=1)
    sig = ds.signal(2)
    np.testing.assert_array_equal(sig.samples, ds.samples[2])
    pairs = list(ds)
    assert len(pairs) == 5
    assert isinstance(pairs[0][0], Signal)


def test_latent_overflow_counting():
    # Without resampling, some draws exceed |latent| = 1; with the bound
    # they never do.
    loose = make_dataset("osc", n=400, seed=9)
    assert loose.latent_overflow_fraction > 0
    clipped = make_dataset("osc", n=400, seed=9, max_abs_latent=0.995)
    assert clipped.latent_overflow_fraction == 0.0


def test_params_values_roundtrip():
    p = params_from_values("osc", [1.2e-6, 2.9e6, -0.1])
    assert isinstance(p, DampedOscParams)
    np.testing.assert_allclose(free_values(p), [1.2e-6, 2.9e6, -0.1])
    p = params_from_values("exp", [0.8e-6])
    assert isinstance(p, ExpDecayParams)


def test_dataset_file_roundtrip(tmp_path):
    ds = make_dataset("osc", n=17, seed=11, snr=2**7, max_abs_latent=0.995)
    path = tmp_path / "d.bin"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.kind == ds.kind
    assert back.grid == ds.grid
    assert back.snr == ds.snr
    assert back.seed == ds.seed
    assert back.max_abs_latent == pytest.approx(0.995)
    np.testing.assert_array_equal(back.samples, ds.samples)
    for p, q in zip(back.truths, ds.truths):
        np.testing.assert_array_equal(free_values(p), free_values(q))
    # writing again gives identical bytes
    path2 = tmp_path / "d2.bin"
    save_dataset(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_dataset_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"not a dataset at all")
    with pytest.raises(FormatError):
        load_dataset(path)
    good = tmp_path / "good.bin"
    save_dataset(make_dataset("exp", n=3, seed=0), good)
    truncated = good.read_bytes()[:-10]
    bad2 = tmp_path / "trunc.bin"
    bad2.write_bytes(truncated)
    with pytest.raises(FormatError):
        load_dataset(bad2)


def test_dataset_json_export():
    import json

    ds = make_dataset("exp", n=3, seed=0)
    doc = json.loads(signals.dataset_to_json(ds))
    assert doc["kind"] == "exp-decay"
    assert doc["n"] == 3
    assert len(doc["truths"]) == 3


def test_kind_aliases():
    assert signals.normalize_kind("exp") == "exp-decay"
    assert signals.normalize_kind("osc") == "damped-osc"
    assert signals.normalize_kind("damped-osc") == "damped-osc"
    with pytest.raises(ValueError):
        signals.normalize_kind("sine")
