import numpy as np
import pytest

from latentfit import autoencoder as ae
from latentfit.errors import FormatError, InvalidStateError
from latentfit.nn import TrainConfig, flop_count
from latentfit.signals import (
    DEFAULT_GRID,
    DampedOscParams,
    ExpDecayParams,
    SamplingGrid,
    default_distribution,
    gen_damped_osc,
    gen_exp_decay,
    make_dataset,
)


@pytest.fixture(scope="module")
def tiny_trained():
    # Small grid and tiny budget: exercises the full three-stage path in a
    # couple of seconds without claiming statistical quality.
    grid = SamplingGrid(n_samples=64, sample_rate=200e6)
    model = ae.build("exp", grid=grid, init_seed=1)
    report = ae.train_three_stage(
        model,
        TrainConfig(seed=1),
        n_datasets=2,
        reps_per_dataset=2,
        stage_epochs=(8, 8, 8),
        dataset_size=64,
    )
    return model, report


def test_reference_topologies():
    exp = ae.build("exp")
    assert exp.network.widths == [1000, 50, 1, 50, 1000]
    assert exp.latent_layer_index == 2
    assert flop_count(exp.encoder) == 100_100
    osc = ae.build("osc")
    assert osc.network.widths == [1000, 50, 10, 3, 10, 50, 1000]
    assert osc.latent_layer_index == 3
    assert osc.encoder.widths == [1000, 50, 10, 3]
    assert [c[0] for c in osc.mapping.channels] == ["tau", "f", "phi"]


def test_build_deterministic():
    a = ae.build("osc", init_seed=7)
    b = ae.build("osc", init_seed=7)
    for la, lb in zip(a.network.layers, b.network.layers):
        np.testing.assert_array_equal(la.weights, lb.weights)
    c = ae.build("osc", init_seed=8)
    assert not np.array_equal(a.network.layers[0].weights, c.network.layers[0].weights)


def test_latent_mapping_roundtrip():
    mapping = ae.LatentMapping.from_distribution(default_distribution("osc"))
    p = DampedOscParams(tau=1.3e-6, f=3.05e6, phi=-0.2)
    lat = ae.to_latent(p, mapping)
    np.testing.assert_allclose(
        lat,
        [(1.3e-6 - 1e-6) / (3 * 0.5e-6), (3.05e6 - 3e6) / (3 * 0.1e6), -0.2 / 0.3],
    )
    back = ae.from_latent(lat, mapping)
    np.testing.assert_allclose(back, [1.3e-6, 3.05e6, -0.2], rtol=1e-12)


def test_to_latent_accepts_arrays_and_batches():
    mapping = ae.LatentMapping.from_distribution(default_distribution("exp"))
    single = ae.to_latent(np.array([1.75e-6]), mapping)
    assert single.shape == (1,)
    assert single[0] == pytest.approx(0.5)
    batch = ae.to_latent(np.array([[1.75e-6], [0.25e-6]]), mapping)
    np.testing.assert_allclose(batch[:, 0], [0.5, -0.5])
    np.testing.assert_allclose(ae.from_latent(batch, mapping)[:, 0], [1.75e-6, 0.25e-6])


def test_untrained_model_refuses_encode():
    model = ae.build("exp")
    sig = gen_exp_decay(ExpDecayParams(tau=1e-6), DEFAULT_GRID)
    with pytest.raises(InvalidStateError):
        ae.encode(model, sig)
    with pytest.raises(InvalidStateError):
        ae.encode_latent(model, sig.samples)


def test_encode_shapes_and_types(tiny_trained):
    model, _ = tiny_trained
    sig = gen_exp_decay(ExpDecayParams(tau=1e-6), model.grid)
    params = ae.encode(model, sig)
    assert isinstance(params, ExpDecayParams)
    lat = ae.encode_latent(model, sig.samples)
    assert lat.shape == (1,)
    vals = ae.encode_values(model, np.stack([sig.samples] * 3))
    assert vals.shape == (3, 1)
    assert np.all(vals[0] == vals[1])


def test_encode_grid_mismatch(tiny_trained):
    model, _ = tiny_trained
    sig = gen_exp_decay(ExpDecayParams(tau=1e-6), DEFAULT_GRID)
    with pytest.raises(ValueError):
        ae.encode(model, sig)


def test_reconstruct_returns_signal(tiny_trained):
    model, _ = tiny_trained
    sig = gen_exp_decay(ExpDecayParams(tau=1e-6), model.grid)
    rec = ae.reconstruct(model, sig)
    assert rec.grid == model.grid
    assert rec.samples.shape == sig.samples.shape


def test_training_report_contents(tiny_trained):
    model, report = tiny_trained
    assert model.trained
    assert report.kind == "exp-decay"
    assert report.n_datasets == 2 and report.reps_per_dataset == 2
    assert report.stage_epochs == (8, 8, 8)
    # one record per (stage, dataset, rep, epoch)
    assert len(report.records) == 3 * 2 * 2 * 8
    for stage in (1, 2, 3):
        losses = report.series(stage)
        assert losses.shape == (2 * 2 * 8,)
        assert np.all(np.isfinite(losses))
        assert np.all(losses > 0)
        val = report.series(stage, which="val")
        assert val.shape == losses.shape
    assert set(report.final_val_losses) == {"reconstruction", "encoder_latent"}
    assert all(v > 0 for v in report.final_val_losses.values())
    assert report.wall_time_s > 0


def test_training_improves_over_epochs(tiny_trained):
    _, report = tiny_trained
    s1 = report.series(1)
    assert s1[-1] < s1[0]


def test_report_csv_deterministic(tiny_trained, tmp_path):
    _, report = tiny_trained
    text = report.to_csv_text()
    header = text.splitlines()[0]
    assert header.startswith("stage,dataset,rep,epoch")
    assert text == report.to_csv_text()
    out = tmp_path / "report.csv"
    report.to_csv(out)
    assert out.read_text() == text


def test_train_requires_three_stage_epochs():
    model = ae.build("exp", grid=SamplingGrid(n_samples=32, sample_rate=200e6))
    with pytest.raises(ValueError):
        ae.train_three_stage(model, stage_epochs=(8, 8), dataset_size=16, n_datasets=1, reps_per_dataset=1)


def test_training_determinism():
    grid = SamplingGrid(n_samples=48, sample_rate=200e6)

    def run():
        model = ae.build("exp", grid=grid, init_seed=5)
        ae.train_three_stage(
            model,
            TrainConfig(seed=5),
            n_datasets=1,
            reps_per_dataset=2,
            stage_epochs=(4, 4, 4),
            dataset_size=48,
        )
        return model

    a, b = run(), run()
    for la, lb in zip(a.network.layers, b.network.layers):
        np.testing.assert_array_equal(la.weights, lb.weights)
        np.testing.assert_array_equal(la.biases, lb.biases)


def test_stage1_control_consumes_same_data():
    grid = SamplingGrid(n_samples=48, sample_rate=200e6)
    model = ae.build("exp", grid=grid, init_seed=2)
    report = ae.train_stage1_only(
        model,
        TrainConfig(seed=2),
        n_datasets=2,
        reps_per_dataset=1,
        epochs_per_rep=12,
        dataset_size=48,
    )
    assert model.trained
    assert len(report.records) == 2 * 1 * 12
    assert all(rec[0] == 1 for rec in report.records)


def test_save_load_roundtrip(tiny_trained, tmp_path):
    model, _ = tiny_trained
    path = tmp_path / "model.lfae"
    ae.save(model, path)
    back = ae.load(path)
    assert back.kind == model.kind
    assert back.trained
    assert back.grid == model.grid
    assert back.mapping == model.mapping
    ds = make_dataset("exp", n=8, grid=model.grid, seed=3, snr=2**5)
    np.testing.assert_array_equal(
        ae.encode_values(back, ds.samples), ae.encode_values(model, ds.samples)
    )
    path2 = tmp_path / "model2.lfae"
    ae.save(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_corrupt(tmp_path):
    bad = tmp_path / "bad.lfae"
    bad.write_bytes(b"XXXX" + b"\x00" * 64)
    with pytest.raises(FormatError):
        ae.load(bad)
    model = ae.build("exp", grid=SamplingGrid(n_samples=32, sample_rate=200e6))
    good = tmp_path / "good.lfae"
    ae.save(model, good)
    trunc = tmp_path / "trunc.lfae"
    trunc.write_bytes(good.read_bytes()[:-20])
    with pytest.raises(FormatError):
        ae.load(trunc)


def test_save_load_untrained_flag(tmp_path):
    model = ae.build("osc", grid=SamplingGrid(n_samples=32, sample_rate=200e6))
    path = tmp_path / "u.lfae"
    ae.save(model, path)
    back = ae.load(path)
    assert not back.trained
    with pytest.raises(InvalidStateError):
        ae.encode_latent(back, np.zeros(32))


def test_model_to_json(tiny_trained):
    model, _ = tiny_trained
    doc = ae.model_to_json(model)
    assert doc["kind"] == "exp-decay"
    assert doc["widths"] == [64, 50, 1, 50, 64]
    assert doc["trained"] is True
    assert doc["encoder_flops"] == 2 * (64 * 50 + 50 * 1)
    assert "layers" not in doc
    full = ae.model_to_json(model, include_weights=True)
    assert len(full["layers"]) == 4
    assert len(full["layers"][0]["weights"]) == 50


def test_osc_training_smoke():
    grid = SamplingGrid(n_samples=40, sample_rate=200e6)
    model = ae.build("osc", grid=grid, init_seed=0)
    report = ae.train_three_stage(
        model,
        TrainConfig(seed=0),
        n_datasets=1,
        reps_per_dataset=1,
        stage_epochs=(3, 3, 3),
        dataset_size=40,
    )
    assert model.trained
    sig = gen_damped_osc(DampedOscParams(tau=1e-6, f=3e6, phi=0.0), grid)
    params = ae.encode(model, sig)
    assert isinstance(params, DampedOscParams)
    assert params.tau > 0
    assert report.latent_overflow_fraction == 0.0


def test_progress_callback_invoked():
    grid = SamplingGrid(n_samples=40, sample_rate=200e6)
    model = ae.build("exp", grid=grid, init_seed=0)
    calls = []
    ae.train_three_stage(
        model,
        TrainConfig(seed=0),
        n_datasets=1,
        reps_per_dataset=1,
        stage_epochs=(2, 2, 2),
        dataset_size=40,
        progress=lambda *args: calls.append(args),
    )
    assert len(calls) == 6
    stages = {c[0] for c in calls}
    assert stages == {1, 2, 3}
