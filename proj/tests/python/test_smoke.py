"""End-to-end checks of the Python surface against hand-computable facts."""

import math

import numpy as np
import pytest

import lantern


@pytest.fixture(scope="module")
def dataset():
    cfg = lantern.GeneratorConfig(
        n_users=200,
        latent_dim=8,
        n_binary=6,
        n_single=2,
        n_multi=2,
        survey_dim=12,
        external_dim=12,
        seed=11,
    )
    return lantern.generate_dataset(cfg)


@pytest.fixture(scope="module")
def model(dataset):
    mcfg = lantern.ModelConfig(
        survey_dim=12,
        external_dim=12,
        d_embed=16,
        d_proj=16,
        n_tokens=4,
        d_token=4,
        n_heads=2,
        n_layers=1,
        d_ffn=32,
        d_s=dataset.manifest.d_s(),
    )
    tcfg = lantern.TrainConfig(batch_size=16, epochs=2, steps_per_epoch=10, validation_steps=2, seed=5)
    return lantern.train(dataset, tcfg, mcfg)


def test_generate_shapes(dataset):
    assert len(dataset) == 200
    assert dataset.manifest.d_s() == 6 + 2 * 4 + 2 * 4
    x_s, x_e, mask = dataset.tensors()
    assert x_s.shape == (200, 12)
    assert x_e.shape == (200, 12)
    assert mask.shape == (200, dataset.manifest.d_s())
    assert set(np.unique(mask)) <= {-1.0, 0.0, 1.0}


def test_generate_deterministic(dataset):
    cfg = lantern.GeneratorConfig(
        n_users=200, latent_dim=8, n_binary=6, n_single=2, n_multi=2,
        survey_dim=12, external_dim=12, seed=11,
    )
    again = lantern.generate_dataset(cfg)
    for a, b in zip(dataset.tensors(), again.tensors()):
        np.testing.assert_array_equal(a, b)


def test_dataset_roundtrip(dataset, tmp_path):
    dataset.save(str(tmp_path / "d"))
    back = lantern.load_dataset(str(tmp_path / "d"))
    assert len(back) == len(dataset)
    for a, b in zip(dataset.tensors(), back.tensors()):
        np.testing.assert_array_equal(a, b)


def test_unknown_config_field_rejected():
    with pytest.raises(TypeError, match="n_userz"):
        lantern.GeneratorConfig(n_userz=10)


def test_train_and_predict(dataset, model):
    assert model.adam_steps == 2 * 10
    assert [e.epoch for e in model.log] == [0, 1]
    assert all(math.isfinite(e.val_loss) for e in model.log)

    y_hat, mask = model.predict(dataset)
    assert y_hat.shape == (200, dataset.manifest.d_s())
    assert np.all((y_hat > 0.0) & (y_hat < 1.0))
    np.testing.assert_array_equal(mask, dataset.tensors()[2])


def test_evaluate_invariant(dataset, model):
    report = model.evaluate(dataset, users=model.held_out_users(dataset))
    assert report.n_scored > 0
    assert report.f1 * (report.precision + report.recall) == pytest.approx(
        2 * report.precision * report.recall, abs=1e-12
    )


def test_gate_values_open_interval(dataset, model):
    gates = model.gate_values(dataset, users=list(range(10)))
    assert gates.shape == (10 * model.model_config.d_embed,)
    assert np.all((gates > 0.0) & (gates < 1.0))
    hist = lantern.gate_histogram(list(gates), n_bins=20)
    assert sum(hist.counts) == gates.size


def test_checkpoint_roundtrip(dataset, model, tmp_path):
    path = str(tmp_path / "m.lntn")
    model.save(path)
    back = lantern.load_checkpoint(path)
    assert back.adam_steps == model.adam_steps
    a, _ = model.predict(dataset, users=[0, 1, 2])
    b, _ = back.predict(dataset, users=[0, 1, 2])
    np.testing.assert_array_equal(a, b)


def test_masked_bce_closed_form():
    y_hat = np.full((2, 3), 0.5)
    mask = np.array([[1, -1, 0], [0, 0, 1]], dtype=float)
    assert lantern.masked_bce(y_hat, mask) == pytest.approx(math.log(2.0), abs=1e-12)
    assert lantern.masked_bce(y_hat, np.zeros((2, 3))) == 0.0


def test_metrics_hand_check():
    y_hat = np.array([[0.9, 0.2, 0.8, 0.4]])
    mask = np.array([[1.0, 1.0, -1.0, 0.0]])
    r = lantern.metrics_at(y_hat, mask, threshold=0.5)
    assert (r.tp, r.fp, r.fn, r.n_scored) == (1, 1, 1, 3)
    assert r.precision == 0.5 and r.recall == 0.5 and r.f1 == 0.5


def test_threshold_sweep_default_grid():
    y_hat = np.array([[0.1, 0.4, 0.6, 0.9]])
    mask = np.ones((1, 4))
    sweep = lantern.threshold_sweep(y_hat, mask)
    assert [t for t, _ in sweep] == [0.3, 0.5, 0.7]
    recalls = [r.recall for _, r in sweep]
    assert recalls == sorted(recalls, reverse=True)
    assert lantern.DEFAULT_THRESHOLDS == [0.3, 0.5, 0.7]


def test_segments_partition(dataset, model):
    # frequency_buckets is bottom-k vs top-k by response count, not a partition
    buckets = lantern.frequency_buckets(dataset, k=2)
    assert len(buckets.rare) == 2 and len(buckets.frequent) == 2
    assert not buckets.rare & buckets.frequent
    assert max(buckets.counts[i] for i in buckets.rare) <= min(
        buckets.counts[i] for i in buckets.frequent
    )

    d_s = dataset.manifest.d_s()
    y_hat, mask = model.predict(dataset)
    rest = set(range(d_s)) - buckets.rare
    seg = lantern.segment_eval(y_hat, mask, buckets.rare, rest, threshold=0.5)
    whole = lantern.metrics_at(y_hat, mask, threshold=0.5)
    assert seg.rare.n_scored + seg.frequent.n_scored == whole.n_scored
    assert seg.rare.tp + seg.frequent.tp == whole.tp


def test_label_space_diff(dataset):
    cfg = lantern.GeneratorConfig(
        n_users=10, latent_dim=8, n_binary=6, n_single=2, n_multi=3,
        survey_dim=12, external_dim=12, seed=11, cycle_id=1,
    )
    other = lantern.generate_dataset(cfg)
    diff = lantern.label_space_diff(dataset.manifest, other.manifest)
    assert diff.misaligned
    assert len(diff.added) == 4 and len(diff.removed) == 0
    same = lantern.label_space_diff(dataset.manifest, dataset.manifest)
    assert not same.misaligned


def test_errors_map_to_python_types(tmp_path):
    with pytest.raises(ValueError):
        lantern.GeneratorConfig(latent_dim=0).validate()
    with pytest.raises(OSError):
        lantern.load_dataset(str(tmp_path / "nope"))


def test_sha256_known_vector():
    assert lantern.sha256_hex(b"abc") == (
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    )
