"""End-to-end smoke tests for the python bindings."""

import numpy as np
import pytest

import sgunlearn as sg

SEED = 3

METRIC_KEYS = {
    "acc_r", "acc_te", "acc_f", "acc_gap", "mia_acc", "mia_auc", "mia_f1",
    "ks_stat", "ks_pvalue", "w_dist", "runtime_s",
}


@pytest.fixture(scope="module")
def bundle():
    return sg.gen_gaussian_mixture(num_classes=3, n_per_class=80, dim=5,
                                   separation=2.5, seed=SEED)


@pytest.fixture(scope="module")
def part(bundle):
    return sg.split_forget_random(bundle, ratio=0.1, seed=SEED)


@pytest.fixture(scope="module")
def orig(bundle):
    return sg.train(bundle, hidden=[16], seed=SEED, epochs=12, batch_size=32,
                    milestones=[])


def test_bundle_shape(bundle):
    assert bundle.features.shape == (240, 5)
    assert len(bundle.labels) == 240
    assert bundle.num_classes == 3
    assert set(bundle.splits) == {"train", "val", "test_audit", "test_eval"}
    assert len(bundle.rows_in("train")) == 144


def test_partition_covers_train(bundle, part):
    train_rows = set(bundle.rows_in("train"))
    assert set(part.forget_indices) | set(part.retain_indices) == train_rows
    assert not set(part.forget_indices) & set(part.retain_indices)
    assert part.mode == "random"


def test_train_and_eval(bundle, orig):
    assert orig.epochs_trained == 12
    assert orig.layer_dims == [5, 16, 3]
    assert orig.evaluate(bundle, "train") > 0.9
    losses = orig.losses(bundle, "test_audit")
    assert losses.shape == (36,)
    assert np.all(losses >= 0.0)


def test_sg_unlearn_runs_and_is_deterministic(bundle, part, orig):
    m1, trace = sg.sg_unlearn(orig, bundle, part, alpha=1.0, epochs=2, seed=SEED)
    m2, _ = sg.sg_unlearn(orig, bundle, part, alpha=1.0, epochs=2, seed=SEED)
    assert len(trace) == 2
    assert set(trace[0]) == {"retain_loss", "soft_utility", "seconds"}
    assert np.array_equal(m1.params, m2.params)
    assert not np.array_equal(m1.params, orig.params)


def test_every_baseline_runs(bundle, part, orig):
    models = [
        sg.fine_tune(orig, bundle, part, epochs=2),
        sg.gradient_ascent(orig, bundle, part, epochs=2),
        sg.random_label(orig, bundle, part, seed=SEED, epochs=2),
        sg.l1_sparse(orig, bundle, part, gamma=1e-3, epochs=2),
        sg.influence_unlearn(orig, bundle, part, residual_tol=1e-1),
        sg.retrain(bundle, part, hidden=[16], seed=SEED, epochs=12,
                   batch_size=32, milestones=[]),
    ]
    for model in models:
        assert np.isfinite(model.params).all()


def test_audit_report_fields(bundle, part, orig):
    rep = sg.audit_report(orig, bundle, part, k_folds=5, seed=SEED)
    assert set(rep) == METRIC_KEYS
    assert 0.0 <= rep["mia_acc"] <= 1.0
    assert 0.0 <= rep["mia_auc"] <= 1.0
    assert rep["acc_gap"] == pytest.approx(abs(rep["acc_f"] - rep["acc_te"]), abs=1e-15)
    again = sg.audit_report(orig, bundle, part, k_folds=5, seed=SEED)
    assert rep == again


def test_distribution_statistics():
    a = [float(i) for i in range(200)]
    b = [x + 30.0 for x in a]
    stat, pvalue = sg.ks_two_sample(a, b)
    assert stat == pytest.approx(0.15)
    assert 0.0 <= pvalue <= 1.0
    assert sg.wasserstein1(a, b) == pytest.approx(30.0)
    assert sg.wasserstein1(a, a) == 0.0


def test_contract_errors_surface_as_value_errors(bundle, part, orig):
    with pytest.raises(ValueError):
        sg.gen_gaussian_mixture(num_classes=1)
    with pytest.raises(ValueError):
        sg.split_forget_random(bundle, ratio=1.5)
    with pytest.raises(ValueError):
        sg.sg_unlearn(orig, bundle, part, alpha=-1.0, epochs=1)


def test_file_round_trips(tmp_path, bundle, orig):
    csv = tmp_path / "bundle.csv"
    sg.save_csv(bundle, str(csv))
    assert sg.load_csv(str(csv)) == bundle

    ckpt = tmp_path / "model.ckpt"
    sg.save_ckpt(orig, str(ckpt))
    loaded = sg.load_ckpt(str(ckpt))
    assert np.array_equal(loaded.params, orig.params)
    assert loaded.layer_dims == orig.layer_dims
