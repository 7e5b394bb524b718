import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audron.features import FeatureConfig
from audron.model import BRANCHES, AudronModel, ForwardOutput, ModelConfig
from audron.tensor import NumericError, Parameter, Tensor, backward, no_grad
from audron.traineval import (AdamW, DataError, EpochRecord, PlateauSchedule, TrainConfig, TrainHistory, ablate,
                              ablation_configs, ablation_csv, combined_loss, confusion_matrix, evaluate, fit_steps,
                              load_bundle, metrics_from_confusion, save_bundle, select_best_epoch, train)

ORACLE = np.array([[50, 10], [5, 35]])
# per-class F1 by hand: class 0 = 2*50/(2*50+10+5) = 100/115, class 1 = 2*35/(2*35+5+10) = 70/85
ORACLE_MACRO_F1 = (100 / 115 + 70 / 85) / 2  # 0.846547...


def _out(logits, recon=None):
    return ForwardOutput(Tensor(np.asarray(logits, float)), None if recon is None else Tensor(np.asarray(recon, float)))


def test_uniform_logits_give_ln4():
    loss = combined_loss(_out(np.zeros((3, 4))), np.array([0, 1, 3]), None, 0.0)
    assert loss.item() == pytest.approx(math.log(4), abs=1e-6)


def test_weighted_sum_example():
    # two logits [0, log(e - 1)] with label 0 give CE = log(1 + e - 1) = 1; recon [1, 0] vs 0 gives MSE 0.5
    out = _out([[0.0, math.log(math.e - 1)]], [[1.0, 0.0]])
    assert combined_loss(out, np.array([0]), np.zeros((1, 2)), 0.1).item() == pytest.approx(1.05, abs=1e-6)


def test_perfect_prediction_loss_vanishes():
    out = _out([[60.0, 0.0, 0.0]], [[0.25, -0.5]])
    assert combined_loss(out, np.array([0]), np.array([[0.25, -0.5]]), 0.1).item() < 1e-12


def test_label_out_of_range():
    with pytest.raises(DataError):
        combined_loss(_out(np.zeros((2, 3))), np.array([0, 3]), None)


@pytest.mark.parametrize("bad", [dict(lr=0), dict(plateau_patience=0), dict(early_stop_patience=0),
                                 dict(recon_weight=-0.1), dict(batch_size=0)])
def test_train_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_lr_halves_after_exactly_five_stalled_epochs():
    sched = PlateauSchedule(0.001)
    lrs = []
    for acc in [0.5, 0.7] + [0.7] * 12:
        lrs.append(sched.lr)
        sched.update(acc)
    # epochs 3..7 do not improve; the lr used by epoch 8 is halved, again after 5 more
    assert lrs[:7] == [0.001] * 7 and lrs[7] == 0.0005 and lrs[12] == 0.00025
    assert lrs[8:12] == [0.0005] * 4


def test_early_stop_after_ten_stalled_epochs():
    sched = PlateauSchedule(0.001)
    stops = []
    for acc in [0.9] + [0.9] * 10:
        sched.update(acc)
        stops.append(sched.should_stop)
    assert stops == [False] * 10 + [True]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.sampled_from([0.5, 0.1]), st.integers(1, 6))
def test_lr_sequence_monotone_with_exact_factor(metrics, factor, patience):
    sched = PlateauSchedule(0.001, patience, factor)
    lrs = [sched.lr]
    for m in metrics:
        sched.update(m)
        lrs.append(sched.lr)
    for a, b in zip(lrs, lrs[1:]):
        assert b == a or b == a * factor


def test_best_epoch_known_maximum_and_ties():
    recs = [EpochRecord(i + 1, 1.0, 0.5, 1.0, acc, 0.001) for i, acc in enumerate([0.2, 0.9, 0.4, 0.9, 0.1])]
    assert select_best_epoch(recs) == 2
    assert TrainHistory(recs).best.val_acc == 0.9
    with pytest.raises(ValueError):
        select_best_epoch([])


def test_history_csv_roundtrip():
    recs = [EpochRecord(i + 1, 1 / 3 + i, 0.25, 0.1 * i, 0.7, 0.001 / (i + 1)) for i in range(4)]
    h = TrainHistory(recs)
    assert TrainHistory.from_csv(h.to_csv()).records == recs
    assert h.to_csv().splitlines()[0] == "epoch,train_loss,train_acc,val_loss,val_acc,lr"


def test_metrics_oracle():
    rep = metrics_from_confusion(ORACLE)
    assert rep.accuracy == pytest.approx(0.85, abs=1e-9)
    assert rep.per_class_precision[0] == pytest.approx(50 / 55, abs=1e-12)
    assert rep.per_class_recall[0] == pytest.approx(50 / 60, abs=1e-12)
    assert rep.f1 == pytest.approx(ORACLE_MACRO_F1, abs=1e-9)
    assert rep.f1 == pytest.approx(0.846547, abs=1e-6)


def test_all_correct_and_absent_class():
    rep = metrics_from_confusion(np.diag([3, 4, 5]))
    assert rep.accuracy == 1.0 and rep.f1 == 1.0
    rep = metrics_from_confusion(np.array([[2, 1, 0], [0, 3, 0], [0, 0, 0]]), ("a", "b", "c"))
    assert rep.excluded == ["c"]
    assert rep.recall == pytest.approx((2 / 3 + 1) / 2)
    with pytest.raises(DataError):
        metrics_from_confusion(np.zeros((2, 2)))


def test_confusion_rows_are_truth():
    cm = confusion_matrix(np.array([0, 0, 1, 2]), np.array([1, 0, 1, 1]), 3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [0, 1, 0]]


def confusions():
    return st.integers(2, 6).flatmap(lambda k: st.lists(st.integers(0, 50), min_size=k * k, max_size=k * k).map(
        lambda v: np.array(v).reshape(k, k))).filter(lambda m: m.sum() > 0)


@settings(max_examples=100, deadline=None)
@given(confusions(), st.randoms(use_true_random=False))
def test_metrics_identities(cm, rnd):
    rep = metrics_from_confusion(cm)
    assert rep.accuracy == pytest.approx(np.trace(cm) / cm.sum(), abs=1e-12)
    rows = cm.sum(axis=1)
    np.testing.assert_allclose(rep.per_class_recall[rows > 0], np.diag(cm)[rows > 0] / rows[rows > 0])
    assert 0 <= rep.f1 <= 1 and 0 <= rep.precision <= 1 and 0 <= rep.recall <= 1
    assert rep.confusion.sum() == cm.sum()
    perm = list(range(len(cm)))
    rnd.shuffle(perm)
    assert metrics_from_confusion(cm[np.ix_(perm, perm)]).f1 == pytest.approx(rep.f1, abs=1e-12)


def test_adamw_first_step_and_decoupled_decay():
    p = Parameter(np.array([1.0, -2.0]))
    p.grad = np.array([0.5, -0.1])
    AdamW([p], lr=0.1, weight_decay=0.01).step()
    # first bias-corrected Adam step is lr * sign(g) (up to eps); decay multiplies by 1 - lr * wd first
    np.testing.assert_allclose(p.data, np.array([1.0, -2.0]) * 0.999 - 0.1 * np.sign([0.5, -0.1]), atol=1e-6)


def test_tiny_set_memorization(eight_clips):
    data, _ = eight_clips
    steps, acc = fit_steps(AudronModel(ModelConfig(seed=0)), data, TrainConfig(), max_steps=200)
    assert acc == 1.0 and steps <= 200


@pytest.mark.parametrize("seed", range(5))
def test_single_step_decreases_ce(eight_clips, seed):
    data, _ = eight_clips
    model = AudronModel(ModelConfig(seed=seed)).train()
    batch = data.batch(np.arange(len(data)))

    def ce():
        model.fusion_head.dropout.rng = np.random.default_rng(seed)
        return combined_loss(model(batch), batch.labels, batch.target, 0.0)

    before = ce()
    model.zero_grad()
    backward(before)
    AdamW(model.parameters(), 1e-3).step()
    with no_grad():
        after = ce().item()
    assert after < before.item()


def _short(seed=0, epochs=2):
    return TrainConfig(max_epochs=epochs, batch_size=4, seed=seed)


def test_training_is_deterministic(eight_clips, four_clips):
    data, _ = eight_clips
    runs = [train(AudronModel(ModelConfig(seed=3)), data, four_clips, _short()) for _ in range(2)]
    assert runs[0].history.records == runs[1].history.records
    for k, v in runs[0].best_state.items():
        np.testing.assert_array_equal(v, runs[1].best_state[k])


def test_bundle_roundtrip_reproduces_val_accuracy(tmp_path, eight_clips, four_clips):
    data, norm = eight_clips
    model = AudronModel(ModelConfig(seed=4))
    result = train(model, data, four_clips, _short(epochs=3))
    save_bundle(tmp_path / "m.ckpt", model, FeatureConfig(), norm, ("Q", "H", "O", "R"), result.best_state)
    loaded, feat_cfg, norm2, labels = load_bundle(tmp_path / "m.ckpt")
    assert feat_cfg == FeatureConfig() and labels == ("Q", "H", "O", "R")
    np.testing.assert_array_equal(norm2.mfcc_mean, norm.mfcc_mean)
    assert evaluate(loaded, four_clips).accuracy == result.history.best.val_acc


def test_empty_split_and_nan_abort(eight_clips, four_clips):
    data, _ = eight_clips
    with pytest.raises(DataError):
        train(AudronModel(ModelConfig()), data.subset([]), four_clips, _short())
    model = AudronModel(ModelConfig())
    model.fusion_head.out.bias.data[0] = np.nan
    with pytest.raises(NumericError, match="epoch 1 batch 0"):
        train(model, data, four_clips, _short())


def test_ablation_rows(eight_clips, four_clips):
    data, _ = eight_clips
    rows = ablate(ModelConfig(seed=1), data, four_clips, _short(epochs=1))
    assert len(rows) == 5 and [r.branches for r in rows] == ablation_configs()
    assert rows[-1].branches == BRANCHES and rows[-1].drop == 0.0
    lines = ablation_csv(rows).splitlines()
    assert len(lines) == 6 and lines[-1].startswith('MFCC + STFT-CNN + RNN + Autoencoder,')
    with pytest.raises(ValueError):
        ablate(ModelConfig(), data, four_clips, _short(), configs=[("mfcc", "stft")])
