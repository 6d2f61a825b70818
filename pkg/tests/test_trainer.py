# =============================================================================
# This file is part of hhscore.
#
# hhscore is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 2 of the License, or
# (at your option) any later version.
#
# hhscore is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with hhscore.  If not, see <http://www.gnu.org/licenses/>.
# =============================================================================

import pytest

import io
import math

import numpy as np

from helpers import labeled, random_unit
from hhscore import errors, trainer
from hhscore.model import (
    DropoutMask,
    ForwardPass,
    HouseholdScoringModel,
    init_model,
    sample_mask,
)
from hhscore.pairs import TrainingPair, build_pairs
from hhscore.trainer import (
    LossReport,
    ModelGradient,
    TrainConfig,
    backward,
    gradient_check,
    train,
    weighted_bce_loss,
)


def random_model(rng, D, K, seed, **kwargs):
    model = init_model(D, K, seed, **kwargs)
    for b in model.biases:
        b[:] = 0.1 * rng.standard_normal(b.shape[0])
    model.fusion[1:] = [rng.uniform(-3.0, -0.5), rng.uniform(-1.0, 1.0)]
    if model.use_global:
        model.fusion[0] = rng.uniform(0.5, 3.0)
    return model


def separated_pairs(rng, D=16):
    centers = [random_unit(rng, D) for _ in range(3)]
    members = {
        "a": labeled(rng, "a", 8, D, center=centers[0], noise=0.05),
        "b": labeled(rng, "b", 8, D, center=centers[1], noise=0.05),
    }
    guests = [u.embedding for u in labeled(rng, "g", 6, D, center=centers[2], noise=0.05)]
    return build_pairs(members, guests, seed=0)


def test_loss_of_even_scores_should_be_ln2():
    assert weighted_bce_loss([0.5, 0.5], [1, 0], 1.0) == pytest.approx(math.log(2.0), abs=1e-15)


def test_loss_of_perfect_scores_should_vanish():
    assert weighted_bce_loss([1.0 - 1e-12, 1e-12], [1, 0], 3.0) < 1e-10


def test_loss_should_clamp_saturated_scores():
    loss = weighted_bce_loss([0.0, 1.0], [1, 0], 1.0)
    assert math.isfinite(loss)
    expected = -(np.log(1e-12) + np.log(1.0 - (1.0 - 1e-12))) / 2.0
    assert loss == pytest.approx(expected, rel=1e-12)


def test_loss_should_match_scalar_recomputation(rng):
    for _ in range(10):
        n = 64
        scores = rng.uniform(0.01, 0.99, size=n)
        targets = rng.integers(0, 2, size=n)
        w = rng.uniform(0.5, 20.0)
        total = 0.0
        for s, t in zip(scores, targets):
            total += w * math.log(s) if t == 1 else math.log(1.0 - s)
        assert abs(weighted_bce_loss(scores, targets, w) - (-total / n)) < 1e-12


def test_unit_weight_loss_should_equal_plain_bce_exactly(rng):
    scores = rng.uniform(0.01, 0.99, size=100)
    targets = np.array([1, 0] * 50)
    plain = -np.mean(targets * np.log(scores) + (1 - targets) * np.log(1.0 - scores))
    assert weighted_bce_loss(scores, targets, 1.0) == float(plain)


def test_loss_should_decompose_over_batches(rng):
    scores = rng.uniform(0.01, 0.99, size=100)
    targets = rng.integers(0, 2, size=100)
    full = weighted_bce_loss(scores, targets, 2.5)
    parts = [(0, 30), (30, 64), (64, 100)]
    weighted = sum(
        (b - a) * weighted_bce_loss(scores[a:b], targets[a:b], 2.5) for a, b in parts
    )
    assert abs(full - weighted / 100) < 1e-10


def test_loss_should_reject_length_mismatch():
    with pytest.raises(errors.DimensionError):
        weighted_bce_loss([0.5, 0.5], [1], 1.0)


def test_dead_network_should_have_zero_weight_gradient(rng):
    model = HouseholdScoringModel([np.zeros((4, 8))], [np.zeros(4)], [1.0, -1.0, 0.0])
    pair = TrainingPair(random_unit(rng, 8), random_unit(rng, 8), 0)
    grad = backward(model, pair, sample_mask(8, 0.5, rng), w=2.0)
    assert np.all(grad.W == 0.0)
    assert np.all(grad.B == 0.0)
    assert grad.w2 == 0.0


def test_identical_pair_should_have_no_distance_gradient(rng):
    model = random_model(rng, 16, 4, seed=1)
    e = random_unit(rng, 16)
    grad = backward(model, TrainingPair(e, e, 1), None, w=2.0)
    assert np.all(grad.W == 0.0)
    assert np.all(grad.B == 0.0)
    assert grad.w2 == 0.0
    assert grad.b != 0.0


def test_backward_should_match_finite_differences_on_random_draws(rng):
    for seed in range(20):
        model = random_model(rng, 64, 16, seed)
        pair = TrainingPair(random_unit(rng, 64), random_unit(rng, 64), int(rng.integers(2)))
        mask = sample_mask(64, 0.5, rng)
        err = gradient_check(model, [pair], h=1e-6, w=1.5, kept=mask.kept[None, :], rate=0.5)
        assert err < 1e-6


def test_gradient_check_should_report_undiluted_relative_error(rng, monkeypatch):
    exact = trainer.batch_gradient

    def skewed(*args, **kwargs):
        g = exact(*args, **kwargs)
        return ModelGradient(
            [x * 1.01 for x in g.weights], [x * 1.01 for x in g.biases], g.fusion * 1.01
        )

    monkeypatch.setattr(trainer, "batch_gradient", skewed)
    # w1=1, w2=-1, b=0 keeps the score below expit(1), so |dL/db| sits in
    # (1e-3, 1e-2) with w=0.01
    model = init_model(16, 4, seed=2)
    pair = TrainingPair(random_unit(rng, 16), random_unit(rng, 16), 1)
    assert gradient_check(model, [pair], w=0.01) == pytest.approx(0.01 / 1.01, rel=1e-3)


def test_gradient_check_should_skip_coordinates_below_cutoff(rng):
    model = random_model(rng, 16, 4, seed=6)
    pair = TrainingPair(random_unit(rng, 16), random_unit(rng, 16), 0)
    assert gradient_check(model, [pair], w=1.0, min_gradient=1e6) == 0.0


def test_distance_smoothing_should_not_move_ordinary_gradients(rng):
    model = random_model(rng, 16, 4, seed=7)
    pair = TrainingPair(random_unit(rng, 16), random_unit(rng, 16), 1)
    smoothed = backward(model, pair, None, w=2.0)
    exact = backward(model, pair, None, w=2.0, distance_epsilon=0.0)
    for a, b in zip(smoothed.arrays(), exact.arrays()):
        assert np.allclose(a, b, rtol=1e-9, atol=1e-15)


def test_gradient_check_should_cover_batches(rng):
    model = random_model(rng, 32, 8, seed=3)
    pairs = [
        TrainingPair(random_unit(rng, 32), random_unit(rng, 32), t) for t in (0, 1, 1, 0, 1)
    ]
    assert gradient_check(model, pairs, w=3.0) < 1e-6


def test_gradient_check_should_be_robust_to_step_size(rng):
    model = random_model(rng, 32, 8, seed=4)
    pair = TrainingPair(random_unit(rng, 32), random_unit(rng, 32), 1)
    assert gradient_check(model, [pair], h=1e-6, w=1.5) < 1e-6
    assert gradient_check(model, [pair], h=1e-5, w=1.5) < 1e-6


def test_gradient_check_should_skip_relu_kinks(rng):
    model = HouseholdScoringModel([np.zeros((4, 8))], [np.zeros(4)], [1.0, -1.0, 0.0])
    pair = TrainingPair(random_unit(rng, 8), random_unit(rng, 8), 1)
    assert gradient_check(model, [pair]) == 0.0


def test_cosine_local_metric_gradient_should_match_finite_differences(rng):
    for seed in range(5):
        model = random_model(rng, 16, 6, seed, local_metric="cosine")
        pair = TrainingPair(random_unit(rng, 16), random_unit(rng, 16), int(rng.integers(2)))
        assert gradient_check(model, [pair], w=2.0) < 1e-6


def test_hidden_layer_gradient_should_match_finite_differences(rng):
    for seed in range(5):
        model = random_model(rng, 16, 4, seed, hidden=[10])
        pair = TrainingPair(random_unit(rng, 16), random_unit(rng, 16), int(rng.integers(2)))
        mask = sample_mask(16, 0.2, rng)
        assert gradient_check(model, [pair], w=2.0, kept=mask.kept[None, :], rate=0.2) < 1e-6


def test_local_only_model_should_have_no_global_gradient(rng):
    model = random_model(rng, 16, 4, seed=2, use_global=False)
    pair = TrainingPair(random_unit(rng, 16), random_unit(rng, 16), 1)
    assert backward(model, pair, None, w=1.0).w1 == 0.0
    assert gradient_check(model, [pair], w=1.0) < 1e-6


def test_backward_should_reject_non_finite_values(rng):
    model = init_model(8, 4, seed=0)
    model.fusion[1] = np.nan
    pair = TrainingPair(random_unit(rng, 8), random_unit(rng, 8), 1)
    with pytest.raises(errors.NumericalError):
        backward(model, pair, None)


def test_dropout_mask_should_be_shared_by_both_members(rng):
    model = init_model(16, 4, seed=0)
    e1 = random_unit(rng, 16)
    e2 = random_unit(rng, 16)
    kept = sample_mask(16, 0.5, rng).kept
    fwd = ForwardPass(model, e1[None, :], e2[None, :], kept=kept[None, :], rate=0.5)
    dropped = ~kept
    assert np.all(fwd.inputs1[0][0][dropped] == 0.0)
    assert np.all(fwd.inputs2[0][0][dropped] == 0.0)
    assert np.all((fwd.inputs1[0][0] != 0.0) <= kept)
    assert np.all((fwd.inputs2[0][0] != 0.0) <= kept)


def test_training_with_zero_learning_rate_should_keep_parameters(rng):
    pairs = separated_pairs(rng)
    model = init_model(16, 4, seed=0)
    trained, report = train(model, pairs, TrainConfig(learning_rate=0.0, epochs=3))
    assert trained == model
    assert len(report.history) == 3


def test_training_should_be_deterministic(rng):
    pairs = separated_pairs(rng)
    model = init_model(16, 4, seed=0)
    cfg = TrainConfig(epochs=3, batch_size=32, seed=11)
    a, report_a = train(model, pairs, cfg)
    b, report_b = train(model, pairs, cfg)
    assert a == b
    assert report_a.history == report_b.history


def test_training_should_not_modify_input_model(rng):
    pairs = separated_pairs(rng)
    model = init_model(16, 4, seed=0)
    snapshot = model.copy()
    train(model, pairs, TrainConfig(epochs=2))
    assert model == snapshot


def test_training_on_separated_speakers_should_reduce_loss(rng):
    pairs = separated_pairs(rng)
    model = init_model(16, 4, seed=0)
    cfg = TrainConfig(epochs=20, learning_rate=0.1, dropout_rate=0.0)
    _, report = train(model, pairs, cfg)
    assert report.history[-1] < report.history[0]


def test_adam_training_should_reduce_loss(rng):
    pairs = separated_pairs(rng)
    model = init_model(16, 4, seed=0)
    cfg = TrainConfig(epochs=20, learning_rate=0.01, dropout_rate=0.0, optimizer="adam")
    _, report = train(model, pairs, cfg)
    assert report.history[-1] < report.history[0]


@pytest.mark.parametrize("refresh", ["epoch", "batch", "once"])
def test_mask_refresh_modes_should_train_deterministically(rng, refresh):
    pairs = separated_pairs(rng)
    model = init_model(16, 4, seed=0)
    cfg = TrainConfig(epochs=2, batch_size=16, mask_refresh=refresh)
    a, _ = train(model, pairs, cfg)
    b, _ = train(model, pairs, cfg)
    assert a == b
    assert a.is_finite()


def test_local_only_training_should_keep_global_weight_at_zero(rng):
    pairs = separated_pairs(rng)
    model = init_model(16, 4, seed=0, use_global=False)
    trained, _ = train(model, pairs, TrainConfig(epochs=3, learning_rate=0.1))
    assert trained.w1 == 0.0


def test_nan_loss_should_abort_with_epoch(rng):
    pairs = separated_pairs(rng)
    model = init_model(16, 4, seed=0)
    model.fusion[2] = np.nan
    with pytest.raises(errors.NumericalError) as e:
        train(model, pairs, TrainConfig(epochs=2))
    assert e.value.epoch == 0


def test_training_should_reject_dimension_mismatch(rng):
    pairs = separated_pairs(rng)
    with pytest.raises(errors.DimensionError):
        train(init_model(32, 4, seed=0), pairs, TrainConfig(epochs=1))


@pytest.mark.parametrize(
    "changes",
    [{"dropout_rate": 1.0}, {"optimizer": "rmsprop"}, {"epochs": 0}, {"mask_refresh": "never"}],
)
def test_train_config_should_reject_bad_values(changes):
    with pytest.raises(errors.ConfigValueError):
        TrainConfig(**changes).validate()


def test_loss_report_should_write_tab_separated_curve():
    report = LossReport(history=[0.75, 0.5])
    fl = io.StringIO()
    report.write(fl)
    assert fl.getvalue() == "epoch\tmean_loss\n1\t0.75\n2\t0.5\n"
    assert report.loss_value == 0.5


def test_backward_should_be_deterministic(rng):
    model = random_model(rng, 16, 4, seed=6)
    pair = TrainingPair(random_unit(rng, 16), random_unit(rng, 16), 0)
    mask = DropoutMask(rng.random(16) >= 0.3, 0.3)
    a = backward(model, pair, mask, w=1.0)
    b = backward(model, pair, mask, w=1.0)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
