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

import numpy as np

from hhscore import errors
from hhscore.evaluation import (
    ENROLLED,
    GUEST,
    BaselineScorer,
    ModelScorer,
    Trial,
    aggregate_eer,
    candidate_thresholds,
    eer,
    error_curve,
    evaluate_household,
    identify,
    load_trials,
    rates_at_threshold,
    read_trials,
    write_trials,
)
from hhscore.households import generate_random_households
from hhscore.model import init_model
from hhscore.vectors import SpeakerProfile, l2_normalize, normalize_rows


def guest(score, household="hh"):
    return Trial(household, GUEST, None, "a", score)


def member(score, correct=True, household="hh"):
    return Trial(household, ENROLLED, "a", "a" if correct else "b", score)


def random_trials(rng, count):
    trials = []
    quantize = rng.random() < 0.5
    for _ in range(count):
        s = rng.random()
        if quantize:
            s = round(s, 1)
        kind = rng.random()
        if kind < 0.4:
            trials.append(guest(s))
        else:
            trials.append(member(s, correct=kind > 0.5))
    trials.append(guest(rng.random()))
    trials.append(member(rng.random()))
    return trials


def brute_force_eer(trials):
    guest_scores = np.array([t.s_max for t in trials if t.is_guest])
    enrolled = [t for t in trials if not t.is_guest]
    enrolled_scores = np.array([t.s_max for t in enrolled])
    wrong = np.array([not t.correct for t in enrolled])
    taus = np.concatenate([[-np.inf], np.unique([t.s_max for t in trials]), [np.inf]])
    far = np.mean(guest_scores[None, :] >= taus[:, None], axis=1)
    fnir = np.mean(wrong[None, :] | (enrolled_scores[None, :] < taus[:, None]), axis=1)
    gap = np.abs(far - fnir)
    best = np.flatnonzero(gap == gap.min())[0]
    return (far[best] + fnir[best]) / 2.0


def test_rejecting_everything_should_give_no_false_accepts():
    trials = [guest(0.3), member(0.7), member(0.9)]
    rates = rates_at_threshold(trials, 1.5)
    assert (rates.far, rates.fnir) == (0.0, 1.0)


def test_accepting_everything_should_give_no_false_negatives():
    trials = [guest(0.3), member(0.7), member(0.9)]
    rates = rates_at_threshold(trials, 0.3)
    assert (rates.far, rates.fnir) == (1.0, 0.0)


def test_threshold_should_accept_equal_scores():
    rates = rates_at_threshold([guest(0.5), member(0.5)], 0.5)
    assert (rates.far, rates.fnir) == (1.0, 0.0)


def test_misidentification_should_count_as_false_negative_at_any_threshold():
    trials = [guest(0.1), member(0.9), member(0.95, correct=False)]
    assert rates_at_threshold(trials, -np.inf).fnir == 0.5


def test_rates_should_reject_trials_without_guests():
    with pytest.raises(errors.DegenerateTrialSetError):
        rates_at_threshold([member(0.5)], 0.5)
    with pytest.raises(errors.DegenerateTrialSetError):
        eer([guest(0.5)])


def test_separated_scores_should_give_zero_eer():
    trials = [guest(0.1), guest(0.2), member(0.8), member(0.9)]
    value, threshold = eer(trials)
    assert value == 0.0
    assert 0.2 < threshold <= 0.8


def test_identical_distributions_should_give_half_eer():
    scores = [0.2, 0.4, 0.6, 0.8]
    trials = [guest(s) for s in scores] + [member(s) for s in scores]
    assert eer(trials) == (0.5, 0.6)


def test_eer_should_match_brute_force_on_random_trial_sets(rng):
    for _ in range(100):
        trials = random_trials(rng, int(rng.integers(10, 1000)))
        assert abs(eer(trials)[0] - brute_force_eer(trials)) < 1e-12


def test_error_curve_should_be_monotone(rng):
    for _ in range(10):
        taus, far, fnir = error_curve(random_trials(rng, 300))
        assert np.all(np.diff(taus) > 0)
        assert np.all(np.diff(far) <= 0)
        assert np.all(np.diff(fnir) >= 0)
        assert (far[0], far[-1]) == (1.0, 0.0)
        assert fnir[-1] == 1.0


def test_candidate_thresholds_should_bracket_unique_scores():
    taus = candidate_thresholds([guest(0.5), member(0.5), member(0.7)])
    assert list(taus) == [-np.inf, 0.5, 0.7, np.inf]


def test_eer_should_be_invariant_under_increasing_transform(rng):
    trials = random_trials(rng, 200)
    squashed = [
        Trial(t.household_id, t.trial_type, t.truth, t.predicted, t.s_max ** 3) for t in trials
    ]
    assert eer(trials)[0] == eer(squashed)[0]


def test_aggregation_modes_should_differ_on_uneven_households():
    easy = [guest(0.1, "h1"), guest(0.2, "h1"), member(0.8, household="h1"), member(0.9, household="h1")]
    hard = [guest(0.3, "h2"), guest(0.6, "h2"), member(0.3, household="h2"), member(0.6, household="h2")]
    assert aggregate_eer([easy, hard], "mean_per_household") == 0.25
    assert aggregate_eer([easy, hard], "pooled") == eer(easy + hard)[0]


def test_aggregation_should_reject_unknown_mode():
    with pytest.raises(errors.ConfigValueError):
        aggregate_eer([[guest(0.1), member(0.9)]], "median")


class RawCosine:
    name = "cosine"

    def __call__(self, e1, e2):
        return float(l2_normalize(e1) @ l2_normalize(e2))

    def score_many(self, profiles, tests):
        return normalize_rows(tests) @ normalize_rows(profiles).T


def test_identify_should_pick_highest_score(rng):
    profiles = [SpeakerProfile(s, l2_normalize(rng.standard_normal(8))) for s in "cab"]
    test = profiles[2].embedding
    predicted, s_max, scores = identify(BaselineScorer(), profiles, test)
    assert predicted == "b"
    assert s_max == pytest.approx(1.0, abs=1e-12)
    assert list(scores) == ["a", "b", "c"]


def test_identify_ties_should_go_to_smaller_id():
    e = np.array([1.0, 0.0])
    profiles = [SpeakerProfile("b", e), SpeakerProfile("a", e)]
    assert identify(BaselineScorer(), profiles, e)[0] == "a"


def test_identify_should_reject_empty_household():
    with pytest.raises(errors.EmptyInputError):
        identify(BaselineScorer(), [], np.ones(2))


def test_baseline_should_identify_like_raw_cosine(rng):
    profiles = [SpeakerProfile("s%d" % i, l2_normalize(rng.standard_normal(16))) for i in range(4)]
    for _ in range(20):
        test = rng.standard_normal(16)
        assert identify(BaselineScorer(), profiles, test)[0] == identify(RawCosine(), profiles, test)[0]


def test_evaluate_household_should_score_every_test_utterance(small_corpus):
    (h,) = generate_random_households(small_corpus, 3, 1, seed=0)
    trials = evaluate_household(None, h, small_corpus)
    assert sum(t.is_guest for t in trials) == 250
    assert sum(not t.is_guest for t in trials) == 30
    assert all(t.household_id == "hh0000" for t in trials)
    assert all(0.0 <= t.s_max <= 1.0 for t in trials)
    assert {t.predicted for t in trials} <= set(h.members)


def test_evaluate_household_should_match_pairwise_identify(small_corpus):
    (h,) = generate_random_households(small_corpus, 2, 1, seed=1)
    model = init_model(small_corpus.dimension, 4, seed=0)
    scorer = ModelScorer(model)
    trials = evaluate_household(model, h, small_corpus)
    profiles = h.profiles(small_corpus)
    s = h.members[0]
    first = small_corpus.embedding(s, h.eval[s][0])
    predicted, s_max, _ = identify(scorer, profiles, first)
    assert trials[0].predicted == predicted
    assert trials[0].s_max == pytest.approx(s_max, abs=1e-12)


def test_evaluate_household_should_reject_dimension_mismatch(small_corpus):
    (h,) = generate_random_households(small_corpus, 2, 1, seed=1)
    with pytest.raises(errors.DimensionError):
        evaluate_household(init_model(32, 4, seed=0), h, small_corpus)


def test_trial_dump_should_round_trip(rng):
    trials = random_trials(rng, 50)
    fl = io.StringIO()
    write_trials(trials, fl, comments=["mode: fused"])
    fl.seek(0)
    assert fl.readline() == "# mode: fused\n"
    fl.seek(0)
    assert read_trials(fl) == trials


def test_trial_dump_should_mark_guest_truth():
    fl = io.StringIO()
    write_trials([guest(0.25)], fl)
    assert fl.getvalue().splitlines()[1] == "hh\tguest\t-\ta\t0.25"


def test_trial_file_should_load(workdir):
    trials = [guest(0.1), member(0.9)]
    path = workdir / "trials.tsv"
    with open(path, "w", newline="") as fl:
        write_trials(trials, fl)
    assert load_trials(path) == trials


@pytest.mark.parametrize(
    "text",
    [
        "",
        "wrong\theader\n",
        "household_id\ttrial_type\ttruth\tpredicted\ts_max\nhh\talien\t-\ta\t0.5\n",
        "household_id\ttrial_type\ttruth\tpredicted\ts_max\nhh\tguest\t-\ta\tlots\n",
        "household_id\ttrial_type\ttruth\tpredicted\ts_max\nhh\tguest\t-\n",
    ],
)
def test_trial_reader_should_reject_malformed_dumps(text):
    with pytest.raises(errors.FormatError):
        read_trials(io.StringIO(text))
