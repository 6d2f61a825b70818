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

import numpy as np

from helpers import labeled, random_unit
from hhscore import errors
from hhscore.pairs import (
    LabeledUtterance,
    TrainingPairSet,
    build_pairs,
    corrupt_labels,
    group_by_label,
)


def household(rng, members, per_member, guests, D=8):
    groups = {"spk%d" % i: labeled(rng, "spk%d" % i, per_member, D) for i in range(members)}
    guest_list = [random_unit(rng, D) for _ in range(guests)]
    return groups, guest_list


def test_two_members_should_give_six_positives_and_nine_negatives(rng):
    groups, guests = household(rng, 2, 3, 0)
    pairs = build_pairs(groups, guests, seed=0)
    assert (pairs.positives, pairs.negatives) == (6, 9)
    assert pairs.weight_w == 1.5


def test_single_member_with_guest_should_give_weight_two(rng):
    groups, guests = household(rng, 1, 2, 1)
    pairs = build_pairs(groups, guests, seed=0)
    assert (pairs.positives, pairs.negatives) == (1, 2)
    assert pairs.weight_w == 2.0


def test_full_household_should_match_enumerated_counts(rng):
    groups, guests = household(rng, 4, 50, 250)
    pairs = build_pairs(groups, guests, seed=0)
    assert pairs.positives == 4 * 1225
    assert pairs.negatives == 6 * 2500 + 4 * 50 * 250
    assert len(pairs) == 4900 + 65000
    assert pairs.weight_w == 65000 / 4900
    assert pairs.weight_w * pairs.positives == pytest.approx(pairs.negatives, rel=1e-15)


def test_pair_labels_should_agree_with_targets(rng):
    groups, guests = household(rng, 3, 5, 7)
    pairs = build_pairs(groups, guests, seed=1)
    for a, b, t in zip(pairs.left, pairs.right, pairs.targets):
        la = pairs.labels[a]
        lb = pairs.labels[b]
        if t == 1:
            assert la == lb and la is not None
        else:
            assert la != lb or la is None
            assert not (la is None and lb is None)


def test_pairs_should_never_reuse_one_utterance(rng):
    groups, guests = household(rng, 3, 5, 7)
    pairs = build_pairs(groups, guests, seed=1)
    assert np.all(pairs.left != pairs.right)


def test_build_pairs_should_be_deterministic(rng):
    groups, guests = household(rng, 3, 5, 7)
    a = build_pairs(groups, guests, seed=4)
    b = build_pairs(groups, guests, seed=4)
    assert np.array_equal(a.left, b.left)
    assert np.array_equal(a.right, b.right)
    assert np.array_equal(a.targets, b.targets)


def test_reshuffling_should_keep_pair_multiset(rng):
    groups, guests = household(rng, 3, 5, 7)
    a = build_pairs(groups, guests, seed=4)
    b = build_pairs(groups, guests, seed=5)
    assert not np.array_equal(a.targets, b.targets) or not np.array_equal(a.left, b.left)
    assert a.pair_keys() == b.pair_keys()


def test_guest_cap_should_limit_member_guest_negatives(rng):
    groups, guests = household(rng, 2, 5, 40)
    pairs = build_pairs(groups, guests, cap_guest_negatives=10, seed=0)
    assert pairs.negatives == 25 + 2 * 10


def test_member_without_negatives_should_be_degenerate(rng):
    groups, guests = household(rng, 1, 4, 0)
    with pytest.raises(errors.DegenerateHouseholdError):
        build_pairs(groups, guests, seed=0)


def test_members_without_positives_should_be_degenerate(rng):
    groups, guests = household(rng, 2, 1, 0)
    with pytest.raises(errors.DegenerateHouseholdError):
        build_pairs(groups, guests, seed=0)


def test_pair_set_should_expose_pairs(rng):
    groups, guests = household(rng, 2, 3, 0)
    pairs = build_pairs(groups, guests, seed=0)
    items = pairs.pairs
    assert len(items) == 15
    assert sum(p.target for p in items) == 6
    assert items[0].e1.shape == (8,)


def test_concatenate_should_recompute_weight(rng):
    a = build_pairs(*household(rng, 2, 3, 0), seed=0)
    b = build_pairs(*household(rng, 1, 2, 1), seed=0)
    union = TrainingPairSet.concatenate([a, b])
    assert union.positives == 7
    assert union.negatives == 11
    assert union.weight_w == 11 / 7


def test_corrupt_labels_with_zero_epsilon_should_keep_labels(rng):
    utterances = labeled(rng, "a", 10, 4) + labeled(rng, "b", 10, 4)
    assert corrupt_labels(utterances, ["a", "b"], 0.0, seed=0) == utterances


def test_corrupt_labels_with_single_member_should_keep_labels(rng):
    utterances = labeled(rng, "a", 10, 4)
    result = corrupt_labels(utterances, ["a"], 1.0, seed=0)
    assert [u.speaker_label for u in result] == ["a"] * 10


def test_corrupt_labels_should_flip_expected_fraction():
    labels = ["a", "b", "c", "d"]
    utterances = [
        LabeledUtterance(str(i), labels[i % 4], np.zeros(1)) for i in range(10**4)
    ]
    result = corrupt_labels(utterances, labels, 0.1, seed=3)
    flipped = sum(a.speaker_label != b.speaker_label for a, b in zip(utterances, result))
    assert abs(flipped / 10**4 - 0.075) < 0.01


def test_corrupt_labels_drawing_from_others_should_always_change_label():
    labels = ["a", "b", "c"]
    utterances = [LabeledUtterance(str(i), labels[i % 3], np.zeros(1)) for i in range(300)]
    result = corrupt_labels(utterances, labels, 1.0, seed=3, draw="others")
    assert all(a.speaker_label != b.speaker_label for a, b in zip(utterances, result))


def test_corrupt_labels_should_keep_embeddings_and_ids(rng):
    utterances = labeled(rng, "a", 5, 4) + labeled(rng, "b", 5, 4)
    result = corrupt_labels(utterances, ["a", "b"], 1.0, seed=1)
    for a, b in zip(utterances, result):
        assert a.utterance_id == b.utterance_id
        assert a.embedding is b.embedding


def test_corrupt_labels_should_be_deterministic(rng):
    utterances = labeled(rng, "a", 20, 4) + labeled(rng, "b", 20, 4)
    assert corrupt_labels(utterances, ["a", "b"], 0.5, seed=9) == corrupt_labels(
        utterances, ["a", "b"], 0.5, seed=9
    )


@pytest.mark.parametrize("epsilon", [-0.1, 1.5])
def test_corrupt_labels_should_reject_bad_epsilon(rng, epsilon):
    with pytest.raises(errors.ConfigError):
        corrupt_labels(labeled(rng, "a", 2, 4), ["a"], epsilon, seed=0)


def test_corrupt_labels_should_reject_outsiders(rng):
    with pytest.raises(errors.NotFoundError):
        corrupt_labels(labeled(rng, "x", 2, 4), ["a", "b"], 0.5, seed=0)


def test_group_by_label_should_keep_first_seen_order(rng):
    utterances = labeled(rng, "b", 2, 4) + labeled(rng, "a", 1, 4)
    groups = group_by_label(utterances)
    assert list(groups) == ["b", "a"]
    assert len(groups["b"]) == 2
