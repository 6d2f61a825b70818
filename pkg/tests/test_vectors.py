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

from hhscore import errors
from hhscore.vectors import (
    average_profile,
    cosine_similarity,
    euclidean_distance,
    l2_normalize,
    normalize_rows,
)


def test_l2_normalize_should_scale_3_4_to_unit_length():
    assert np.allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)


def test_l2_normalize_should_reach_unit_norm_for_random_vectors(rng):
    for _ in range(20):
        v = l2_normalize(rng.standard_normal(64) * 10.0)
        assert abs(np.linalg.norm(v) - 1.0) < 1e-12


def test_l2_normalize_should_be_idempotent(rng):
    v = l2_normalize(rng.standard_normal(64))
    assert np.allclose(l2_normalize(v), v, atol=1e-12, rtol=0.0)


def test_l2_normalize_should_reject_zero_vector():
    with pytest.raises(errors.NormalizationError):
        l2_normalize(np.zeros(8))


def test_cosine_similarity_should_handle_trivial_angles():
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.0, 1.0, 0.0])
    assert cosine_similarity(a, a) == 1.0
    assert cosine_similarity(a, b) == 0.0
    assert cosine_similarity(a, -a) == -1.0


def test_cosine_similarity_should_be_exactly_symmetric(rng):
    for _ in range(50):
        a = rng.standard_normal(32)
        b = rng.standard_normal(32)
        assert cosine_similarity(a, b) == cosine_similarity(b, a)


def test_cosine_similarity_should_stay_within_bounds_for_scaled_copies(rng):
    a = rng.standard_normal(128)
    assert -1.0 <= cosine_similarity(a, 3.0 * a) <= 1.0


def test_cosine_similarity_should_reject_zero_vector():
    with pytest.raises(errors.NormalizationError):
        cosine_similarity(np.zeros(3), np.ones(3))


def test_euclidean_distance_should_match_3_4_5_triangle():
    assert euclidean_distance([0.0, 0.0], [3.0, 4.0]) == 5.0
    assert euclidean_distance([1.0, 2.0], [1.0, 2.0]) == 0.0


def test_euclidean_distance_should_match_direct_recomputation(rng):
    a = rng.standard_normal(32)
    b = rng.standard_normal(32)
    expected = np.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))
    assert euclidean_distance(a, b) == pytest.approx(expected, rel=1e-12)


def test_euclidean_distance_should_reject_length_mismatch():
    with pytest.raises(errors.DimensionError):
        euclidean_distance(np.ones(3), np.ones(4))


def test_unit_vectors_should_relate_distance_and_cosine(rng):
    for _ in range(20):
        a = l2_normalize(rng.standard_normal(64))
        b = l2_normalize(rng.standard_normal(64))
        d = euclidean_distance(a, b)
        assert abs(d * d - (2.0 - 2.0 * cosine_similarity(a, b))) < 1e-9


def test_average_profile_of_single_embedding_should_be_that_embedding(rng):
    u = l2_normalize(rng.standard_normal(16))
    profile = average_profile([u], speaker_id="a")
    assert profile.speaker_id == "a"
    assert np.allclose(profile.embedding, u, atol=1e-15)


def test_average_profile_of_repeated_embedding_should_be_that_embedding(rng):
    u = l2_normalize(rng.standard_normal(16))
    assert np.allclose(average_profile([u, u]).embedding, u, atol=1e-15)


def test_average_profile_should_be_unit_norm(rng):
    embeddings = normalize_rows(rng.standard_normal((4, 16)))
    profile = average_profile(embeddings)
    assert abs(np.linalg.norm(profile.embedding) - 1.0) < 1e-12


def test_average_profile_without_renormalization_should_keep_mean(rng):
    embeddings = normalize_rows(rng.standard_normal((4, 16)))
    profile = average_profile(embeddings, renormalize=False)
    assert np.allclose(profile.embedding, embeddings.mean(axis=0))


def test_average_profile_should_reject_antipodal_pair(rng):
    u = l2_normalize(rng.standard_normal(16))
    with pytest.raises(errors.NormalizationError):
        average_profile([u, -u])


def test_average_profile_should_reject_empty_list():
    with pytest.raises(errors.EmptyInputError):
        average_profile([])


def test_average_profile_should_reject_mixed_dimensions():
    with pytest.raises(errors.DimensionError):
        average_profile([np.ones(3), np.ones(4)])
