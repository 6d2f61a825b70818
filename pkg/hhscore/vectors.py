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

"""Embedding vector primitives.

All arithmetic is done in 64-bit floats. Embeddings are plain 1-d numpy
arrays; functions here never modify their inputs.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import errors


log = logging.getLogger("hhscore.lib.vectors")


def as_vector(v):
    """Return v as a 1-d float64 array."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise errors.DimensionError("expected a 1-d vector, got shape %r" % (arr.shape,))
    return arr


def _check_same_length(a, b):
    if a.shape != b.shape:
        raise errors.DimensionError(
            "vector lengths differ: %d != %d" % (a.shape[0], b.shape[0])
        )


def _norm(v):
    norm = np.linalg.norm(v)
    if norm == 0.0 or not np.isfinite(norm):
        raise errors.NormalizationError("vector norm is %r" % norm)
    return norm


def l2_normalize(v):
    """Scale v to unit Euclidean length.

    @param v: Vector to normalize
    @type v: array-like
    @rtype: numpy.ndarray
    @raise NormalizationError: v is the zero vector
    """
    v = as_vector(v)
    return v / _norm(v)


def cosine_similarity(a, b):
    """Cosine of the angle between a and b, clamped to [-1, 1]."""
    a = as_vector(a)
    b = as_vector(b)
    _check_same_length(a, b)
    sim = np.dot(a, b) / (_norm(a) * _norm(b))
    return float(np.clip(sim, -1.0, 1.0))


def euclidean_distance(a, b):
    """Euclidean distance between a and b."""
    a = as_vector(a)
    b = as_vector(b)
    _check_same_length(a, b)
    return float(np.linalg.norm(a - b))


def normalize_rows(m):
    """Normalize every row of a 2-d array to unit length."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        raise errors.NormalizationError("matrix has zero or non-finite rows")
    return m / norms[:, None]


@dataclass(frozen=True)
class SpeakerProfile:
    """An enrolled speaker.

    speaker_id    str              Speaker identifier
    embedding     numpy.ndarray    Enrolled profile embedding
    """

    speaker_id: str
    embedding: np.ndarray


def average_profile(embeddings, speaker_id=None, renormalize=True):
    """Build a speaker profile from enrollment embeddings.

    The profile is the componentwise mean of the embeddings, scaled back to
    unit length unless renormalize is off.

    @raise EmptyInputError: no embeddings given
    @raise NormalizationError: the embeddings average to the zero vector
    """
    embeddings = [as_vector(e) for e in embeddings]
    if not embeddings:
        raise errors.EmptyInputError("can't average an empty list of embeddings")
    dim = embeddings[0].shape[0]
    for e in embeddings[1:]:
        if e.shape[0] != dim:
            raise errors.DimensionError(
                "enrollment embeddings differ in length: %d != %d" % (e.shape[0], dim)
            )
    mean = np.mean(np.stack(embeddings), axis=0)
    if renormalize:
        mean = l2_normalize(mean)
    elif np.linalg.norm(mean) == 0.0:
        raise errors.NormalizationError("enrollment embeddings average to zero")
    log.debug("Averaged %d embeddings for %r", len(embeddings), speaker_id)
    return SpeakerProfile(speaker_id=speaker_id, embedding=mean)
