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

"""Household-adapted scoring model.

A pair of global embeddings is scored by fusing their cosine similarity
with a distance computed after a shared affine+ReLU projection to a lower
dimension. During training the projection input goes through a dropout
mask that is shared by both members of the pair.

Model file format (all little-endian):

    Name        Bytes      Type
    MAGIC       4          ASCII "HHSM"
    VERSION     2          u16
    D           4          u32
    K           4          u32
    W           8*K*D      f64, row-major
    B           8*K        f64
    w1, w2, b   24         f64

Version 2 (several layers or a non-default scoring variant) inserts a u16
flags word and a u16 layer count after K, and stores every layer as
u32 rows, u32 cols, then its weights and biases.
"""

import logging
from dataclasses import dataclass
from struct import calcsize, pack, unpack_from

import numpy as np
from scipy.special import expit

from . import consts, errors
from .vectors import as_vector, cosine_similarity


log = logging.getLogger("hhscore.lib.model")


@dataclass
class DropoutMask:
    """Components kept by input dropout; one mask serves both pair members.

    kept    numpy.ndarray    Boolean vector of length D
    rate    float            Dropout rate the mask was drawn with
    """

    kept: np.ndarray
    rate: float


@dataclass(frozen=True)
class ScoreBreakdown:
    """Global cosine score, local adapted-space score and fused score."""

    s_global: float
    s_local: float
    s_fused: float


class HouseholdScoringModel:
    """Adaptation layers plus logistic fusion weights.

    weights         [numpy.ndarray]    Layer matrices, the first one takes D inputs
    biases          [numpy.ndarray]    Layer biases
    fusion          numpy.ndarray      (w1, w2, b)
    local_metric    str                "euclidean" or "cosine"
    use_global      bool               Fuse the global cosine score (w1 pinned at 0 otherwise)
    """

    def __init__(self, weights, biases, fusion, local_metric="euclidean", use_global=True):
        if len(weights) == 0 or len(weights) != len(biases):
            raise errors.DimensionError("need one bias per layer and at least one layer")
        if local_metric not in consts.local_metrics:
            raise errors.ConfigValueError("unknown local metric %r" % local_metric)
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.fusion = np.array(fusion, dtype=np.float64)
        self.local_metric = local_metric
        self.use_global = bool(use_global)
        if not self.use_global:
            self.fusion[0] = 0.0
        inputs = self.weights[0].shape[1]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or w.shape[1] != inputs or b.shape != (w.shape[0],):
                raise errors.DimensionError(
                    "layer shapes don't chain: %r / %r" % (w.shape, b.shape)
                )
            inputs = w.shape[0]
        if self.fusion.shape != (3,):
            raise errors.DimensionError("fusion needs exactly w1, w2 and b")

    @property
    def dimension(self):
        """D, the global embedding dimension."""
        return self.weights[0].shape[1]

    @property
    def adapted_dim(self):
        """K, the adapted embedding dimension."""
        return self.weights[-1].shape[0]

    @property
    def W(self):
        return self.weights[0]

    @property
    def B(self):
        return self.biases[0]

    @property
    def w1(self):
        return float(self.fusion[0])

    @property
    def w2(self):
        return float(self.fusion[1])

    @property
    def b(self):
        return float(self.fusion[2])

    def parameters(self):
        """All parameter arrays, in a fixed order shared with gradients."""
        return self.weights + self.biases + [self.fusion]

    def is_finite(self):
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def copy(self):
        return HouseholdScoringModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.fusion.copy(),
            local_metric=self.local_metric,
            use_global=self.use_global,
        )

    def is_plain(self):
        """True if the model fits the single-layer file layout."""
        return (
            len(self.weights) == 1
            and self.local_metric == "euclidean"
            and self.use_global
        )

    def __eq__(self, other):
        if not isinstance(other, HouseholdScoringModel):
            return NotImplemented
        if (self.local_metric, self.use_global) != (other.local_metric, other.use_global):
            return False
        mine = self.parameters()
        theirs = other.parameters()
        return len(mine) == len(theirs) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(mine, theirs)
        )

    def __repr__(self):
        sizes = [self.dimension] + [w.shape[0] for w in self.weights]
        return "HouseholdScoringModel(layers=%s, w1=%r, w2=%r, b=%r, local=%s)" % (
            sizes,
            self.w1,
            self.w2,
            self.b,
            self.local_metric,
        )


def init_model(D, K, seed, hidden=(), local_metric="euclidean", use_global=True):
    """Create a freshly initialized model.

    Weights are drawn uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases
    are zero and the fusion starts at w1=1, w2=-1, b=0 so that higher cosine
    and lower distance both mean "same speaker".

    @param D: Global embedding dimension
    @param K: Adapted dimension, must be below D
    @param seed: Seed for the weight draw
    @param hidden: Sizes of extra layers placed before the K-sized one
    @raise DimensionError: K >= D or a non-positive size
    """
    if K >= D:
        raise errors.DimensionError("adapted dimension %d must be below %d" % (K, D))
    sizes = [D] + [int(h) for h in hidden] + [K]
    if min(sizes) <= 0:
        raise errors.DimensionError("layer sizes must be positive: %r" % sizes)
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    fusion = [1.0 if use_global else 0.0, -1.0, 0.0]
    log.debug("Initialized model layers %r with seed %r", sizes, seed)
    return HouseholdScoringModel(
        weights, biases, fusion, local_metric=local_metric, use_global=use_global
    )


def _check_rate(rate):
    if not 0.0 <= rate < 1.0:
        raise errors.ConfigValueError("dropout rate %r is outside [0, 1)" % rate)


def sample_mask(D, rate, rng):
    """Draw one dropout mask; each component is kept with probability 1 - rate."""
    _check_rate(rate)
    return DropoutMask(kept=rng.random(D) >= rate, rate=float(rate))


def sample_masks(n, D, rate, rng):
    """Draw n independent masks as an (n, D) boolean array."""
    _check_rate(rate)
    return rng.random((n, D)) >= rate


def _masked(e, kept, rate):
    return np.where(kept, e / (1.0 - rate), 0.0)


def apply_mask(e, mask):
    """Inverted dropout: zero dropped components, scale kept ones by 1/(1 - rate)."""
    e = as_vector(e)
    if mask.kept.shape != e.shape:
        raise errors.DimensionError(
            "mask length %d doesn't match embedding length %d"
            % (mask.kept.shape[0], e.shape[0])
        )
    return _masked(e, mask.kept, mask.rate)


def _project(model, x):
    """Run x (n, D) through the adaptation layers, returning inputs and pre-activations."""
    inputs = []
    pre = []
    h = x
    for w, b in zip(model.weights, model.biases):
        inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        h = np.maximum(z, 0.0)
    return h, inputs, pre


def adapt(model, e_star):
    """Adapted embedding ReLU(W e* + B) of one (masked) embedding."""
    e_star = as_vector(e_star)
    if e_star.shape[0] != model.dimension:
        raise errors.DimensionError(
            "embedding length %d doesn't match model dimension %d"
            % (e_star.shape[0], model.dimension)
        )
    h, _, _ = _project(model, e_star[None, :])
    return h[0]


def adapt_rows(model, m):
    """Adapted embeddings of every row of m."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != model.dimension:
        raise errors.DimensionError(
            "expected (n, %d) embeddings, got %r" % (model.dimension, m.shape)
        )
    h, _, _ = _project(model, m)
    return h


def _row_norms(m):
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
        raise errors.NormalizationError("embedding with zero or non-finite norm")
    return norms


class ForwardPass:
    """Batch forward computation, keeping what backpropagation needs."""

    def __init__(self, model, e1, e2, kept=None, rate=0.0):
        e1 = np.asarray(e1, dtype=np.float64)
        e2 = np.asarray(e2, dtype=np.float64)
        if e1.shape != e2.shape or e1.ndim != 2 or e1.shape[1] != model.dimension:
            raise errors.DimensionError(
                "pair batches %r / %r don't match model dimension %d"
                % (e1.shape, e2.shape, model.dimension)
            )
        self.model = model
        self.kept = kept
        self.rate = rate
        self.s_global = np.clip(
            np.sum(e1 * e2, axis=1) / (_row_norms(e1) * _row_norms(e2)), -1.0, 1.0
        )
        if kept is None:
            x1, x2 = e1, e2
        else:
            if kept.shape != e1.shape:
                raise errors.DimensionError(
                    "mask shape %r doesn't match batch shape %r" % (kept.shape, e1.shape)
                )
            x1 = _masked(e1, kept, rate)
            x2 = _masked(e2, kept, rate)
        self.h1, self.inputs1, self.pre1 = _project(model, x1)
        self.h2, self.inputs2, self.pre2 = _project(model, x2)
        if model.local_metric == "euclidean":
            self.diff = self.h1 - self.h2
            self.s_local = np.sqrt(np.sum(self.diff * self.diff, axis=1))
        else:
            self.n1 = np.linalg.norm(self.h1, axis=1)
            self.n2 = np.linalg.norm(self.h2, axis=1)
            denom = self.n1 * self.n2
            live = denom > 0.0
            cos = np.zeros(e1.shape[0])
            cos[live] = np.sum(self.h1 * self.h2, axis=1)[live] / denom[live]
            self.live = live
            self.s_local = np.clip(cos, -1.0, 1.0)
        w1, w2, b = model.fusion
        if model.use_global:
            self.logit = w1 * self.s_global + w2 * self.s_local + b
        else:
            self.logit = w2 * self.s_local + b
        self.s_fused = expit(self.logit)

    def __len__(self):
        return self.s_fused.shape[0]


def score_pair(model, e1, e2, mask=None):
    """Score one pair of embeddings.

    S_g is taken on the unmasked embeddings, the mask (if any) only feeds the
    adaptation path. At inference no mask is given.

    @rtype: ScoreBreakdown
    """
    e1 = as_vector(e1)
    e2 = as_vector(e2)
    if e1.shape != e2.shape:
        raise errors.DimensionError(
            "pair lengths differ: %d != %d" % (e1.shape[0], e2.shape[0])
        )
    kept = None
    rate = 0.0
    if mask is not None:
        if mask.kept.shape != e1.shape:
            raise errors.DimensionError("mask length doesn't match embedding length")
        kept = mask.kept[None, :]
        rate = mask.rate
    fwd = ForwardPass(model, e1[None, :], e2[None, :], kept=kept, rate=rate)
    return ScoreBreakdown(
        s_global=float(fwd.s_global[0]),
        s_local=float(fwd.s_local[0]),
        s_fused=float(fwd.s_fused[0]),
    )


def score_many(model, profiles, tests):
    """Fused scores of every test row against every profile row, shape (tests, profiles)."""
    profiles = np.asarray(profiles, dtype=np.float64)
    tests = np.asarray(tests, dtype=np.float64)
    if profiles.shape[1] != model.dimension or tests.shape[1] != model.dimension:
        raise errors.DimensionError(
            "embeddings don't match model dimension %d" % model.dimension
        )
    cos = (tests @ profiles.T) / np.outer(_row_norms(tests), _row_norms(profiles))
    s_global = np.clip(cos, -1.0, 1.0)
    hp = adapt_rows(model, profiles)
    ht = adapt_rows(model, tests)
    if model.local_metric == "euclidean":
        diff = ht[:, None, :] - hp[None, :, :]
        s_local = np.sqrt(np.sum(diff * diff, axis=2))
    else:
        denom = np.outer(np.linalg.norm(ht, axis=1), np.linalg.norm(hp, axis=1))
        dots = ht @ hp.T
        s_local = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0.0)
        s_local = np.clip(s_local, -1.0, 1.0)
    w1, w2, b = model.fusion
    logit = w2 * s_local + b
    if model.use_global:
        logit = w1 * s_global + logit
    return expit(logit)


def baseline_score(e1, e2):
    """Cosine similarity mapped affinely to [0, 1]."""
    return (cosine_similarity(e1, e2) + 1.0) / 2.0


# Serialization

_HEAD = "<4sH"
_PLAIN = "<II"
_LAYERED = "<IIHH"
_LAYER = "<II"
_FUSION = "<3d"


def _f64(arr):
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def model_to_bytes(model):
    """Serialize a model; plain models use the version 1 layout."""
    if model.is_plain():
        data = pack(_HEAD, consts.MODEL_MAGIC, consts.model_versions["single-layer"])
        data += pack(_PLAIN, model.dimension, model.adapted_dim)
        data += _f64(model.W) + _f64(model.B)
    else:
        flags = 0
        if model.local_metric == "cosine":
            flags |= consts.FLAG_LOCAL_COSINE
        if not model.use_global:
            flags |= consts.FLAG_NO_GLOBAL
        data = pack(_HEAD, consts.MODEL_MAGIC, consts.model_versions["layered"])
        data += pack(
            _LAYERED, model.dimension, model.adapted_dim, flags, len(model.weights)
        )
        for w, b in zip(model.weights, model.biases):
            data += pack(_LAYER, w.shape[0], w.shape[1]) + _f64(w) + _f64(b)
    data += pack(_FUSION, *model.fusion)
    return data


class _Reader:
    def __init__(self, data):
        self.data = data
        self.offset = 0

    def unpack(self, fmt):
        size = calcsize(fmt)
        if self.offset + size > len(self.data):
            raise errors.FormatError("model file is truncated")
        values = unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def array(self, *shape):
        count = int(np.prod(shape))
        size = 8 * count
        if self.offset + size > len(self.data):
            raise errors.FormatError("model file is truncated")
        arr = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.offset)
        self.offset += size
        return arr.astype(np.float64).reshape(shape)


def model_from_bytes(data):
    """Parse bytes written by model_to_bytes."""
    reader = _Reader(data)
    magic, version = reader.unpack(_HEAD)
    if magic != consts.MODEL_MAGIC:
        raise errors.MagicError("not a model file (magic %r)" % magic)
    if version == consts.model_versions["single-layer"]:
        D, K = reader.unpack(_PLAIN)
        weights = [reader.array(K, D)]
        biases = [reader.array(K)]
        local_metric = "euclidean"
        use_global = True
    elif version == consts.model_versions["layered"]:
        D, K, flags, layers = reader.unpack(_LAYERED)
        weights = []
        biases = []
        for _ in range(layers):
            rows, cols = reader.unpack(_LAYER)
            weights.append(reader.array(rows, cols))
            biases.append(reader.array(rows))
        local_metric = "cosine" if flags & consts.FLAG_LOCAL_COSINE else "euclidean"
        use_global = not flags & consts.FLAG_NO_GLOBAL
    else:
        raise errors.FormatVersionError("unsupported model format version %d" % version)
    fusion = reader.unpack(_FUSION)
    if reader.offset != len(data):
        raise errors.FormatError("%d trailing bytes in model file" % (len(data) - reader.offset))
    model = HouseholdScoringModel(
        weights, biases, fusion, local_metric=local_metric, use_global=use_global
    )
    if (model.dimension, model.adapted_dim) != (D, K):
        raise errors.FormatError("layer table doesn't match declared D=%d K=%d" % (D, K))
    return model


def save_model(model, filename):
    with open(filename, "wb") as fl:
        fl.write(model_to_bytes(model))
    log.debug("Saved %r to %r", model, filename)


def load_model(filename):
    with open(filename, "rb") as fl:
        data = fl.read()
    log.debug("Read %d model bytes from %r", len(data), filename)
    return model_from_bytes(data)
