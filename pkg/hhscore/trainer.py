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

"""Mini-batch training of the household scoring model.

The loss is binary cross-entropy with positive pairs weighted by
w = |S_neg| / |S_pos|, averaged over the pairs it is computed on. w is
fixed for the whole pair set, mini-batches don't recompute it.
"""

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import consts, errors
from .model import ForwardPass, sample_mask, sample_masks


log = logging.getLogger("hhscore.lib.trainer")

# Central differences at h=1e-6 carry about 1e-10 of float64 roundoff, so
# relative errors are only meaningful on coordinates well above that.
GRADIENT_CHECK_MIN = 1e-3


@dataclass
class TrainConfig:
    """Training hyper-parameters.

    mask_refresh chooses when dropout masks are drawn: "epoch" draws a
    fresh mask per pair every epoch, "batch" shares one mask across a
    mini-batch, "once" draws one mask per pair before the first epoch.
    """

    epochs: int = 10
    learning_rate: float = 0.01
    batch_size: int = 1024
    dropout_rate: float = 0.5
    optimizer: str = "sgd"
    seed: int = 0
    distance_epsilon: float = consts.DISTANCE_EPSILON
    mask_refresh: str = "epoch"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise errors.ConfigValueError("epochs and batch size must be positive")
        if self.learning_rate < 0 or self.distance_epsilon < 0:
            raise errors.ConfigValueError("learning rate and distance epsilon can't be negative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise errors.ConfigValueError("dropout rate %r is outside [0, 1)" % self.dropout_rate)
        if self.optimizer not in consts.optimizers:
            raise errors.ConfigValueError("unknown optimizer %r" % self.optimizer)
        if self.mask_refresh not in consts.mask_refresh_modes:
            raise errors.ConfigValueError("unknown mask refresh mode %r" % self.mask_refresh)

    def asdict(self):
        return asdict(self)


@dataclass
class LossReport:
    """Mean training loss per epoch."""

    history: list = field(default_factory=list)

    @property
    def loss_value(self):
        return self.history[-1] if self.history else float("nan")

    def rows(self):
        return [(epoch, loss) for epoch, loss in enumerate(self.history, 1)]

    def write(self, fl):
        """Write "epoch<TAB>mean_loss" records with a header row."""
        writer = csv.writer(fl, delimiter="\t", lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in self.rows():
            writer.writerow([epoch, repr(loss)])


class ModelGradient:
    """Gradient arrays laid out like HouseholdScoringModel.parameters()."""

    def __init__(self, weights, biases, fusion):
        self.weights = weights
        self.biases = biases
        self.fusion = fusion

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

    def arrays(self):
        return self.weights + self.biases + [self.fusion]

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def weighted_bce_loss(scores, targets, w, clamp=consts.SCORE_CLAMP):
    """Positive-weighted binary cross-entropy averaged over all given pairs.

    Scores are clamped to [clamp, 1 - clamp] before taking logs.
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.shape != targets.shape:
        raise errors.DimensionError(
            "%d scores for %d targets" % (scores.shape[0], targets.shape[0])
        )
    if scores.size == 0:
        raise errors.EmptyInputError("no scores to compute a loss on")
    s = np.clip(scores, clamp, 1.0 - clamp)
    terms = np.where(targets == 1, w * np.log(s), np.log(1.0 - s))
    return float(-np.mean(terms))


def _logit_gradient(s_fused, targets, w):
    """d(per-pair loss)/d(logit) for every pair."""
    t = (np.asarray(targets) == 1).astype(np.float64)
    return t * w * (s_fused - 1.0) + (1.0 - t) * s_fused


def _backprop(fwd, dlogit, distance_epsilon):
    model = fwd.model
    w1, w2, b = model.fusion
    fusion = np.array(
        [
            np.sum(dlogit * fwd.s_global) if model.use_global else 0.0,
            np.sum(dlogit * fwd.s_local),
            np.sum(dlogit),
        ]
    )
    ds_local = dlogit * w2
    if model.local_metric == "euclidean":
        denom = np.sqrt(np.sum(fwd.diff * fwd.diff, axis=1) + distance_epsilon)
        # zero distance gives a zero diff, so the gradient vanishes there
        g = np.divide(
            fwd.diff,
            denom[:, None],
            out=np.zeros_like(fwd.diff),
            where=denom[:, None] > 0.0,
        )
        dh1 = ds_local[:, None] * g
        dh2 = -dh1
    else:
        dh1 = np.zeros_like(fwd.h1)
        dh2 = np.zeros_like(fwd.h2)
        live = fwd.live
        n1 = fwd.n1[live][:, None]
        n2 = fwd.n2[live][:, None]
        c = fwd.s_local[live][:, None]
        u = fwd.h1[live]
        v = fwd.h2[live]
        scale = ds_local[live][:, None]
        dh1[live] = scale * (v / (n1 * n2) - c * u / (n1 * n1))
        dh2[live] = scale * (u / (n1 * n2) - c * v / (n2 * n2))
    weights = [np.zeros_like(x) for x in model.weights]
    biases = [np.zeros_like(x) for x in model.biases]
    for dh, inputs, pre in ((dh1, fwd.inputs1, fwd.pre1), (dh2, fwd.inputs2, fwd.pre2)):
        for layer in range(len(model.weights) - 1, -1, -1):
            # ReLU derivative is 0 at exactly 0
            dz = dh * (pre[layer] > 0.0)
            weights[layer] += dz.T @ inputs[layer]
            biases[layer] += np.sum(dz, axis=0)
            if layer > 0:
                dh = dz @ model.weights[layer]
    return ModelGradient(weights, biases, fusion)


def batch_gradient(fwd, targets, w, distance_epsilon=consts.DISTANCE_EPSILON):
    """Gradient of weighted_bce_loss over the batch held by a ForwardPass."""
    dlogit = _logit_gradient(fwd.s_fused, targets, w) / len(fwd)
    grad = _backprop(fwd, dlogit, distance_epsilon)
    if not grad.is_finite():
        raise errors.NumericalError("non-finite gradient")
    return grad


def backward(model, pair, mask, target=None, w=1.0, distance_epsilon=consts.DISTANCE_EPSILON):
    """Gradient of the weighted loss of a single pair.

    @param pair: TrainingPair
    @param mask: DropoutMask shared by both members, or None for no dropout
    @param target: 1 or 0, defaults to pair.target
    @param w: Positive-pair weight of the pair set
    @rtype: ModelGradient
    @raise NumericalError: non-finite intermediate value
    """
    if target is None:
        target = pair.target
    kept = None
    rate = 0.0
    if mask is not None:
        kept = mask.kept[None, :]
        rate = mask.rate
    fwd = ForwardPass(model, pair.e1[None, :], pair.e2[None, :], kept=kept, rate=rate)
    if not np.all(np.isfinite(fwd.s_fused)):
        raise errors.NumericalError("non-finite score")
    return batch_gradient(fwd, np.array([target]), w, distance_epsilon)


class SGD:
    def __init__(self, cfg):
        self.learning_rate = cfg.learning_rate

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.learning_rate * g


class Adam:
    def __init__(self, cfg):
        self.learning_rate = cfg.learning_rate
        self.beta1 = cfg.adam_beta1
        self.beta2 = cfg.adam_beta2
        self.epsilon = cfg.adam_epsilon
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


optimizers = {
    "sgd": SGD,
    "adam": Adam,
}


def train(model, pair_set, cfg):
    """Train a copy of model on pair_set.

    Each epoch shuffles the pairs, then runs forward/backward/update per
    mini-batch with dropout masks drawn according to cfg.mask_refresh.
    Everything random comes from one stream seeded by cfg.seed.

    @return: (trained model, LossReport)
    @raise NumericalError: the loss became non-finite
    """
    cfg.validate()
    if pair_set.dimension != model.dimension:
        raise errors.DimensionError(
            "pairs have dimension %d, model expects %d" % (pair_set.dimension, model.dimension)
        )
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    optimizer = optimizers[cfg.optimizer](cfg)
    n = len(pair_set)
    D = model.dimension
    rate = cfg.dropout_rate
    w = pair_set.weight_w
    fixed = None
    if rate > 0.0 and cfg.mask_refresh == "once":
        fixed = sample_masks(n, D, rate, rng)
    report = LossReport()
    log.debug(
        "Training on %d pairs (w=%.4f), %d epochs, batch %d, dropout %r, %s",
        n,
        w,
        cfg.epochs,
        cfg.batch_size,
        rate,
        cfg.optimizer,
    )
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            index = order[start:start + cfg.batch_size]
            e1, e2, targets = pair_set.batch(index)
            kept = None
            if rate > 0.0:
                if fixed is not None:
                    kept = fixed[index]
                elif cfg.mask_refresh == "batch":
                    kept = np.broadcast_to(sample_mask(D, rate, rng).kept, e1.shape)
                else:
                    kept = sample_masks(index.shape[0], D, rate, rng)
            fwd = ForwardPass(model, e1, e2, kept=kept, rate=rate)
            loss = weighted_bce_loss(fwd.s_fused, targets, w)
            if not np.isfinite(loss):
                raise errors.NumericalError("loss is %r" % loss, epoch=epoch)
            try:
                grad = batch_gradient(fwd, targets, w, cfg.distance_epsilon)
            except errors.NumericalError as e:
                raise errors.NumericalError(e.message, epoch=epoch)
            optimizer.step(model.parameters(), grad.arrays())
            if not model.use_global:
                model.fusion[0] = 0.0
            total += loss * index.shape[0]
        report.history.append(total / n)
        log.debug("Epoch %d mean loss %.6f", epoch, report.history[-1])
    return model, report


def _pairs_as_arrays(pairs):
    if hasattr(pairs, "batch"):
        return pairs.batch(np.arange(len(pairs)))
    pairs = list(pairs)
    return (
        np.stack([p.e1 for p in pairs]),
        np.stack([p.e2 for p in pairs]),
        np.array([p.target for p in pairs]),
    )


def gradient_check(model, pairs, h=1e-6, w=1.0, kept=None, rate=0.0,
                   kink_tolerance=1e-4, min_gradient=GRADIENT_CHECK_MIN,
                   distance_epsilon=consts.DISTANCE_EPSILON):
    """Compare analytic gradients with central differences.

    Pairs with a pre-activation within kink_tolerance of 0, or with adapted
    embeddings closer than kink_tolerance, are left out since the loss
    isn't differentiable there. The relative error |a - n| / max(|a|, |n|)
    is taken over coordinates where max(|a|, |n|) > min_gradient; smaller
    coordinates only contribute to the logged absolute error.

    @param pairs: TrainingPairSet or list of TrainingPair
    @param kept: Optional (n, D) boolean dropout masks
    @return: Maximum relative error (0.0 if every pair was excluded)
    """
    e1, e2, targets = _pairs_as_arrays(pairs)
    if e1.shape[0] == 0:
        raise errors.EmptyInputError("no pairs to check")
    fwd = ForwardPass(model, e1, e2, kept=kept, rate=rate)
    smooth = fwd.s_local >= kink_tolerance
    for pre in fwd.pre1 + fwd.pre2:
        smooth &= np.min(np.abs(pre), axis=1) >= kink_tolerance
    if not np.any(smooth):
        log.debug("Every pair sits on a kink; nothing to check")
        return 0.0
    e1, e2, targets = e1[smooth], e2[smooth], targets[smooth]
    if kept is not None:
        kept = kept[smooth]

    def loss_of(m):
        f = ForwardPass(m, e1, e2, kept=kept, rate=rate)
        return weighted_bce_loss(f.s_fused, targets, w)

    analytic = batch_gradient(ForwardPass(model, e1, e2, kept=kept, rate=rate),
                              targets, w, distance_epsilon)
    shifted = model.copy()
    worst = 0.0
    worst_small = 0.0
    skipped = 0
    for p, g in zip(shifted.parameters(), analytic.arrays()):
        if p is shifted.fusion and not shifted.use_global:
            # w1 is pinned, only w2 and b move
            indices = [1, 2]
        else:
            indices = range(p.size)
        flat = p.reshape(-1)
        grad = g.reshape(-1)
        for i in indices:
            saved = flat[i]
            flat[i] = saved + h
            up = loss_of(shifted)
            flat[i] = saved - h
            down = loss_of(shifted)
            flat[i] = saved
            numeric = (up - down) / (2.0 * h)
            a = grad[i]
            scale = max(abs(a), abs(numeric))
            if scale <= min_gradient:
                worst_small = max(worst_small, abs(a - numeric))
                skipped += 1
                continue
            worst = max(worst, abs(a - numeric) / scale)
    log.debug(
        "Gradient check over %d pairs: max relative error %.3e, max absolute error %.3e"
        " on %d coordinates below %g",
        e1.shape[0],
        worst,
        worst_small,
        skipped,
        min_gradient,
    )
    return worst
