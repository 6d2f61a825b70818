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

"""Contrastive training pairs for one household."""

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import consts, errors


log = logging.getLogger("hhscore.lib.pairs")

GUEST_LABEL = None


@dataclass(frozen=True)
class LabeledUtterance:
    """A training utterance; speaker_label may differ from the truth after corruption."""

    utterance_id: str
    speaker_label: str
    embedding: np.ndarray


@dataclass(frozen=True)
class TrainingPair:
    """Two embeddings and a target: 1 for same speaker, 0 otherwise."""

    e1: np.ndarray
    e2: np.ndarray
    target: int


class TrainingPairSet:
    """Pairs stored as row indices into one embedding matrix.

    embeddings    numpy.ndarray    (U, D) utterance embeddings
    left, right   numpy.ndarray    Row indices of the pair members
    targets       numpy.ndarray    1 for positive pairs, 0 for negative ones
    labels        list             Label per row, None for guests
    weight_w      float            |S_neg| / |S_pos|
    """

    def __init__(self, embeddings, left, right, targets, labels=None):
        self.embeddings = np.asarray(embeddings, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.targets = np.asarray(targets, dtype=np.int64)
        self.labels = labels
        self.positives = int(np.count_nonzero(self.targets == 1))
        self.negatives = int(self.targets.shape[0] - self.positives)
        if self.positives == 0 or self.negatives == 0:
            raise errors.DegenerateHouseholdError(
                "household has %d positive and %d negative pairs"
                % (self.positives, self.negatives)
            )
        self.weight_w = self.negatives / self.positives

    @property
    def dimension(self):
        return self.embeddings.shape[1]

    def __len__(self):
        return self.targets.shape[0]

    def __getitem__(self, i):
        return TrainingPair(
            e1=self.embeddings[self.left[i]],
            e2=self.embeddings[self.right[i]],
            target=int(self.targets[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def pairs(self):
        return list(self)

    def batch(self, index):
        """Embedding batches and targets for the given pair indices."""
        return (
            self.embeddings[self.left[index]],
            self.embeddings[self.right[index]],
            self.targets[index],
        )

    def pair_keys(self):
        """Unordered (row, row, target) triples, for comparing pair multisets."""
        lo = np.minimum(self.left, self.right)
        hi = np.maximum(self.left, self.right)
        return sorted(zip(lo.tolist(), hi.tolist(), self.targets.tolist()))

    @classmethod
    def concatenate(cls, sets):
        """Union of several pair sets; w is recomputed from the union."""
        sets = list(sets)
        if not sets:
            raise errors.EmptyInputError("no pair sets to concatenate")
        embeddings = []
        left = []
        right = []
        targets = []
        labels = []
        offset = 0
        for s in sets:
            embeddings.append(s.embeddings)
            left.append(s.left + offset)
            right.append(s.right + offset)
            targets.append(s.targets)
            labels.extend(s.labels or [None] * s.embeddings.shape[0])
            offset += s.embeddings.shape[0]
        return cls(
            np.concatenate(embeddings),
            np.concatenate(left),
            np.concatenate(right),
            np.concatenate(targets),
            labels=labels,
        )


def _embedding_of(item):
    return np.asarray(getattr(item, "embedding", item), dtype=np.float64)


def _product(a, b):
    return np.repeat(a, b.shape[0]), np.tile(b, a.shape[0])


def build_pairs(members, guests, cap_guest_negatives=None, seed=0):
    """Build the contrastive pairs of one household.

    Positives pair up utterances sharing a label. Negatives pair up
    utterances of different members and each member utterance with each
    guest utterance; guest-guest pairs are never built. Member-guest
    negatives may be subsampled uniformly down to cap_guest_negatives per
    member. Everything is shuffled with the given seed.

    @param members: {label: [LabeledUtterance or embedding, ...]}
    @param guests: [LabeledUtterance or embedding, ...]
    @raise DegenerateHouseholdError: no positive or no negative pairs
    """
    rng = np.random.default_rng(seed)
    labels = sorted(label for label in members if len(members[label]) > 0)
    rows = []
    row_labels = []
    ranges = {}
    for label in labels:
        start = len(rows)
        rows.extend(_embedding_of(item) for item in members[label])
        row_labels.extend([label] * len(members[label]))
        ranges[label] = np.arange(start, len(rows))
    start = len(rows)
    rows.extend(_embedding_of(item) for item in guests)
    row_labels.extend([GUEST_LABEL] * len(guests))
    guest_rows = np.arange(start, len(rows))
    if not labels:
        raise errors.DegenerateHouseholdError("household has no member utterances")

    left = []
    right = []
    targets = []

    def _add(a, b, target):
        left.append(a)
        right.append(b)
        targets.append(np.full(a.shape[0], target, dtype=np.int64))

    for label in labels:
        r = ranges[label]
        i, j = np.triu_indices(r.shape[0], 1)
        _add(r[i], r[j], 1)
    for x, label_a in enumerate(labels):
        for label_b in labels[x + 1:]:
            _add(*_product(ranges[label_a], ranges[label_b]), 0)
    for label in labels:
        a, b = _product(ranges[label], guest_rows)
        if cap_guest_negatives is not None and a.shape[0] > cap_guest_negatives:
            keep = rng.choice(a.shape[0], size=cap_guest_negatives, replace=False)
            a, b = a[keep], b[keep]
        _add(a, b, 0)

    left = np.concatenate(left)
    right = np.concatenate(right)
    targets = np.concatenate(targets)
    order = rng.permutation(targets.shape[0])
    log.debug(
        "Built %d pairs (%d positive) from %d members and %d guests",
        targets.shape[0],
        int(targets.sum()),
        len(labels),
        guest_rows.shape[0],
    )
    return TrainingPairSet(
        np.stack(rows), left[order], right[order], targets[order], labels=row_labels
    )


def corrupt_labels(utterances, member_labels, epsilon, seed, draw="all"):
    """Simulate pseudo-label errors on training utterances.

    Each utterance keeps its label with probability 1 - epsilon; otherwise it
    gets a label drawn uniformly from member_labels ("all", true label
    included, so the effective flip rate is epsilon*(N-1)/N) or from the
    other member labels ("others"). Only training utterances should be
    passed in; enrollment and evaluation labels stay clean.

    @raise ConfigValueError: epsilon outside [0, 1] or unknown draw mode
    """
    if not 0.0 <= epsilon <= 1.0:
        raise errors.ConfigValueError("label error rate %r is outside [0, 1]" % epsilon)
    if draw not in consts.label_draws:
        raise errors.ConfigValueError("unknown label draw %r" % draw)
    labels = sorted(set(member_labels))
    rng = np.random.default_rng(seed)
    flips = rng.random(len(utterances)) < epsilon
    corrupted = []
    for utterance, flip in zip(utterances, flips):
        if utterance.speaker_label not in labels:
            raise errors.NotFoundError(
                "label %r is not a household member" % (utterance.speaker_label,)
            )
        if flip:
            choices = labels
            if draw == "others":
                choices = [x for x in labels if x != utterance.speaker_label] or labels
            label = choices[rng.integers(len(choices))]
            utterance = replace(utterance, speaker_label=label)
        corrupted.append(utterance)
    changed = sum(1 for a, b in zip(utterances, corrupted) if a.speaker_label != b.speaker_label)
    log.debug("Corrupted %d of %d labels (epsilon=%r)", changed, len(utterances), epsilon)
    return corrupted


def group_by_label(utterances):
    """{label: [utterance, ...]} in first-seen order."""
    grouped = {}
    for utterance in utterances:
        grouped.setdefault(utterance.speaker_label, []).append(utterance)
    return grouped
