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

"""Simulated households: synthetic corpora, member sampling and splits.

A household has N enrolled members. Each member's utterances are split
into enrollment (4), evaluation (10) and training (up to 50) utterances,
and 250 guest utterances are drawn from speakers outside the household.
Corpora are assumed to hold embeddings of already-cropped utterances.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import consts, errors
from .corpus import Corpus
from .pairs import LabeledUtterance
from .vectors import SpeakerProfile, average_profile


log = logging.getLogger("hhscore.lib.households")


@dataclass
class Household:
    """Members and utterance-id assignments of one simulated household.

    household_id    str      Identifier, also used for per-household file names
    members         list     Member speaker ids, sorted
    enroll          dict     speaker -> enrollment utterance ids
    eval            dict     speaker -> evaluation utterance ids
    train           dict     speaker -> training utterance ids
    guests          list     (speaker, utterance) pairs of guest utterances
    """

    household_id: str
    members: list
    enroll: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    guests: list = field(default_factory=list)

    def __len__(self):
        return len(self.members)

    def profiles(self, corpus, renormalize=True):
        """Enrolled SpeakerProfiles sorted by speaker id."""
        return [
            average_profile(
                corpus.embeddings(s, self.enroll[s]), speaker_id=s, renormalize=renormalize
            )
            for s in sorted(self.members)
        ]

    def train_utterances(self, corpus):
        """Training utterances with their true labels."""
        return [
            LabeledUtterance(u, s, corpus.embedding(s, u))
            for s in sorted(self.members)
            for u in self.train[s]
        ]

    def guest_embeddings(self, corpus):
        if not self.guests:
            return np.zeros((0, corpus.dimension))
        return np.stack([corpus.embedding(s, u) for s, u in self.guests])

    def check(self):
        """Raise HouseholdError unless splits are disjoint and guests are outsiders."""
        members = set(self.members)
        for s in self.members:
            splits = [set(self.enroll[s]), set(self.eval[s]), set(self.train[s])]
            if sum(len(x) for x in splits) != len(set().union(*splits)):
                raise errors.HouseholdError(
                    "%s: splits of %r overlap" % (self.household_id, s)
                )
        for s, _ in self.guests:
            if s in members:
                raise errors.HouseholdError(
                    "%s: guest utterance from member %r" % (self.household_id, s)
                )

    def asdict(self):
        return {
            "id": self.household_id,
            "members": list(self.members),
            "splits": {
                s: {
                    "enroll": list(self.enroll[s]),
                    "eval": list(self.eval[s]),
                    "train": list(self.train[s]),
                }
                for s in self.members
            },
            "guests": [[s, u] for s, u in self.guests],
        }

    @classmethod
    def fromdict(cls, data):
        try:
            splits = data["splits"]
            return cls(
                household_id=str(data["id"]),
                members=list(data["members"]),
                enroll={s: list(splits[s]["enroll"]) for s in data["members"]},
                eval={s: list(splits[s]["eval"]) for s in data["members"]},
                train={s: list(splits[s]["train"]) for s in data["members"]},
                guests=[(s, u) for s, u in data.get("guests", [])],
            )
        except (KeyError, TypeError, ValueError) as e:
            raise errors.FormatError("malformed household entry: %s" % e)


@dataclass
class SyntheticConfig:
    """Parameters of a synthetic embedding corpus.

    Speaker means live in a random identity_subspace_dim-dimensional
    subspace. Every utterance adds isotropic noise of expected norm
    within_speaker_noise and a nuisance offset of norm
    household_nuisance_scale in the complementary subspace. With
    share_nuisance on, speakers are grouped into acoustic environments of
    environment_size consecutive speakers sharing one nuisance direction.
    Environments are fixed here, before any household exists: random
    households are drawn inside one environment (see
    generate_random_households), while hard households follow speaker
    similarity alone and can only share an environment fully when N is at
    most environment_size.
    """

    speaker_count: int = 200
    utterances_per_speaker: int = 80
    dimension: int = 64
    identity_subspace_dim: int = 8
    within_speaker_noise: float = 0.5
    household_nuisance_scale: float = 0.6
    share_nuisance: bool = True
    environment_size: int = 4
    seed: int = 0

    def validate(self):
        if self.speaker_count < 1 or self.utterances_per_speaker < 1:
            raise errors.ConfigValueError("speaker and utterance counts must be positive")
        if not 1 <= self.identity_subspace_dim <= self.dimension:
            raise errors.ConfigValueError(
                "identity subspace dimension %d must be in [1, %d]"
                % (self.identity_subspace_dim, self.dimension)
            )
        if self.within_speaker_noise < 0 or self.household_nuisance_scale < 0:
            raise errors.ConfigValueError("noise scales can't be negative")
        if self.household_nuisance_scale > 0 and self.identity_subspace_dim == self.dimension:
            raise errors.ConfigValueError("nuisance needs a subspace outside the identity one")
        if self.environment_size < 1:
            raise errors.ConfigValueError("environment size must be positive")

    def asdict(self):
        return asdict(self)


def _unit_rows(m):
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0.0)


def generate_synthetic_corpus(cfg):
    """Build a Corpus from a SyntheticConfig; deterministic by cfg.seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    D = cfg.dimension
    r = cfg.identity_subspace_dim
    basis, _ = np.linalg.qr(rng.standard_normal((D, D)))
    identity = basis[:, :r]
    nuisance = basis[:, r:]
    S = cfg.speaker_count
    if cfg.share_nuisance:
        env_of = np.arange(S) // cfg.environment_size
    else:
        env_of = np.arange(S)
    env_count = int(env_of[-1]) + 1
    if nuisance.shape[1]:
        env_dirs = _unit_rows(rng.standard_normal((env_count, nuisance.shape[1])) @ nuisance.T)
    else:
        env_dirs = np.zeros((env_count, D))
    means = _unit_rows(rng.standard_normal((S, r)) @ identity.T)
    corpus = Corpus(D)
    width = len(str(S - 1))
    for s in range(S):
        speaker_id = "spk%0*d" % (max(width, 4), s)
        noise = rng.standard_normal((cfg.utterances_per_speaker, D))
        utterances = (
            means[s]
            + cfg.within_speaker_noise * noise / np.sqrt(D)
            + cfg.household_nuisance_scale * env_dirs[env_of[s]]
        )
        for u, v in enumerate(utterances):
            corpus.add(speaker_id, "%s-u%03d" % (speaker_id, u), v)
        corpus.environments[speaker_id] = int(env_of[s])
    log.info(
        "Generated synthetic corpus: %d speakers x %d utterances, D=%d, %d environments",
        S,
        cfg.utterances_per_speaker,
        D,
        env_count,
    )
    return corpus


def _make_household(corpus, household_id, members, rng, enroll_count=consts.ENROLL_COUNT,
                    eval_count=consts.EVAL_COUNT, train_max=consts.TRAIN_MAX,
                    guest_count=consts.GUEST_COUNT):
    members = sorted(members)
    required = enroll_count + eval_count
    household = Household(household_id, members)
    for s in members:
        ids = corpus.utterance_ids(s)
        if len(ids) < required:
            raise errors.SpeakerTooSmallError(s, len(ids), required)
        order = rng.permutation(len(ids))
        picked = [ids[i] for i in order]
        household.enroll[s] = picked[:enroll_count]
        household.eval[s] = picked[enroll_count:required]
        household.train[s] = picked[required:required + train_max]
    outsiders = set(members)
    pool = [
        (s, u)
        for s in corpus.speaker_ids()
        if s not in outsiders
        for u in corpus.utterance_ids(s)
    ]
    if not pool:
        raise errors.GuestPoolEmptyError("%s: no speakers outside the household" % household_id)
    count = min(guest_count, len(pool))
    if count < guest_count:
        log.warning(
            "%s: only %d guest utterances available, %d requested",
            household_id,
            count,
            guest_count,
        )
    picked = rng.choice(len(pool), size=count, replace=False)
    household.guests = [pool[i] for i in picked]
    return household


def _household_id(index):
    return "hh%04d" % index


def environment_groups(corpus, N):
    """Speaker lists of every environment with at least N speakers, by environment id."""
    groups = {}
    for s in corpus.speaker_ids():
        if s in corpus.environments:
            groups.setdefault(corpus.environments[s], []).append(s)
    return [groups[e] for e in sorted(groups) if len(groups[e]) >= N]


def generate_random_households(corpus, N, count, seed, by_environment=True, **splits):
    """Sample count households of N distinct speakers each.

    Members are drawn without replacement within a household; a speaker may
    appear in several households. When the corpus groups speakers into
    acoustic environments (synthetic corpora with share_nuisance) and
    by_environment is set, each household picks one environment holding at
    least N speakers and draws its members from it, so co-household speakers
    share a nuisance direction. Without such environments members come from
    the whole corpus. Extra keyword arguments (enroll_count, eval_count,
    train_max, guest_count) override the split sizes.

    @raise SpeakerTooSmallError: a member lacks enrollment+evaluation utterances
    @raise GuestPoolEmptyError: nobody is left to draw guests from
    """
    speakers = corpus.speaker_ids()
    if len(speakers) < N:
        raise errors.HouseholdError(
            "corpus has %d speakers, households need %d" % (len(speakers), N)
        )
    rng = np.random.default_rng(seed)
    groups = environment_groups(corpus, N) if by_environment else []
    if groups:
        log.debug("Drawing households from %d environments", len(groups))
    households = []
    for i in range(count):
        pool = groups[rng.integers(len(groups))] if groups else speakers
        picked = rng.choice(len(pool), size=N, replace=False)
        members = [pool[j] for j in picked]
        households.append(_make_household(corpus, _household_id(i), members, rng, **splits))
    log.debug("Generated %d random households of %d members", count, N)
    return households


def speaker_level_embedding(corpus, speaker_id, m=consts.SPEAKER_LEVEL_UTTERANCES, seed=0):
    """Renormalized mean of min(m, available) randomly chosen utterances.

    @raise NotFoundError: unknown speaker
    """
    matrix = corpus.matrix(speaker_id)
    rng = np.random.default_rng(seed)
    k = min(m, matrix.shape[0])
    picked = np.sort(rng.choice(matrix.shape[0], size=k, replace=False))
    return average_profile(matrix[picked], speaker_id=speaker_id).embedding


def speaker_level_embeddings(corpus, m=consts.SPEAKER_LEVEL_UTTERANCES, seed=0):
    """{speaker: speaker-level embedding}, one child seed per speaker."""
    speakers = corpus.speaker_ids()
    seeds = np.random.SeedSequence(seed).spawn(len(speakers))
    return {
        s: speaker_level_embedding(corpus, s, m, seed=ss) for s, ss in zip(speakers, seeds)
    }


def _all_utterances(corpus):
    rows = []
    owners = []
    for i, s in enumerate(corpus.speaker_ids()):
        matrix = corpus.matrix(s)
        rows.append(matrix)
        owners.append(np.full(matrix.shape[0], i))
    return np.concatenate(rows), np.concatenate(owners)


def cross_speaker_similarities(corpus):
    """Cosine similarity of every utterance pair from different speakers."""
    X, owners = _all_utterances(corpus)
    values = []
    for i in np.unique(owners):
        block = X[owners == i]
        later = X[owners > i]
        if later.shape[0]:
            values.append((block @ later.T).ravel())
    return np.clip(np.concatenate(values), -1.0, 1.0)


# sampled pairs per block when computing similarities
_CHUNK = 1 << 16


def similarity_threshold(corpus, percentile=consts.DEFAULT_PERCENTILE,
                         sample_budget=consts.DEFAULT_SIMILARITY_BUDGET, seed=0):
    """Percentile of cross-speaker utterance cosine similarities.

    All cross-speaker pairs are used when there are at most sample_budget of
    them, otherwise sample_budget pairs are drawn uniformly (pairs that
    happen to share a speaker are dropped).
    """
    speakers = corpus.speaker_ids()
    if len(speakers) < 2:
        raise errors.HouseholdError("need at least 2 speakers for a similarity threshold")
    counts = np.array([corpus.utterance_count(s) for s in speakers], dtype=np.int64)
    total = (int(counts.sum()) ** 2 - int(np.sum(counts * counts))) // 2
    if total <= sample_budget:
        values = cross_speaker_similarities(corpus)
        log.debug("Similarity threshold over all %d cross-speaker pairs", values.shape[0])
    else:
        X, owners = _all_utterances(corpus)
        rng = np.random.default_rng(seed)
        i = rng.integers(X.shape[0], size=sample_budget)
        j = rng.integers(X.shape[0], size=sample_budget)
        keep = owners[i] != owners[j]
        i, j = i[keep], j[keep]
        if i.shape[0] == 0:
            raise errors.HouseholdError("no cross-speaker pairs among the sampled ones")
        values = np.concatenate([
            np.sum(X[i[k:k + _CHUNK]] * X[j[k:k + _CHUNK]], axis=1)
            for k in range(0, i.shape[0], _CHUNK)
        ])
        values = np.clip(values, -1.0, 1.0)
        log.debug("Similarity threshold over %d sampled pairs of %d", values.shape[0], total)
    threshold = float(np.percentile(values, percentile))
    log.info("Similarity threshold at percentile %r: %.4f", percentile, threshold)
    return threshold


def similarity_graph(levels, speakers, threshold):
    """Adjacency matrix: speaker-level cosine above threshold, no self loops."""
    m = np.stack([levels[s] for s in speakers])
    adjacency = (m @ m.T) > threshold
    np.fill_diagonal(adjacency, False)
    return adjacency


def generate_hard_households(corpus, N, count, threshold, seed,
                             m=consts.SPEAKER_LEVEL_UTTERANCES, attempts=None, **splits):
    """Sample households whose members are pairwise similar.

    Members form an N-clique of the graph linking speakers whose
    speaker-level embeddings have cosine above threshold. Cliques are grown
    greedily from a random start, each step adding a random speaker linked
    to everyone picked so far, and restarted on dead ends. Environments are
    not consulted, although shared nuisance makes same-environment speakers
    more likely to be linked.

    @param attempts: Restart budget, CLIQUE_ATTEMPTS_PER_HOUSEHOLD per household by default
    @raise CliqueSearchError: budget exhausted before count households were found
    """
    speakers = corpus.speaker_ids()
    if len(speakers) < N:
        raise errors.HouseholdError(
            "corpus has %d speakers, households need %d" % (len(speakers), N)
        )
    if attempts is None:
        attempts = count * consts.CLIQUE_ATTEMPTS_PER_HOUSEHOLD
    levels = speaker_level_embeddings(corpus, m, seed)
    adjacency = similarity_graph(levels, speakers, threshold)
    log.debug(
        "Similarity graph: %d speakers, %d edges above %.4f",
        len(speakers),
        int(adjacency.sum()) // 2,
        threshold,
    )
    rng = np.random.default_rng(seed)
    households = []
    tried = 0
    while len(households) < count and tried < attempts:
        tried += 1
        clique = [int(rng.integers(len(speakers)))]
        candidates = np.flatnonzero(adjacency[clique[0]])
        while len(clique) < N and candidates.size:
            pick = int(candidates[rng.integers(candidates.size)])
            clique.append(pick)
            candidates = candidates[adjacency[pick, candidates]]
        if len(clique) < N:
            continue
        members = [speakers[j] for j in clique]
        households.append(
            _make_household(corpus, _household_id(len(households)), members, rng, **splits)
        )
    if len(households) < count:
        raise errors.CliqueSearchError(len(households), count, tried)
    log.debug("Found %d hard households in %d attempts", count, tried)
    return households


def confidence_filter(scores, speaker_ids, tau1, tau2):
    """Pseudo-label utterances from their scores against enrolled profiles.

    An utterance is kept when its rank-1 score exceeds tau1 and beats the
    rank-2 score by more than tau2; it is labeled with the rank-1 speaker
    (ties go to the smaller speaker id).

    @param scores: (utterances, speakers) score matrix
    @return: (kept row indices, labels)
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != len(speaker_ids):
        raise errors.DimensionError("score matrix doesn't match %d speakers" % len(speaker_ids))
    order = np.argsort(np.asarray(speaker_ids, dtype=object), kind="stable")
    ordered = scores[:, order]
    best = np.argmax(ordered, axis=1)
    rows = np.arange(scores.shape[0])
    rank1 = ordered[rows, best]
    if scores.shape[1] > 1:
        rank2 = np.sort(ordered, axis=1)[:, -2]
    else:
        rank2 = np.full(scores.shape[0], -np.inf)
    keep = (rank1 > tau1) & (rank1 - rank2 > tau2)
    kept = rows[keep]
    labels = [speaker_ids[order[best[i]]] for i in kept]
    log.debug("Confidence filter kept %d of %d utterances", kept.shape[0], scores.shape[0])
    return kept, labels


def write_manifest(households, fl):
    yaml.safe_dump(
        {"households": [h.asdict() for h in households]},
        fl,
        sort_keys=False,
        default_flow_style=None,
    )


def read_manifest(fl):
    """Households listed in a manifest written by write_manifest."""
    data = yaml.safe_load(fl)
    if not isinstance(data, dict) or "households" not in data:
        raise errors.FormatError("not a household manifest")
    return [Household.fromdict(h) for h in data["households"]]


def save_manifest(households, filename):
    with open(filename, "w") as fl:
        write_manifest(households, fl)
    log.debug("Wrote %d households to %r", len(households), str(filename))


def load_manifest(filename):
    with open(filename) as fl:
        return read_manifest(fl)
