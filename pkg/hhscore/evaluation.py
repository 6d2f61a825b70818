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

"""Open-set identification and error rates.

A test utterance is scored against every enrolled profile of its
household; the rank-1 speaker is predicted and accepted when its score
S_max reaches the threshold. FAR counts accepted guest trials, FNIR counts
enrolled trials that are misidentified or rejected.
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import errors
from .model import HouseholdScoringModel, baseline_score, score_many, score_pair
from .vectors import normalize_rows


log = logging.getLogger("hhscore.lib.evaluation")

ENROLLED = "enrolled"
GUEST = "guest"

TRIAL_COLUMNS = ("household_id", "trial_type", "truth", "predicted", "s_max")


@dataclass(frozen=True)
class Trial:
    """One identification trial; truth is None for guest trials."""

    household_id: str
    trial_type: str
    truth: object
    predicted: str
    s_max: float

    @property
    def is_guest(self):
        return self.trial_type == GUEST

    @property
    def correct(self):
        return not self.is_guest and self.predicted == self.truth


@dataclass(frozen=True)
class ErrorRates:
    far: float
    fnir: float
    threshold: float


class BaselineScorer:
    """Cosine similarity mapped to [0, 1]."""

    name = "baseline"

    def __call__(self, e1, e2):
        return baseline_score(e1, e2)

    def score_many(self, profiles, tests):
        cos = normalize_rows(tests) @ normalize_rows(profiles).T
        return (np.clip(cos, -1.0, 1.0) + 1.0) / 2.0


class ModelScorer:
    """Fused score S of a trained model, without dropout."""

    def __init__(self, model, name="model"):
        self.model = model
        self.name = name

    def __call__(self, e1, e2):
        return score_pair(self.model, e1, e2).s_fused

    def score_many(self, profiles, tests):
        return score_many(self.model, profiles, tests)


def as_scorer(obj):
    """A scorer for a model, None (baseline) or an existing scorer."""
    if obj is None:
        return BaselineScorer()
    if isinstance(obj, HouseholdScoringModel):
        return ModelScorer(obj)
    return obj


def identify(scorer, profiles, test):
    """Rank-1 speaker of a test embedding.

    @return: (predicted speaker, s_max, {speaker: score})
    @raise EmptyInputError: no profiles
    """
    if not profiles:
        raise errors.EmptyInputError("no enrolled profiles to identify against")
    ordered = sorted(profiles, key=lambda p: p.speaker_id)
    scores = [float(scorer(p.embedding, test)) for p in ordered]
    best = int(np.argmax(scores))
    return ordered[best].speaker_id, scores[best], {
        p.speaker_id: s for p, s in zip(ordered, scores)
    }


def _identify_rows(scorer, profiles, tests):
    """Vectorized identify over the rows of tests; profiles sorted by id."""
    scores = scorer.score_many(np.stack([p.embedding for p in profiles]), tests)
    best = np.argmax(scores, axis=1)
    return [profiles[i].speaker_id for i in best], scores[np.arange(scores.shape[0]), best]


class _TrialArrays:
    def __init__(self, trials):
        guest = []
        enrolled = []
        correct = []
        for t in trials:
            if t.is_guest:
                guest.append(t.s_max)
            else:
                enrolled.append(t.s_max)
                correct.append(t.correct)
        if not guest or not enrolled:
            raise errors.DegenerateTrialSetError(
                "need guest and enrolled trials, got %d and %d" % (len(guest), len(enrolled))
            )
        self.guest = np.sort(np.array(guest, dtype=np.float64))
        enrolled = np.array(enrolled, dtype=np.float64)
        correct = np.array(correct, dtype=bool)
        self.enrolled_count = enrolled.shape[0]
        self.misidentified = int(np.count_nonzero(~correct))
        self.correct = np.sort(enrolled[correct])
        self.all = np.concatenate([self.guest, enrolled])

    def far(self, tau):
        accepted = self.guest.shape[0] - np.searchsorted(self.guest, tau, side="left")
        return accepted / self.guest.shape[0]

    def fnir(self, tau):
        rejected = np.searchsorted(self.correct, tau, side="left")
        return (self.misidentified + rejected) / self.enrolled_count


def rates_at_threshold(trials, tau):
    """FAR and FNIR at threshold tau; a trial is accepted when s_max >= tau.

    @raise DegenerateTrialSetError: no guest or no enrolled trials
    """
    arrays = _TrialArrays(trials)
    return ErrorRates(far=float(arrays.far(tau)), fnir=float(arrays.fnir(tau)), threshold=tau)


def candidate_thresholds(trials):
    """Sorted unique s_max values between -inf and +inf sentinels."""
    values = np.unique(np.array([t.s_max for t in trials], dtype=np.float64))
    return np.concatenate([[-np.inf], values, [np.inf]])


def error_curve(trials):
    """(thresholds, FAR, FNIR) over every candidate threshold."""
    arrays = _TrialArrays(trials)
    taus = candidate_thresholds(trials)
    return taus, arrays.far(taus), arrays.fnir(taus)


def eer(trials):
    """Equal error rate of a trial set.

    Candidate thresholds are swept; at the one minimizing |FAR - FNIR|
    (the lowest such threshold) the midpoint (FAR + FNIR) / 2 is returned.

    @return: (eer, threshold)
    @raise DegenerateTrialSetError: no guest or no enrolled trials
    """
    taus, far, fnir = error_curve(trials)
    i = int(np.argmin(np.abs(far - fnir)))
    return float((far[i] + fnir[i]) / 2.0), float(taus[i])


def evaluate_household(scorer, household, corpus, renormalize=True):
    """Identification trials of one household.

    Every evaluation utterance of every member and every guest utterance is
    scored against all enrolled profiles.

    @param scorer: BaselineScorer, ModelScorer, a trained model or None for the baseline
    @raise DimensionError: model and corpus dimensions differ
    """
    scorer = as_scorer(scorer)
    profiles = household.profiles(corpus, renormalize=renormalize)
    trials = []
    for s in sorted(household.members):
        tests = corpus.embeddings(s, household.eval[s])
        if tests.shape[0] == 0:
            continue
        predicted, s_max = _identify_rows(scorer, profiles, tests)
        trials.extend(
            Trial(household.household_id, ENROLLED, s, p, float(v))
            for p, v in zip(predicted, s_max)
        )
    guests = household.guest_embeddings(corpus)
    if guests.shape[0]:
        predicted, s_max = _identify_rows(scorer, profiles, guests)
        trials.extend(
            Trial(household.household_id, GUEST, None, p, float(v))
            for p, v in zip(predicted, s_max)
        )
    log.debug("%s: %d trials with %s", household.household_id, len(trials), scorer.name)
    return trials


def aggregate_eer(results, mode="pooled"):
    """EER over several households.

    "pooled" computes one EER over all trials, "mean_per_household" averages
    the EER of each household.

    @param results: List of per-household trial lists
    """
    results = list(results)
    if not results:
        raise errors.EmptyInputError("no household results to aggregate")
    if mode == "pooled":
        return eer([t for trials in results for t in trials])[0]
    if mode == "mean_per_household":
        return float(np.mean([eer(trials)[0] for trials in results]))
    raise errors.ConfigValueError("unknown aggregation mode %r" % mode)


def write_trials(trials, fl, comments=()):
    """Write a trial dump: optional "# " comment lines, a header, then one row per trial."""
    for line in comments:
        fl.write("# %s\n" % line)
    writer = csv.writer(fl, delimiter="\t", lineterminator="\n")
    writer.writerow(TRIAL_COLUMNS)
    for t in trials:
        writer.writerow(
            [t.household_id, t.trial_type, "-" if t.truth is None else t.truth, t.predicted, repr(t.s_max)]
        )


def read_trials(fl):
    """Parse a trial dump written by write_trials."""
    lines = (line for line in fl if line.strip() and not line.startswith("#"))
    reader = csv.reader(lines, delimiter="\t")
    header = next(reader, None)
    if header is None or tuple(header) != TRIAL_COLUMNS:
        raise errors.FormatError("trial dump header should be %s" % ",".join(TRIAL_COLUMNS))
    trials = []
    for row in reader:
        if len(row) != len(TRIAL_COLUMNS):
            raise errors.FormatError("trial row has %d fields: %r" % (len(row), row))
        household_id, trial_type, truth, predicted, s_max = row
        if trial_type not in (ENROLLED, GUEST):
            raise errors.FormatError("unknown trial type %r" % trial_type)
        try:
            value = float(s_max)
        except ValueError:
            raise errors.FormatError("bad score %r" % s_max)
        trials.append(
            Trial(household_id, trial_type, None if trial_type == GUEST else truth, predicted, value)
        )
    return trials


def load_trials(filename):
    with open(filename, newline="") as fl:
        return read_trials(fl)
