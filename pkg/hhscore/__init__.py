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

"""Household-adapted speaker identification scoring.

Per-household adaptation of speaker embeddings, fusion of global and
adapted-space scores, contrastive training, household simulation and
open-set error rates.
"""

import logging

from . import errors  # noqa: F401
from .config import ExperimentConfig, load_config
from .corpus import Corpus, load_corpus, save_corpus
from .evaluation import (
    BaselineScorer,
    ErrorRates,
    ModelScorer,
    Trial,
    aggregate_eer,
    eer,
    evaluate_household,
    identify,
    rates_at_threshold,
)
from .experiment import export_adapted, run_experiment, run_sweep
from .households import (
    Household,
    SyntheticConfig,
    confidence_filter,
    generate_hard_households,
    generate_random_households,
    generate_synthetic_corpus,
    similarity_threshold,
    speaker_level_embedding,
)
from .model import (
    DropoutMask,
    HouseholdScoringModel,
    ScoreBreakdown,
    adapt,
    apply_mask,
    baseline_score,
    init_model,
    load_model,
    sample_mask,
    save_model,
    score_pair,
)
from .pairs import LabeledUtterance, TrainingPair, TrainingPairSet, build_pairs, corrupt_labels
from .trainer import LossReport, TrainConfig, backward, gradient_check, train, weighted_bce_loss
from .vectors import (
    SpeakerProfile,
    average_profile,
    cosine_similarity,
    euclidean_distance,
    l2_normalize,
)


log = logging.getLogger("hhscore.lib.init")

__version__ = "0.1"
