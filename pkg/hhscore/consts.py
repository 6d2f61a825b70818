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

"""Useful constants."""

# File magics
MODEL_MAGIC = b"HHSM"
CORPUS_MAGIC = b"HHEB"

# File format versions
model_versions = {
    "single-layer": 1,
    "layered": 2,
}
corpus_versions = {
    "float32": 1,
}

# Model flags (layered format only)
FLAG_LOCAL_COSINE = 0x0001
FLAG_NO_GLOBAL = 0x0002

# Household protocol
ENROLL_COUNT = 4
EVAL_COUNT = 10
TRAIN_MAX = 50
GUEST_COUNT = 250
SPEAKER_LEVEL_UTTERANCES = 20

# Hard households
DEFAULT_PERCENTILE = 98.0
DEFAULT_SIMILARITY_BUDGET = 10**6
CLIQUE_ATTEMPTS_PER_HOUSEHOLD = 200

# Numerics
SCORE_CLAMP = 1e-12
# Added under the square root of the euclidean distance in backpropagation
# only; forward scores use the exact distance.
DISTANCE_EPSILON = 1e-12

# Enumerations
local_metrics = ("euclidean", "cosine")
optimizers = ("sgd", "adam")
hardness_levels = ("random", "hard")
scoring_modes = ("baseline", "local_only", "fused")
aggregation_modes = ("pooled", "mean_per_household")
label_draws = ("all", "others")
mask_refresh_modes = ("epoch", "batch", "once")
sweep_axes = {
    "dropout": ("train", "dropout_rate", float),
    "epsilon": (None, "epsilon", float),
    "household_size": (None, "household_size", int),
}

# Configuration schema
#
# Every key lists its value type and optional bounds; "min"/"max" of -1
# mean unbounded, "none" allows an explicit null.
train_keys = {
    "epochs": {"type": int, "min": 1, "max": -1},
    "learning_rate": {"type": float, "min": 0, "max": -1},
    "batch_size": {"type": int, "min": 1, "max": -1},
    "dropout_rate": {"type": float, "min": 0, "max": 1, "exclusive_max": True},
    "optimizer": {"type": str, "choices": optimizers},
    "seed": {"type": int, "min": 0, "max": -1},
    "distance_epsilon": {"type": float, "min": 0, "max": -1},
    "mask_refresh": {"type": str, "choices": mask_refresh_modes},
    "adam_beta1": {"type": float, "min": 0, "max": 1, "exclusive_max": True},
    "adam_beta2": {"type": float, "min": 0, "max": 1, "exclusive_max": True},
    "adam_epsilon": {"type": float, "min": 0, "max": -1},
}

synthetic_keys = {
    "speaker_count": {"type": int, "min": 1, "max": -1},
    "utterances_per_speaker": {"type": int, "min": 1, "max": -1},
    "dimension": {"type": int, "min": 2, "max": -1},
    "identity_subspace_dim": {"type": int, "min": 1, "max": -1},
    "within_speaker_noise": {"type": float, "min": 0, "max": -1},
    "household_nuisance_scale": {"type": float, "min": 0, "max": -1},
    "share_nuisance": {"type": bool},
    "environment_size": {"type": int, "min": 1, "max": -1},
    "seed": {"type": int, "min": 0, "max": -1},
}

experiment_keys = {
    "corpus": {"type": list, "item": str},
    "output_dir": {"type": str},
    "household_size": {"type": int, "min": 1, "max": -1},
    "household_count": {"type": int, "min": 1, "max": -1},
    "hardness": {"type": str, "choices": hardness_levels},
    "percentile": {"type": float, "min": 0, "max": 100},
    "similarity_budget": {"type": int, "min": 1, "max": -1},
    "threshold": {"type": float, "min": -1, "max": 1, "none": True},
    "epsilon": {"type": float, "min": 0, "max": 1},
    "label_draw": {"type": str, "choices": label_draws},
    "modes": {"type": list, "item": str, "choices": scoring_modes},
    "seed": {"type": int, "min": 0, "max": -1},
    "workers": {"type": int, "min": 1, "max": -1},
    "shared_model": {"type": bool},
    "aggregation": {"type": str, "choices": aggregation_modes},
    "adapted_dim": {"type": int, "min": 1, "max": -1},
    "hidden": {"type": list, "item": int},
    "local_metric": {"type": str, "choices": local_metrics},
    "cap_guest_negatives": {"type": int, "min": 1, "max": -1, "none": True},
    "renormalize_profiles": {"type": bool},
    "pseudo_label": {"type": list, "item": float, "none": True},
    "enroll_count": {"type": int, "min": 1, "max": -1},
    "eval_count": {"type": int, "min": 1, "max": -1},
    "train_max": {"type": int, "min": 1, "max": -1},
    "guest_count": {"type": int, "min": 1, "max": -1},
}

config_sections = {
    "train": train_keys,
    "synthetic": synthetic_keys,
}
