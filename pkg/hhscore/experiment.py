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

"""Experiment orchestration: households, training, evaluation and reports.

Output directory layout of one run:

    config.yaml         resolved configuration
    households.yaml     household manifest
    results.tsv         one row per scoring mode
    trials/             <household>-<mode>.tsv trial dumps
    curves/             <household>-<mode>.tsv training curves
    models/             <household>-<mode>.hhsm (shared-<mode>.hhsm with a shared model)
"""

import copy
import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import consts, errors
from .config import comment_lines, dump_config
from .corpus import load_corpora
from .evaluation import (
    BaselineScorer,
    ModelScorer,
    aggregate_eer,
    evaluate_household,
    write_trials,
)
from .households import (
    confidence_filter,
    generate_hard_households,
    generate_random_households,
    generate_synthetic_corpus,
    save_manifest,
    similarity_threshold,
)
from .model import adapt_rows, init_model, save_model
from .pairs import LabeledUtterance, TrainingPairSet, build_pairs, corrupt_labels, group_by_label
from .trainer import train


log = logging.getLogger("hhscore.lib.experiment")

RESULT_COLUMNS = (
    "household_size",
    "hardness",
    "mode",
    "dropout",
    "epsilon",
    "households",
    "trials",
    "eer",
    "relative_improvement",
    "eer_pooled",
    "eer_mean_per_household",
)

TRAINED_MODES = ("local_only", "fused")


@dataclass
class HouseholdResult:
    """Everything one household contributes to a run.

    trials    dict    mode -> [Trial]
    curves    dict    mode -> LossReport
    models    dict    mode -> trained HouseholdScoringModel
    """

    index: int
    household_id: str
    trials: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    rows: list
    households: list
    results: list


def household_seeds(seed, count):
    """One integer seed per household, independent of scheduling."""
    return [
        int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)
    ]


def load_or_generate_corpus(cfg):
    if cfg.corpus:
        return load_corpora(cfg.corpus)
    log.info("No corpus files given, generating a synthetic corpus")
    return generate_synthetic_corpus(cfg.synthetic)


def prepare_households(cfg, corpus):
    """Generate the households of an experiment."""
    if cfg.hardness == "hard":
        threshold = cfg.threshold
        if threshold is None:
            threshold = similarity_threshold(
                corpus, cfg.percentile, cfg.similarity_budget, seed=cfg.seed
            )
        return generate_hard_households(
            corpus, cfg.household_size, cfg.household_count, threshold, cfg.seed, **cfg.splits()
        )
    return generate_random_households(
        corpus, cfg.household_size, cfg.household_count, cfg.seed, **cfg.splits()
    )


def training_utterances(cfg, household, corpus, seed):
    """Labeled training utterances after pseudo-labeling and corruption."""
    utterances = household.train_utterances(corpus)
    if cfg.pseudo_label is not None and utterances:
        tau1, tau2 = cfg.pseudo_label
        profiles = household.profiles(corpus, renormalize=cfg.renormalize_profiles)
        scores = BaselineScorer().score_many(
            np.stack([p.embedding for p in profiles]),
            np.stack([u.embedding for u in utterances]),
        )
        kept, labels = confidence_filter(scores, [p.speaker_id for p in profiles], tau1, tau2)
        utterances = [
            LabeledUtterance(utterances[i].utterance_id, label, utterances[i].embedding)
            for i, label in zip(kept, labels)
        ]
    return corrupt_labels(utterances, household.members, cfg.epsilon, seed, draw=cfg.label_draw)


def household_pairs(cfg, household, corpus, seed):
    rng = np.random.default_rng(seed)
    corrupt_seed, pair_seed = (int(x) for x in rng.integers(2**32, size=2))
    utterances = training_utterances(cfg, household, corpus, corrupt_seed)
    return build_pairs(
        group_by_label(utterances),
        list(household.guest_embeddings(corpus)),
        cap_guest_negatives=cfg.cap_guest_negatives,
        seed=pair_seed,
    )


def trained_modes(cfg):
    return [m for m in cfg.modes if m in TRAINED_MODES]


def train_mode(cfg, pair_set, mode, seed, dimension):
    rng = np.random.default_rng(seed)
    init_seed, train_seed = (int(x) for x in rng.integers(2**32, size=2))
    model = init_model(
        dimension,
        cfg.adapted_dim,
        init_seed,
        hidden=cfg.hidden,
        local_metric=cfg.local_metric,
        use_global=(mode == "fused"),
    )
    return train(model, pair_set, replace(cfg.train, seed=train_seed))


def run_household(cfg, index, household, corpus, seed, shared=None):
    """Train (unless shared models are given) and evaluate one household.

    @raise ExperimentError: naming the failing module and the household
    """
    stage = "household_sim"
    result = HouseholdResult(index, household.household_id)
    try:
        household.check()
        stage = "evaluation"
        result.trials["baseline"] = evaluate_household(
            BaselineScorer(), household, corpus, renormalize=cfg.renormalize_profiles
        )
        modes = trained_modes(cfg)
        if modes and shared is None:
            stage = "pair_builder"
            pair_set = household_pairs(cfg, household, corpus, seed)
        for mode in modes:
            if shared is None:
                stage = "trainer"
                model, curve = train_mode(cfg, pair_set, mode, seed, corpus.dimension)
                result.curves[mode] = curve
                result.models[mode] = model
            else:
                model = shared[mode]
            stage = "evaluation"
            result.trials[mode] = evaluate_household(
                ModelScorer(model, mode), household, corpus, renormalize=cfg.renormalize_profiles
            )
    except errors.HHScoreError as e:
        raise errors.ExperimentError(stage, household.household_id, e)
    log.info("%s: done (%s)", household.household_id, ", ".join(sorted(result.trials)))
    return result


def train_shared_models(cfg, households, corpus, seeds):
    """One model per trained mode, fit on the union of every household's pairs."""
    pair_sets = []
    for household, seed in zip(households, seeds):
        try:
            pair_sets.append(household_pairs(cfg, household, corpus, seed))
        except errors.HHScoreError as e:
            raise errors.ExperimentError("pair_builder", household.household_id, e)
    union = TrainingPairSet.concatenate(pair_sets)
    log.info("Training shared models on %d pairs (w=%.4f)", len(union), union.weight_w)
    models = {}
    curves = {}
    for mode in trained_modes(cfg):
        try:
            models[mode], curves[mode] = train_mode(cfg, union, mode, cfg.seed, corpus.dimension)
        except errors.HHScoreError as e:
            raise errors.ExperimentError("trainer", "shared", e)
    return models, curves


_worker_corpus = None


def _init_worker(corpus):
    global _worker_corpus
    _worker_corpus = corpus


def _run_task(task):
    cfg, index, household, seed, shared = task
    return run_household(cfg, index, household, _worker_corpus, seed, shared)


def run_households(cfg, households, corpus, seeds, shared=None):
    """Run every household, in parallel when cfg.workers > 1; results keep household order."""
    tasks = [
        (cfg, i, h, seed, shared) for i, (h, seed) in enumerate(zip(households, seeds))
    ]
    if cfg.workers <= 1:
        return [run_household(c, i, h, corpus, seed, s) for c, i, h, seed, s in tasks]
    with ProcessPoolExecutor(
        max_workers=cfg.workers, initializer=_init_worker, initargs=(corpus,)
    ) as pool:
        return list(pool.map(_run_task, tasks))


def result_rows(cfg, results):
    """One summary row per scoring mode, baseline first."""
    modes = ["baseline"] + [m for m in cfg.modes if m != "baseline"]
    eers = {}
    rows = []
    for mode in modes:
        per_household = [r.trials[mode] for r in results]
        pooled = aggregate_eer(per_household, "pooled")
        mean = aggregate_eer(per_household, "mean_per_household")
        log.debug("%s: pooled EER %.6f, mean per household %.6f", mode, pooled, mean)
        eers[mode] = pooled if cfg.aggregation == "pooled" else mean
        baseline = eers["baseline"]
        if baseline > 0.0:
            improvement = 1.0 - eers[mode] / baseline
        else:
            improvement = float("nan")
            if mode != "baseline":
                log.warning("Baseline EER is 0, relative improvement of %s is undefined", mode)
        rows.append(
            {
                "household_size": cfg.household_size,
                "hardness": cfg.hardness,
                "mode": mode,
                "dropout": 0.0 if mode == "baseline" else cfg.train.dropout_rate,
                "epsilon": cfg.epsilon,
                "households": len(results),
                "trials": sum(len(t) for t in per_household),
                "eer": eers[mode],
                "relative_improvement": improvement,
                "eer_pooled": pooled,
                "eer_mean_per_household": mean,
            }
        )
        log.info("%s: EER %.4f%%", mode, 100.0 * eers[mode])
    return rows


def _format(value):
    if isinstance(value, float):
        return "%.6f" % value
    return str(value)


def write_rows(rows, fl, columns=RESULT_COLUMNS, comments=()):
    """Tab-separated table with "# " comment lines and a header row."""
    for line in comments:
        fl.write("# %s\n" % line)
    writer = csv.writer(fl, delimiter="\t", lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format(row[c]) for c in columns])


def _write_outputs(cfg, households, results, rows, shared_curves, shared_models):
    out = cfg.output_dir
    for sub in ("trials", "curves", "models"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)
    with open(os.path.join(out, "config.yaml"), "w") as fl:
        dump_config(cfg, fl)
    save_manifest(households, os.path.join(out, "households.yaml"))
    comments = comment_lines(cfg)
    with open(os.path.join(out, "results.tsv"), "w", newline="") as fl:
        write_rows(rows, fl, comments=comments)
    for r in results:
        for mode, trials in r.trials.items():
            path = os.path.join(out, "trials", "%s-%s.tsv" % (r.household_id, mode))
            with open(path, "w", newline="") as fl:
                write_trials(trials, fl)
        for mode, curve in r.curves.items():
            with open(os.path.join(out, "curves", "%s-%s.tsv" % (r.household_id, mode)), "w", newline="") as fl:
                curve.write(fl)
        for mode, model in r.models.items():
            save_model(model, os.path.join(out, "models", "%s-%s.hhsm" % (r.household_id, mode)))
    for mode, curve in shared_curves.items():
        with open(os.path.join(out, "curves", "shared-%s.tsv" % mode), "w", newline="") as fl:
            curve.write(fl)
    for mode, model in shared_models.items():
        save_model(model, os.path.join(out, "models", "shared-%s.hhsm" % mode))


def run_experiment(cfg, corpus=None, write=True):
    """Run one experiment: households, training, evaluation, reports.

    @param corpus: Preloaded corpus; loaded from cfg.corpus (or synthesized) otherwise
    @param write: Write report files under cfg.output_dir
    @rtype: ExperimentReport
    """
    cfg.validate()
    if corpus is None:
        corpus = load_or_generate_corpus(cfg)
    households = prepare_households(cfg, corpus)
    seeds = household_seeds(cfg.seed, len(households))
    shared_models = {}
    shared_curves = {}
    if cfg.shared_model and trained_modes(cfg):
        shared_models, shared_curves = train_shared_models(cfg, households, corpus, seeds)
    results = run_households(cfg, households, corpus, seeds, shared_models or None)
    rows = result_rows(cfg, results)
    if write:
        _write_outputs(cfg, households, results, rows, shared_curves, shared_models)
        log.info("Wrote reports to %r", cfg.output_dir)
    return ExperimentReport(rows=rows, households=households, results=results)


def set_axis(cfg, axis, value):
    """Set one sweep axis (see consts.sweep_axes) on cfg."""
    try:
        section, key, convert = consts.sweep_axes[axis]
    except KeyError:
        raise errors.ConfigValueError("unknown sweep axis %r" % axis)
    target = cfg if section is None else getattr(cfg, section)
    setattr(target, key, convert(value))


def run_sweep(cfg, axis, values, corpus=None):
    """Repeat run_experiment for every value of one axis.

    Each point writes its own run under <output_dir>/<axis>-<value>; the
    long-format table sweep.tsv collects every row.

    @raise ConfigError: unknown axis or no values
    """
    if axis not in consts.sweep_axes:
        raise errors.ConfigValueError("unknown sweep axis %r" % axis)
    values = list(values)
    if not values:
        raise errors.ConfigValueError("sweep needs at least one value")
    if corpus is None:
        corpus = load_or_generate_corpus(cfg)
    rows = []
    for value in values:
        point = copy.deepcopy(cfg)
        set_axis(point, axis, value)
        point.output_dir = os.path.join(cfg.output_dir, "%s-%s" % (axis, value))
        log.info("Sweep %s=%s", axis, value)
        report = run_experiment(point, corpus=corpus)
        for row in report.rows:
            rows.append(dict(row, axis=axis, value=value))
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "sweep.tsv"), "w", newline="") as fl:
        write_rows(rows, fl, columns=("axis", "value") + RESULT_COLUMNS, comments=comment_lines(cfg))
    return rows


SPLITS = ("enroll", "eval", "train")


def adapted_rows(model, household, corpus):
    """(household, speaker, split, utterance, original, adapted) for every utterance."""
    if model.dimension != corpus.dimension:
        raise errors.DimensionError(
            "model expects dimension %d, corpus has %d" % (model.dimension, corpus.dimension)
        )
    keys = []
    for s in sorted(household.members):
        for split in SPLITS:
            keys.extend((s, split, u) for u in getattr(household, split)[s])
    keys.extend((s, "guest", u) for s, u in household.guests)
    if not keys:
        return []
    original = np.stack([corpus.embedding(s, u) for s, _, u in keys])
    adapted = adapt_rows(model, original)
    return [
        (household.household_id, s, split, u, original[i], adapted[i])
        for i, (s, split, u) in enumerate(keys)
    ]


def export_adapted(model, corpus, households, fl):
    """Write original and adapted embeddings (no dropout) of every household utterance."""
    writer = csv.writer(fl, delimiter="\t", lineterminator="\n")
    writer.writerow(
        ["household_id", "speaker", "split", "utterance_id"]
        + ["e%d" % i for i in range(model.dimension)]
        + ["a%d" % i for i in range(model.adapted_dim)]
    )
    count = 0
    for household in households:
        for hid, s, split, u, original, adapted in adapted_rows(model, household, corpus):
            writer.writerow(
                [hid, s, split, u] + [repr(float(x)) for x in original] + [repr(float(x)) for x in adapted]
            )
            count += 1
    log.info("Exported %d adapted embeddings", count)
    return count
