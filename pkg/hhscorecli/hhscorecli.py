#!/usr/bin/env python
# ===============================================================================
# This file is part of hhscore.
#
# hhscore is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 2 of the License, or
# (at your option) any later version.
#
# hhscore is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with hhscore. If not, see http://www.gnu.org/licenses/old-licenses/gpl-2.0.html
# ===============================================================================

import logging
import sys
from optparse import OptionParser, make_option

from hhscore import consts, errors
from hhscore.config import load_config
from hhscore.corpus import formats, load_corpora, save_corpus
from hhscore.evaluation import aggregate_eer, eer, load_trials, rates_at_threshold
from hhscore.experiment import export_adapted, run_experiment, run_sweep
from hhscore.households import generate_synthetic_corpus, load_manifest
from hhscore.model import load_model


log = logging.getLogger("hhscore.cli")


class HHScoreCLIError(Exception):
    pass


class HHScoreCLIValidationError(Exception):
    pass


def split_list(value):
    return [v.strip() for v in value.split(",") if v.strip()]


def collect_overrides(options):
    """Turn the experiment flags that were given into config overrides."""
    overrides = []
    simple = {
        "corpus": "corpus",
        "output_dir": "output_dir",
        "household_size": "household_size",
        "household_count": "household_count",
        "hardness": "hardness",
        "epsilon": "epsilon",
        "seed": "seed",
        "workers": "workers",
        "aggregation": "aggregation",
        "threshold": "threshold",
    }
    for dest, key in simple.items():
        value = getattr(options, dest, None)
        if value is not None:
            overrides.append({key: value})
    if getattr(options, "modes", None):
        overrides.append({"modes": split_list(options.modes)})
    if getattr(options, "shared_model", None):
        overrides.append({"shared_model": True})
    train = {}
    for dest, key in (("dropout", "dropout_rate"), ("epochs", "epochs"),
                      ("learning_rate", "learning_rate"), ("optimizer", "optimizer")):
        value = getattr(options, dest, None)
        if value is not None:
            train[key] = value
    if train:
        overrides.append({"train": train})
    synthetic = {}
    for dest, key in (("speakers", "speaker_count"), ("utterances", "utterances_per_speaker"),
                      ("dimension", "dimension")):
        value = getattr(options, dest, None)
        if value is not None:
            synthetic[key] = value
    if synthetic:
        overrides.append({"synthetic": synthetic})
    # generic overrides come last so they win
    overrides.extend(options.overrides or [])
    return overrides


def get_config(options):
    try:
        return load_config(options.config, collect_overrides(options))
    except errors.ConfigError as e:
        raise HHScoreCLIValidationError(str(e))


def gen_corpus_validator(options):
    if options.output is None:
        raise HHScoreCLIValidationError("--output must be specified")
    if options.format is not None and options.format not in formats:
        raise HHScoreCLIValidationError("unknown corpus format: %s" % options.format)


def gen_corpus_action(options):
    cfg = get_config(options)
    if options.seed is not None:
        cfg.synthetic.seed = options.seed
    corpus = generate_synthetic_corpus(cfg.synthetic)
    save_corpus(corpus, options.output, fmt=options.format)
    print("speakers\tutterances\tdimension")
    print("%d\t%d\t%d" % (len(corpus.speaker_ids()), len(corpus), corpus.dimension))


def run_validator(options):
    if options.modes:
        unknown = [m for m in split_list(options.modes) if m not in consts.scoring_modes]
        if unknown:
            raise HHScoreCLIValidationError("unknown scoring modes: %s" % unknown)


def run_action(options):
    cfg = get_config(options)
    report = run_experiment(cfg)
    for row in report.rows:
        print("%s\t%.6f" % (row["mode"], row["eer"]))


def sweep_validator(options):
    run_validator(options)
    if options.axis is None:
        raise HHScoreCLIValidationError("--axis must be specified")
    if options.axis not in consts.sweep_axes:
        raise HHScoreCLIValidationError(
            "--axis must be one of: %s" % ", ".join(consts.sweep_axes)
        )
    if not options.values or not split_list(options.values):
        raise HHScoreCLIValidationError("--values must list at least one value")
    convert = consts.sweep_axes[options.axis][2]
    try:
        options.values = [convert(v) for v in split_list(options.values)]
    except ValueError:
        raise HHScoreCLIValidationError("bad --values for %s" % options.axis)


def sweep_action(options):
    cfg = get_config(options)
    rows = run_sweep(cfg, options.axis, options.values)
    for row in rows:
        print("%s\t%s\t%.6f" % (row["value"], row["mode"], row["eer"]))


def export_validator(options):
    for name in ("model", "manifest", "output"):
        if getattr(options, name) is None:
            raise HHScoreCLIValidationError("--%s must be specified" % name)
    if not options.corpus:
        raise HHScoreCLIValidationError("--corpus must be specified")


def export_action(options):
    model = load_model(options.model)
    corpus = load_corpora(options.corpus)
    households = load_manifest(options.manifest)
    if options.household is not None:
        households = [h for h in households if h.household_id == options.household]
        if not households:
            raise HHScoreCLIError("household %s is not in the manifest" % options.household)
    elif len(households) > 1:
        raise HHScoreCLIValidationError(
            "manifest lists %d households, pick one with --household" % len(households)
        )
    with open(options.output, "w", newline="") as fl:
        count = export_adapted(model, corpus, households, fl)
    if options.verbose:
        print(count)


def eer_validator(options):
    if not options.trials:
        raise HHScoreCLIValidationError("at least one trial dump must be given")
    if options.aggregation not in consts.aggregation_modes:
        raise HHScoreCLIValidationError("unknown aggregation: %s" % options.aggregation)


def eer_action(options):
    per_file = [load_trials(filename) for filename in options.trials]
    trials = [t for chunk in per_file for t in chunk]
    value, threshold = eer(trials)
    print("eer\tthreshold")
    print("%.6f\t%r" % (value, threshold))
    if len(per_file) > 1:
        print("aggregated (%s)\t%.6f" % (options.aggregation, aggregate_eer(per_file, options.aggregation)))
    if options.threshold is not None:
        rates = rates_at_threshold(trials, options.threshold)
        print("far\tfnir\tthreshold")
        print("%.6f\t%.6f\t%r" % (rates.far, rates.fnir, rates.threshold))


usage_message = """
Usage: hhscore [gen-corpus|run|sweep|export-adapted|eer]

Run help for a subcommand for more options.
"""


def makeArgParser():
    parsers = {}

    base_options = [
        make_option("--verbose", action="store_true"),
        make_option("--debug", action="store_true"),
    ]

    config_options = [
        make_option(
            "-c",
            "--config",
            help="read experiment settings from YAML FILE",
            metavar="FILE",
        ),
        make_option(
            "--set",
            dest="overrides",
            action="append",
            metavar="KEY=VALUE",
            help="override a setting, e.g. train.epochs=5 (repeatable)",
        ),
        make_option("--seed", type="int", help="random seed"),
    ]

    experiment_options = [
        make_option("--corpus", action="append", help="corpus FILE (repeatable)", metavar="FILE"),
        make_option("-o", "--output-dir", dest="output_dir", help="write reports under DIR", metavar="DIR"),
        make_option("-n", "--household-size", dest="household_size", type="int", help="members per household"),
        make_option("--household-count", dest="household_count", type="int", help="number of households"),
        make_option("--hardness", choices=consts.hardness_levels, help="random or hard households"),
        make_option("--threshold", type="float", help="speaker similarity threshold for hard households"),
        make_option("--modes", help="comma separated scoring modes from: %s" % ", ".join(consts.scoring_modes)),
        make_option("--epsilon", type="float", help="training label error rate"),
        make_option("--dropout", type="float", help="input dropout rate"),
        make_option("--epochs", type="int", help="training epochs"),
        make_option("--learning-rate", dest="learning_rate", type="float", help="learning rate"),
        make_option("--optimizer", choices=consts.optimizers, help="sgd or adam"),
        make_option("--workers", type="int", help="households processed in parallel"),
        make_option("--aggregation", choices=consts.aggregation_modes, help="EER aggregation over households"),
        make_option("--shared-model", dest="shared_model", action="store_true",
                    help="train one model on all households' pairs"),
    ]

    parser = OptionParser(
        option_list=(base_options + config_options), usage="hhscore gen-corpus [options]"
    )
    parser.add_option("-o", "--output", help="write the corpus to FILE", metavar="FILE")
    parser.add_option("--format", help="corpus format: %s" % ", ".join(sorted(formats)))
    parser.add_option("--speakers", type="int", help="number of speakers")
    parser.add_option("--utterances", type="int", help="utterances per speaker")
    parser.add_option("--dimension", type="int", help="embedding dimension")
    parsers["gen-corpus"] = parser

    parser = OptionParser(
        option_list=(base_options + config_options + experiment_options),
        usage="hhscore run [options]",
    )
    parsers["run"] = parser

    parser = OptionParser(
        option_list=(base_options + config_options + experiment_options),
        usage="hhscore sweep --axis AXIS --values V1,V2,... [options]",
    )
    parser.add_option("--axis", help="sweep axis: %s" % ", ".join(consts.sweep_axes))
    parser.add_option("--values", help="comma separated axis values")
    parsers["sweep"] = parser

    parser = OptionParser(option_list=base_options, usage="hhscore export-adapted [options]")
    parser.add_option("--model", help="trained model FILE", metavar="FILE")
    parser.add_option("--corpus", action="append", help="corpus FILE (repeatable)", metavar="FILE")
    parser.add_option("--manifest", help="household manifest FILE", metavar="FILE")
    parser.add_option("--household", help="household id within the manifest")
    parser.add_option("-o", "--output", help="write the export to FILE", metavar="FILE")
    parsers["export-adapted"] = parser

    parser = OptionParser(option_list=base_options, usage="hhscore eer [options] TRIALS...")
    parser.add_option("--threshold", type="float", help="also report FAR and FNIR at this threshold")
    parser.add_option(
        "--aggregation",
        default="pooled",
        help="aggregation over several dumps: %s" % ", ".join(consts.aggregation_modes),
    )
    parsers["eer"] = parser

    return parsers


def parse_commandline(parsers, argv):
    if len(argv) == 1:
        raise HHScoreCLIValidationError("must specify a command to run")
    elif argv[1].startswith("-"):
        raise HHScoreCLIValidationError(usage_message)

    action = argv[1]

    if action not in list(parsers.keys()):
        raise HHScoreCLIValidationError("unknown action: %s" % action)

    parser = parsers[action]

    (options, args) = parser.parse_args(argv[2:])

    options.action = action

    if options.debug:
        logging.getLogger("hhscore").setLevel(logging.DEBUG)
    elif options.verbose:
        logging.getLogger("hhscore").setLevel(logging.INFO)

    if action == "eer":
        options.trials = args
    elif args:
        parser.error("unexpected arguments: %s" % " ".join(args))

    return options


def main(options):
    actions = {
        "gen-corpus": (gen_corpus_validator, gen_corpus_action),
        "run": (run_validator, run_action),
        "sweep": (sweep_validator, sweep_action),
        "export-adapted": (export_validator, export_action),
        "eer": (eer_validator, eer_action),
    }

    validator, func = actions.get(options.action, (None, None))
    if not func:
        raise HHScoreCLIValidationError("%s is not supported\n" % options.action)

    if validator:
        validator(options)

    func(options)


def run(argv=None):
    logging.basicConfig(
        level=logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
    )

    parsers = makeArgParser()

    try:
        options = parse_commandline(parsers, sys.argv if argv is None else argv)

        main(options)
    except HHScoreCLIValidationError as e:
        sys.stderr.write("%s\n" % e)
        sys.exit(1)
    except HHScoreCLIError as e:
        sys.stderr.write("%s\n" % e)
        sys.exit(1)
    except errors.HHScoreError as e:
        sys.stderr.write("%s\n" % e)
        sys.exit(1)
    except OSError as e:
        sys.stderr.write("%s\n" % e)
        sys.exit(1)


if __name__ == "__main__":  # pragma: no cover
    run()
