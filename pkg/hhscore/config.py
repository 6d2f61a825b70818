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

"""Experiment configuration.

Configuration files are YAML mappings of experiment keys, with training
and synthetic corpus settings under "train:" and "synthetic:". Every value
is checked against the schema tables in consts.
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

import yaml

from . import consts, errors
from .households import SyntheticConfig
from .trainer import TrainConfig


log = logging.getLogger("hhscore.lib.config")


@dataclass
class ExperimentConfig:
    corpus: List[str] = field(default_factory=list)
    output_dir: str = "hhscore-out"
    household_size: int = 4
    household_count: int = 50
    hardness: str = "random"
    percentile: float = consts.DEFAULT_PERCENTILE
    similarity_budget: int = consts.DEFAULT_SIMILARITY_BUDGET
    threshold: Optional[float] = None
    epsilon: float = 0.0
    label_draw: str = "all"
    modes: List[str] = field(default_factory=lambda: ["baseline", "fused"])
    seed: int = 0
    workers: int = 1
    shared_model: bool = False
    aggregation: str = "pooled"
    adapted_dim: int = 32
    hidden: List[int] = field(default_factory=list)
    local_metric: str = "euclidean"
    cap_guest_negatives: Optional[int] = None
    renormalize_profiles: bool = True
    pseudo_label: Optional[List[float]] = None
    enroll_count: int = consts.ENROLL_COUNT
    eval_count: int = consts.EVAL_COUNT
    train_max: int = consts.TRAIN_MAX
    guest_count: int = consts.GUEST_COUNT
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def validate(self):
        self.train.validate()
        self.synthetic.validate()
        if not self.modes:
            raise errors.ConfigValueError("at least one scoring mode is needed")
        if self.pseudo_label is not None and len(self.pseudo_label) != 2:
            raise errors.ConfigValueError("pseudo_label needs exactly [tau1, tau2]")
        for key, entry in consts.experiment_keys.items():
            check_value(key, getattr(self, key), entry)

    def splits(self):
        """Split sizes as keyword arguments for household generation."""
        return {
            "enroll_count": self.enroll_count,
            "eval_count": self.eval_count,
            "train_max": self.train_max,
            "guest_count": self.guest_count,
        }

    def asdict(self):
        return asdict(self)


def _check_scalar(key, value, entry):
    kind = entry["type"]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise errors.ConfigValueError("%s: expected an integer, got %r" % (key, value))
    if not isinstance(value, kind):
        raise errors.ConfigValueError(
            "%s: expected %s, got %r" % (key, kind.__name__, value)
        )
    if "choices" in entry and value not in entry["choices"]:
        raise errors.ConfigValueError(
            "%s: %r is not one of %s" % (key, value, ", ".join(entry["choices"]))
        )
    low = entry.get("min", -1)
    high = entry.get("max", -1)
    if low != -1 and value < low:
        raise errors.ConfigValueError("%s: %r is below %r" % (key, value, low))
    if high != -1:
        if entry.get("exclusive_max") and value >= high:
            raise errors.ConfigValueError("%s: %r must be below %r" % (key, value, high))
        if value > high:
            raise errors.ConfigValueError("%s: %r is above %r" % (key, value, high))
    return value


def check_value(key, value, entry):
    """Validate one value against its schema entry, returning it coerced."""
    if value is None:
        if entry.get("none"):
            return None
        raise errors.ConfigValueError("%s can't be empty" % key)
    if entry["type"] is list:
        if isinstance(value, (str, int, float)):
            value = [value]
        if not isinstance(value, (list, tuple)):
            raise errors.ConfigValueError("%s: expected a list, got %r" % (key, value))
        item = dict(entry, type=entry["item"])
        item.pop("none", None)
        return [_check_scalar(key, v, item) for v in value]
    return _check_scalar(key, value, entry)


def _apply(target, values, schema, section=None):
    if not isinstance(values, dict):
        raise errors.ConfigValueError("%s must be a mapping" % (section or "config"))
    for key, value in values.items():
        if key not in schema:
            name = "%s.%s" % (section, key) if section else key
            raise errors.ConfigItemNotFoundError("unknown configuration key %r" % name)
        setattr(target, key, check_value(key, value, schema[key]))


def apply_values(cfg, values):
    """Set experiment keys and "train"/"synthetic" sections from a mapping."""
    values = dict(values)
    for section, schema in consts.config_sections.items():
        if section in values:
            _apply(getattr(cfg, section), values.pop(section) or {}, schema, section)
    _apply(cfg, values, consts.experiment_keys)
    return cfg


def parse_override(text):
    """Split "key=value" or "section.key=value", the value parsed as YAML."""
    if "=" not in text:
        raise errors.ConfigValueError("override %r should look like key=value" % text)
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw) if raw.strip() else None
    parts = key.strip().split(".")
    if len(parts) == 1:
        return {parts[0]: value}
    if len(parts) == 2 and parts[0] in consts.config_sections:
        return {parts[0]: {parts[1]: value}}
    raise errors.ConfigItemNotFoundError("unknown configuration key %r" % key)


def apply_overrides(cfg, overrides):
    """Apply overrides given as "key=value" strings or dicts, in order."""
    for item in overrides:
        if isinstance(item, str):
            item = parse_override(item)
        apply_values(cfg, item)
    return cfg


def load_config(filename=None, overrides=()):
    """Build an ExperimentConfig from defaults, a YAML file and overrides.

    @raise ConfigItemNotFoundError: unknown key
    @raise ConfigValueError: bad value
    """
    cfg = ExperimentConfig()
    if filename is not None:
        with open(filename) as fl:
            try:
                data = yaml.safe_load(fl)
            except yaml.YAMLError as e:
                raise errors.ConfigError("%s: %s" % (filename, e))
        if data is not None:
            apply_values(cfg, data)
        log.debug("Loaded configuration from %r", str(filename))
    apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg


def resolved(cfg):
    """Plain mapping of every setting, in declaration order."""
    data = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if hasattr(value, "asdict"):
            value = value.asdict()
        elif isinstance(value, tuple):
            value = list(value)
        data[f.name] = value
    return data


def dump_config(cfg, fl=None):
    """YAML text of the resolved configuration, written to fl if given."""
    text = yaml.safe_dump(resolved(cfg), sort_keys=False, default_flow_style=None)
    if fl is not None:
        fl.write(text)
    return text


def comment_lines(cfg):
    """Resolved configuration as lines for "# " report headers."""
    return dump_config(cfg).rstrip("\n").split("\n")
