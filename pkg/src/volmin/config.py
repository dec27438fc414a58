"""Experiment configuration: a line-oriented `section.key = value` format.

The format is deliberately minimal so that a config diff reads like a
protocol diff. Rules:

  - blank lines and lines starting with `#` are ignored
  - every other line must be `section.key = value`
  - every (section, key) pair must appear in the schema below; unknown
    sections or keys are errors, as are duplicate assignments
  - values are parsed per key: int, float, bool (true/false), string,
    a choice from a fixed set, a comma-separated int list, or an
    epoch:divisor schedule such as `30:10,60:10`

Sections: `data` (what to generate or load), `noise` (label corruption),
`train` (joint training hyperparameters), `estimators` (which transition
estimators a sweep compares and the percentile level), `geometry`
(scattering-check sizes and tolerances), `trials` (seed list), and
`output` (directory). Every key has a default, so the empty document is a
valid config.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from . import data, noise, trainer

DEFAULT_SEEDS = (0, 1, 2, 3, 4)

GENERATORS = ("simplex", "gaussian", "csv")
NOISE_KINDS = ("symmetric", "pair", "custom")
METHODS = ("volmin", "anchor-max", "anchor-percentile")
SELECTION_METRICS = ("noisy-val-accuracy", "noisy-val-loss")


class ConfigError(ValueError):
    """Raised for any malformed or out-of-schema config content."""


def _int(text: str) -> int:
    return int(text, 10)


def _float(text: str) -> float:
    return float(text)


def _bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _str(text: str) -> str:
    return text


def _choice(*options: str):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {text!r}")
        return text

    return parse


def _int_list(text: str) -> tuple[int, ...]:
    if not text:
        return ()
    return tuple(int(part.strip(), 10) for part in text.split(","))


def _method_list(text: str) -> tuple[str, ...]:
    if not text:
        raise ValueError("need at least one method")
    out = []
    for part in text.split(","):
        name = part.strip()
        if name not in METHODS:
            raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
        if name in out:
            raise ValueError(f"method {name!r} listed twice")
        out.append(name)
    return tuple(out)


def _schedule(text: str) -> tuple[tuple[int, float], ...]:
    if not text:
        return ()
    out = []
    for part in text.split(","):
        epoch_text, _, div_text = part.strip().partition(":")
        if not div_text:
            raise ValueError(f"schedule entry {part.strip()!r} is not epoch:divisor")
        out.append((int(epoch_text, 10), float(div_text)))
    return tuple(out)


# Schema: section -> key -> (parser, default). Defaults are the protocol
# constants; tests assert the load-bearing ones directly.
SCHEMA = {
    "data": {
        "generator": (_choice(*GENERATORS), "simplex"),
        "classes": (_int, 3),
        "n": (_int, 20000),
        "profile": (_choice(*data.SIMPLEX_PROFILES), "edge-scattered"),
        "cap": (_float, 1.0),
        "remove_anchor_fraction": (_float, 0.0),
        "balance": (_bool, False),
        "d": (_int, 0),  # gaussian feature dim; 0 means "same as classes"
        "means_path": (_str, ""),
        "path": (_str, ""),  # CSV input for generator = csv
    },
    "noise": {
        "kind": (_choice(*NOISE_KINDS), "symmetric"),
        "rate": (_float, 0.0),
        "matrix_path": (_str, ""),
    },
    "train": {
        "lam": (_float, trainer.DEFAULT_VOLUME_WEIGHT),
        "epochs": (_int, 150),
        "batch_size": (_int, 128),
        "hidden": (_int_list, (32,)),
        "classifier_lr": (_float, 1e-2),
        "classifier_momentum": (_float, 0.9),
        "classifier_weight_decay": (_float, 1e-3),
        "transition_lr": (_float, 1e-2),
        "lr_schedule": (_schedule, ()),
        "selection_metric": (_choice(*SELECTION_METRICS), "noisy-val-loss"),
        "val_fraction": (_float, 0.1),
    },
    "estimators": {
        "methods": (_method_list, ("volmin", "anchor-max")),
        "alpha": (_float, 3.0),
    },
    "geometry": {
        "rays": (_int, 512),
        "trials": (_int, 10000),
        "coverage_tol": (_float, 1e-8),
        "witness_tol": (_float, 1e-9),
        "anchor_delta": (_float, 0.05),
    },
    "trials": {
        "seeds": (_int_list, DEFAULT_SEEDS),
    },
    "output": {
        "dir": (_str, "out"),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed, schema-complete config plus the raw text it came from."""

    values: dict
    raw: str = ""
    source: str = "<text>"

    def get(self, section: str, key: str):
        return self.values[section][key]

    # -- typed views used by the commands ---------------------------------

    def noise_spec(self) -> noise.NoiseSpec:
        return noise.NoiseSpec(
            kind=self.get("noise", "kind"),
            classes=self.get("data", "classes"),
            rate=self.get("noise", "rate"),
            matrix_path=self.get("noise", "matrix_path") or None,
        )

    def train_config(self, seed: int) -> trainer.TrainConfig:
        t = self.values["train"]
        return trainer.TrainConfig(
            lam=t["lam"],
            epochs=t["epochs"],
            batch_size=t["batch_size"],
            seed=seed,
            hidden=t["hidden"],
            classifier_opt=trainer.sgd(
                t["classifier_lr"],
                momentum=t["classifier_momentum"],
                weight_decay=t["classifier_weight_decay"],
            ),
            transition_opt=trainer.sgd(t["transition_lr"]),
            lr_schedule=t["lr_schedule"],
            selection_metric=t["selection_metric"],
        )

    @property
    def seeds(self) -> tuple[int, ...]:
        return self.get("trials", "seeds")

    @property
    def out_dir(self) -> str:
        return self.get("output", "dir")


def _cross_validate(values: dict, source: str) -> None:
    """Constraints that span keys; reported without line numbers because
    they concern the document as a whole."""
    d = values["data"]
    if d["generator"] == "csv" and not d["path"]:
        raise ConfigError(f"{source}: data.generator = csv requires data.path")
    if not 0.0 <= d["remove_anchor_fraction"] < 1.0:
        raise ConfigError(
            f"{source}: data.remove_anchor_fraction must be in [0, 1), got "
            f"{d['remove_anchor_fraction']!r}"
        )
    if d["classes"] < 2:
        raise ConfigError(f"{source}: data.classes must be >= 2, got {d['classes']}")
    if d["n"] < 1:
        raise ConfigError(f"{source}: data.n must be positive, got {d['n']}")
    if not 0.0 < d["cap"] <= 1.0:
        raise ConfigError(f"{source}: data.cap must be in (0, 1], got {d['cap']!r}")
    if values["noise"]["kind"] == "custom" and not values["noise"]["matrix_path"]:
        raise ConfigError(f"{source}: noise.kind = custom requires noise.matrix_path")
    t = values["train"]
    if not 0.0 < t["val_fraction"] < 1.0:
        raise ConfigError(
            f"{source}: train.val_fraction must be in (0, 1), got {t['val_fraction']!r}"
        )
    if t["epochs"] < 1 or t["batch_size"] < 1:
        raise ConfigError(f"{source}: train.epochs and train.batch_size must be positive")
    e = values["estimators"]
    if not 0.0 < e["alpha"] < 100.0:
        raise ConfigError(
            f"{source}: estimators.alpha must be in (0, 100), got {e['alpha']!r}"
        )
    if not values["trials"]["seeds"]:
        raise ConfigError(f"{source}: trials.seeds must list at least one seed")
    if len(set(values["trials"]["seeds"])) != len(values["trials"]["seeds"]):
        raise ConfigError(f"{source}: trials.seeds contains a repeated seed")


def parse_config(text: str, source: str = "<text>") -> ExperimentConfig:
    """Parse and fully validate a config document. Unknown sections or keys,
    duplicate assignments, and malformed values are all rejected with the
    offending line number."""
    values = {section: dict() for section in SCHEMA}
    seen = set()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        name, eq, value_text = (part.strip() for part in line.partition("="))
        if not eq:
            raise ConfigError(f"{source}:{lineno}: expected `section.key = value`")
        section, dot, key = name.partition(".")
        if not dot or not section or not key:
            raise ConfigError(
                f"{source}:{lineno}: expected a dotted `section.key` name, got {name!r}"
            )
        if section not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown section {section!r}")
        if key not in SCHEMA[section]:
            raise ConfigError(
                f"{source}:{lineno}: unknown key {key!r} in section {section!r}"
            )
        if (section, key) in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {section}.{key}")
        seen.add((section, key))
        parse, _ = SCHEMA[section][key]
        try:
            values[section][key] = parse(value_text)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {section}.{key}: {exc}")
    for section, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            values[section].setdefault(key, default)
    _cross_validate(values, source)
    return ExperimentConfig(values=values, raw=text, source=source)


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}")
    return parse_config(text, source=str(p))


def default_config() -> ExperimentConfig:
    """The all-defaults config; equivalent to parsing an empty document."""
    return parse_config("")
