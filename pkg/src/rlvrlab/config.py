"""Experiment configuration: a flat, sectioned key/value file.

INI syntax with explicit types per key. Unknown sections or keys are
rejected so typos cannot silently fall back to defaults, and every run
writes a ``resolved-config.ini`` with all defaults materialized, which is
sufficient (together with the seed it contains) to reproduce every artifact
byte for byte.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, replace
from pathlib import Path

from .objectives import Algorithm, ObjectiveConfig
from .policy import InitScheme
from .tasks import TaskKind, TaskSpec
from .trainer import SUITE_ALGORITHMS, OptimizerKind, TrainConfig

CONFIG_SCHEMA = "rlvrlab-config-v1"


class ConfigError(Exception):
    """Invalid experiment configuration (unknown keys, bad values)."""


@dataclass
class ExperimentConfig:
    train: TrainConfig
    output_dir: Path | None = None
    suite_algorithms: tuple[Algorithm, ...] = SUITE_ALGORITHMS


def default_experiment_config() -> ExperimentConfig:
    task = TaskSpec(TaskKind.MULTI_SUM, vocab_size=5, seq_len=3, modulus=5)
    objective = ObjectiveConfig.default_for(Algorithm.REINFORCE)
    return ExperimentConfig(train=TrainConfig(task=task, objective=objective))


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_k_list(raw: str) -> tuple[int, ...]:
    ks = tuple(int(part) for part in raw.replace(" ", "").split(",") if part)
    if not ks or any(k < 1 for k in ks):
        raise ValueError(f"k_list must be positive integers, got {raw!r}")
    return ks


def _parse_algorithms(raw: str) -> tuple[Algorithm, ...]:
    names = [part for part in raw.replace(" ", "").split(",") if part]
    if not names:
        raise ValueError("algorithms list is empty")
    return tuple(Algorithm(name) for name in names)


# (section, key) -> value parser; membership defines the legal key set.
_PARSERS = {
    ("run", "seed"): int,
    ("run", "output_dir"): str,
    ("task", "kind"): TaskKind,
    ("task", "vocab_size"): int,
    ("task", "seq_len"): int,
    ("task", "modulus"): int,
    ("policy", "init"): InitScheme,
    ("policy", "bias_strength"): float,
    ("objective", "algorithm"): Algorithm,
    ("objective", "lambda"): float,
    ("objective", "clip_epsilon"): float,
    ("objective", "kl_beta"): float,
    ("objective", "entropy_coef"): float,
    ("objective", "advantage_normalization"): _parse_bool,
    ("trainer", "prompt_count"): int,
    ("trainer", "prompts_per_step"): int,
    ("trainer", "group_size"): int,
    ("trainer", "mini_batch_size"): int,
    ("trainer", "steps"): int,
    ("trainer", "learning_rate"): float,
    ("trainer", "optimizer"): OptimizerKind,
    ("trainer", "gradient_epochs"): int,
    ("trainer", "train_temperature"): float,
    ("trainer", "checkpoint_cadence"): int,
    ("evaluation", "temperature"): float,
    ("evaluation", "samples"): int,
    ("evaluation", "k_list"): _parse_k_list,
    ("evaluation", "cadence"): int,
    ("suite", "algorithms"): _parse_algorithms,
}


def _read_ini(path: Path) -> dict[tuple[str, str], object]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config file {path}: {exc}") from exc
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file: {exc}") from exc
    values: dict[tuple[str, str], object] = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            spot = (section, key)
            if spot not in _PARSERS:
                raise ConfigError(f"unknown config key [{section}] {key}")
            try:
                values[spot] = _PARSERS[spot](raw)
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {exc}") from exc
    return values


def parse_config(path: Path | str) -> ExperimentConfig:
    """Load and validate a config file, materializing all defaults."""
    values = _read_ini(Path(path))
    base = default_experiment_config()
    train = base.train

    kind = values.get(("task", "kind"), train.task.kind)
    vocab = values.get(("task", "vocab_size"), train.task.vocab_size)
    seq_len = values.get(("task", "seq_len"), train.task.seq_len)
    if ("task", "modulus") in values:
        modulus = values[("task", "modulus")]
    elif kind is TaskKind.MULTI_SUM:
        modulus = vocab  # densest reachable default: one residue per token
    else:
        modulus = None
    task = TaskSpec(kind=kind, vocab_size=vocab, seq_len=seq_len, modulus=modulus)

    algorithm = values.get(("objective", "algorithm"), Algorithm.REINFORCE)
    overrides = {}
    if ("objective", "lambda") in values:
        overrides["lam"] = values[("objective", "lambda")]
    if ("objective", "clip_epsilon") in values:
        overrides["clip_epsilon"] = values[("objective", "clip_epsilon")]
    if ("objective", "kl_beta") in values:
        overrides["kl_beta"] = values[("objective", "kl_beta")]
    if ("objective", "entropy_coef") in values:
        overrides["entropy_coef"] = values[("objective", "entropy_coef")]
    if ("objective", "advantage_normalization") in values:
        overrides["advantage_normalization"] = values[
            ("objective", "advantage_normalization")
        ]
    try:
        objective = ObjectiveConfig.default_for(algorithm, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    train = replace(
        train,
        task=task,
        objective=objective,
        seed=values.get(("run", "seed"), train.seed),
        init_scheme=values.get(("policy", "init"), train.init_scheme),
        bias_strength=values.get(("policy", "bias_strength"), train.bias_strength),
        prompt_count=values.get(("trainer", "prompt_count"), train.prompt_count),
        prompts_per_step=values.get(
            ("trainer", "prompts_per_step"), train.prompts_per_step
        ),
        group_size=values.get(("trainer", "group_size"), train.group_size),
        mini_batch_size=values.get(
            ("trainer", "mini_batch_size"), train.mini_batch_size
        ),
        steps=values.get(("trainer", "steps"), train.steps),
        learning_rate=values.get(("trainer", "learning_rate"), train.learning_rate),
        optimizer=values.get(("trainer", "optimizer"), train.optimizer),
        gradient_epochs=values.get(
            ("trainer", "gradient_epochs"), train.gradient_epochs
        ),
        train_temperature=values.get(
            ("trainer", "train_temperature"), train.train_temperature
        ),
        checkpoint_cadence=values.get(
            ("trainer", "checkpoint_cadence"), train.checkpoint_cadence
        ),
        eval_temperature=values.get(
            ("evaluation", "temperature"), train.eval_temperature
        ),
        eval_samples=values.get(("evaluation", "samples"), train.eval_samples),
        k_list=values.get(("evaluation", "k_list"), train.k_list),
        eval_cadence=values.get(("evaluation", "cadence"), train.eval_cadence),
    )
    try:
        train.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    output_dir = values.get(("run", "output_dir"))
    return ExperimentConfig(
        train=train,
        output_dir=Path(output_dir) if output_dir else None,
        suite_algorithms=values.get(("suite", "algorithms"), SUITE_ALGORITHMS),
    )


def render_config(config: ExperimentConfig) -> str:
    """Canonical INI text with every key materialized; byte-stable for a
    given config, so resolved-config files are reproducible."""
    train = config.train
    obj = train.objective
    buf = io.StringIO()
    buf.write(f"# {CONFIG_SCHEMA}\n")

    def section(name: str, pairs: list[tuple[str, object]]):
        buf.write(f"[{name}]\n")
        for key, value in pairs:
            buf.write(f"{key} = {value}\n")
        buf.write("\n")

    section(
        "run",
        [("seed", train.seed)]
        + ([("output_dir", config.output_dir)] if config.output_dir else []),
    )
    task_pairs = [
        ("kind", train.task.kind.value),
        ("vocab_size", train.task.vocab_size),
        ("seq_len", train.task.seq_len),
    ]
    if train.task.modulus is not None:
        task_pairs.append(("modulus", train.task.modulus))
    section("task", task_pairs)
    section(
        "policy",
        [
            ("init", train.init_scheme.value),
            ("bias_strength", repr(train.bias_strength)),
        ],
    )
    section(
        "objective",
        [
            ("algorithm", obj.algorithm.value),
            ("lambda", repr(obj.lam)),
            ("clip_epsilon", repr(obj.clip_epsilon)),
            ("kl_beta", repr(obj.kl_beta)),
            ("entropy_coef", repr(obj.entropy_coef)),
            ("advantage_normalization", str(obj.advantage_normalization).lower()),
        ],
    )
    section(
        "trainer",
        [
            ("prompt_count", train.prompt_count),
            ("prompts_per_step", train.prompts_per_step),
            ("group_size", train.group_size),
            ("mini_batch_size", train.mini_batch_size),
            ("steps", train.steps),
            ("learning_rate", repr(train.learning_rate)),
            ("optimizer", train.optimizer.value),
            ("gradient_epochs", train.gradient_epochs),
            ("train_temperature", repr(train.train_temperature)),
            ("checkpoint_cadence", train.checkpoint_cadence),
        ],
    )
    section(
        "evaluation",
        [
            ("temperature", repr(train.eval_temperature)),
            ("samples", train.eval_samples),
            ("k_list", ",".join(str(k) for k in train.k_list)),
            ("cadence", train.eval_cadence),
        ],
    )
    section(
        "suite",
        [("algorithms", ",".join(a.value for a in config.suite_algorithms))],
    )
    return buf.getvalue()
