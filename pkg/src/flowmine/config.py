"""Experiment configuration: TOML in, validated dataclasses out.

Every default is echoed into the snapshot so no run depends on a hidden
value; the snapshot (minus the output section) is hashed into the run id,
so two configs that resolve to the same work share an id.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli  # type: ignore[no-redef]

from .errors import ConfigError
from .extraction import QA_MODES, STRATEGY_KINDS
from .gateway import canonical_json

RETRIEVAL_STRATEGIES = ("proc_sim", "conv_sim", "proc_div", "random")

GATEWAY_MODES = ("live", "record", "replay")

SUBFLOW_SOURCES = ("graph", "llm")

EVALUATOR_NAMES = ("qa_based", "embedding", "edit_distance", "step_accuracy", "likert")

_SECTION_KEYS = {
    "corpus": {"path", "intents"},
    "retrieval": {"strategy", "k", "seed"},
    "generation": {"strategy", "qa_mode", "ensemble_width", "temperature", "order_seeds"},
    "evaluation": {"gt_workflows_path", "turn_cap", "evaluators", "subflow_source"},
    "gateway": {"mode", "fixture_dir", "endpoint", "chat_model", "embedding_model", "parallelism"},
    "output": {"dir"},
}


@dataclass(frozen=True)
class RetrievalConfig:
    strategy: str = "proc_sim"
    k: int = 6
    seed: int = 17

    def __post_init__(self) -> None:
        if self.strategy not in RETRIEVAL_STRATEGIES:
            raise ConfigError(f"retrieval.strategy must be one of {RETRIEVAL_STRATEGIES}")
        if self.k < 1:
            raise ConfigError("retrieval.k must be positive")


@dataclass(frozen=True)
class GenerationConfig:
    strategy: str = "basic"
    qa_mode: str | None = None
    ensemble_width: int = 4
    temperature: float = 0.0
    order_seeds: tuple[int, ...] = (101, 202)

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGY_KINDS:
            raise ConfigError(f"generation.strategy must be one of {STRATEGY_KINDS}")
        if self.qa_mode is not None and self.qa_mode not in QA_MODES:
            raise ConfigError(f"generation.qa_mode must be one of {QA_MODES}")
        if not self.order_seeds:
            raise ConfigError("generation.order_seeds must be non-empty")


@dataclass(frozen=True)
class EvaluationConfig:
    gt_workflows_path: Path
    turn_cap: int = 30
    evaluators: tuple[str, ...] = ()
    subflow_source: str = "graph"

    def __post_init__(self) -> None:
        if self.turn_cap < 2:
            raise ConfigError("evaluation.turn_cap must be at least 2")
        if self.subflow_source not in SUBFLOW_SOURCES:
            raise ConfigError(f"evaluation.subflow_source must be one of {SUBFLOW_SOURCES}")
        for name in self.evaluators:
            if name not in EVALUATOR_NAMES:
                raise ConfigError(f"unknown evaluator {name!r}")


@dataclass(frozen=True)
class GatewayConfig:
    mode: str
    fixture_dir: Path
    endpoint: str | None = None
    chat_model: str = "chat-default"
    embedding_model: str = "embed-default"
    parallelism: int = 4

    def __post_init__(self) -> None:
        if self.mode not in GATEWAY_MODES:
            raise ConfigError(f"gateway.mode must be one of {GATEWAY_MODES}")
        if self.mode == "replay" and self.endpoint:
            raise ConfigError("replay mode forbids live endpoints")
        if self.mode == "live" and not self.endpoint:
            raise ConfigError("live mode requires gateway.endpoint")
        if self.parallelism < 1:
            raise ConfigError("gateway.parallelism must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    corpus_path: Path
    intents: tuple[str, ...] | str
    retrieval: RetrievalConfig
    generation: GenerationConfig
    evaluation: EvaluationConfig
    gateway: GatewayConfig
    output_dir: Path
    snapshot: dict

    def __post_init__(self) -> None:
        if isinstance(self.intents, str) and self.intents != "all":
            raise ConfigError('corpus.intents must be "all" or a list of intent labels')

    def run_id(self) -> str:
        return run_id_for(self.snapshot)


def run_id_for(snapshot: dict) -> str:
    hashed = {k: v for k, v in snapshot.items() if k != "output"}
    return hashlib.sha256(canonical_json(hashed).encode("utf-8")).hexdigest()[:12]


def _parse_override(text: str) -> tuple[tuple[str, ...], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, _, raw_value = text.partition("=")
    dotted = tuple(part.strip() for part in key.split("."))
    if len(dotted) != 2 or not all(dotted):
        raise ConfigError(f"override key {key!r} must be section.key")
    try:
        value = tomli.loads(f"v = {raw_value}")["v"]
    except tomli.TOMLDecodeError:
        value = raw_value
    return dotted, value


def _check_sections(data: dict) -> None:
    for section, content in data.items():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(content, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key in content:
            if key not in _SECTION_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")


def _snapshot(data: dict) -> dict:
    """The fully explicit view of the config: file values over defaults."""
    corpus = data.get("corpus", {})
    retrieval = data.get("retrieval", {})
    generation = data.get("generation", {})
    evaluation = data.get("evaluation", {})
    gateway = data.get("gateway", {})
    output = data.get("output", {})
    return {
        "corpus": {
            "path": corpus.get("path", ""),
            "intents": corpus.get("intents", "all"),
        },
        "retrieval": {
            "strategy": retrieval.get("strategy", "proc_sim"),
            "k": retrieval.get("k", 6),
            "seed": retrieval.get("seed", 17),
        },
        "generation": {
            "strategy": generation.get("strategy", "basic"),
            "qa_mode": generation.get("qa_mode", ""),
            "ensemble_width": generation.get("ensemble_width", 4),
            "temperature": generation.get("temperature", 0.0),
            "order_seeds": list(generation.get("order_seeds", [101, 202])),
        },
        "evaluation": {
            "gt_workflows_path": evaluation.get("gt_workflows_path", ""),
            "turn_cap": evaluation.get("turn_cap", 30),
            "evaluators": list(evaluation.get("evaluators", [])),
            "subflow_source": evaluation.get("subflow_source", "graph"),
        },
        "gateway": {
            "mode": gateway.get("mode", "replay"),
            "fixture_dir": gateway.get("fixture_dir", ""),
            "endpoint": gateway.get("endpoint", ""),
            "chat_model": gateway.get("chat_model", "chat-default"),
            "embedding_model": gateway.get("embedding_model", "embed-default"),
            "parallelism": gateway.get("parallelism", 4),
        },
        "output": {"dir": output.get("dir", "runs_out")},
    }


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    """Parse, apply overrides, validate, and resolve paths.

    Relative paths are resolved against the config file's directory; the
    snapshot keeps them as written so run ids are machine-independent.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = tomli.loads(path.read_text(encoding="utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    for override in overrides or []:
        (section, key), value = _parse_override(override)
        data.setdefault(section, {})[key] = value
    _check_sections(data)
    snapshot = _snapshot(data)

    base = path.resolve().parent

    def resolve(value: str, name: str) -> Path:
        if not value:
            raise ConfigError(f"{name} is required")
        candidate = Path(value)
        return candidate if candidate.is_absolute() else base / candidate

    corpus = snapshot["corpus"]
    intents = corpus["intents"]
    if isinstance(intents, list):
        if not all(isinstance(i, str) and i for i in intents):
            raise ConfigError("corpus.intents entries must be non-empty strings")
        intents = tuple(intents)
    elif intents != "all":
        raise ConfigError('corpus.intents must be "all" or a list of intent labels')

    generation = snapshot["generation"]
    seeds = generation["order_seeds"]
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("generation.order_seeds must be a list of integers")

    return ExperimentConfig(
        corpus_path=resolve(corpus["path"], "corpus.path"),
        intents=intents,
        retrieval=RetrievalConfig(
            strategy=snapshot["retrieval"]["strategy"],
            k=snapshot["retrieval"]["k"],
            seed=snapshot["retrieval"]["seed"],
        ),
        generation=GenerationConfig(
            strategy=generation["strategy"],
            qa_mode=generation["qa_mode"] or None,
            ensemble_width=generation["ensemble_width"],
            temperature=float(generation["temperature"]),
            order_seeds=tuple(seeds),
        ),
        evaluation=EvaluationConfig(
            gt_workflows_path=resolve(
                snapshot["evaluation"]["gt_workflows_path"], "evaluation.gt_workflows_path"
            ),
            turn_cap=snapshot["evaluation"]["turn_cap"],
            evaluators=tuple(snapshot["evaluation"]["evaluators"]),
            subflow_source=snapshot["evaluation"]["subflow_source"],
        ),
        gateway=GatewayConfig(
            mode=snapshot["gateway"]["mode"],
            fixture_dir=resolve(snapshot["gateway"]["fixture_dir"], "gateway.fixture_dir"),
            endpoint=snapshot["gateway"]["endpoint"] or None,
            chat_model=snapshot["gateway"]["chat_model"],
            embedding_model=snapshot["gateway"]["embedding_model"],
            parallelism=snapshot["gateway"]["parallelism"],
        ),
        output_dir=resolve(snapshot["output"]["dir"], "output.dir"),
        snapshot=snapshot,
    )
