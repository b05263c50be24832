"""Procedural elements mined from one conversation: intent, slot values,
resolution steps. These feed the embedding text used by retrieval."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Conversation, render_conversation
from .errors import ResponseParseError, SchemaViolationError
from .gateway import ChatMessage, Gateway
from .parsing import parse_json_payload
from .prompts import load_template

logger = logging.getLogger(__name__)

INTENT_LENGTH_GUIDELINE = 50


@dataclass(frozen=True)
class ProceduralElements:
    intent: str
    slot_values: tuple[tuple[str, str], ...]
    resolution_steps: tuple[str, ...]
    raw: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        keys = [k for k, _ in self.slot_values]
        if len(keys) != len(set(keys)):
            raise SchemaViolationError("slot_values", "duplicate slot keys")
        for step in self.resolution_steps:
            if not step.strip():
                raise SchemaViolationError("resolution_steps", "contains an empty step")
        if len(self.intent) > INTENT_LENGTH_GUIDELINE:
            logger.warning("intent exceeds %d characters: %r", INTENT_LENGTH_GUIDELINE, self.intent)

    def slots(self) -> dict[str, str]:
        return dict(self.slot_values)

    def to_record(self) -> dict:
        return {
            "intent": self.intent,
            "slot_values": {k: v for k, v in self.slot_values},
            "resolution_steps": list(self.resolution_steps),
        }


def _stringify(value: object) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, separators=(",", ":"), ensure_ascii=False)


def parse_elements_json(raw: str) -> ProceduralElements:
    """Parse model output into elements.

    Accepts bare JSON or, failing that, the first fenced code block. Missing
    or ill-typed required keys raise :class:`SchemaViolationError` naming the
    key; output with no parseable JSON raises :class:`ResponseParseError`
    carrying the raw text.
    """
    data = parse_json_payload(raw)
    if not isinstance(data, dict):
        raise ResponseParseError("model output is not a JSON object", raw)

    if "intent" not in data or not isinstance(data["intent"], str):
        raise SchemaViolationError("intent", "missing or not a string")
    if "slot_values" not in data or not isinstance(data["slot_values"], dict):
        raise SchemaViolationError("slot_values", "missing or not an object")
    if "resolution_steps" not in data or not isinstance(data["resolution_steps"], list):
        raise SchemaViolationError("resolution_steps", "missing or not a list")
    steps = []
    for step in data["resolution_steps"]:
        if not isinstance(step, str):
            raise SchemaViolationError("resolution_steps", "contains a non-string step")
        steps.append(step)
    slots = tuple((str(k), _stringify(v)) for k, v in data["slot_values"].items())
    return ProceduralElements(
        intent=data["intent"],
        slot_values=slots,
        resolution_steps=tuple(steps),
        raw=raw,
    )


def extract_elements(conv: Conversation, gateway: Gateway) -> ProceduralElements:
    """Mine elements from one conversation through the gateway.

    One automatic repair retry on parse failure; a second failure surfaces
    the raw output rather than fabricating a default object.
    """
    prompt = load_template("element_extraction").render(conversation=render_conversation(conv))
    messages = [ChatMessage("user", prompt)]
    raw = gateway.complete(messages)
    try:
        return parse_elements_json(raw)
    except (ResponseParseError, SchemaViolationError):
        repair = messages + [
            ChatMessage("assistant", raw),
            ChatMessage("user", "Respond with valid JSON only."),
        ]
        raw_retry = gateway.complete(repair)
        return parse_elements_json(raw_retry)


def canonical_text(elems: ProceduralElements) -> str:
    """Deterministic embedding text: intent line, slot lines sorted by key,
    then numbered steps in their original (load-bearing) order."""
    lines = [f"Intent: {elems.intent}"]
    slots = dict(elems.slot_values)
    for key in sorted(slots):
        lines.append(f"{key}: {slots[key]}")
    for i, step in enumerate(elems.resolution_steps, start=1):
        lines.append(f"{i}. {step}")
    return "\n".join(lines)


def elements_from_record(record: dict, raw: str = "") -> ProceduralElements:
    return ProceduralElements(
        intent=record["intent"],
        slot_values=tuple((k, v) for k, v in record["slot_values"].items()),
        resolution_steps=tuple(record["resolution_steps"]),
        raw=raw,
    )


def save_elements(elems: ProceduralElements, directory: str | Path, conversation_id: str) -> Path:
    """Write the JSON sidecar ``<directory>/<conversation_id>.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{conversation_id}.json"
    with path.open("w", encoding="utf-8") as handle:
        json.dump(elems.to_record(), handle, sort_keys=True, indent=2)
        handle.write("\n")
    return path


def load_elements(directory: str | Path, conversation_id: str) -> ProceduralElements:
    path = Path(directory) / f"{conversation_id}.json"
    with path.open("r", encoding="utf-8") as handle:
        return elements_from_record(json.load(handle))
