"""Parsing helpers for model output that is supposed to be JSON."""

from __future__ import annotations

import json
import re
from typing import Sequence

from .errors import ResponseParseError
from .gateway import ChatMessage, Gateway

_FENCE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)


def parse_json_payload(raw: str) -> object:
    """Parse bare JSON or, failing that, the first fenced code block."""
    candidates = [raw.strip()]
    fenced = _FENCE.search(raw)
    if fenced:
        candidates.append(fenced.group(1).strip())
    for candidate in candidates:
        try:
            return json.loads(candidate)
        except json.JSONDecodeError:
            continue
    raise ResponseParseError("no parseable JSON in model output", raw)


def complete_json(
    gateway: Gateway,
    messages: Sequence[ChatMessage],
    temperature: float = 0.0,
) -> tuple[object, str]:
    """One completion parsed as JSON, with a single automatic repair retry."""
    raw = gateway.complete(messages, temperature=temperature)
    try:
        return parse_json_payload(raw), raw
    except ResponseParseError:
        repair = list(messages) + [
            ChatMessage("assistant", raw),
            ChatMessage("user", "Respond with valid JSON only."),
        ]
        raw_retry = gateway.complete(repair, temperature=temperature)
        return parse_json_payload(raw_retry), raw_retry
