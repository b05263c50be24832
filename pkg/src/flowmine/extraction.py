"""Workflow generation strategies over selected conversations.

Six strategy chains, each a fixed sequence of gateway calls:

===============  =====================================================  =====
kind             chain                                                  calls
===============  =====================================================  =====
basic            generate                                               1
plan             plan, generate-from-plan                               2
reflect          generate, critique, regenerate                         3
ensemble         4 shuffled candidates, merge                           5
qa_cot (single)  whole QA discussion in one pass, extract               2
qa_cot (multi)   alternating guide/implementer calls, extract           varies
qa_cot_reflect   QA discussion, correct it, extract                     +1
===============  =====================================================  =====

Conversations are shuffled by ``order_seed`` before prompt assembly, so the
prompt text (and with it every fixture digest) is a pure function of the
inputs.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Conversation, render_conversation
from .errors import ResponseParseError
from .gateway import ChatMessage, Gateway
from .prompts import load_template

logger = logging.getLogger(__name__)

STRATEGY_KINDS = ("basic", "reflect", "plan", "ensemble", "qa_cot", "qa_cot_reflect")

QA_MODES = ("single_pass", "multi_turn")

MAX_QA_EXCHANGES = 25

QA_STOP_TOKEN = "NO FURTHER QUESTIONS"

_TURN_LABEL = re.compile(r"^(Guide|Implementer):\s*(.*)$")


@dataclass(frozen=True)
class Strategy:
    kind: str
    qa_mode: str | None = None
    ensemble_width: int = 4
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        needs_mode = self.kind in ("qa_cot", "qa_cot_reflect")
        if needs_mode and self.qa_mode not in QA_MODES:
            raise ValueError(f"strategy {self.kind!r} requires qa_mode of {QA_MODES}")
        if not needs_mode and self.qa_mode is not None:
            raise ValueError(f"strategy {self.kind!r} does not take a qa_mode")
        if self.ensemble_width < 1:
            raise ValueError("ensemble_width must be positive")

    def describe(self) -> str:
        return f"{self.kind}:{self.qa_mode}" if self.qa_mode else self.kind


@dataclass(frozen=True)
class QATurn:
    role: str
    text: str

    def __post_init__(self) -> None:
        if self.role not in ("guide", "implementer"):
            raise ValueError(f"unknown QA role {self.role!r}")


@dataclass(frozen=True)
class QATranscript:
    turns: tuple[QATurn, ...]
    mode: str
    turn_cap_hit: bool = False

    def __post_init__(self) -> None:
        if self.mode not in QA_MODES:
            raise ValueError(f"unknown qa mode {self.mode!r}")
        if len(self.turns) > 2 * MAX_QA_EXCHANGES:
            raise ValueError(f"transcript exceeds {2 * MAX_QA_EXCHANGES} messages")
        if self.mode == "multi_turn":
            for i, turn in enumerate(self.turns):
                expected = "guide" if i % 2 == 0 else "implementer"
                if turn.role != expected:
                    raise ValueError(f"turn {i} should be {expected}, got {turn.role}")

    def render(self) -> str:
        return "\n".join(f"{t.role.capitalize()}: {t.text}" for t in self.turns)

    def exchanges(self) -> int:
        return len(self.turns) // 2

    def to_record(self) -> dict:
        return {
            "mode": self.mode,
            "turn_cap_hit": self.turn_cap_hit,
            "turns": [{"role": t.role, "text": t.text} for t in self.turns],
        }


@dataclass(frozen=True)
class WorkflowArtifact:
    intent: str
    text: str
    strategy: Strategy
    source_conversation_ids: tuple[str, ...]
    order_seed: int
    qa_transcript: QATranscript | None = None
    intermediate_outputs: tuple[tuple[str, str], ...] = ()
    prompt_hashes: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ResponseParseError("workflow text is empty", self.text)

    def intermediates(self) -> dict[str, str]:
        return dict(self.intermediate_outputs)

    def to_record(self) -> dict:
        return {
            "intent": self.intent,
            "text": self.text,
            "strategy": {
                "kind": self.strategy.kind,
                "qa_mode": self.strategy.qa_mode,
                "ensemble_width": self.strategy.ensemble_width,
                "temperature": self.strategy.temperature,
            },
            "source_conversation_ids": list(self.source_conversation_ids),
            "order_seed": self.order_seed,
            "qa_transcript": self.qa_transcript.to_record() if self.qa_transcript else None,
            "intermediate_outputs": dict(self.intermediate_outputs),
            "prompt_hashes": dict(self.prompt_hashes),
        }


def shuffled_conversations(convs: list[Conversation], seed: int | str) -> list[Conversation]:
    order = list(convs)
    random.Random(seed).shuffle(order)
    return order


def conversations_block(convs: list[Conversation]) -> str:
    parts = [f"Conversation {i}:\n{render_conversation(c)}" for i, c in enumerate(convs, start=1)]
    return "\n\n".join(parts)


def parse_qa_discussion(raw: str, mode: str, turn_cap_hit: bool = False) -> QATranscript:
    """Split a discussion on line-leading ``Guide:``/``Implementer:`` labels.

    Continuation lines attach to the current turn; preamble before the first
    label is dropped with a warning. Output with no labels at all is an
    error carrying the raw text.
    """
    turns: list[QATurn] = []
    current_role: str | None = None
    current_lines: list[str] = []

    def flush() -> None:
        if current_role is not None:
            turns.append(QATurn(current_role, "\n".join(current_lines).strip()))

    dropped = False
    for line in raw.splitlines():
        match = _TURN_LABEL.match(line.strip())
        if match:
            flush()
            current_role = match.group(1).lower()
            current_lines = [match.group(2)]
        elif current_role is not None:
            current_lines.append(line)
        elif line.strip():
            dropped = True
    flush()
    if dropped:
        logger.warning("discarded unlabeled preamble in QA discussion")
    if not turns:
        raise ResponseParseError("no Guide:/Implementer: turns found in discussion", raw)
    return QATranscript(turns=tuple(turns), mode=mode, turn_cap_hit=turn_cap_hit)


def simulate_qa_dialogue(
    convs: list[Conversation],
    mode: str,
    gateway: Gateway,
    temperature: float = 0.0,
) -> tuple[QATranscript, str]:
    """Run the guide/implementer discussion; returns (transcript, raw text).

    single_pass: one call produces the whole discussion, which is parsed.
    multi_turn: alternating role-conditioned calls until the guide emits the
    stop token or 25 exchanges complete; the stop message is not kept.
    """
    if not convs:
        raise ValueError("cannot run a QA dialogue with no conversations")
    if mode not in QA_MODES:
        raise ValueError(f"unknown qa mode {mode!r}")
    convs_text = conversations_block(convs)

    if mode == "single_pass":
        prompt = load_template("qa_cot").render(convs=convs_text)
        raw = gateway.complete([ChatMessage("user", prompt)], temperature=temperature)
        return parse_qa_discussion(raw, mode), raw

    guide_tpl = load_template("qa_guide_turn")
    impl_tpl = load_template("qa_implementer_turn")
    turns: list[QATurn] = []
    cap_hit = True
    for _ in range(MAX_QA_EXCHANGES):
        discussion = "\n".join(f"{t.role.capitalize()}: {t.text}" for t in turns) or "(none yet)"
        question = gateway.complete(
            [ChatMessage("user", guide_tpl.render(convs=convs_text, discussion=discussion))],
            temperature=temperature,
        ).strip()
        if QA_STOP_TOKEN in question:
            cap_hit = False
            break
        turns.append(QATurn("guide", question))
        answer = gateway.complete(
            [
                ChatMessage(
                    "user",
                    impl_tpl.render(convs=convs_text, discussion=discussion, question=question),
                )
            ],
            temperature=temperature,
        ).strip()
        turns.append(QATurn("implementer", answer))
    transcript = QATranscript(turns=tuple(turns), mode=mode, turn_cap_hit=cap_hit)
    return transcript, transcript.render()


def reflect_qa_transcript(
    transcript: QATranscript,
    convs: list[Conversation],
    gateway: Gateway,
    raw_discussion: str | None = None,
    temperature: float = 0.0,
) -> tuple[QATranscript, str]:
    """One correction pass over a QA discussion; returns (transcript, raw)."""
    if not transcript.turns:
        raise ValueError("cannot reflect on an empty transcript")
    discussion = raw_discussion if raw_discussion is not None else transcript.render()
    prompt = load_template("qa_reflect").render(
        convs=conversations_block(convs), discussion=discussion
    )
    corrected = gateway.complete([ChatMessage("user", prompt)], temperature=temperature)
    parsed = parse_qa_discussion(corrected, transcript.mode, transcript.turn_cap_hit)
    return parsed, corrected


def generate_workflow(
    convs: list[Conversation],
    strategy: Strategy,
    gateway: Gateway,
    order_seed: int,
) -> WorkflowArtifact:
    """Run one strategy chain end to end and package every intermediate."""
    if not convs:
        raise ValueError("cannot generate a workflow from zero conversations")
    ordered = shuffled_conversations(convs, order_seed)
    convs_text = conversations_block(ordered)
    temp = strategy.temperature
    intermediates: dict[str, str] = {}
    used_templates: list[str] = []
    qa_transcript: QATranscript | None = None

    def ask(template: str, **values: str) -> str:
        used_templates.append(template)
        prompt = load_template(template).render(**values)
        return gateway.complete([ChatMessage("user", prompt)], temperature=temp)

    if strategy.kind == "basic":
        text = ask("basic", convs=convs_text)

    elif strategy.kind == "plan":
        plan = ask("plan", convs=convs_text)
        intermediates["plan"] = plan
        text = ask("plan_generate", convs=convs_text, plan=plan)

    elif strategy.kind == "reflect":
        draft = ask("basic", convs=convs_text)
        intermediates["draft"] = draft
        feedback = ask("reflect_feedback", convs=convs_text, workflow=draft)
        intermediates["feedback"] = feedback
        text = ask("reflect_regenerate", convs=convs_text, workflow=draft, feedback=feedback)

    elif strategy.kind == "ensemble":
        if strategy.ensemble_width != 4:
            raise ValueError("the bundled merge prompt consolidates exactly 4 candidates")
        candidates = []
        for i in range(strategy.ensemble_width):
            sub_order = shuffled_conversations(convs, f"{order_seed}/{i}")
            candidate = ask("basic", convs=conversations_block(sub_order))
            intermediates[f"candidate_{i + 1}"] = candidate
            candidates.append(candidate)
        text = ask(
            "ensemble_merge",
            wf1=candidates[0],
            wf2=candidates[1],
            wf3=candidates[2],
            wf4=candidates[3],
            convs=convs_text,
        )

    elif strategy.kind in ("qa_cot", "qa_cot_reflect"):
        assert strategy.qa_mode is not None
        qa_transcript, raw_discussion = simulate_qa_dialogue(
            ordered, strategy.qa_mode, gateway, temperature=temp
        )
        used_templates.append("qa_cot" if strategy.qa_mode == "single_pass" else "qa_guide_turn")
        if strategy.qa_mode == "multi_turn":
            used_templates.append("qa_implementer_turn")
        intermediates["qa_raw"] = raw_discussion
        discussion = raw_discussion
        if strategy.kind == "qa_cot_reflect":
            qa_transcript, discussion = reflect_qa_transcript(
                qa_transcript, ordered, gateway, raw_discussion=raw_discussion, temperature=temp
            )
            used_templates.append("qa_reflect")
            intermediates["qa_corrected"] = discussion
        text = ask("qa_extraction", convs=convs_text, discussion=discussion)

    else:  # pragma: no cover - kinds are validated in Strategy
        raise AssertionError(strategy.kind)

    hashes = tuple(
        sorted({name: load_template(name).sha256 for name in used_templates}.items())
    )
    return WorkflowArtifact(
        intent=ordered[0].intent_label,
        text=text,
        strategy=strategy,
        source_conversation_ids=tuple(c.id for c in ordered),
        order_seed=order_seed,
        qa_transcript=qa_transcript,
        intermediate_outputs=tuple(intermediates.items()),
        prompt_hashes=hashes,
    )


def save_artifact(artifact: WorkflowArtifact, directory: str | Path, stem: str) -> tuple[Path, Path]:
    """Persist the artifact JSON plus the workflow text for human review."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    json_path = directory / f"{stem}.json"
    text_path = directory / f"{stem}.txt"
    with json_path.open("w", encoding="utf-8") as handle:
        json.dump(artifact.to_record(), handle, sort_keys=True, indent=2)
        handle.write("\n")
    text_path.write_text(artifact.text + "\n", encoding="utf-8")
    return json_path, text_path
