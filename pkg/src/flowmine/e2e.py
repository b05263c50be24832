"""Five-stage end-to-end workflow evaluation.

1. Decompose the ground-truth workflow into sub-flows (``subflow`` module).
2. Map each sub-flow to the user information a customer could supply and the
   system information the agent can look up.
3. Attach the success criteria the dialog must meet.
4. Simulate a customer bot against an agent bot that follows the predicted
   workflow. The customer opens; the agent ends the dialog with DONE.
5. Judge each transcript against the criteria and aggregate macro accuracy
   (mean of per-intent sub-flow success rates), micro accuracy (pooled), and
   the average utterance count.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .errors import ProviderRefusalError, ResponseParseError, SchemaViolationError, TransportError
from .gateway import ChatMessage, Gateway
from .parsing import complete_json
from .prompts import load_template

logger = logging.getLogger(__name__)

DIALOG_ROLES = ("customer", "agent")

ENDINGS = ("agent_done", "turn_cap", "gateway_error")

DONE_TOKEN = "DONE"

DEFAULT_TURN_CAP = 30


@dataclass(frozen=True)
class Scenario:
    subflow_ref: int
    user_information: tuple[str, ...]
    system_information: tuple[str, ...]
    success_criteria: str
    issue: str = ""

    def __post_init__(self) -> None:
        if not self.success_criteria.strip():
            raise SchemaViolationError("outcome", "success criteria is empty")

    def to_record(self) -> dict:
        return {
            "subflow_ref": self.subflow_ref,
            "user_information": list(self.user_information),
            "system_information": list(self.system_information),
            "success_criteria": self.success_criteria,
            "issue": self.issue,
        }


@dataclass(frozen=True)
class DialogTurn:
    role: str
    text: str

    def __post_init__(self) -> None:
        if self.role not in DIALOG_ROLES:
            raise ValueError(f"unknown dialog role {self.role!r}")


@dataclass(frozen=True)
class DialogTranscript:
    turns: tuple[DialogTurn, ...]
    ended_by: str
    utterance_count: int

    def __post_init__(self) -> None:
        if self.ended_by not in ENDINGS:
            raise ValueError(f"unknown ending {self.ended_by!r}")
        if self.utterance_count != len(self.turns):
            raise ValueError("utterance_count must equal the kept turns")
        if self.turns and self.turns[0].role != "customer":
            raise ValueError("customer must open the dialog")

    def render(self) -> str:
        return "\n".join(
            f"{'Customer' if t.role == 'customer' else 'Agent'}: {t.text}" for t in self.turns
        )

    def to_record(self) -> dict:
        return {
            "turns": [{"role": t.role, "text": t.text} for t in self.turns],
            "ended_by": self.ended_by,
            "utterance_count": self.utterance_count,
        }


@dataclass(frozen=True)
class Judgment:
    successful: bool
    explanation: str

    def __post_init__(self) -> None:
        if not self.explanation.strip():
            raise SchemaViolationError("explanation", "judgment explanation is empty")

    def to_record(self) -> dict:
        return {"successful": self.successful, "explanation": self.explanation}


@dataclass(frozen=True)
class DialogOutcome:
    success: bool
    utterances: int


@dataclass(frozen=True)
class IntentResult:
    outcomes: tuple[bool, ...]
    accuracy: float


@dataclass(frozen=True)
class EvalReport:
    per_intent: tuple[tuple[str, IntentResult], ...]
    macro: float
    micro: float
    avg_utt: float

    def intents(self) -> dict[str, IntentResult]:
        return dict(self.per_intent)

    def to_record(self) -> dict:
        # Per-intent accuracy is rounded to 4 decimals in exports; macro,
        # micro, and avg_utt keep full precision for downstream averaging.
        return {
            "per_intent": {
                intent: {"outcomes": list(res.outcomes), "accuracy": round(res.accuracy, 4)}
                for intent, res in self.per_intent
            },
            "macro": self.macro,
            "micro": self.micro,
            "avg_utt": self.avg_utt,
        }


def _require_scenario_payload(data: object) -> tuple[list[str], list[str], str]:
    if not isinstance(data, dict):
        raise SchemaViolationError("scenario", "payload is not a JSON object")
    for key in ("user information", "system information", "outcome"):
        if key not in data:
            raise SchemaViolationError(key, "missing from scenario payload")
    user_info = data["user information"]
    system_info = data["system information"]
    outcome = data["outcome"]
    if not isinstance(user_info, list) or not all(isinstance(x, str) for x in user_info):
        raise SchemaViolationError("user information", "must be a list of strings")
    if not isinstance(system_info, list) or not all(isinstance(x, str) for x in system_info):
        raise SchemaViolationError("system information", "must be a list of strings")
    if not isinstance(outcome, str) or not outcome.strip():
        raise SchemaViolationError("outcome", "must be a non-empty string")
    return user_info, system_info, outcome


def build_scenarios(
    gt_workflow_text: str,
    subflow_descriptions: list[str],
    gateway: Gateway,
    issue: str = "",
) -> list[Scenario]:
    """Stages 2 and 3: one scenario per sub-flow, from the JSON contract."""
    if not subflow_descriptions:
        raise ValueError("no sub-flow descriptions to build scenarios from")
    template = load_template("scenario_details")
    scenarios: list[Scenario] = []
    for index, description in enumerate(subflow_descriptions):
        prompt = template.render(policy=gt_workflow_text, scenario=description)
        data, _ = complete_json(gateway, [ChatMessage("user", prompt)])
        user_info, system_info, outcome = _require_scenario_payload(data)
        scenarios.append(
            Scenario(
                subflow_ref=index,
                user_information=tuple(user_info),
                system_information=tuple(system_info),
                success_criteria=outcome,
                issue=issue,
            )
        )
    return scenarios


def _normalize(text: str) -> str:
    return " ".join(text.split())


def _detect_done(text: str) -> tuple[bool, str]:
    """(dialog over?, text to keep). A bare DONE keeps nothing; a trailing
    standalone DONE is stripped from an otherwise substantive message."""
    if text == DONE_TOKEN:
        return True, ""
    if text.endswith(" " + DONE_TOKEN):
        return True, text[: -len(DONE_TOKEN)].rstrip()
    return False, text


def _bullet_list(items: tuple[str, ...]) -> str:
    if not items:
        return "(none)"
    return "\n".join(f"- {item}" for item in items)


def simulate_dialog(
    scenario: Scenario,
    predicted_workflow_text: str,
    gateway: Gateway,
    turn_cap: int = DEFAULT_TURN_CAP,
) -> DialogTranscript:
    """Stage 4: alternate customer and agent bots until DONE or the cap.

    turn_cap counts utterances. Transport and provider failures preserve the
    partial transcript (ended_by=gateway_error); fixture misses propagate so
    replay runs halt loudly.
    """
    if not predicted_workflow_text.strip():
        raise ValueError("predicted workflow text is empty")
    if turn_cap < 2:
        raise ValueError("turn_cap must allow at least one exchange")
    customer_tpl = load_template("customer_bot")
    agent_tpl = load_template("agent_bot")
    turns: list[DialogTurn] = []
    ended_by = "turn_cap"

    def history() -> str:
        if not turns:
            return "(conversation has not started)"
        return "\n".join(
            f"{'Customer' if t.role == 'customer' else 'Agent'}: {t.text}" for t in turns
        )

    try:
        while True:
            if len(turns) >= turn_cap:
                break
            customer_prompt = customer_tpl.render(
                issue=scenario.issue or scenario.success_criteria,
                info=_bullet_list(scenario.user_information),
                history=history(),
            )
            customer_text = _normalize(gateway.complete([ChatMessage("user", customer_prompt)]))
            turns.append(DialogTurn("customer", customer_text))
            if len(turns) >= turn_cap:
                break
            agent_prompt = agent_tpl.render(
                policy=predicted_workflow_text,
                info=_bullet_list(scenario.system_information),
                history=history(),
            )
            agent_text = _normalize(gateway.complete([ChatMessage("user", agent_prompt)]))
            done, kept = _detect_done(agent_text)
            if done:
                if kept:
                    turns.append(DialogTurn("agent", kept))
                ended_by = "agent_done"
                break
            turns.append(DialogTurn("agent", agent_text))
    except (TransportError, ProviderRefusalError) as exc:
        logger.warning("dialog aborted by gateway failure: %s", exc)
        ended_by = "gateway_error"
    return DialogTranscript(turns=tuple(turns), ended_by=ended_by, utterance_count=len(turns))


def judge_success(
    transcript: DialogTranscript,
    gt_workflow_text: str,
    success_criteria: str,
    gateway: Gateway,
) -> Judgment:
    """Stage 5: yes/no verdict with explanation; cap-ended dialogs are judged
    like any other."""
    if not transcript.turns:
        raise ValueError("cannot judge an empty transcript")
    prompt = load_template("success_judge").render(
        policy=gt_workflow_text, outcome=success_criteria, conv=transcript.render()
    )
    data, raw = complete_json(gateway, [ChatMessage("user", prompt)])
    if not isinstance(data, dict) or "successful" not in data:
        raise SchemaViolationError("successful", "missing from judgment payload")
    verdict = str(data["successful"]).strip().lower()
    if verdict not in ("yes", "no"):
        raise ResponseParseError(f"judgment must be yes or no, got {verdict!r}", raw)
    explanation = data.get("explanation", "")
    if not isinstance(explanation, str) or not explanation.strip():
        raise SchemaViolationError("explanation", "missing or empty in judgment payload")
    return Judgment(successful=verdict == "yes", explanation=explanation)


def aggregate(outcomes: dict[str, list[DialogOutcome]]) -> EvalReport:
    """Macro (mean per-intent accuracy), micro (pooled), and average #utt."""
    if not outcomes:
        raise ValueError("no outcomes to aggregate")
    per_intent: list[tuple[str, IntentResult]] = []
    total_success = 0
    total_flows = 0
    total_utts = 0
    for intent in sorted(outcomes):
        intent_outcomes = outcomes[intent]
        if not intent_outcomes:
            raise ValueError(f"intent {intent!r} has no outcomes")
        successes = sum(1 for o in intent_outcomes if o.success)
        per_intent.append(
            (
                intent,
                IntentResult(
                    outcomes=tuple(o.success for o in intent_outcomes),
                    accuracy=successes / len(intent_outcomes),
                ),
            )
        )
        total_success += successes
        total_flows += len(intent_outcomes)
        total_utts += sum(o.utterances for o in intent_outcomes)
    macro = sum(res.accuracy for _, res in per_intent) / len(per_intent)
    micro = total_success / total_flows
    avg_utt = total_utts / total_flows
    return EvalReport(per_intent=tuple(per_intent), macro=macro, micro=micro, avg_utt=avg_utt)


def validate_transcript_record(record: dict) -> list[str]:
    """Contract checks for archived transcripts; empty list means clean."""
    violations: list[str] = []
    turns = record.get("turns", [])
    if not isinstance(turns, list) or not turns:
        violations.append("transcript has no turns")
        return violations
    for i, turn in enumerate(turns):
        expected = "customer" if i % 2 == 0 else "agent"
        if turn.get("role") != expected:
            violations.append(f"turn {i} role {turn.get('role')!r} breaks customer-first alternation")
        text = turn.get("text", "")
        if not isinstance(text, str) or not text.strip():
            violations.append(f"turn {i} has empty text")
        elif text.strip() == DONE_TOKEN:
            violations.append(f"turn {i} is a bare DONE marker, which must be excluded")
        elif text.rstrip().endswith(" " + DONE_TOKEN):
            violations.append(f"turn {i} retains a trailing DONE marker")
    if record.get("ended_by") not in ENDINGS:
        violations.append(f"unknown ended_by {record.get('ended_by')!r}")
    if record.get("utterance_count") != len(turns):
        violations.append(
            f"utterance_count {record.get('utterance_count')!r} != {len(turns)} kept turns"
        )
    return violations


def save_transcript(transcript: DialogTranscript, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(transcript.to_record(), handle, sort_keys=True, indent=2)
        handle.write("\n")
