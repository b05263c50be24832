"""Reference-based workflow evaluators, compliance checking, and agreement
statistics.

The evaluators trade off cost and strictness:

- qa_based: grade a question set derived from the ground truth against the
  predicted workflow; score is the fraction answered correctly.
- embedding: 1 / (1 - cosine_similarity), capped for identical directions.
- edit_distance: 1 / (number of edit operations an aligner needs), capped
  when no edits are required.
- step_accuracy: fraction of ground-truth steps the prediction covers.
- likert: a single holistic 1-100 similarity judgment.
"""

from __future__ import annotations

import csv
import json
import logging
import re
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Conversation, render_conversation
from .errors import ResponseParseError, SchemaViolationError
from .gateway import ChatMessage, EmbeddingVector, Gateway
from .parsing import complete_json
from .prompts import load_template
from .retrieval import cosine_similarity

logger = logging.getLogger(__name__)

METHODS = ("qa_based", "embedding", "edit_distance", "step_accuracy", "likert")

# 1/distance and 1/edits blow up on perfect matches; a large finite cap keeps
# rankings totally ordered.
SCORE_CAP = 1e6

_CAP_DISTANCE = 1e-6

EDIT_OPERATIONS = ("insertion", "deletion", "reordering")

COMPLIANCE_VERDICTS = ("followed", "not_applicable", "not_followed")

_VERDICT_ALIASES = {
    "followed": "followed",
    "not applicable": "not_applicable",
    "not_applicable": "not_applicable",
    "not followed": "not_followed",
    "not_followed": "not_followed",
}

_RULE_LINE = re.compile(r"^\s*\d+[.)]\s+\S")


@dataclass(frozen=True)
class QAPair:
    question: str
    expected_answer: str

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise SchemaViolationError("question", "question is empty")
        if not self.expected_answer.strip():
            raise SchemaViolationError("expected_answer", "expected answer is empty")


@dataclass(frozen=True)
class EvaluatorScore:
    method: str
    value: float
    details: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown evaluator method {self.method!r}")
        if self.method in ("qa_based", "step_accuracy") and not 0.0 <= self.value <= 1.0:
            raise ValueError(f"{self.method} score {self.value} outside [0, 1]")
        if self.method == "likert" and not 1 <= self.value <= 100:
            raise ValueError(f"likert score {self.value} outside [1, 100]")

    def to_record(self) -> dict:
        return {"method": self.method, "value": self.value, "details": self.details}


@dataclass(frozen=True)
class RuleVerdict:
    rule_index: int
    verdict: str
    explanation: str

    def __post_init__(self) -> None:
        if self.verdict not in COMPLIANCE_VERDICTS:
            raise SchemaViolationError(
                f"Rule_{self.rule_index}", f"verdict {self.verdict!r} not in {COMPLIANCE_VERDICTS}"
            )


@dataclass(frozen=True)
class ComplianceReport:
    per_rule: tuple[RuleVerdict, ...]
    compliant: bool

    def __post_init__(self) -> None:
        derived = all(v.verdict != "not_followed" for v in self.per_rule)
        if self.compliant != derived:
            raise ValueError("compliant flag must match the absence of not_followed verdicts")

    def to_record(self) -> dict:
        return {
            "per_rule": [
                {"rule_index": v.rule_index, "verdict": v.verdict, "explanation": v.explanation}
                for v in self.per_rule
            ],
            "compliant": self.compliant,
        }


def score_embedding(ref: EmbeddingVector, pred: EmbeddingVector) -> EvaluatorScore:
    """1 / (1 - cos). Identical directions hit the cap with a flag."""
    similarity = cosine_similarity(np.array(ref.values), np.array(pred.values))
    distance = 1.0 - similarity
    if distance < _CAP_DISTANCE:
        return EvaluatorScore(
            "embedding", SCORE_CAP, {"cosine_similarity": similarity, "perfect_match": True}
        )
    return EvaluatorScore(
        "embedding", 1.0 / distance, {"cosine_similarity": similarity, "perfect_match": False}
    )


def align_and_score_edit(gt_text: str, pred_text: str, gateway: Gateway) -> EvaluatorScore:
    """1 / (number of insertion/deletion/reordering operations)."""
    if not gt_text.strip() or not pred_text.strip():
        raise ValueError("both workflows must be non-empty")
    prompt = load_template("edit_align").render(gt=gt_text, pred=pred_text)
    data, raw = complete_json(gateway, [ChatMessage("user", prompt)])
    if not isinstance(data, dict) or not isinstance(data.get("operations"), list):
        raise SchemaViolationError("operations", "missing operation list in alignment payload")
    operations = []
    for op in data["operations"]:
        kind = str(op.get("type", "")).strip().lower() if isinstance(op, dict) else ""
        if kind not in EDIT_OPERATIONS:
            raise ResponseParseError(f"edit operation type {kind!r} not in {EDIT_OPERATIONS}", raw)
        operations.append({"type": kind, "description": str(op.get("description", ""))})
    if not operations:
        return EvaluatorScore(
            "edit_distance", SCORE_CAP, {"operations": [], "perfect_match": True}
        )
    return EvaluatorScore(
        "edit_distance",
        1.0 / len(operations),
        {"operations": operations, "perfect_match": False},
    )


def score_steps(gt_steps: list[str], pred_text: str, gateway: Gateway) -> EvaluatorScore:
    """Fraction of ground-truth steps covered by the prediction."""
    if not gt_steps:
        raise ValueError("no ground-truth steps to check")
    if not pred_text.strip():
        raise ValueError("predicted workflow is empty")
    steps_block = "\n".join(f"{i}. {step}" for i, step in enumerate(gt_steps, start=1))
    prompt = load_template("step_coverage").render(steps=steps_block, pred=pred_text)
    data, raw = complete_json(gateway, [ChatMessage("user", prompt)])
    verdicts = data.get("verdicts") if isinstance(data, dict) else None
    if not isinstance(verdicts, list):
        raise SchemaViolationError("verdicts", "missing verdict list in coverage payload")
    if len(verdicts) != len(gt_steps):
        raise SchemaViolationError(
            "verdicts", f"{len(verdicts)} verdicts for {len(gt_steps)} steps"
        )
    judged = []
    for i, verdict in enumerate(verdicts, start=1):
        answer = str(verdict.get("covered", "")).strip().lower() if isinstance(verdict, dict) else ""
        if answer not in ("yes", "no"):
            raise ResponseParseError(f"step {i} coverage must be yes or no, got {answer!r}", raw)
        judged.append(
            {
                "step": i,
                "covered": answer == "yes",
                "explanation": str(verdict.get("explanation", "")),
            }
        )
    correct = sum(1 for v in judged if v["covered"])
    return EvaluatorScore("step_accuracy", correct / len(gt_steps), {"verdicts": judged})


def score_likert(gt_text: str, pred_text: str, gateway: Gateway) -> EvaluatorScore:
    """Holistic 1-100 similarity; out-of-range output is an error, not a clamp."""
    if not gt_text.strip() or not pred_text.strip():
        raise ValueError("both workflows must be non-empty")
    prompt = load_template("likert").render(gt=gt_text, pred=pred_text)
    data, raw = complete_json(gateway, [ChatMessage("user", prompt)])
    score = data.get("score") if isinstance(data, dict) else None
    if isinstance(score, bool) or not isinstance(score, int):
        raise ResponseParseError(f"likert score must be an integer, got {score!r}", raw)
    if not 1 <= score <= 100:
        raise ResponseParseError(f"likert score {score} outside [1, 100]", raw)
    return EvaluatorScore("likert", float(score), {"raw_score": score})


def qa_evaluate(
    pairs: list[QAPair],
    pred_text: str,
    gateway: Gateway,
    lenient: bool = False,
) -> EvaluatorScore:
    """Grade each (question, expected answer) pair against the prediction.

    lenient counts an ungradeable pair as incorrect instead of failing the
    run; the failure is kept in the per-pair details either way.
    """
    if not pairs:
        raise ValueError("no QA pairs to grade")
    if not pred_text.strip():
        raise ValueError("predicted workflow is empty")
    template = load_template("qa_grade")
    verdicts = []
    correct = 0
    for pair in pairs:
        prompt = template.render(
            workflow=pred_text, question=pair.question, expected=pair.expected_answer
        )
        try:
            data, raw = complete_json(gateway, [ChatMessage("user", prompt)])
            answer = str(data.get("correct", "")).strip().lower() if isinstance(data, dict) else ""
            if answer not in ("yes", "no"):
                raise ResponseParseError(f"grading must be yes or no, got {answer!r}", raw)
        except (ResponseParseError, SchemaViolationError) as exc:
            if not lenient:
                raise
            logger.warning("ungradeable QA pair counted incorrect: %s", exc)
            verdicts.append(
                {"question": pair.question, "correct": False, "error": str(exc)}
            )
            continue
        is_correct = answer == "yes"
        correct += is_correct
        verdicts.append(
            {
                "question": pair.question,
                "correct": is_correct,
                "explanation": str(data.get("explanation", "")),
            }
        )
    return EvaluatorScore("qa_based", correct / len(pairs), {"verdicts": verdicts})


def generate_qa_pairs(workflow_text: str, gateway: Gateway) -> list[QAPair]:
    """Decompose a ground-truth workflow into gradable question/answer pairs.

    Output is meant to be written to a file and reviewed before grading runs.
    """
    if not workflow_text.strip():
        raise ValueError("workflow text is empty")
    prompt = load_template("qa_generate").render(workflow=workflow_text)
    data, raw = complete_json(gateway, [ChatMessage("user", prompt)])
    pairs = data.get("pairs") if isinstance(data, dict) else None
    if not isinstance(pairs, list) or not pairs:
        raise ResponseParseError("no QA pairs in decomposition payload", raw)
    out = []
    for pair in pairs:
        if not isinstance(pair, dict):
            raise ResponseParseError("QA pair is not an object", raw)
        out.append(
            QAPair(
                question=str(pair.get("question", "")),
                expected_answer=str(pair.get("expected_answer", "")),
            )
        )
    return out


def save_qa_pairs(pairs: list[QAPair], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = [{"question": p.question, "expected_answer": p.expected_answer} for p in pairs]
    with path.open("w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True, indent=2)
        handle.write("\n")


def load_qa_pairs(path: str | Path) -> list[QAPair]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [QAPair(p["question"], p["expected_answer"]) for p in payload]


def count_rules(workflow_text: str) -> int:
    return sum(1 for line in workflow_text.splitlines() if _RULE_LINE.match(line))


def check_compliance(
    conv: Conversation, gt_workflow_text: str, gateway: Gateway
) -> ComplianceReport:
    """One closed-vocabulary verdict per numbered rule in the workflow."""
    n_rules = count_rules(gt_workflow_text)
    if n_rules == 0:
        raise ValueError("workflow has no numbered rules to check")
    prompt = load_template("compliance").render(
        guidelines=gt_workflow_text, conversation=render_conversation(conv)
    )
    data, raw = complete_json(gateway, [ChatMessage("user", prompt)])
    if not isinstance(data, dict):
        raise SchemaViolationError("compliance", "payload is not a JSON object")
    per_rule = []
    for i in range(1, n_rules + 1):
        key = f"Rule_{i}"
        if key not in data:
            raise SchemaViolationError(key, "missing from compliance payload")
        entry = data[key]
        if not isinstance(entry, dict):
            raise SchemaViolationError(key, "rule entry is not an object")
        response = str(entry.get("response", "")).strip().lower()
        verdict = _VERDICT_ALIASES.get(response)
        if verdict is None:
            raise ResponseParseError(
                f"{key} verdict {response!r} not in followed/not applicable/not followed", raw
            )
        per_rule.append(RuleVerdict(i, verdict, str(entry.get("explanation", ""))))
    compliant = all(v.verdict != "not_followed" for v in per_rule)
    return ComplianceReport(per_rule=tuple(per_rule), compliant=compliant)


def compliance_rollup(
    reports_by_intent: dict[str, list[ComplianceReport]]
) -> list[dict[str, float | str]]:
    """Per-intent verdict percentages plus the non-compliant conversation rate.

    The three verdict percentages partition the rules, so they sum to 100.
    """
    rows: list[dict[str, float | str]] = []
    for intent in sorted(reports_by_intent):
        reports = reports_by_intent[intent]
        if not reports:
            raise ValueError(f"intent {intent!r} has no compliance reports")
        counts = {verdict: 0 for verdict in COMPLIANCE_VERDICTS}
        total = 0
        for report in reports:
            for verdict in report.per_rule:
                counts[verdict.verdict] += 1
                total += 1
        if total == 0:
            raise ValueError(f"intent {intent!r} has no rule verdicts")
        non_compliant = sum(1 for r in reports if not r.compliant)
        rows.append(
            {
                "intent": intent,
                "F%": 100.0 * counts["followed"] / total,
                "NA%": 100.0 * counts["not_applicable"] / total,
                "NF%": 100.0 * counts["not_followed"] / total,
                "NC%": 100.0 * non_compliant / len(reports),
            }
        )
    return rows


def write_compliance_csv(rows: list[dict[str, float | str]], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=["intent", "F%", "NA%", "NF%", "NC%"])
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {
                    "intent": row["intent"],
                    "F%": f"{row['F%']:.4f}",
                    "NA%": f"{row['NA%']:.4f}",
                    "NF%": f"{row['NF%']:.4f}",
                    "NC%": f"{row['NC%']:.4f}",
                }
            )


def cohen_kappa(a: list, b: list) -> float:
    """(p_o - p_e) / (1 - p_e) over two label sequences."""
    if len(a) != len(b):
        raise ValueError("label lists differ in length")
    if not a:
        raise ValueError("no labels")
    n = len(a)
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    labels = set(a) | set(b)
    p_e = sum((a.count(label) / n) * (b.count(label) / n) for label in labels)
    if p_e == 1.0:
        # Both raters used one identical label everywhere; chance-corrected
        # agreement is taken as perfect rather than 0/0.
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


def pearson(x: list[float], y: list[float]) -> float:
    if len(x) != len(y):
        raise ValueError("sequences differ in length")
    if len(x) < 2:
        raise ValueError("need at least two points")
    try:
        return statistics.correlation(x, y)
    except statistics.StatisticsError as exc:
        raise ValueError(f"correlation undefined: {exc}") from exc


def save_scores(scores: list[EvaluatorScore], path: str | Path) -> None:
    """One comparison file per workflow: method -> {value, details}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {s.method: {"value": s.value, "details": s.details} for s in scores}
    with path.open("w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True, indent=2)
        handle.write("\n")
