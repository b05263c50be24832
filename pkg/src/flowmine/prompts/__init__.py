"""Versioned prompt templates.

Each template is a text asset using ``string.Template`` ``${name}``
placeholders (brace-safe around the JSON examples the prompts embed). The
sha256 of the raw text travels into artifacts and run manifests so any
output can be traced to the exact prompt wording that produced it.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass
from importlib import resources

TEMPLATE_NAMES = (
    "agent_bot",
    "basic",
    "branch_decompose",
    "compliance",
    "customer_bot",
    "edit_align",
    "element_extraction",
    "ensemble_merge",
    "likert",
    "plan",
    "plan_generate",
    "qa_cot",
    "qa_extraction",
    "qa_generate",
    "qa_grade",
    "qa_guide_turn",
    "qa_implementer_turn",
    "qa_reflect",
    "reflect_feedback",
    "reflect_regenerate",
    "scenario_details",
    "step_coverage",
    "success_judge",
    "synth_conversation",
)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str
    sha256: str

    def render(self, **values: str) -> str:
        # substitute() raises KeyError on a missing placeholder: a template
        # change that adds a field must fail loudly, not ship a literal "${x}".
        return string.Template(self.text).substitute(**values)

    def placeholders(self) -> list[str]:
        found: list[str] = []
        for match in string.Template.pattern.finditer(self.text):
            name = match.group("named") or match.group("braced")
            if name and name not in found:
                found.append(name)
        return found


_cache: dict[str, PromptTemplate] = {}


def load_template(name: str) -> PromptTemplate:
    if name not in TEMPLATE_NAMES:
        raise KeyError(f"unknown prompt template {name!r}")
    if name not in _cache:
        text = resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        _cache[name] = PromptTemplate(name=name, text=text, sha256=digest)
    return _cache[name]


def template_hashes() -> dict[str, str]:
    """Name → sha256 for every bundled template, in sorted name order."""
    return {name: load_template(name).sha256 for name in TEMPLATE_NAMES}
