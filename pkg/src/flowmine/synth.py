"""Synthesize policy-compliant conversations from a ground-truth workflow.

Each (sub-flow, user profile) pairing yields a configurable number of
replicate conversations; replicate indices are injected into the prompt so
repeated generations phrase things differently while following the same
sub-policy.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .corpus import Conversation, Corpus, Utterance, save_corpus
from .errors import ResponseParseError
from .gateway import ChatMessage, Gateway
from .prompts import load_template

logger = logging.getLogger(__name__)

_LINE = re.compile(r"^(Customer|Agent):\s*(.*)$")


@lru_cache(maxsize=None)
def _pool(filename: str) -> tuple[str, ...]:
    text = resources.files("flowmine.data").joinpath(filename).read_text(encoding="utf-8")
    entries = tuple(line.strip() for line in text.splitlines() if line.strip())
    if not entries:
        raise ValueError(f"profile pool {filename} is empty")
    return entries


def pool_sizes() -> tuple[int, int, int]:
    return len(_pool("names.txt")), len(_pool("professions.txt")), len(_pool("cities.txt"))


def pool_capacity() -> int:
    names, professions, cities = pool_sizes()
    return names * professions * cities


@dataclass(frozen=True)
class UserProfile:
    name: str
    profession: str
    city: str
    seed_index: int

    def __post_init__(self) -> None:
        for field_name in ("name", "profession", "city"):
            if not getattr(self, field_name).strip():
                raise ValueError(f"profile {field_name} is empty")

    def to_record(self) -> dict:
        return {
            "name": self.name,
            "profession": self.profession,
            "city": self.city,
            "seed_index": self.seed_index,
        }


@dataclass(frozen=True)
class SynthSpec:
    workflow_text: str
    subflows: tuple[str, ...]
    intent: str
    profiles_per_subflow: int = 1
    conversations_per_pairing: int = 2
    profile_seed: int = 0
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not self.workflow_text.strip():
            raise ValueError("workflow text is empty")
        if not self.subflows:
            raise ValueError("no sub-flows to synthesize from")
        if not self.intent.strip():
            raise ValueError("intent is empty")
        if self.profiles_per_subflow < 1:
            raise ValueError("profiles_per_subflow must be positive")
        if self.conversations_per_pairing < 1:
            raise ValueError("conversations_per_pairing must be positive")

    def total_conversations(self) -> int:
        return len(self.subflows) * self.profiles_per_subflow * self.conversations_per_pairing

    def to_record(self) -> dict:
        return {
            "workflow_text": self.workflow_text,
            "subflows": list(self.subflows),
            "intent": self.intent,
            "profiles_per_subflow": self.profiles_per_subflow,
            "conversations_per_pairing": self.conversations_per_pairing,
            "profile_seed": self.profile_seed,
            "temperature": self.temperature,
        }


def make_profiles(n: int, seed: int) -> list[UserProfile]:
    """n distinct profiles, deterministic in seed.

    Combination indices are sampled without replacement and decoded in mixed
    radix over the three pools, so distinctness is structural.
    """
    if n < 1:
        raise ValueError("need at least one profile")
    names = _pool("names.txt")
    professions = _pool("professions.txt")
    cities = _pool("cities.txt")
    capacity = len(names) * len(professions) * len(cities)
    if n > capacity:
        raise ValueError(f"{n} profiles requested but only {capacity} combinations exist")
    indices = random.Random(seed).sample(range(capacity), n)
    profiles = []
    for index in indices:
        name_i, rest = divmod(index, len(professions) * len(cities))
        prof_i, city_i = divmod(rest, len(cities))
        profiles.append(
            UserProfile(
                name=names[name_i],
                profession=professions[prof_i],
                city=cities[city_i],
                seed_index=index,
            )
        )
    return profiles


def parse_dialog_lines(raw: str) -> list[tuple[str, str]]:
    """Split generated text into (speaker, text) pairs.

    Continuation lines fold into the preceding utterance with a space since
    corpus utterances are single-line; unlabeled preamble is dropped.
    """
    pairs: list[tuple[str, list[str]]] = []
    dropped = False
    for line in raw.splitlines():
        match = _LINE.match(line.strip())
        if match:
            speaker = "customer" if match.group(1) == "Customer" else "agent"
            pairs.append((speaker, [match.group(2).strip()]))
        elif line.strip():
            if pairs:
                pairs[-1][1].append(line.strip())
            else:
                dropped = True
    if dropped:
        logger.warning("discarded unlabeled preamble in synthesized dialog")
    if not pairs:
        raise ResponseParseError("no Customer:/Agent: lines in synthesized dialog", raw)
    return [(speaker, " ".join(chunks).strip()) for speaker, chunks in pairs]


def synthesize_conversation(
    workflow_text: str,
    subflow: str,
    profile: UserProfile,
    gateway: Gateway,
    conversation_id: str = "synth-0",
    intent: str = "synthesized",
    replicate: int = 1,
    temperature: float = 0.0,
) -> Conversation:
    """One compliant conversation for the pairing; customer must open."""
    if not workflow_text.strip() or not subflow.strip():
        raise ValueError("workflow and sub-flow must be non-empty")
    prompt = load_template("synth_conversation").render(
        policy=workflow_text,
        subflow=subflow,
        user_name=profile.name,
        user_profession=profile.profession,
        city=profile.city,
        replicate=str(replicate),
    )
    raw = gateway.complete([ChatMessage("user", prompt)], temperature=temperature)
    pairs = parse_dialog_lines(raw)
    if pairs[0][0] != "customer":
        raise ResponseParseError("synthesized dialog must be started by the customer", raw)
    for i, (speaker, _) in enumerate(pairs):
        expected = "customer" if i % 2 == 0 else "agent"
        if speaker != expected:
            raise ResponseParseError(
                f"synthesized dialog breaks alternation at line {i + 1}", raw
            )
    if len(pairs) < 2:
        raise ResponseParseError("synthesized dialog needs at least one exchange", raw)
    return Conversation(
        id=conversation_id,
        intent_label=intent,
        utterances=tuple(Utterance(speaker, text) for speaker, text in pairs),
    )


def conversation_id(intent: str, subflow_index: int, profile_index: int, replicate: int) -> str:
    return f"{intent}-s{subflow_index:02d}-p{profile_index:02d}-r{replicate}"


def run_synthesis(
    spec: SynthSpec,
    gateway: Gateway,
    output_dir: str | Path | None = None,
) -> tuple[Corpus, dict]:
    """Synthesize the full |subflows| x profiles x replicates grid.

    A failure mid-grid persists whatever completed plus a failure manifest
    (when output_dir is given) and then re-raises.
    """
    n_profiles = len(spec.subflows) * spec.profiles_per_subflow
    profiles = make_profiles(n_profiles, spec.profile_seed)
    conversations: list[Conversation] = []
    provenance: list[dict] = []
    error: Exception | None = None
    try:
        for si, subflow in enumerate(spec.subflows):
            for pi in range(spec.profiles_per_subflow):
                profile = profiles[si * spec.profiles_per_subflow + pi]
                for ri in range(1, spec.conversations_per_pairing + 1):
                    conv_id = conversation_id(spec.intent, si, pi, ri)
                    conversation = synthesize_conversation(
                        spec.workflow_text,
                        subflow,
                        profile,
                        gateway,
                        conversation_id=conv_id,
                        intent=spec.intent,
                        replicate=ri,
                        temperature=spec.temperature,
                    )
                    conversations.append(conversation)
                    provenance.append(
                        {
                            "id": conv_id,
                            "subflow_index": si,
                            "subflow": subflow,
                            "profile": profile.to_record(),
                            "replicate": ri,
                        }
                    )
    except Exception as exc:
        error = exc
    manifest = {
        "spec": spec.to_record(),
        "prompt_hashes": {"synth_conversation": load_template("synth_conversation").sha256},
        "conversations": provenance,
        "status": "failed" if error else "complete",
    }
    if error is not None:
        manifest["error"] = f"{type(error).__name__}: {error}"
    corpus = Corpus(conversations=tuple(conversations))
    if output_dir is not None:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        if conversations:
            save_corpus(corpus, output_dir / "synth_corpus.jsonl")
        with (output_dir / "synth_manifest.json").open("w", encoding="utf-8") as handle:
            json.dump(manifest, handle, sort_keys=True, indent=2)
            handle.write("\n")
    if error is not None:
        raise error
    return corpus, manifest
