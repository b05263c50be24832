"""Conversation corpus: on-disk JSONL format, validation, and intent indexing.

One conversation per line::

    {"id": "c1", "intent": "refund", "utterances": [{"speaker": "customer", "text": "..."}, ...]}

Speakers are exactly ``customer`` or ``agent``; anything else is a hard error
so that bot-role statistics stay trustworthy. Utterance text must be non-empty
after trimming and may not contain newlines (line-oriented rendering depends
on it).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import CorpusError, DuplicateIdError

SPEAKERS = ("customer", "agent")

_ROLE_PREFIX = {"customer": "Customer", "agent": "Agent"}


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str

    def __post_init__(self) -> None:
        if self.speaker not in SPEAKERS:
            raise CorpusError(f"unknown speaker {self.speaker!r} (expected one of {SPEAKERS})")
        if not self.text.strip():
            raise CorpusError("utterance text is empty")
        if "\n" in self.text or "\r" in self.text:
            raise CorpusError("utterance text must not contain newlines")


@dataclass(frozen=True)
class Conversation:
    id: str
    intent_label: str
    utterances: tuple[Utterance, ...]

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("conversation id is empty")
        if not self.intent_label:
            raise CorpusError(f"conversation {self.id!r} has an empty intent label")
        if len(self.utterances) < 2:
            raise CorpusError(f"conversation {self.id!r} has fewer than 2 utterances")


class Corpus:
    """Immutable collection of conversations with an intent index.

    The index maps each intent label to the conversation ids carrying it, in
    corpus order; together the index keys partition the corpus exactly.
    """

    def __init__(self, conversations: Iterable[Conversation]):
        self._conversations: list[Conversation] = list(conversations)
        self._by_id: dict[str, Conversation] = {}
        self._by_intent: dict[str, list[str]] = {}
        for conv in self._conversations:
            if conv.id in self._by_id:
                raise DuplicateIdError(f"duplicate conversation id {conv.id!r}")
            self._by_id[conv.id] = conv
            self._by_intent.setdefault(conv.intent_label, []).append(conv.id)

    def __len__(self) -> int:
        return len(self._conversations)

    def __iter__(self) -> Iterator[Conversation]:
        return iter(self._conversations)

    @property
    def conversations(self) -> list[Conversation]:
        return list(self._conversations)

    @property
    def intent_index(self) -> dict[str, list[str]]:
        return {k: list(v) for k, v in self._by_intent.items()}

    def intents(self) -> list[str]:
        return list(self._by_intent)

    def get(self, conv_id: str) -> Conversation:
        return self._by_id[conv_id]

    def __contains__(self, conv_id: str) -> bool:
        return conv_id in self._by_id


def _conversation_from_record(record: dict, line: int | None = None) -> Conversation:
    if not isinstance(record, dict):
        raise CorpusError("record is not a JSON object", line)
    for key in ("id", "intent", "utterances"):
        if key not in record:
            raise CorpusError(f"record is missing key {key!r}", line)
    if not isinstance(record["id"], str) or not isinstance(record["intent"], str):
        raise CorpusError("'id' and 'intent' must be strings", line)
    if not isinstance(record["utterances"], list):
        raise CorpusError("'utterances' must be a list", line)
    utterances = []
    for i, utt in enumerate(record["utterances"]):
        if not isinstance(utt, dict) or "speaker" not in utt or "text" not in utt:
            raise CorpusError(f"utterance {i} must be an object with 'speaker' and 'text'", line)
        try:
            utterances.append(Utterance(speaker=utt["speaker"], text=utt["text"]))
        except CorpusError as exc:
            raise CorpusError(f"utterance {i}: {exc}", line) from exc
    try:
        return Conversation(id=record["id"], intent_label=record["intent"], utterances=tuple(utterances))
    except CorpusError as exc:
        raise CorpusError(str(exc), line) from exc


def load_corpus(path: str | Path) -> Corpus:
    """Load a JSONL corpus, failing loudly on any malformed line.

    Raises :class:`CorpusError` with the offending line number on parse or
    schema failures, :class:`DuplicateIdError` on repeated ids, and an error
    on files with no records at all.
    """
    path = Path(path)
    conversations: list[Conversation] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped:
                raise CorpusError("blank line in corpus file", line_no)
            try:
                record = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"invalid JSON ({exc.msg})", line_no) from exc
            conv = _conversation_from_record(record, line_no)
            if conv.id in seen:
                raise DuplicateIdError(f"duplicate conversation id {conv.id!r}", line_no)
            seen.add(conv.id)
            conversations.append(conv)
    if not conversations:
        raise CorpusError(f"corpus file {path} contains no records")
    return Corpus(conversations)


def conversation_to_record(conv: Conversation) -> dict:
    return {
        "id": conv.id,
        "intent": conv.intent_label,
        "utterances": [{"speaker": u.speaker, "text": u.text} for u in conv.utterances],
    }


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the corpus as UTF-8 JSONL with LF line endings (load round-trips)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for conv in corpus:
            handle.write(json.dumps(conversation_to_record(conv), ensure_ascii=False))
            handle.write("\n")


def filter_by_intent(corpus: Corpus, intent: str) -> list[Conversation]:
    """All conversations with the given intent label, in corpus order."""
    return [corpus.get(cid) for cid in corpus.intent_index.get(intent, [])]


def render_conversation(conv: Conversation) -> str:
    """Render one utterance per line as ``Customer: ...`` / ``Agent: ...``."""
    return "\n".join(f"{_ROLE_PREFIX[u.speaker]}: {u.text}" for u in conv.utterances)
