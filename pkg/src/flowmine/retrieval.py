"""Conversation selection strategies for workflow generation.

Four selectors over per-intent embedding sets:

* ``select_top_k``   -- closest to the intent centroid by cosine similarity;
  with procedural-element embeddings this is Proc-Sim, with full-conversation
  embeddings Conv-Sim.
* ``select_diverse`` -- Proc-Div: drop the lowest-similarity decile, seed
  with the conversation furthest from the global centroid, then greedily add
  the conversation least similar to the centroid of what is already selected.
* ``select_random``  -- seeded uniform sample (Mersenne Twister via
  ``random.Random``; same seed gives the same selection on any platform).

All ties are broken by ascending conversation id so whole experiments are
reproducible byte for byte.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SOURCES = ("procedural_elements", "full_conversation")

STRATEGIES = ("proc_sim", "conv_sim", "proc_div", "random")


@dataclass(frozen=True)
class EmbeddingSet:
    ids: tuple[str, ...]
    vectors: np.ndarray
    source: str

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise ValueError(f"unknown embedding source {self.source!r}")
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be a 2-d matrix")
        if len(self.ids) != self.vectors.shape[0]:
            raise ValueError(f"{len(self.ids)} ids but {self.vectors.shape[0]} vector rows")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("embedding set ids must be unique")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class SelectionResult:
    strategy: str
    k: int
    selected_ids: tuple[str, ...]
    scores: tuple[float, ...] | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if len(set(self.selected_ids)) != len(self.selected_ids):
            raise ValueError("selection contains duplicate ids")
        if self.scores is not None and len(self.scores) != len(self.selected_ids):
            raise ValueError("scores must align with selected_ids")

    def to_record(self) -> dict:
        return {
            "strategy": self.strategy,
            "k": self.k,
            "seed": self.seed,
            "selected_ids": list(self.selected_ids),
            "scores": list(self.scores) if self.scores is not None else None,
        }


def centroid(embedding_set: EmbeddingSet) -> np.ndarray:
    """Arithmetic per-dimension mean of all vectors."""
    if len(embedding_set) == 0:
        raise ValueError("cannot take the centroid of an empty embedding set")
    return embedding_set.vectors.mean(axis=0)


def cosine_similarity(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"vector length mismatch: {a.shape} vs {b.shape}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.dot(a, b) / (norm_a * norm_b))


def _similarities_to(embedding_set: EmbeddingSet, reference: np.ndarray) -> list[float]:
    return [cosine_similarity(row, reference) for row in embedding_set.vectors]


def select_top_k(embedding_set: EmbeddingSet, k: int) -> SelectionResult:
    """Top-k by descending similarity to the set centroid (ties: ascending id)."""
    if k < 1:
        raise ValueError("k must be positive")
    center = centroid(embedding_set)
    sims = _similarities_to(embedding_set, center)
    order = sorted(range(len(embedding_set)), key=lambda i: (-sims[i], embedding_set.ids[i]))
    chosen = order[:k]
    strategy = "proc_sim" if embedding_set.source == "procedural_elements" else "conv_sim"
    return SelectionResult(
        strategy=strategy,
        k=k,
        selected_ids=tuple(embedding_set.ids[i] for i in chosen),
        scores=tuple(sims[i] for i in chosen),
    )


def select_diverse(embedding_set: EmbeddingSet, k: int) -> SelectionResult:
    """Decile filter, furthest-from-centroid seed, then greedy least-similar
    additions against the running centroid of the selected vectors."""
    if k < 1:
        raise ValueError("k must be positive")
    n = len(embedding_set)
    center = centroid(embedding_set)
    sims = _similarities_to(embedding_set, center)

    drop = math.floor(0.10 * n)
    by_sim = sorted(range(n), key=lambda i: (sims[i], embedding_set.ids[i]))
    survivors = sorted(by_sim[drop:]) if drop else list(range(n))
    if not survivors:
        raise ValueError("decile filter removed every conversation")

    # Seed: furthest from the global centroid, i.e. lowest similarity.
    seed_idx = min(survivors, key=lambda i: (sims[i], embedding_set.ids[i]))
    selected = [seed_idx]
    scores = [sims[seed_idx]]
    pool = [i for i in survivors if i != seed_idx]
    while len(selected) < k and pool:
        running_center = embedding_set.vectors[selected].mean(axis=0)
        ranked = [(cosine_similarity(embedding_set.vectors[i], running_center), i) for i in pool]
        best_sim, best_idx = min(ranked, key=lambda t: (t[0], embedding_set.ids[t[1]]))
        selected.append(best_idx)
        scores.append(best_sim)
        pool.remove(best_idx)
    return SelectionResult(
        strategy="proc_div",
        k=k,
        selected_ids=tuple(embedding_set.ids[i] for i in selected),
        scores=tuple(scores),
    )


def select_random(ids: Sequence[str], k: int, seed: int) -> SelectionResult:
    """Uniform sample without replacement; sample order is the selection order."""
    if not ids:
        raise ValueError("cannot sample from an empty id list")
    if k < 1:
        raise ValueError("k must be positive")
    rng = random.Random(seed)
    chosen = rng.sample(list(ids), min(k, len(ids)))
    return SelectionResult(strategy="random", k=k, selected_ids=tuple(chosen), seed=seed)
