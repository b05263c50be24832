"""Render evaluation payloads to a text table, CSV, and a bar chart.

The payload shape is the experiment's report.json: per_seed records plus a
mean block. Figures use the Agg backend so rendering works headless.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def _seed_rows(record: dict) -> list[tuple[str, int, int, float]]:
    rows = []
    for intent in sorted(record["per_intent"]):
        entry = record["per_intent"][intent]
        outcomes = entry["outcomes"]
        rows.append((intent, len(outcomes), sum(1 for o in outcomes if o), entry["accuracy"]))
    return rows


def render_text_table(payload: dict) -> str:
    """One table per order seed plus the cross-seed mean footer."""
    lines: list[str] = ["Workflow evaluation", "===================", ""]
    per_seed = payload["per_seed"]
    intents = {i for record in per_seed.values() for i in record["per_intent"]}
    width = max([len("intent")] + [len(i) for i in intents]) + 2
    header = f"{'intent':<{width}}{'sub-flows':>10}{'correct':>9}{'accuracy':>10}"
    for seed in sorted(per_seed):
        record = per_seed[seed]
        lines.append(f"Order seed {seed}")
        lines.append("-" * len(f"Order seed {seed}"))
        lines.append(header)
        for intent, total, correct, accuracy in _seed_rows(record):
            lines.append(f"{intent:<{width}}{total:>10}{correct:>9}{accuracy:>10.4f}")
        lines.append(
            f"macro {record['macro']:.4f} | micro {record['micro']:.4f}"
            f" | #utt {record['avg_utt']:.2f}"
        )
        lines.append("")
    mean = payload["mean"]
    lines.append(
        f"Mean over {len(per_seed)} seed(s): macro {mean['macro']:.4f}"
        f" | micro {mean['micro']:.4f} | #utt {mean['avg_utt']:.2f}"
    )
    lines.append("")
    return "\n".join(lines)


def write_csv(payload: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["seed", "intent", "subflows", "correct", "accuracy"])
        for seed in sorted(payload["per_seed"]):
            for intent, total, correct, accuracy in _seed_rows(payload["per_seed"][seed]):
                writer.writerow([seed, intent, total, correct, f"{accuracy:.4f}"])


def write_figure(payload: dict, path: str | Path) -> None:
    """Bar chart of mean per-intent accuracy; metadata pinned for stable bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    accuracy = payload["mean"]["per_intent_accuracy"]
    intents = sorted(accuracy)
    values = [accuracy[i] for i in intents]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(intents)), 3.2))
    ax.bar(range(len(intents)), values, color="#4878a8")
    ax.set_xticks(range(len(intents)))
    ax.set_xticklabels(intents, rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("mean sub-flow accuracy")
    ax.axhline(payload["mean"]["macro"], linestyle="--", linewidth=1, color="#a84848")
    ax.set_title("Per-intent accuracy (dashed line: macro)")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": "flowmine"})
    plt.close(fig)
