"""Regenerate the bundled example experiment from the scripted world.

Produces, under the repository root:
  corpora/toy_corpus.jsonl      20-conversation input corpus (2 intents)
  corpora/gt/*.json             ground-truth workflows with graphs
  corpora/synth_golden.jsonl    policy-compliant synthesized corpus
  configs/toy_experiment.toml   replay config for the bundled run
  fixtures/toy/                 recorded chat + embedding fixtures
  fixtures/synth/               fixtures for synthesis and compliance
  goldens/report.json           byte-for-byte expected evaluation report
  goldens/manifest.json         byte-for-byte expected run manifest

Run as: python3 tools/record_toy_fixtures.py
"""

from __future__ import annotations

import shutil
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import toy_world

from flowmine.alt_eval import check_compliance, compliance_rollup
from flowmine.config import load_config
from flowmine.corpus import Corpus, save_corpus
from flowmine.experiment import run_experiment
from flowmine.gateway import Gateway
from flowmine.synth import run_synthesis

ROOT = toy_world.ROOT


def record_experiment() -> None:
    fixture_dir = ROOT / "fixtures" / "toy"
    if fixture_dir.exists():
        shutil.rmtree(fixture_dir)
    config_path = ROOT / "configs" / "toy_experiment.toml"
    with tempfile.TemporaryDirectory() as tmp:
        config = load_config(
            config_path, overrides=["gateway.mode=record", f"output.dir={tmp}"]
        )
        gateway = Gateway("record", fixture_dir, transport=toy_world.ScriptedWorld())
        run_experiment(config, gateway)
        print(f"recorded {len(set(gateway.call_log))} logical calls -> {fixture_dir}")

    goldens = ROOT / "goldens"
    goldens.mkdir(exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        config = load_config(config_path, overrides=[f"output.dir={tmp}"])
        gateway = Gateway("replay", fixture_dir)
        manifest = run_experiment(config, gateway)
        if gateway.transport_calls != 0:
            raise RuntimeError("replay made transport calls")
        for name in ("report.json", "manifest.json"):
            shutil.copyfile(manifest.run_dir / name, goldens / name)
        print(f"replayed run {manifest.run_id}; goldens refreshed")


def record_synthesis() -> None:
    fixture_dir = ROOT / "fixtures" / "synth"
    if fixture_dir.exists():
        shutil.rmtree(fixture_dir)
    gateway = Gateway("record", fixture_dir, transport=toy_world.ScriptedWorld())
    conversations = []
    for spec in toy_world.synth_specs():
        corpus, manifest = run_synthesis(spec, gateway)
        if manifest["status"] != "complete":
            raise RuntimeError(f"synthesis failed: {manifest.get('error')}")
        conversations.extend(corpus.conversations)
    merged = Corpus(conversations=tuple(conversations))
    save_corpus(merged, ROOT / "corpora" / "synth_golden.jsonl")
    print(f"synthesized {len(conversations)} conversations")

    gt_texts = {
        toy_world.DISPUTE_INTENT: toy_world.GT_DISPUTE_TEXT,
        toy_world.CANCEL_INTENT: toy_world.GT_CANCEL_TEXT,
    }
    reports: dict[str, list] = {}
    for conversation in merged:
        report = check_compliance(conversation, gt_texts[conversation.intent_label], gateway)
        if not report.compliant:
            raise RuntimeError(f"synthesized conversation {conversation.id} is non-compliant")
        reports.setdefault(conversation.intent_label, []).append(report)
    for row in compliance_rollup(reports):
        print(
            f"  {row['intent']}: F {row['F%']:.2f}% NA {row['NA%']:.2f}% "
            f"NF {row['NF%']:.2f}%"
        )


def main() -> None:
    toy_world.write_world(ROOT)
    print("world files written")
    record_experiment()
    record_synthesis()


if __name__ == "__main__":
    main()
