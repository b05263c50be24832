"""Run orchestration: corpus to evaluated workflows under one run directory.

Stage order: elements -> embeddings -> selection -> generation -> evaluation
-> report. Every artifact lands under ``output_dir/runs/<run_id>/``; the run
id hashes the config snapshot (output section excluded), so re-running the
same experiment reuses the same directory and reproduces the same bytes.

Wall-clock timings go to a ``timings.json`` sidecar rather than the manifest,
which must stay byte-identical across replays.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alt_eval import (
    align_and_score_edit,
    generate_qa_pairs,
    qa_evaluate,
    save_scores,
    score_embedding,
    score_likert,
    score_steps,
)
from .config import ExperimentConfig
from .corpus import Conversation, filter_by_intent, load_corpus, render_conversation
from .e2e import (
    DialogOutcome,
    EvalReport,
    aggregate,
    build_scenarios,
    judge_success,
    save_transcript,
    simulate_dialog,
)
from .elements import canonical_text, extract_elements, save_elements
from .errors import FlowmineError, StageError
from .extraction import Strategy, generate_workflow, save_artifact
from .gateway import Gateway, HttpTransport, request_digest
from .prompts import template_hashes
from .retrieval import EmbeddingSet, select_diverse, select_random, select_top_k
from .subflow import WorkflowGraph, decompose_workflow_llm, enumerate_paths, graph_from_record

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroundTruth:
    intent: str
    workflow_text: str
    issue: str
    graph: WorkflowGraph | None = None


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    run_dir: Path
    payload: dict

    def path(self) -> Path:
        return self.run_dir / "manifest.json"


def load_ground_truth(directory: str | Path, intent: str) -> GroundTruth:
    path = Path(directory) / f"{intent}.json"
    if not path.exists():
        raise FileNotFoundError(f"no ground-truth file for intent {intent!r} at {path}")
    record = json.loads(path.read_text(encoding="utf-8"))
    graph = graph_from_record(record["graph"]) if record.get("graph") else None
    return GroundTruth(
        intent=record.get("intent", intent),
        workflow_text=record["workflow_text"],
        issue=record.get("issue", ""),
        graph=graph,
    )


def build_gateway(config: ExperimentConfig) -> Gateway:
    transport = None
    if config.gateway.mode in ("live", "record") and config.gateway.endpoint:
        transport = HttpTransport(config.gateway.endpoint)
    return Gateway(
        mode=config.gateway.mode,
        fixture_dir=config.gateway.fixture_dir,
        transport=transport,
        chat_model=config.gateway.chat_model,
        embedding_model=config.gateway.embedding_model,
        parallelism=config.gateway.parallelism,
    )


def _write_json(payload: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True, indent=2)
        handle.write("\n")


def subflow_descriptions(gt: GroundTruth, source: str, gateway: Gateway) -> list[str]:
    if source == "graph":
        if gt.graph is None:
            raise ValueError(f"intent {gt.intent!r} has no workflow graph for decomposition")
        return [flow.description for flow in enumerate_paths(gt.graph)]
    return decompose_workflow_llm(gt.workflow_text, gateway)


def evaluate_artifact(
    artifact_text: str,
    gt: GroundTruth,
    gateway: Gateway,
    turn_cap: int,
    subflow_source: str,
    dialogs_dir: Path | None = None,
    stem: str = "dialog",
) -> list[DialogOutcome]:
    """Five evaluation stages for one predicted workflow."""
    descriptions = subflow_descriptions(gt, subflow_source, gateway)
    scenarios = build_scenarios(gt.workflow_text, descriptions, gateway, issue=gt.issue)
    outcomes = []
    for scenario in scenarios:
        transcript = simulate_dialog(scenario, artifact_text, gateway, turn_cap=turn_cap)
        if dialogs_dir is not None:
            save_transcript(
                transcript, dialogs_dir / f"{stem}-flow{scenario.subflow_ref:02d}.json"
            )
        judgment = judge_success(transcript, gt.workflow_text, scenario.success_criteria, gateway)
        outcomes.append(DialogOutcome(judgment.successful, transcript.utterance_count))
    return outcomes


def _workflow_steps(workflow_text: str) -> list[str]:
    steps = []
    for line in workflow_text.splitlines():
        stripped = line.strip()
        if stripped and stripped[0].isdigit():
            steps.append(stripped.lstrip("0123456789.) ").strip())
    return steps


def run_alt_evaluators(
    names: tuple[str, ...],
    gt: GroundTruth,
    pred_text: str,
    gateway: Gateway,
) -> list:
    scores = []
    for name in names:
        if name == "embedding":
            ref, pred = gateway.embed([gt.workflow_text, pred_text])
            scores.append(score_embedding(ref, pred))
        elif name == "edit_distance":
            scores.append(align_and_score_edit(gt.workflow_text, pred_text, gateway))
        elif name == "step_accuracy":
            scores.append(score_steps(_workflow_steps(gt.workflow_text), pred_text, gateway))
        elif name == "likert":
            scores.append(score_likert(gt.workflow_text, pred_text, gateway))
        elif name == "qa_based":
            pairs = generate_qa_pairs(gt.workflow_text, gateway)
            scores.append(qa_evaluate(pairs, pred_text, gateway))
    return scores


def mean_report_payload(per_seed: dict[int, EvalReport]) -> dict:
    reports = list(per_seed.values())
    intents = sorted({intent for r in reports for intent, _ in r.per_intent})
    per_intent_mean = {}
    for intent in intents:
        values = [r.intents()[intent].accuracy for r in reports if intent in r.intents()]
        per_intent_mean[intent] = round(sum(values) / len(values), 4)
    return {
        "per_seed": {str(seed): report.to_record() for seed, report in per_seed.items()},
        "mean": {
            "macro": sum(r.macro for r in reports) / len(reports),
            "micro": sum(r.micro for r in reports) / len(reports),
            "avg_utt": sum(r.avg_utt for r in reports) / len(reports),
            "per_intent_accuracy": per_intent_mean,
        },
    }


def run_experiment(config: ExperimentConfig, gateway: Gateway | None = None) -> RunManifest:
    """Execute every stage and persist results under runs/<run_id>/.

    A caller-supplied gateway takes precedence over the config's; the tests
    and the fixture recorder use this to inject scripted transports.
    """
    run_id = config.run_id()
    run_dir = config.output_dir / "runs" / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    if gateway is None:
        gateway = build_gateway(config)
    timings: dict[str, float] = {}
    stages_run: list[str] = []

    def stage(name: str):
        class _Timer:
            def __enter__(self) -> None:
                stages_run.append(name)
                self.start = time.perf_counter()

            def __exit__(self, exc_type, exc, tb) -> bool:
                timings[name] = time.perf_counter() - self.start
                if exc is not None and not isinstance(exc, StageError):
                    raise StageError(name, exc) from exc
                return False

        return _Timer()

    with stage("load"):
        corpus = load_corpus(config.corpus_path)
        if config.intents == "all":
            intents = sorted(corpus.intents())
        else:
            intents = list(config.intents)
            missing = [i for i in intents if i not in corpus.intents()]
            if missing:
                raise ValueError(f"intents not in corpus: {missing}")
        by_intent: dict[str, list[Conversation]] = {
            intent: filter_by_intent(corpus, intent) for intent in intents
        }

    strategy_name = config.retrieval.strategy
    elements_by_id: dict[str, str] = {}
    if strategy_name in ("proc_sim", "proc_div"):
        with stage("elements"):
            for intent in intents:
                for conversation in by_intent[intent]:
                    elems = extract_elements(conversation, gateway)
                    save_elements(elems, run_dir / "elements", conversation.id)
                    elements_by_id[conversation.id] = canonical_text(elems)

    with stage("selection"):
        selections: dict[str, tuple[str, ...]] = {}
        for intent in intents:
            conversations = by_intent[intent]
            ids = [c.id for c in conversations]
            if strategy_name == "random":
                result = select_random(ids, config.retrieval.k, config.retrieval.seed)
            else:
                if strategy_name in ("proc_sim", "proc_div"):
                    texts = [elements_by_id[cid] for cid in ids]
                    source = "procedural_elements"
                else:
                    texts = [render_conversation(c) for c in conversations]
                    source = "full_conversation"
                vectors = gateway.embed(texts)
                embedding_set = EmbeddingSet(
                    ids=tuple(ids),
                    vectors=np.array([v.values for v in vectors], dtype=float),
                    source=source,
                )
                if strategy_name == "proc_div":
                    result = select_diverse(embedding_set, config.retrieval.k)
                else:
                    result = select_top_k(embedding_set, config.retrieval.k)
            selections[intent] = result.selected_ids
            _write_json(result.to_record(), run_dir / "selection" / f"{intent}.json")

    with stage("generation"):
        strategy = Strategy(
            kind=config.generation.strategy,
            qa_mode=config.generation.qa_mode,
            ensemble_width=config.generation.ensemble_width,
            temperature=config.generation.temperature,
        )
        artifacts: dict[tuple[str, int], str] = {}
        for intent in intents:
            selected = [corpus.get(cid) for cid in selections[intent]]
            for seed in config.generation.order_seeds:
                artifact = generate_workflow(selected, strategy, gateway, order_seed=seed)
                save_artifact(artifact, run_dir / "artifacts", f"{intent}-seed{seed}")
                artifacts[(intent, seed)] = artifact.text

    with stage("evaluation"):
        per_seed: dict[int, EvalReport] = {}
        for seed in config.generation.order_seeds:
            outcomes: dict[str, list[DialogOutcome]] = {}
            for intent in intents:
                gt = load_ground_truth(config.evaluation.gt_workflows_path, intent)
                outcomes[intent] = evaluate_artifact(
                    artifacts[(intent, seed)],
                    gt,
                    gateway,
                    turn_cap=config.evaluation.turn_cap,
                    subflow_source=config.evaluation.subflow_source,
                    dialogs_dir=run_dir / "dialogs",
                    stem=f"{intent}-seed{seed}",
                )
            per_seed[seed] = aggregate(outcomes)
        if config.evaluation.evaluators:
            for (intent, seed), text in artifacts.items():
                gt = load_ground_truth(config.evaluation.gt_workflows_path, intent)
                scores = run_alt_evaluators(config.evaluation.evaluators, gt, text, gateway)
                save_scores(scores, run_dir / "alt_scores" / f"{intent}-seed{seed}.json")

    with stage("report"):
        from .report import render_text_table, write_csv, write_figure

        payload = mean_report_payload(per_seed)
        _write_json(payload, run_dir / "report.json")
        (run_dir / "report.txt").write_text(render_text_table(payload), encoding="utf-8")
        write_csv(payload, run_dir / "report.csv")
        write_figure(payload, run_dir / "accuracy.png")

    results = {
        "report_json": "report.json",
        "report_table": "report.txt",
        "report_csv": "report.csv",
        "figure": "accuracy.png",
        "selection_dir": "selection",
        "artifacts_dir": "artifacts",
        "dialogs_dir": "dialogs",
    }
    if strategy_name in ("proc_sim", "proc_div"):
        results["elements_dir"] = "elements"
    if config.evaluation.evaluators:
        results["alt_scores_dir"] = "alt_scores"
    manifest_payload = {
        "run_id": run_id,
        "config": {k: v for k, v in config.snapshot.items() if k != "output"},
        "prompt_hashes": template_hashes(),
        "fingerprints": sorted({request_digest(req) for req in gateway.call_log}),
        "stages": stages_run,
        "results": results,
    }
    _write_json(manifest_payload, run_dir / "manifest.json")
    _write_json({"stages": timings, "total": sum(timings.values())}, run_dir / "timings.json")
    logger.info("run %s complete: %d fingerprints", run_id, len(manifest_payload["fingerprints"]))
    return RunManifest(run_id=run_id, run_dir=run_dir, payload=manifest_payload)
