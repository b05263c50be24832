"""Command-line entry points.

Exit codes: 0 success, 2 configuration problem, 3 missing replay fixture,
4 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .alt_eval import check_compliance, compliance_rollup, save_scores, write_compliance_csv
from .config import load_config
from .corpus import load_corpus
from .elements import extract_elements, save_elements
from .errors import ConfigError, FixtureMissError, FlowmineError, StageError
from .experiment import (
    GroundTruth,
    evaluate_artifact,
    load_ground_truth,
    run_alt_evaluators,
    run_experiment,
    subflow_descriptions,
)
from .extraction import Strategy, generate_workflow, save_artifact
from .gateway import FixtureStore, Gateway, HttpTransport
from .retrieval import EmbeddingSet, select_diverse, select_random, select_top_k
from .subflow import decompose_workflow_llm, enumerate_paths, load_graph
from .synth import SynthSpec, run_synthesis


def _add_gateway_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--gateway-mode", choices=("live", "record", "replay"), default="replay")
    parser.add_argument("--fixture-dir", required=True, help="fixture directory for record/replay")
    parser.add_argument("--endpoint", default=None, help="provider base URL (live/record)")
    parser.add_argument("--chat-model", default="chat-default")
    parser.add_argument("--embedding-model", default="embed-default")
    parser.add_argument("--parallelism", type=int, default=4)


def _gateway(args: argparse.Namespace) -> Gateway:
    if args.gateway_mode == "replay" and args.endpoint:
        raise ConfigError("replay mode forbids live endpoints")
    if args.gateway_mode == "live" and not args.endpoint:
        raise ConfigError("live mode requires --endpoint")
    transport = HttpTransport(args.endpoint) if args.endpoint else None
    return Gateway(
        mode=args.gateway_mode,
        fixture_dir=args.fixture_dir,
        transport=transport,
        chat_model=args.chat_model,
        embedding_model=args.embedding_model,
        parallelism=args.parallelism,
    )


def _load_gt(path: str) -> GroundTruth:
    gt_path = Path(path)
    return load_ground_truth(gt_path.parent, gt_path.stem)


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config, overrides=args.override)
    manifest = run_experiment(config)
    report = json.loads((manifest.run_dir / "report.json").read_text(encoding="utf-8"))
    mean = report["mean"]
    print(f"run {manifest.run_id} complete: {manifest.run_dir}")
    print(
        f"macro {mean['macro']:.4f} | micro {mean['micro']:.4f} | #utt {mean['avg_utt']:.2f}"
    )
    return 0


def cmd_extract_elements(args: argparse.Namespace) -> int:
    gateway = _gateway(args)
    corpus = load_corpus(args.corpus)
    wanted = set(args.intent or [])
    count = 0
    for conversation in corpus:
        if wanted and conversation.intent_label not in wanted:
            continue
        elements = extract_elements(conversation, gateway)
        save_elements(elements, args.out, conversation.id)
        count += 1
    print(f"extracted procedural elements for {count} conversation(s) into {args.out}")
    return 0


def cmd_retrieve(args: argparse.Namespace) -> int:
    import numpy as np

    from .corpus import filter_by_intent, render_conversation
    from .elements import canonical_text, load_elements

    gateway = _gateway(args)
    corpus = load_corpus(args.corpus)
    conversations = filter_by_intent(corpus, args.intent)
    if not conversations:
        raise ConfigError(f"intent {args.intent!r} not present in corpus")
    ids = [c.id for c in conversations]
    if args.strategy == "random":
        result = select_random(ids, args.k, args.seed)
    else:
        if args.strategy in ("proc_sim", "proc_div"):
            if not args.elements_dir:
                raise ConfigError(f"strategy {args.strategy} requires --elements-dir")
            texts = [canonical_text(load_elements(args.elements_dir, cid)) for cid in ids]
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
        if args.strategy == "proc_div":
            result = select_diverse(embedding_set, args.k)
        else:
            result = select_top_k(embedding_set, args.k)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        json.dumps(result.to_record(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(f"selected {len(result.selected_ids)} conversation(s): {', '.join(result.selected_ids)}")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    gateway = _gateway(args)
    corpus = load_corpus(args.corpus)
    if args.selection:
        record = json.loads(Path(args.selection).read_text(encoding="utf-8"))
        ids = record["selected_ids"]
    else:
        ids = [x for x in args.ids.split(",") if x]
    conversations = [corpus.get(cid) for cid in ids]
    strategy = Strategy(
        kind=args.strategy,
        qa_mode=args.qa_mode,
        temperature=args.temperature,
    )
    artifact = generate_workflow(conversations, strategy, gateway, order_seed=args.order_seed)
    json_path, text_path = save_artifact(artifact, args.out, args.stem)
    print(f"workflow written to {text_path} (artifact {json_path})")
    return 0


def cmd_decompose(args: argparse.Namespace) -> int:
    if args.graph:
        flows = [flow.description for flow in enumerate_paths(load_graph(args.graph))]
    else:
        gateway = _gateway(args)
        flows = decompose_workflow_llm(Path(args.workflow).read_text(encoding="utf-8"), gateway)
    output = "\n".join(flows) + "\n"
    if args.out:
        Path(args.out).write_text(output, encoding="utf-8")
    else:
        sys.stdout.write(output)
    return 0


def cmd_evaluate_e2e(args: argparse.Namespace) -> int:
    gateway = _gateway(args)
    gt = _load_gt(args.gt)
    pred_text = Path(args.pred).read_text(encoding="utf-8")
    outcomes = evaluate_artifact(
        pred_text,
        gt,
        gateway,
        turn_cap=args.turn_cap,
        subflow_source=args.subflow_source,
        dialogs_dir=Path(args.dialogs_dir) if args.dialogs_dir else None,
        stem=gt.intent,
    )
    accuracy = sum(1 for o in outcomes if o.success) / len(outcomes)
    payload = {
        "intent": gt.intent,
        "outcomes": [{"success": o.success, "utterances": o.utterances} for o in outcomes],
        "accuracy": round(accuracy, 4),
    }
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    print(f"{gt.intent}: {sum(1 for o in outcomes if o.success)}/{len(outcomes)} sub-flows passed")
    return 0


def cmd_evaluate_alt(args: argparse.Namespace) -> int:
    gateway = _gateway(args)
    gt = _load_gt(args.gt)
    pred_text = Path(args.pred).read_text(encoding="utf-8")
    methods = tuple(m for m in args.methods.split(",") if m)
    scores = run_alt_evaluators(methods, gt, pred_text, gateway)
    save_scores(scores, args.out)
    for score in scores:
        print(f"{score.method}: {score.value:.4f}")
    return 0


def cmd_check_compliance(args: argparse.Namespace) -> int:
    gateway = _gateway(args)
    corpus = load_corpus(args.corpus)
    workflow_path = Path(args.workflow)
    # A ground-truth JSON file carries its intent, so only matching
    # conversations are checked; a plain-text rules file checks everything.
    intent_filter = None
    if workflow_path.suffix == ".json":
        gt = _load_gt(args.workflow)
        workflow_text = gt.workflow_text
        intent_filter = gt.intent
    else:
        workflow_text = workflow_path.read_text(encoding="utf-8")
    by_intent: dict[str, list] = {}
    for conversation in corpus:
        if intent_filter is not None and conversation.intent_label != intent_filter:
            continue
        report = check_compliance(conversation, workflow_text, gateway)
        by_intent.setdefault(conversation.intent_label, []).append(report)
    if not by_intent:
        raise ValueError(f"no conversations with intent {intent_filter!r} in {args.corpus}")
    rows = compliance_rollup(by_intent)
    write_compliance_csv(rows, args.out)
    for row in rows:
        print(
            f"{row['intent']}: F {row['F%']:.2f}% | NA {row['NA%']:.2f}%"
            f" | NF {row['NF%']:.2f}% | NC {row['NC%']:.2f}%"
        )
    return 0


def cmd_synthesize(args: argparse.Namespace) -> int:
    gateway = _gateway(args)
    gt = _load_gt(args.gt)
    subflows = subflow_descriptions(gt, "graph", gateway)
    spec = SynthSpec(
        workflow_text=gt.workflow_text,
        subflows=tuple(subflows),
        intent=gt.intent,
        profiles_per_subflow=args.profiles,
        conversations_per_pairing=args.replicates,
        profile_seed=args.profile_seed,
        temperature=args.temperature,
    )
    corpus, manifest = run_synthesis(spec, gateway, output_dir=args.out)
    print(f"synthesized {len(corpus)} conversation(s) into {args.out}")
    return 0 if manifest["status"] == "complete" else 4


def cmd_report(args: argparse.Namespace) -> int:
    from .report import render_text_table, write_csv, write_figure

    run_dir = Path(args.run)
    payload = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
    table = render_text_table(payload)
    (run_dir / "report.txt").write_text(table, encoding="utf-8")
    write_csv(payload, run_dir / "report.csv")
    write_figure(payload, run_dir / "accuracy.png")
    sys.stdout.write(table)
    return 0


def cmd_fixtures_verify(args: argparse.Namespace) -> int:
    store = FixtureStore(args.dir)
    corrupt = store.verify()
    if corrupt:
        for digest in corrupt:
            print(f"corrupt fixture: {digest}", file=sys.stderr)
        return 3
    missing: list[str] = []
    if args.manifest:
        payload = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        for digest in payload.get("fingerprints", []):
            if not store.path_for(digest).exists():
                missing.append(digest)
    if missing:
        for digest in missing:
            print(f"missing fixture for fingerprint: {digest}", file=sys.stderr)
        return 3
    print(f"verified {len(store.digests())} fixture(s) in {args.dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowmine",
        description="Mine dialog workflows from conversations and evaluate them with simulated bots.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a full experiment from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("extract-elements", help="mine procedural elements per conversation")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--intent", action="append", default=[])
    _add_gateway_args(p)
    p.set_defaults(handler=cmd_extract_elements)

    p = sub.add_parser("retrieve", help="select conversations for one intent")
    p.add_argument("--corpus", required=True)
    p.add_argument("--intent", required=True)
    p.add_argument("--strategy", choices=("proc_sim", "conv_sim", "proc_div", "random"), required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=17)
    p.add_argument("--elements-dir", default=None)
    p.add_argument("--out", required=True)
    _add_gateway_args(p)
    p.set_defaults(handler=cmd_retrieve)

    p = sub.add_parser("generate", help="generate a workflow from selected conversations")
    p.add_argument("--corpus", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--selection", help="SelectionResult JSON file")
    group.add_argument("--ids", help="comma-separated conversation ids")
    p.add_argument("--strategy", required=True)
    p.add_argument("--qa-mode", default=None)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--order-seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stem", default="workflow")
    _add_gateway_args(p)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("decompose", help="enumerate sub-flows from a graph or via the model")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--graph", help="workflow graph JSON")
    group.add_argument("--workflow", help="workflow text file (model-based decomposition)")
    p.add_argument("--out", default=None)
    p.add_argument("--gateway-mode", choices=("live", "record", "replay"), default="replay")
    p.add_argument("--fixture-dir", default="fixtures")
    p.add_argument("--endpoint", default=None)
    p.add_argument("--chat-model", default="chat-default")
    p.add_argument("--embedding-model", default="embed-default")
    p.add_argument("--parallelism", type=int, default=4)
    p.set_defaults(handler=cmd_decompose)

    p = sub.add_parser("evaluate-e2e", help="five-stage evaluation of a predicted workflow")
    p.add_argument("--pred", required=True, help="predicted workflow text file")
    p.add_argument("--gt", required=True, help="ground-truth JSON file")
    p.add_argument("--turn-cap", type=int, default=30)
    p.add_argument("--subflow-source", choices=("graph", "llm"), default="graph")
    p.add_argument("--dialogs-dir", default=None)
    p.add_argument("--out", default=None)
    _add_gateway_args(p)
    p.set_defaults(handler=cmd_evaluate_e2e)

    p = sub.add_parser("evaluate-alt", help="reference-based evaluator scores")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--methods", required=True, help="comma-separated evaluator names")
    p.add_argument("--out", required=True)
    _add_gateway_args(p)
    p.set_defaults(handler=cmd_evaluate_alt)

    p = sub.add_parser("check-compliance", help="per-rule compliance of conversations")
    p.add_argument("--corpus", required=True)
    p.add_argument("--workflow", required=True, help="guideline workflow text file")
    p.add_argument("--out", required=True, help="rollup CSV path")
    _add_gateway_args(p)
    p.set_defaults(handler=cmd_check_compliance)

    p = sub.add_parser("synthesize", help="generate compliant conversations from a ground truth")
    p.add_argument("--gt", required=True, help="ground-truth JSON file with a graph")
    p.add_argument("--profiles", type=int, default=1)
    p.add_argument("--replicates", type=int, default=2)
    p.add_argument("--profile-seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--out", required=True)
    _add_gateway_args(p)
    p.set_defaults(handler=cmd_synthesize)

    p = sub.add_parser("report", help="re-render report files from a run directory")
    p.add_argument("--run", required=True, help="runs/<run_id> directory")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("fixtures", help="fixture store maintenance")
    fixtures_sub = p.add_subparsers(dest="fixtures_command", required=True)
    v = fixtures_sub.add_parser("verify", help="check fixture integrity and manifest coverage")
    v.add_argument("--dir", required=True)
    v.add_argument("--manifest", default=None)
    v.set_defaults(handler=cmd_fixtures_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FixtureMissError as exc:
        print(f"fixture miss: {exc}", file=sys.stderr)
        return 3
    except StageError as exc:
        if isinstance(exc.cause, FixtureMissError):
            print(f"fixture miss in stage {exc.stage!r}: {exc.cause}", file=sys.stderr)
            return 3
        print(f"{exc}", file=sys.stderr)
        return 4
    except FlowmineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (OSError, ValueError) as exc:
        # Bad runtime inputs (missing files, malformed payloads, empty
        # selections) fail like any other stage, without a traceback.
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
