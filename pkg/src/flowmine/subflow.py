"""Workflows as branch-conditioned state machines.

Two complementary paths to sub-flows:

* a structured :class:`WorkflowGraph` whose START-to-END paths are
  enumerated deterministically (the test oracle and scenario-count source),
* an LLM decomposition of free-text workflows into one branch per line,
  which is how the evaluation pipeline treats arbitrary generated text.

Graphs are JSON on disk: ``{"nodes": [{id, kind, label}], "edges": [{from,
to, condition}]}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import GraphError, ResponseParseError
from .gateway import ChatMessage, Gateway
from .prompts import load_template

NODE_KINDS = ("start", "step", "branch", "end")

MAX_PATHS = 10_000


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    label: str = ""

    def __post_init__(self) -> None:
        if self.kind not in NODE_KINDS:
            raise GraphError(f"node {self.id!r} has unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    condition: str | None = None


@dataclass(frozen=True)
class WorkflowGraph:
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]

    def node_map(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    def outgoing(self, node_id: str) -> list[Edge]:
        """Out-edges in canonical order: by condition string, then dst id."""
        return sorted(
            (e for e in self.edges if e.src == node_id),
            key=lambda e: (e.condition or "", e.dst),
        )


@dataclass(frozen=True)
class SubFlow:
    index: int
    node_path: tuple[str, ...]
    condition_bindings: tuple[tuple[str, str], ...]
    description: str

    def to_record(self) -> dict:
        return {
            "index": self.index,
            "node_path": list(self.node_path),
            "condition_bindings": {k: v for k, v in self.condition_bindings},
            "description": self.description,
        }


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations


def validate_graph(graph: WorkflowGraph) -> ValidationReport:
    """Check every structural invariant; the report lists all findings."""
    report = ValidationReport()
    ids = [n.id for n in graph.nodes]
    if len(ids) != len(set(ids)):
        report.violations.append("duplicate node ids")
        return report
    nodes = graph.node_map()

    starts = [n.id for n in graph.nodes if n.kind == "start"]
    ends = [n.id for n in graph.nodes if n.kind == "end"]
    if len(starts) != 1:
        report.violations.append(f"expected exactly one start node, found {sorted(starts)!r}")
    if not ends:
        report.violations.append("no end node")

    for edge in graph.edges:
        if edge.src not in nodes or edge.dst not in nodes:
            report.violations.append(f"edge {edge.src!r}->{edge.dst!r} references an unknown node")
    if any("unknown node" in v for v in report.violations):
        return report

    for node in graph.nodes:
        out = graph.outgoing(node.id)
        if node.kind == "end" and out:
            report.violations.append(f"end node {node.id!r} has outgoing edges")
        if node.kind == "branch":
            conditions = [e.condition or "" for e in out]
            if len(out) < 2:
                report.violations.append(f"branch node {node.id!r} is degenerate (fewer than 2 out-edges)")
            if len(conditions) != len(set(conditions)):
                report.violations.append(f"branch node {node.id!r} has duplicate edge conditions")

    # Cycle check: iterative three-color DFS over all nodes.
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {nid: WHITE for nid in nodes}
    for root in sorted(nodes):
        if color[root] != WHITE:
            continue
        stack: list[tuple[str, int]] = [(root, 0)]
        color[root] = GRAY
        while stack:
            nid, edge_pos = stack[-1]
            out = graph.outgoing(nid)
            if edge_pos < len(out):
                stack[-1] = (nid, edge_pos + 1)
                nxt = out[edge_pos].dst
                if color[nxt] == GRAY:
                    report.violations.append(f"cycle detected through node {nxt!r}")
                    return report
                if color[nxt] == WHITE:
                    color[nxt] = GRAY
                    stack.append((nxt, 0))
            else:
                color[nid] = BLACK
                stack.pop()

    if len(starts) == 1:
        reachable = {starts[0]}
        frontier = [starts[0]]
        while frontier:
            nid = frontier.pop()
            for edge in graph.outgoing(nid):
                if edge.dst not in reachable:
                    reachable.add(edge.dst)
                    frontier.append(edge.dst)
        unreachable = sorted(set(nodes) - reachable)
        if unreachable:
            report.violations.append(f"nodes unreachable from start: {unreachable!r}")
        if not any(nodes[nid].kind == "end" for nid in reachable):
            report.violations.append("no end node reachable from start")
    return report


def _describe(graph: WorkflowGraph, path: list[str], taken: dict[str, str]) -> str:
    nodes = graph.node_map()
    parts: list[str] = []
    for nid in path:
        node = nodes[nid]
        if node.kind in ("start", "end"):
            continue
        label = node.label or node.id
        if node.kind == "branch" and nid in taken:
            parts.append(f"{label} [{taken[nid]}]")
        else:
            parts.append(label)
    return " -> ".join(parts)


def enumerate_paths(graph: WorkflowGraph) -> list[SubFlow]:
    """All START-to-END paths, depth-first, edges in canonical order.

    Deterministic across platforms; refuses graphs that fail validation and
    aborts past MAX_PATHS to contain malformed input.
    """
    report = validate_graph(graph)
    if not report.valid:
        raise GraphError("invalid graph: " + "; ".join(report.violations))
    nodes = graph.node_map()
    start = next(n.id for n in graph.nodes if n.kind == "start")

    subflows: list[SubFlow] = []

    def walk(nid: str, trail: list[str], taken: dict[str, str]) -> None:
        trail = trail + [nid]
        if nodes[nid].kind == "end":
            if len(subflows) >= MAX_PATHS:
                raise GraphError(f"path count exceeds the {MAX_PATHS} guard")
            bindings = tuple(
                (nodes[bid].label or bid, condition) for bid, condition in taken.items()
            )
            subflows.append(
                SubFlow(
                    index=len(subflows),
                    node_path=tuple(trail),
                    condition_bindings=bindings,
                    description=_describe(graph, trail, taken),
                )
            )
            return
        for edge in graph.outgoing(nid):
            if nodes[nid].kind == "branch":
                walk(edge.dst, trail, {**taken, nid: edge.condition or ""})
            else:
                walk(edge.dst, trail, taken)

    walk(start, [], {})
    return subflows


def graph_from_record(record: dict) -> WorkflowGraph:
    try:
        nodes = tuple(
            Node(id=n["id"], kind=n["kind"], label=n.get("label", "")) for n in record["nodes"]
        )
        edges = tuple(
            Edge(src=e["from"], dst=e["to"], condition=e.get("condition")) for e in record["edges"]
        )
    except (KeyError, TypeError) as exc:
        raise GraphError(f"malformed graph record: {exc}") from exc
    return WorkflowGraph(nodes=nodes, edges=edges)


def graph_to_record(graph: WorkflowGraph) -> dict:
    return {
        "nodes": [{"id": n.id, "kind": n.kind, "label": n.label} for n in graph.nodes],
        "edges": [
            {"from": e.src, "to": e.dst, "condition": e.condition} for e in graph.edges
        ],
    }


def load_graph(path: str | Path) -> WorkflowGraph:
    with Path(path).open("r", encoding="utf-8") as handle:
        return graph_from_record(json.load(handle))


def save_graph(graph: WorkflowGraph, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        json.dump(graph_to_record(graph), handle, sort_keys=True, indent=2)
        handle.write("\n")


def decompose_workflow_llm(workflow_text: str, gateway: Gateway) -> list[str]:
    """Ask the model for one branch description per line; blanks dropped."""
    if not workflow_text.strip():
        raise GraphError("workflow text is empty")
    prompt = load_template("branch_decompose").render(policy=workflow_text)
    raw = gateway.complete([ChatMessage("user", prompt)])
    lines = [line.strip() for line in raw.splitlines() if line.strip()]
    if not lines:
        raise ResponseParseError("decomposition produced no branch lines", raw)
    return lines
