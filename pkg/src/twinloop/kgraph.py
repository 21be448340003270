"""Explanation knowledge graph for one inference cycle: typed nodes and edges
from sensor readings through activated rules to insights, with DOT and JSON
serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .datagen import SENSOR_NAMES
from .reasoner import InferenceResult, KnowledgeBase

NODE_KINDS = ("state", "metrics", "event", "sensor", "rule", "insight")
EDGE_KINDS = ("related_to", "detect", "explained_by", "generated", "linked")

NODE_COLORS = {
    "state": "green",
    "metrics": "gray",
    "event": "salmon",
    "sensor": "lightblue",
    "rule": "pink",
    "insight": "yellow",
}
EDGE_STYLES = {
    "related_to": ("dashed", "gray"),
    "detect": ("dashed", "red"),
    "explained_by": ("solid", "green"),
    "generated": ("dotted", "purple"),
    "linked": ("solid", "black"),
}

# Edges that carry the explanation chain and must stay acyclic.
EXPLANATION_KINDS = ("detect", "explained_by", "generated")


@dataclass
class KGNode:
    id: str
    kind: str
    label: str
    attrs: dict[str, object] = field(default_factory=dict)


@dataclass
class KGEdge:
    src: str
    dst: str
    kind: str


@dataclass
class KGSnapshot:
    nodes: list[KGNode]
    edges: list[KGEdge]
    cycle_index: int = 0
    kb_version: int = 0

    def validate(self) -> None:
        ids = [n.id for n in self.nodes]
        if len(ids) != len(set(ids)):
            raise ValueError("node ids must be unique")
        known = set(ids)
        for node in self.nodes:
            if node.kind not in NODE_KINDS:
                raise ValueError(f"unknown node kind {node.kind!r}")
            if node.kind == "event":
                missing = {"severity", "confidence"} - set(node.attrs)
                if missing:
                    raise ValueError(f"event node missing attributes {sorted(missing)}")
            if node.kind == "rule" and "confidence" not in node.attrs:
                raise ValueError("rule node missing confidence attribute")
        for edge in self.edges:
            if edge.kind not in EDGE_KINDS:
                raise ValueError(f"unknown edge kind {edge.kind!r}")
            if edge.src not in known or edge.dst not in known:
                raise ValueError(f"edge {edge.src}->{edge.dst} references a missing node")
        self._check_explanation_acyclic()

    def _check_explanation_acyclic(self) -> None:
        # Kahn's algorithm over the explanation subgraph.
        chain = [e for e in self.edges if e.kind in EXPLANATION_KINDS]
        nodes = {e.src for e in chain} | {e.dst for e in chain}
        indegree = {n: 0 for n in nodes}
        for e in chain:
            indegree[e.dst] += 1
        queue = [n for n, d in sorted(indegree.items()) if d == 0]
        seen = 0
        while queue:
            n = queue.pop()
            seen += 1
            for e in chain:
                if e.src == n:
                    indegree[e.dst] -= 1
                    if indegree[e.dst] == 0:
                        queue.append(e.dst)
        if seen != len(nodes):
            raise ValueError("explanation subgraph contains a cycle")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KGSnapshot):
            return NotImplemented
        return to_json(self) == to_json(other)


def severity_from_confidence(confidence: float) -> int:
    """Quartile mapping of deviation confidence onto severity 0..3."""
    return min(3, int(confidence * 4.0))


def build(
    twin_state: dict,
    inference: InferenceResult,
    kb: KnowledgeBase,
    metrics: dict,
    top_k_inactive: int = 3,
    severity: int | None = None,
) -> KGSnapshot:
    """Assemble the explanation graph for one cycle.

    Nodes: one state, one metrics, one sensor per reading, the activated
    rules plus the top-k inactive rules by confidence, an event node when a
    deviation is flagged, and one insight per reported insight.  Edges follow
    the fixed taxonomy (sensor-related_to->rule, rule-detect->event,
    insight-explained_by->event, rule-generated->insight, state-linked->
    metrics/event).
    """
    activated = dict(inference.activated_rules)
    for rid in activated:
        if kb.get_rule(rid) is None:
            raise ValueError(f"inference references rule {rid!r} absent from the knowledge base")

    nodes: list[KGNode] = []
    edges: list[KGEdge] = []

    state_label = str(twin_state.get("system_state", "normal"))
    if inference.deviation and inference.deviation_confidence > 0.9:
        state_label = "critical"
    nodes.append(KGNode("state", "state", state_label))
    nodes.append(
        KGNode(
            "metrics",
            "metrics",
            "metrics",
            {
                "efficiency": round(float(metrics.get("efficiency", 0.0)), 4),
                "performance": round(float(metrics.get("performance", 0.0)), 4),
            },
        )
    )
    edges.append(KGEdge("state", "metrics", "linked"))

    readings = twin_state.get("readings", {})
    for sensor in SENSOR_NAMES:
        attrs = {}
        if sensor in readings:
            attrs["value"] = round(float(readings[sensor]), 4)
        nodes.append(KGNode(f"sensor:{sensor}", "sensor", sensor, attrs))

    shown_rules: list[str] = list(activated)
    inactive = sorted(
        (r for r in kb.active_rules() if r.id not in activated),
        key=lambda r: (-r.confidence, r.id),
    )
    shown_rules.extend(r.id for r in inactive[:top_k_inactive])
    for rid in shown_rules:
        rule = kb.get_rule(rid)
        nodes.append(
            KGNode(
                f"rule:{rid}",
                "rule",
                rid,
                {
                    "confidence": round(float(activated.get(rid, rule.confidence)), 4),
                    "activated": rid in activated,
                },
            )
        )
        for sensor in SENSOR_NAMES:
            if any(subject == sensor for _, subject, _ in rule.body):
                edges.append(KGEdge(f"sensor:{sensor}", f"rule:{rid}", "related_to"))

    if inference.deviation:
        sev = (
            severity
            if severity is not None
            else severity_from_confidence(inference.deviation_confidence)
        )
        nodes.append(
            KGNode(
                "event",
                "event",
                "operational_deviation",
                {
                    "severity": int(sev),
                    "confidence": round(float(inference.deviation_confidence), 4),
                },
            )
        )
        edges.append(KGEdge("state", "event", "linked"))
        for rid in activated:
            edges.append(KGEdge(f"rule:{rid}", "event", "detect"))

    for i, insight in enumerate(inference.insights):
        node_id = f"insight:{i}"
        nodes.append(KGNode(node_id, "insight", insight))
        if inference.deviation:
            edges.append(KGEdge(node_id, "event", "explained_by"))
        for rid in activated:
            if insight.startswith(f"{rid} "):
                edges.append(KGEdge(f"rule:{rid}", node_id, "generated"))

    snapshot = KGSnapshot(
        nodes=nodes,
        edges=edges,
        cycle_index=int(twin_state.get("cycle", 0)),
        kb_version=kb.version,
    )
    snapshot.validate()
    return snapshot


def to_dot(s: KGSnapshot) -> str:
    """Directed-graph text with one line per node and per edge."""
    lines = [f'digraph cycle_{s.cycle_index} {{']
    for node in s.nodes:
        attrs = ", ".join(f"{k}={v}" for k, v in sorted(node.attrs.items()))
        label = node.label if not attrs else f"{node.label}\\n{attrs}"
        lines.append(
            f'  "{node.id}" [label="{label}", fillcolor={NODE_COLORS[node.kind]}, '
            f'style=filled];'
        )
    for edge in s.edges:
        style, color = EDGE_STYLES[edge.kind]
        lines.append(
            f'  "{edge.src}" -> "{edge.dst}" [style={style}, color={color}, '
            f'label="{edge.kind}"];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_json(s: KGSnapshot) -> str:
    payload = {
        "cycle": s.cycle_index,
        "kb_version": s.kb_version,
        "nodes": [
            {"id": n.id, "kind": n.kind, "label": n.label, "attrs": n.attrs}
            for n in s.nodes
        ],
        "edges": [{"src": e.src, "dst": e.dst, "kind": e.kind} for e in s.edges],
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def from_json(text: str) -> KGSnapshot:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed snapshot JSON: {exc}") from exc
    for key in ("cycle", "kb_version", "nodes", "edges"):
        if key not in payload:
            raise ValueError(f"snapshot JSON missing {key!r}")
    snapshot = KGSnapshot(
        nodes=[
            KGNode(n["id"], n["kind"], n["label"], dict(n.get("attrs", {})))
            for n in payload["nodes"]
        ],
        edges=[KGEdge(e["src"], e["dst"], e["kind"]) for e in payload["edges"]],
        cycle_index=int(payload["cycle"]),
        kb_version=int(payload["kb_version"]),
    )
    snapshot.validate()
    return snapshot
