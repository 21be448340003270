import numpy as np
import pytest

from twinloop import kgraph
from twinloop.kgraph import KGEdge, KGNode, KGSnapshot
from twinloop.reasoner import InferenceResult, KnowledgeBase, Rule, update_rules


def make_kb():
    kb = KnowledgeBase(tau=0.85)
    update_rules(
        kb,
        [
            Rule(
                id="",
                body=frozenset(
                    {
                        ("feature_threshold", "pressure", "low"),
                        ("feature_threshold", "temperature", "low"),
                    }
                ),
                confidence=0.93,
            ),
            Rule(
                id="",
                body=frozenset({("feature_threshold", "vibration", "high")}),
                confidence=0.91,
            ),
            Rule(
                id="",
                body=frozenset({("feature_gradient", "efficiency_index", "high")}),
                confidence=0.88,
            ),
        ],
    )
    return kb


def twin_state():
    return {
        "cycle": 12,
        "system_state": "normal",
        "readings": {"temperature": 68.4, "vibration": 44.1, "pressure": 18.0},
    }


def no_deviation():
    return InferenceResult([], [], False, 0.0)


def deviation_result():
    return InferenceResult(
        activated_rules=[("neural_rule_1", 1.0)],
        insights=["System Stress Triggered", "neural_rule_1 activated"],
        deviation=True,
        deviation_confidence=1.0,
    )


def test_build_without_deviation_has_no_event_or_detect_edges():
    snap = kgraph.build(twin_state(), no_deviation(), make_kb(), {"efficiency": 0.9, "performance": 1.1})
    kinds = {n.kind for n in snap.nodes}
    assert "event" not in kinds
    assert {"state", "metrics", "sensor", "rule"} <= kinds
    assert all(e.kind != "detect" for e in snap.edges)
    sensor_nodes = [n for n in snap.nodes if n.kind == "sensor"]
    assert len(sensor_nodes) == 3


def test_build_with_activation_links_rule_to_event():
    snap = kgraph.build(
        twin_state(),
        deviation_result(),
        make_kb(),
        {"efficiency": 0.07, "performance": 7.2},
        severity=2,
    )
    event = next(n for n in snap.nodes if n.kind == "event")
    assert event.attrs["severity"] == 2
    assert event.attrs["confidence"] == 1.0
    assert any(
        e.kind == "detect" and e.src == "rule:neural_rule_1" and e.dst == "event"
        for e in snap.edges
    )
    # Activated-rule insight is generated by its rule and explains the event.
    assert any(e.kind == "generated" and e.src == "rule:neural_rule_1" for e in snap.edges)
    assert any(e.kind == "explained_by" and e.dst == "event" for e in snap.edges)


def test_build_counts_match_recount_oracle():
    kb = make_kb()
    inference = deviation_result()
    snap = kgraph.build(twin_state(), inference, kb, {"efficiency": 0.5, "performance": 2.0})
    # Independent recount from the inputs.
    n_rules_shown = len(inference.activated_rules) + min(
        3, len(kb.active_rules()) - len(inference.activated_rules)
    )
    expected_nodes = 1 + 1 + 3 + n_rules_shown + 1 + len(inference.insights)
    assert len(snap.nodes) == expected_nodes
    rule_sensor_edges = 0
    for node in snap.nodes:
        if node.kind != "rule":
            continue
        rule = kb.get_rule(node.label)
        rule_sensor_edges += len(
            {s for _, s, _ in rule.body} & {"temperature", "vibration", "pressure"}
        )
    expected_edges = (
        1  # state-metrics
        + 1  # state-event
        + rule_sensor_edges
        + len(inference.activated_rules)  # detect
        + len(inference.insights)  # explained_by
        + sum(
            1
            for i in inference.insights
            for rid, _ in inference.activated_rules
            if i.startswith(f"{rid} ")
        )
    )
    assert len(snap.edges) == expected_edges


def test_build_rejects_unknown_rule_ids():
    inference = InferenceResult([("neural_rule_99", 0.9)], [], True, 0.9)
    with pytest.raises(ValueError, match="neural_rule_99"):
        kgraph.build(twin_state(), inference, make_kb(), {})


def test_top_k_inactive_rules_selected_by_confidence():
    kb = make_kb()
    snap = kgraph.build(twin_state(), no_deviation(), kb, {}, top_k_inactive=2)
    rule_labels = [n.label for n in snap.nodes if n.kind == "rule"]
    assert rule_labels == ["neural_rule_1", "neural_rule_2"]


def test_to_dot_line_counts():
    snap = kgraph.build(
        twin_state(), deviation_result(), make_kb(), {"efficiency": 0.3, "performance": 3.3}
    )
    dot = kgraph.to_dot(snap)
    lines = dot.strip().splitlines()
    node_lines = [ln for ln in lines if "->" not in ln and "[label=" in ln]
    edge_lines = [ln for ln in lines if "->" in ln]
    assert len(node_lines) == len(snap.nodes)
    assert len(edge_lines) == len(snap.edges)
    assert "fillcolor=salmon" in dot  # event color code
    assert "fillcolor=pink" in dot


def test_to_dot_empty_snapshot():
    snap = KGSnapshot(nodes=[], edges=[], cycle_index=0, kb_version=0)
    dot = kgraph.to_dot(snap)
    assert dot == "digraph cycle_0 {\n}\n"


def test_json_round_trip_identity():
    snap = kgraph.build(
        twin_state(), deviation_result(), make_kb(), {"efficiency": 0.07, "performance": 7.2}
    )
    back = kgraph.from_json(kgraph.to_json(snap))
    assert back == snap
    assert kgraph.to_json(back) == kgraph.to_json(snap)


def test_json_round_trip_random_snapshot():
    rng = np.random.default_rng(5)
    nodes = [KGNode(f"sensor:{i}", "sensor", f"s{i}", {"value": float(rng.random())}) for i in range(50)]
    edges = [
        KGEdge(f"sensor:{int(rng.integers(0, 50))}", f"sensor:{int(rng.integers(0, 50))}", "linked")
        for _ in range(60)
    ]
    snap = KGSnapshot(nodes=nodes, edges=edges, cycle_index=7, kb_version=3)
    snap.validate()
    assert kgraph.from_json(kgraph.to_json(snap)) == snap


def test_serialization_is_deterministic():
    a = kgraph.build(twin_state(), deviation_result(), make_kb(), {"efficiency": 0.5})
    b = kgraph.build(twin_state(), deviation_result(), make_kb(), {"efficiency": 0.5})
    assert kgraph.to_json(a) == kgraph.to_json(b)
    assert kgraph.to_dot(a) == kgraph.to_dot(b)


def test_from_json_rejects_unknown_edge_kind():
    snap = kgraph.build(twin_state(), no_deviation(), make_kb(), {})
    text = kgraph.to_json(snap).replace('"kind":"linked"', '"kind":"causes"')
    with pytest.raises(ValueError, match="causes"):
        kgraph.from_json(text)


def test_from_json_rejects_dangling_edges():
    text = (
        '{"cycle":0,"kb_version":0,"edges":[{"src":"a","dst":"b","kind":"linked"}],'
        '"nodes":[]}'
    )
    with pytest.raises(ValueError, match="missing node"):
        kgraph.from_json(text)


def test_validate_rejects_event_without_required_attrs():
    snap = KGSnapshot(
        nodes=[KGNode("event", "event", "deviation", {"severity": 1})],
        edges=[],
    )
    with pytest.raises(ValueError, match="confidence"):
        snap.validate()


def test_explanation_subgraph_must_be_acyclic():
    nodes = [
        KGNode("rule:a", "rule", "a", {"confidence": 0.9}),
        KGNode("event", "event", "e", {"severity": 1, "confidence": 0.9}),
        KGNode("insight:0", "insight", "i"),
    ]
    edges = [
        KGEdge("rule:a", "event", "detect"),
        KGEdge("event", "insight:0", "generated"),
        KGEdge("insight:0", "rule:a", "explained_by"),
    ]
    with pytest.raises(ValueError, match="cycle"):
        KGSnapshot(nodes=nodes, edges=edges).validate()


def test_severity_quartile_mapping():
    assert kgraph.severity_from_confidence(0.1) == 0
    assert kgraph.severity_from_confidence(0.3) == 1
    assert kgraph.severity_from_confidence(0.6) == 2
    assert kgraph.severity_from_confidence(0.8) == 3
    assert kgraph.severity_from_confidence(1.0) == 3
