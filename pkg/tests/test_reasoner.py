import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinloop import reasoner
from twinloop.pipeline import FEATURE_ORDER
from twinloop.reasoner import (
    DETECTOR_RULE_ID,
    Discretizer,
    Fact,
    InferenceResult,
    KnowledgeBase,
    Predicate,
    Rule,
    facts_from_prediction,
    infer,
    prune_rules,
    rule_confidence,
    rules_from_text,
    rules_to_text,
    update_rules,
)


def brute_force_infer(rules, facts):
    """Independent naive evaluator: rescan every rule against the fact list
    until nothing new fires."""
    known = [f.atom() for f in facts]
    fired = []
    progress = True
    while progress:
        progress = False
        for rule in rules:
            if rule.verdict == "rejected" or rule.id in fired:
                continue
            if all(any(cond == atom for atom in known) for cond in rule.body):
                fired.append(rule.id)
                known.append(("derived", rule.id, None))
                progress = True
    return set(fired)


def thr(feature, level):
    return (Predicate.FEATURE_THRESHOLD.value, feature, level)


def grad(feature, level):
    return (Predicate.FEATURE_GRADIENT.value, feature, level)


def make_rule(rid, atoms, conf=0.95, **kw):
    return Rule(id=rid, body=frozenset(atoms), confidence=conf, **kw)


def thr_fact(feature, level, **kw):
    return Fact(Predicate.FEATURE_THRESHOLD.value, feature, level, **kw)


# rule_confidence -------------------------------------------------------------

def test_rule_confidence_direct_evaluation():
    assert rule_confidence(100, 90, 90, 10) == pytest.approx(0.81, abs=1e-12)


def test_rule_confidence_perfect_rule():
    assert rule_confidence(50, 50, 50, 0) == 1.0
    assert rule_confidence(50, 50, 17, 0) == 1.0


def test_rule_confidence_degenerate_counts():
    assert rule_confidence(0, 0, 0, 0) == 0.0
    assert rule_confidence(10, 5, 0, 0) == 0.0


def test_rule_confidence_rejects_bad_ordering():
    with pytest.raises(ValueError):
        rule_confidence(5, 6, 1, 1)
    with pytest.raises(ValueError):
        rule_confidence(5, 3, -1, 1)


@given(
    support=st.integers(0, 1000),
    co_frac=st.floats(0, 1),
    tp=st.integers(0, 1000),
    fp=st.integers(0, 1000),
)
@settings(max_examples=200, deadline=None)
def test_rule_confidence_bounds(support, co_frac, tp, fp):
    co = int(support * co_frac)
    conf = rule_confidence(support, co, tp, fp)
    assert 0.0 <= conf <= 1.0
    if conf == 1.0:
        assert co == support and fp == 0


# discretize -------------------------------------------------------------------

@pytest.fixture
def fitted_discretizer():
    rng = np.random.default_rng(0)
    disc = Discretizer(feature_order=FEATURE_ORDER)
    disc.fit(rng.standard_normal((200, 10, len(FEATURE_ORDER))))
    return disc


def test_discretize_low_threshold_facts(fitted_discretizer):
    window = np.full((10, len(FEATURE_ORDER)), -2.0)
    facts = fitted_discretizer.discretize(window)
    lows = {
        f.subject
        for f in facts
        if f.predicate == Predicate.FEATURE_THRESHOLD.value and f.level == "low"
    }
    assert lows == {"temperature", "vibration", "pressure", "efficiency_index"}


def test_discretize_constant_window_normal_gradients(fitted_discretizer):
    window = np.full((10, len(FEATURE_ORDER)), 0.4)
    facts = fitted_discretizer.discretize(window)
    gradient_levels = {
        f.level for f in facts if f.predicate == Predicate.FEATURE_GRADIENT.value
    }
    assert gradient_levels == {"normal"}


def test_discretize_steep_ramp_flags_gradient(fitted_discretizer):
    disc = fitted_discretizer
    window = np.zeros((10, len(FEATURE_ORDER)))
    j = FEATURE_ORDER.index("pressure")
    # slope of 3 gradient sigmas per step: mean first difference oracle
    slope = 3.0 * disc.grad_sigma["pressure"]
    window[:, j] = np.arange(10) * slope
    facts = disc.discretize(window)
    level = next(
        f.level
        for f in facts
        if f.predicate == Predicate.FEATURE_GRADIENT.value and f.subject == "pressure"
    )
    assert level == "high"


def test_discretizer_rejects_unknown_feature():
    with pytest.raises(ValueError, match="unknown feature"):
        Discretizer(feature_order=("a", "b"), rule_features=("temperature",))


def test_discretize_rejects_empty_window(fitted_discretizer):
    with pytest.raises(ValueError):
        fitted_discretizer.discretize(np.zeros((0, len(FEATURE_ORDER))))


# facts_from_prediction --------------------------------------------------------

def test_facts_from_prediction_above_threshold():
    facts = facts_from_prediction(0.9981, [], threshold=0.5, time=7)
    assert len(facts) == 1
    fact = facts[0]
    assert fact.predicate == Predicate.KEY_EVENT.value
    assert fact.confidence == pytest.approx(0.9981)
    assert fact.time == 7


def test_facts_from_prediction_below_threshold():
    assert facts_from_prediction(0.3, [], threshold=0.5) == []


def test_facts_from_prediction_boundary_is_strict():
    assert facts_from_prediction(0.5, [], threshold=0.5) == []


def test_facts_from_prediction_passes_window_facts_through():
    base = [thr_fact("pressure", "low")]
    out = facts_from_prediction(0.2, base, threshold=0.5)
    assert out == base


def test_facts_from_prediction_rejects_bad_threshold():
    with pytest.raises(ValueError):
        facts_from_prediction(0.5, [], threshold=0.0)


# infer ------------------------------------------------------------------------

def neural_rule_1():
    return make_rule(
        "neural_rule_1",
        [
            thr("efficiency_index", "low"),
            thr("pressure", "low"),
            thr("temperature", "low"),
            thr("vibration", "low"),
        ],
        conf=0.999,
    )


def test_infer_activates_all_low_rule():
    kb = KnowledgeBase(tau=0.85)
    kb.rules.append(neural_rule_1())
    facts = [
        thr_fact("efficiency_index", "low"),
        thr_fact("pressure", "low"),
        thr_fact("temperature", "low"),
        thr_fact("vibration", "low"),
    ]
    result = infer(kb, facts)
    assert result.activated_ids() == ["neural_rule_1"]
    assert result.deviation
    assert result.deviation_confidence == pytest.approx(0.999)
    assert "System Stress Triggered" in result.insights
    assert "neural_rule_1 activated" in result.insights


def test_infer_empty_fact_set():
    kb = KnowledgeBase(tau=0.85)
    kb.rules.append(neural_rule_1())
    result = infer(kb, [])
    assert result.activated_rules == []
    assert not result.deviation
    assert result.deviation_confidence == 0.0


def test_infer_detector_alert_carries_fact_confidence():
    kb = KnowledgeBase.seeded(tau=0.85)
    facts = facts_from_prediction(0.9981, [], threshold=0.5)
    result = infer(kb, facts)
    assert result.activated_ids() == [DETECTOR_RULE_ID]
    assert result.deviation_confidence == pytest.approx(0.9981)


def test_infer_specific_rule_wins_precedence():
    kb = KnowledgeBase(tau=0.85)
    general = make_rule("neural_rule_1", [thr("pressure", "low"), thr("temperature", "low")], 0.92)
    specific = make_rule(
        "neural_rule_2",
        [
            thr("pressure", "low"),
            thr("temperature", "low"),
            thr("vibration", "low"),
            thr("efficiency_index", "low"),
        ],
        0.90,
    )
    kb.rules.extend([general, specific])
    facts = [
        thr_fact("pressure", "low"),
        thr_fact("temperature", "low"),
        thr_fact("vibration", "low"),
        thr_fact("efficiency_index", "low"),
    ]
    result = infer(kb, facts)
    assert result.activated_ids() == ["neural_rule_2", "neural_rule_1"]


def test_infer_supports_chained_rules():
    kb = KnowledgeBase(tau=0.85)
    kb.rules.append(make_rule("neural_rule_1", [thr("pressure", "high")], 0.9))
    kb.rules.append(
        make_rule("neural_rule_2", [("derived", "neural_rule_1", None)], 0.8)
    )
    result = infer(kb, [thr_fact("pressure", "high")])
    assert set(result.activated_ids()) == {"neural_rule_1", "neural_rule_2"}


def test_infer_skips_rejected_rules():
    kb = KnowledgeBase(tau=0.85)
    kb.rules.append(neural_rule_1())
    kb.set_verdict("neural_rule_1", "rejected")
    facts = [
        thr_fact("efficiency_index", "low"),
        thr_fact("pressure", "low"),
        thr_fact("temperature", "low"),
        thr_fact("vibration", "low"),
    ]
    assert infer(kb, facts).activated_rules == []


ATOM_POOL = [
    thr(f, level)
    for f in ("temperature", "vibration", "pressure", "efficiency_index")
    for level in ("low", "high")
] + [
    grad(f, "high") for f in ("temperature", "vibration", "pressure", "efficiency_index")
] + [(Predicate.KEY_EVENT.value, "detected", None)]


def random_case(rng):
    n_rules = int(rng.integers(1, 21))
    rules = []
    for k in range(n_rules):
        body = set()
        for atom_idx in rng.choice(len(ATOM_POOL), size=int(rng.integers(1, 5)), replace=False):
            body.add(ATOM_POOL[atom_idx])
        # occasionally chain on an earlier rule's conclusion
        if rules and rng.random() < 0.3:
            target = rules[int(rng.integers(0, len(rules)))]
            body.add((Predicate.DERIVED.value, target.id, None))
        rules.append(make_rule(f"neural_rule_{k + 1}", body, float(rng.uniform(0.5, 1.0))))
    facts = []
    n_facts = int(rng.integers(0, 11))
    for atom_idx in rng.choice(len(ATOM_POOL), size=n_facts, replace=False):
        pred, subject, level = ATOM_POOL[atom_idx]
        conf = 0.95 if pred == Predicate.KEY_EVENT.value else None
        facts.append(Fact(pred, subject, level, confidence=conf))
    return rules, facts


def test_infer_matches_brute_force_on_random_cases():
    rng = np.random.default_rng(1234)
    for _ in range(300):
        rules, facts = random_case(rng)
        kb = KnowledgeBase(tau=0.85)
        kb.rules.extend(rules)
        got = set(infer(kb, facts).activated_ids())
        expected = brute_force_infer(rules, facts)
        assert got == expected


def test_infer_monotone_under_added_facts():
    rng = np.random.default_rng(99)
    for _ in range(100):
        rules, facts = random_case(rng)
        kb = KnowledgeBase(tau=0.85)
        kb.rules.extend(rules)
        base = set(infer(kb, facts).activated_ids())
        extra_atom = ATOM_POOL[int(rng.integers(0, len(ATOM_POOL)))]
        pred, subject, level = extra_atom
        conf = 0.9 if pred == Predicate.KEY_EVENT.value else None
        grown = facts + [Fact(pred, subject, level, confidence=conf)]
        assert base <= set(infer(kb, grown).activated_ids())


# update_rules / prune_rules ----------------------------------------------------

def test_update_rules_dedupes_by_body():
    kb = KnowledgeBase(tau=0.85)
    body = [thr("pressure", "low")]
    update_rules(kb, [make_rule("", body, 0.9, support_count=10, co_support_count=9)])
    update_rules(kb, [make_rule("", body, 0.95, support_count=20, co_support_count=19)])
    assert len(kb.rules) == 1
    assert kb.rules[0].id == "neural_rule_1"
    assert kb.rules[0].confidence == 0.95
    assert kb.rules[0].support_count == 20


def test_update_rules_filters_below_tau():
    kb = KnowledgeBase(tau=0.85)
    v0 = kb.version
    update_rules(kb, [make_rule("", [thr("pressure", "low")], 0.5)])
    assert kb.rules == []
    assert kb.version == v0 + 1


def test_update_rules_skips_invalid_candidates():
    kb = KnowledgeBase(tau=0.85)
    bad = Rule(id="", body=frozenset(), confidence=0.9)
    good = make_rule("", [thr("pressure", "high")], 0.9)
    update_rules(kb, [bad, good])
    assert [r.id for r in kb.rules] == ["neural_rule_1"]


def test_update_rules_appends_facts_and_advances_clock():
    kb = KnowledgeBase(tau=0.85)
    update_rules(kb, [], [thr_fact("pressure", "low", time=41)])
    assert kb.clock == 41
    assert len(kb.facts[41]) == 1


def test_update_rules_assigns_sequential_ids():
    kb = KnowledgeBase(tau=0.85)
    update_rules(
        kb,
        [
            make_rule("", [thr("pressure", "low")], 0.99),
            make_rule("", [thr("vibration", "high")], 0.92),
        ],
    )
    assert [r.id for r in kb.rules] == ["neural_rule_1", "neural_rule_2"]


def test_prune_rules_thresholds():
    kb = KnowledgeBase(tau=0.85)
    kb.clock = 1000
    healthy = make_rule("neural_rule_1", [thr("pressure", "low")], 0.95)
    healthy.last_activated = 980
    decayed = make_rule("neural_rule_2", [thr("vibration", "low")], 0.4)
    decayed.last_activated = 990
    kb.rules.extend([healthy, decayed])
    prune_rules(kb, min_confidence=0.6, stale_window=500)
    assert [r.id for r in kb.rules] == ["neural_rule_1"]


def test_prune_rules_stale_window_and_infinity():
    kb = KnowledgeBase(tau=0.85)
    kb.clock = 1000
    dormant = make_rule("neural_rule_1", [thr("pressure", "low")], 0.865)
    dormant.created_at = 100  # never activated
    kb.rules.append(dormant)
    snapshot = kb.snapshot()
    prune_rules(kb, min_confidence=0.6, stale_window=500)
    assert kb.rules == []
    prune_rules(snapshot, min_confidence=0.6, stale_window=math.inf)
    assert [r.id for r in snapshot.rules] == ["neural_rule_1"]


def test_prune_keeps_healthy_rules_and_bumps_version():
    kb = KnowledgeBase(tau=0.85)
    kb.clock = 100
    rule = make_rule("neural_rule_1", [thr("pressure", "low")], 0.95)
    rule.last_activated = 99
    kb.rules.append(rule)
    v0 = kb.version
    prune_rules(kb, min_confidence=0.6, stale_window=50)
    assert [r.id for r in kb.rules] == ["neural_rule_1"]
    assert kb.version == v0 + 1


def test_version_strictly_increases_across_mutations():
    kb = KnowledgeBase.seeded(tau=0.85)
    versions = [kb.version]
    update_rules(kb, [make_rule("", [thr("pressure", "low")], 0.9)])
    versions.append(kb.version)
    kb.set_verdict("neural_rule_1", "approved")
    versions.append(kb.version)
    result = infer(kb, [thr_fact("pressure", "low")])
    kb.record_activations(result, step=5)
    versions.append(kb.version)
    prune_rules(kb, 0.5, math.inf)
    versions.append(kb.version)
    assert versions == sorted(set(versions))
    assert len(set(versions)) == len(versions)


def test_approved_rules_survive_pruning():
    kb = KnowledgeBase(tau=0.85)
    kb.clock = 1000
    rule = make_rule("neural_rule_1", [thr("pressure", "low")], 0.3)
    kb.rules.append(rule)
    kb.set_verdict("neural_rule_1", "approved")
    prune_rules(kb, min_confidence=0.6, stale_window=10)
    assert [r.id for r in kb.rules] == ["neural_rule_1"]


# rule file round trip ----------------------------------------------------------

def test_rule_file_round_trip_lossless():
    kb = KnowledgeBase.seeded(tau=0.85)
    update_rules(
        kb,
        [
            make_rule(
                "",
                [
                    thr("pressure", "low"),
                    thr("temperature", "low"),
                    grad("efficiency_index", "high"),
                ],
                0.9314159265358979,
                support_count=120,
                co_support_count=111,
                tp=110,
                fp=8,
            ),
            make_rule("", [grad("vibration", "high")], 0.901),
        ],
    )
    kb.rules[1].last_activated = 3890
    kb.rules[1].activation_count = 17
    text = rules_to_text(kb)
    parsed = rules_from_text(text)
    assert parsed.tau == kb.tau
    assert parsed.version == kb.version
    assert len(parsed.rules) == len(kb.rules)
    for a, b in zip(parsed.rules, kb.rules):
        assert a.id == b.id
        assert a.body == b.body
        assert a.confidence == b.confidence
        assert (a.support_count, a.co_support_count, a.tp, a.fp) == (
            b.support_count, b.co_support_count, b.tp, b.fp,
        )
        assert a.last_activated == b.last_activated
        assert a.activation_count == b.activation_count
    assert rules_to_text(parsed) == text


def test_rule_file_surface_syntax():
    kb = KnowledgeBase(tau=0.85)
    update_rules(kb, [make_rule("", [thr("pressure", "low"), thr("temperature", "low")], 0.93)])
    text = rules_to_text(kb)
    assert "neural_rule_1 :- feature_threshold(pressure, _, low), " \
           "feature_threshold(temperature, _, low)." in text
    assert any(line.startswith("% id=neural_rule_1 conf=0.93") for line in text.splitlines())


def test_rule_file_rejects_garbage():
    with pytest.raises(ValueError):
        rules_from_text("neural_rule_1 :- foo.\n")
    with pytest.raises(ValueError, match="unknown predicate"):
        rules_from_text(
            "% kb tau=0.85 version=1 next=2\n"
            "% id=neural_rule_1 conf=0.9 support=1 co_support=1 tp=1 fp=0 "
            "created=0 last_activated=- activations=0 verdict=none head=deviation_detected\n"
            "neural_rule_1 :- causes(pressure, _, low).\n"
        )
