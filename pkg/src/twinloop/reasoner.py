"""Symbolic reasoning over detector behavior.

Windows are discretized into threshold/gradient facts; Horn-clause rules are
mined from the windows the detector flags, scored by support and predictive
precision, kept in a versioned knowledge base with conflict resolution and
pruning, and evaluated by forward chaining to a fixpoint.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# Body/fact atoms are (predicate, subject, level) triples; level is None for
# predicates that do not carry one.
Atom = tuple[str, str, str | None]

RULE_FEATURES = ("temperature", "vibration", "pressure", "efficiency_index")
DEVIATION_HEAD = "deviation_detected"
DETECTOR_RULE_ID = "detector_alert"


class Predicate(str, Enum):
    FEATURE_THRESHOLD = "feature_threshold"
    FEATURE_GRADIENT = "feature_gradient"
    SENSOR_READING = "sensor_reading"
    SYSTEM_STATE = "system_state"
    KEY_EVENT = "key_event"
    DERIVED = "derived"


class Level(str, Enum):
    LOW = "low"
    NORMAL = "normal"
    HIGH = "high"


_LEVELED = {Predicate.FEATURE_THRESHOLD.value, Predicate.FEATURE_GRADIENT.value}


@dataclass(frozen=True)
class Fact:
    predicate: str
    subject: str
    level: str | None = None
    value: float | None = None
    time: int | None = None
    confidence: float | None = None

    def __post_init__(self) -> None:
        has_level = self.level is not None
        if has_level != (self.predicate in _LEVELED):
            raise ValueError(
                f"level must be present exactly for threshold/gradient facts "
                f"(predicate={self.predicate!r}, level={self.level!r})"
            )
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError("fact confidence must lie in [0, 1]")

    def atom(self) -> Atom:
        return (self.predicate, self.subject, self.level)


@dataclass
class Rule:
    """Horn clause: a conjunction of condition atoms implying one conclusion."""

    id: str
    body: frozenset[Atom]
    confidence: float
    head: str = DEVIATION_HEAD
    head_is_event: bool = True
    support_count: int = 0
    co_support_count: int = 0
    tp: int = 0
    fp: int = 0
    created_at: int = 0
    last_activated: int | None = None
    activation_count: int = 0
    verdict: str = "none"  # operator verdict: none | approved | rejected

    def validate(self) -> None:
        if not self.body:
            raise ValueError("rule body must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("rule confidence must lie in [0, 1]")
        if not self.support_count >= self.co_support_count >= 0:
            raise ValueError("need support >= co_support >= 0")
        if self.tp < 0 or self.fp < 0:
            raise ValueError("tp and fp must be non-negative")

    def sorted_body(self) -> list[Atom]:
        return sorted(self.body, key=lambda a: (a[0], a[1], a[2] or ""))


def rule_confidence(support: int, co_support: int, tp: int, fp: int) -> float:
    """Conditional support ratio times predictive precision.

    Degenerate denominators (no support, or no resolved predictions) score 0
    so sparse mining candidates can be ranked uniformly.
    """
    if not support >= co_support >= 0:
        raise ValueError("need support >= co_support >= 0")
    if tp < 0 or fp < 0:
        raise ValueError("tp and fp must be non-negative")
    if support == 0 or tp + fp == 0:
        return 0.0
    return (co_support / support) * (tp / (tp + fp))


@dataclass
class Discretizer:
    """Maps normalized windows to threshold/gradient facts.

    Threshold level reflects the window's last value against (low_z, high_z);
    gradient level goes high when the mean first difference exceeds grad_z
    standard deviations of that feature's training gradient distribution.
    """

    feature_order: tuple[str, ...]
    rule_features: tuple[str, ...] = RULE_FEATURES
    low_z: float = -1.0
    high_z: float = 1.0
    grad_z: float = 1.5
    grad_sigma: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        missing = [f for f in self.rule_features if f not in self.feature_order]
        if missing:
            raise ValueError(f"unknown feature names: {missing}")
        self._idx = {f: self.feature_order.index(f) for f in self.rule_features}

    def fit(self, windows: np.ndarray) -> "Discretizer":
        """Estimate per-feature gradient scale from training windows."""
        for feat, j in self._idx.items():
            slopes = np.diff(windows[:, :, j], axis=1).mean(axis=1)
            self.grad_sigma[feat] = float(max(slopes.std(), 1e-9))
        return self

    def _require_fitted(self) -> None:
        if not self.grad_sigma:
            raise RuntimeError("discretizer must be fitted before use")

    def window_levels(self, windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized threshold/gradient levels; returns two [batch, feature]
        arrays of Level values aligned with rule_features."""
        self._require_fitted()
        b = windows.shape[0]
        thr = np.full((b, len(self.rule_features)), Level.NORMAL.value, dtype="<U8")
        grad = np.full((b, len(self.rule_features)), Level.NORMAL.value, dtype="<U8")
        for k, feat in enumerate(self.rule_features):
            col = windows[:, :, self._idx[feat]]
            last = col[:, -1]
            thr[last < self.low_z, k] = Level.LOW.value
            thr[last > self.high_z, k] = Level.HIGH.value
            slopes = np.abs(np.diff(col, axis=1).mean(axis=1))
            grad[slopes > self.grad_z * self.grad_sigma[feat], k] = Level.HIGH.value
        return thr, grad

    def discretize(self, window: np.ndarray, time: int | None = None) -> list[Fact]:
        if window.ndim != 2 or window.shape[0] == 0:
            raise ValueError("window must be a non-empty [time_steps, features] array")
        thr, grad = self.window_levels(window[None, :, :])
        facts = []
        for k, feat in enumerate(self.rule_features):
            value = float(window[-1, self._idx[feat]])
            facts.append(
                Fact(Predicate.FEATURE_THRESHOLD.value, feat, thr[0, k], value=value, time=time)
            )
            facts.append(Fact(Predicate.FEATURE_GRADIENT.value, feat, grad[0, k], time=time))
        return facts

    def atom_signature(self, thr_row: np.ndarray, grad_row: np.ndarray) -> frozenset[Atom]:
        """Non-normal atoms of one discretized window (the mining alphabet)."""
        atoms: set[Atom] = set()
        for k, feat in enumerate(self.rule_features):
            if thr_row[k] != Level.NORMAL.value:
                atoms.add((Predicate.FEATURE_THRESHOLD.value, feat, str(thr_row[k])))
            if grad_row[k] != Level.NORMAL.value:
                atoms.add((Predicate.FEATURE_GRADIENT.value, feat, str(grad_row[k])))
        return frozenset(atoms)


def facts_from_prediction(
    probability: float,
    window_facts: Iterable[Fact],
    threshold: float,
    time: int | None = None,
) -> list[Fact]:
    """Detector output crossing the threshold becomes a symbolic key-event fact."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    facts = list(window_facts)
    if probability > threshold:
        facts.append(
            Fact(
                Predicate.KEY_EVENT.value,
                "detected",
                confidence=float(probability),
                time=time,
            )
        )
    return facts


@dataclass
class InferenceResult:
    activated_rules: list[tuple[str, float]]
    insights: list[str]
    deviation: bool
    deviation_confidence: float

    def activated_ids(self) -> list[str]:
        return [rid for rid, _ in self.activated_rules]

    def to_dict(self) -> dict:
        return {
            "activated_rules": [[rid, conf] for rid, conf in self.activated_rules],
            "insights": list(self.insights),
            "deviation": self.deviation,
            "deviation_confidence": self.deviation_confidence,
        }


class KnowledgeBase:
    """Versioned rule store plus a time-indexed fact log.

    Mutations happen through a single writer and bump `version`; readers take
    `snapshot()` copies.
    """

    def __init__(self, tau: float = 0.85, capacity: int = 32) -> None:
        if not 0.0 < tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        self.tau = tau
        self.capacity = capacity
        self.rules: list[Rule] = []
        self.facts: dict[int, list[Fact]] = {}
        self.version = 0
        self.next_rule_index = 1
        self.clock = 0

    @classmethod
    def seeded(cls, tau: float = 0.85, capacity: int = 32) -> "KnowledgeBase":
        """A knowledge base holding the built-in detector-alert rule, whose
        activation carries the detector's own probability."""
        kb = cls(tau=tau, capacity=capacity)
        kb.rules.append(
            Rule(
                id=DETECTOR_RULE_ID,
                body=frozenset({(Predicate.KEY_EVENT.value, "detected", None)}),
                confidence=1.0,
            )
        )
        kb.version += 1
        return kb

    def active_rules(self) -> list[Rule]:
        return [r for r in self.rules if r.verdict != "rejected"]

    def get_rule(self, rule_id: str) -> Rule | None:
        for rule in self.rules:
            if rule.id == rule_id:
                return rule
        return None

    def bit_index(self, rule_id: str) -> int | None:
        for i, rule in enumerate(self.rules):
            if rule.id == rule_id:
                return i if i < self.capacity else None
        return None

    def rule_bitmask(self, activated_ids: Iterable[str]) -> np.ndarray:
        mask = np.zeros(self.capacity)
        for rid in activated_ids:
            idx = self.bit_index(rid)
            if idx is not None:
                mask[idx] = 1.0
        return mask

    def snapshot(self) -> "KnowledgeBase":
        copy = KnowledgeBase(tau=self.tau, capacity=self.capacity)
        copy.rules = [replace(r) for r in self.rules]
        copy.facts = {t: list(fs) for t, fs in self.facts.items()}
        copy.version = self.version
        copy.next_rule_index = self.next_rule_index
        copy.clock = self.clock
        return copy

    def set_verdict(self, rule_id: str, verdict: str) -> bool:
        if verdict not in ("approved", "rejected", "none"):
            raise ValueError(f"unknown verdict {verdict!r}")
        rule = self.get_rule(rule_id)
        if rule is None:
            return False
        rule.verdict = verdict
        self.version += 1
        return True

    def record_activations(self, result: InferenceResult, step: int) -> None:
        changed = False
        for rid, _ in result.activated_rules:
            rule = self.get_rule(rid)
            if rule is not None:
                rule.activation_count += 1
                rule.last_activated = step
                changed = True
        self.clock = max(self.clock, step)
        if changed:
            self.version += 1


def _frequent_closed_conjunctions(
    transactions: list[frozenset[Atom]], min_support: int, max_body: int
) -> dict[frozenset[Atom], int]:
    """Level-wise (Apriori) mining of frequent atom conjunctions, reduced to
    closed itemsets so every returned body is the most specific form with its
    support."""
    item_counts = Counter(atom for t in transactions for atom in t)
    frequent: dict[frozenset[Atom], int] = {}
    current = [
        frozenset({atom})
        for atom, count in sorted(item_counts.items())
        if count >= min_support
    ]
    size = 1
    while current and size <= max_body:
        counts = {
            c: sum(1 for t in transactions if c <= t) for c in current
        }
        survivors = [c for c in current if counts[c] >= min_support]
        for c in survivors:
            frequent[c] = counts[c]
        # Candidate generation: unions of survivor pairs one item larger.
        seen: set[frozenset[Atom]] = set()
        nxt = []
        for i, a in enumerate(survivors):
            for b in survivors[i + 1 :]:
                union = a | b
                if len(union) == size + 1 and union not in seen:
                    seen.add(union)
                    nxt.append(union)
        current = sorted(nxt, key=_body_text)
        size += 1
    closed = {
        body: support
        for body, support in frequent.items()
        if not any(
            body < other and frequent[other] == support for other in frequent
        )
    }
    return closed


def extract_rules(
    model,
    batch,
    kb: KnowledgeBase,
    discretizer: Discretizer,
    min_support: int = 5,
    max_body: int = 8,
    mine_threshold: float | None = None,
) -> list[Rule]:
    """Mine candidate Horn clauses from windows the detector flags positive.

    Candidate bodies are frequent non-normal fact conjunctions among the
    positively-predicted windows (closed itemsets with support above
    min_support).  Each body is then scored over the whole batch: support
    counts body matches, co-support counts matches where the key-event
    conclusion also holds, and tp/fp split the matches by outcome (a firing
    rule predicts an event).  Only candidates above the knowledge base's tau
    survive, in descending confidence then lexicographic body order.

    mine_threshold widens (or narrows) the candidate pool relative to the
    model's operating threshold; scoring always uses ground-truth statistics,
    so a lower mining threshold distills patterns the detector under-scores
    without admitting imprecise rules.
    """
    if len(batch) == 0:
        raise ValueError("extraction batch must be non-empty")
    probs = model.predict(batch)
    preds = probs > (model.threshold if mine_threshold is None else mine_threshold)
    thr, grad = discretizer.window_levels(batch.windows)
    signatures = [discretizer.atom_signature(thr[i], grad[i]) for i in range(len(batch))]

    transactions = [
        sig for i, sig in enumerate(signatures) if preds[i] and len(sig) > 0
    ]
    mined = _frequent_closed_conjunctions(transactions, min_support, max_body)

    labels = np.asarray(batch.labels).astype(bool)
    candidates: list[Rule] = []
    for body in sorted(mined, key=_body_text):
        matches = np.fromiter((body <= sig for sig in signatures), dtype=bool)
        support = int(matches.sum())
        co_support = int(np.sum(matches & labels))
        tp = int(np.sum(matches & labels))
        fp = int(np.sum(matches & ~labels))
        conf = rule_confidence(support, co_support, tp, fp)
        if conf > kb.tau:
            candidates.append(
                Rule(
                    id="",
                    body=body,
                    confidence=conf,
                    support_count=support,
                    co_support_count=co_support,
                    tp=tp,
                    fp=fp,
                )
            )
    candidates.sort(key=lambda r: (-r.confidence, _body_text(r.body)))
    return candidates


def _body_text(body: frozenset[Atom]) -> str:
    return ", ".join(_atom_text(a) for a in sorted(body, key=lambda a: (a[0], a[1], a[2] or "")))


def update_rules(
    kb: KnowledgeBase, candidates: Sequence[Rule], new_facts: Sequence[Fact] = ()
) -> KnowledgeBase:
    """Merge candidates into the knowledge base.

    Deduplicates by body (newer statistics win), filters by tau, assigns
    stable `neural_rule_k` identifiers in arrival order, appends facts, and
    bumps the version exactly once.
    """
    kb.version += 1
    for fact in new_facts:
        t = fact.time if fact.time is not None else kb.clock
        kb.facts.setdefault(t, []).append(fact)
        kb.clock = max(kb.clock, t)
    by_body = {r.body: r for r in kb.rules}
    for cand in candidates:
        try:
            cand.validate()
        except ValueError as exc:
            logger.warning("skipping invalid candidate rule: %s", exc)
            continue
        if cand.confidence <= kb.tau:
            continue
        existing = by_body.get(cand.body)
        if existing is not None:
            existing.confidence = cand.confidence
            existing.support_count = cand.support_count
            existing.co_support_count = cand.co_support_count
            existing.tp = cand.tp
            existing.fp = cand.fp
            continue
        rule = replace(
            cand,
            id=f"neural_rule_{kb.next_rule_index}",
            created_at=kb.clock,
        )
        kb.next_rule_index += 1
        kb.rules.append(rule)
        by_body[rule.body] = rule
    return kb


def infer(kb: KnowledgeBase, facts: Iterable[Fact]) -> InferenceResult:
    """Forward chaining to fixpoint over the Horn-clause rule set.

    A rule activates when every body condition is satisfied; activated heads
    become derived atoms so later rules can chain on them.  Activation
    confidence is the rule's confidence scaled by the confidence of any
    matched confidence-bearing facts (the detector's key-event probability).
    """
    fact_list = list(facts)
    known: set[Atom] = {f.atom() for f in fact_list}
    atom_conf: dict[Atom, float] = {}
    for f in fact_list:
        if f.confidence is not None:
            atom = f.atom()
            atom_conf[atom] = max(atom_conf.get(atom, 0.0), f.confidence)

    rules = kb.active_rules()
    fired: dict[str, float] = {}
    fired_rules: list[Rule] = []
    changed = True
    while changed:
        changed = False
        for rule in rules:
            if rule.id in fired:
                continue
            if rule.body <= known:
                conf = rule.confidence
                for atom in rule.body:
                    if atom in atom_conf:
                        conf *= atom_conf[atom]
                fired[rule.id] = conf
                fired_rules.append(rule)
                known.add((Predicate.DERIVED.value, rule.id, None))
                atom_conf[(Predicate.DERIVED.value, rule.id, None)] = conf
                changed = True

    event_rules = [r for r in fired_rules if r.head_is_event]
    deviation = bool(event_rules)
    deviation_confidence = max((fired[r.id] for r in event_rules), default=0.0)

    # Activation precedence: rules subsumed by a more specific fired rule
    # yield to it; otherwise higher confidence leads.
    bodies = {r.id: r.body for r in fired_rules}

    def subsumed(rule: Rule) -> bool:
        return any(
            rule.id != other_id and rule.body < other_body
            for other_id, other_body in bodies.items()
        )

    ordered = sorted(fired_rules, key=lambda r: (subsumed(r), -fired[r.id], r.id))
    activated = [(r.id, fired[r.id]) for r in ordered]

    insights = [f"{rid} activated" for rid, _ in activated]
    if deviation and deviation_confidence > 0.9:
        insights.insert(0, "System Stress Triggered")
    return InferenceResult(
        activated_rules=activated,
        insights=insights,
        deviation=deviation,
        deviation_confidence=deviation_confidence,
    )


def prune_rules(
    kb: KnowledgeBase,
    min_confidence: float,
    stale_window: float,
    now: int | None = None,
) -> KnowledgeBase:
    """Drop decayed or dormant rules; operator-approved rules are exempt."""
    if not 0.0 <= min_confidence <= 1.0:
        raise ValueError("min_confidence must lie in [0, 1]")
    now = kb.clock if now is None else now
    kb.version += 1
    kept: list[Rule] = []
    for rule in kb.rules:
        if rule.verdict == "approved" or rule.id == DETECTOR_RULE_ID:
            kept.append(rule)
            continue
        if rule.confidence < min_confidence:
            continue
        last_seen = rule.last_activated if rule.last_activated is not None else rule.created_at
        if math.isfinite(stale_window) and now - last_seen >= stale_window:
            continue
        kept.append(rule)
    kb.rules = kept
    return kb


# Rule file surface syntax ---------------------------------------------------

def _atom_text(atom: Atom) -> str:
    predicate, subject, level = atom
    if predicate in _LEVELED:
        return f"{predicate}({subject}, _, {level})"
    if predicate == Predicate.KEY_EVENT.value:
        return f"key_event({subject}, _, _)"
    if predicate == Predicate.SENSOR_READING.value:
        return f"sensor_reading({subject}, _, _)"
    if predicate == Predicate.SYSTEM_STATE.value:
        return f"system_state({subject}, _)"
    return subject  # derived: bare reference to another rule's conclusion


_ATOM_RE = re.compile(r"(\w+)\(([^)]*)\)|(\w+)")


def _parse_atom(text: str) -> Atom:
    m = _ATOM_RE.fullmatch(text.strip())
    if not m:
        raise ValueError(f"unparseable body atom: {text!r}")
    if m.group(3):
        return (Predicate.DERIVED.value, m.group(3), None)
    predicate, args = m.group(1), [a.strip() for a in m.group(2).split(",")]
    if predicate in _LEVELED:
        if len(args) != 3:
            raise ValueError(f"{predicate} expects three arguments: {text!r}")
        return (predicate, args[0], args[2])
    if predicate in (Predicate.KEY_EVENT.value, Predicate.SENSOR_READING.value,
                     Predicate.SYSTEM_STATE.value):
        return (predicate, args[0], None)
    raise ValueError(f"unknown predicate {predicate!r}")


def rules_to_text(kb: KnowledgeBase) -> str:
    """Line-oriented surface syntax with one metadata comment per clause."""
    lines = [f"% kb tau={kb.tau!r} version={kb.version} next={kb.next_rule_index}"]
    for rule in kb.rules:
        last = "-" if rule.last_activated is None else str(rule.last_activated)
        lines.append(
            f"% id={rule.id} conf={rule.confidence!r} support={rule.support_count} "
            f"co_support={rule.co_support_count} tp={rule.tp} fp={rule.fp} "
            f"created={rule.created_at} last_activated={last} "
            f"activations={rule.activation_count} verdict={rule.verdict} head={rule.head}"
        )
        lines.append(f"{rule.id} :- {_body_text(rule.body)}.")
    return "\n".join(lines) + "\n"


def rules_from_text(text: str) -> KnowledgeBase:
    lines = [ln.rstrip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("% kb "):
        raise ValueError("rule file must start with a '% kb' header line")
    header = dict(kv.split("=", 1) for kv in lines[0][5:].split())
    kb = KnowledgeBase(tau=float(header["tau"]))
    kb.version = int(header["version"])
    kb.next_rule_index = int(header["next"])
    meta: dict[str, str] | None = None
    for line in lines[1:]:
        if line.startswith("% id="):
            meta = dict(kv.split("=", 1) for kv in line[2:].split())
            continue
        if line.startswith("%"):
            continue
        if meta is None:
            raise ValueError(f"clause without metadata line: {line!r}")
        head_id, _, body_text = line.partition(":-")
        head_id = head_id.strip()
        if head_id != meta["id"]:
            raise ValueError(f"metadata id {meta['id']!r} does not match clause {head_id!r}")
        body_text = body_text.strip()
        if not body_text.endswith("."):
            raise ValueError(f"clause must end with a period: {line!r}")
        atoms = frozenset(
            _parse_atom(part) for part in _split_atoms(body_text[:-1])
        )
        last = meta["last_activated"]
        kb.rules.append(
            Rule(
                id=meta["id"],
                body=atoms,
                confidence=float(meta["conf"]),
                head=meta.get("head", DEVIATION_HEAD),
                support_count=int(meta["support"]),
                co_support_count=int(meta["co_support"]),
                tp=int(meta["tp"]),
                fp=int(meta["fp"]),
                created_at=int(meta["created"]),
                last_activated=None if last == "-" else int(last),
                activation_count=int(meta["activations"]),
                verdict=meta.get("verdict", "none"),
            )
        )
        meta = None
    return kb


def _split_atoms(body: str) -> list[str]:
    parts = []
    depth = 0
    current = []
    for ch in body:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    if current:
        parts.append("".join(current))
    return [p.strip() for p in parts if p.strip()]
