"""Closed-loop orchestration: simulated plant, per-cycle sense->detect->reason
->act pipeline, adaptive sampling, crash-safe persistence, scenario presets,
and the ablation protocol."""

from __future__ import annotations

import json
import logging
import os
import queue
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import agent as agent_mod
from . import datagen, detector, kgraph, pipeline, reasoner
from .agent import Action, ControlEnv, EnvState, PolicyNetwork, select_action
from .config import TwinConfig
from .datagen import SENSOR_NAMES, SENSOR_MEANS, SENSOR_STDS, EventType, SystemState
from .detector import DetectorModel, EvalReport
from .pipeline import FEATURE_ORDER, WindowBatch
from .reasoner import Discretizer, KnowledgeBase

logger = logging.getLogger(__name__)

# Per-scenario event emphasis: relative weights of injected disturbances in
# the simulated plant and in generated datasets.
SCENARIO_EVENT_MIX = {
    "predictive-maintenance": {
        EventType.OPERATIONAL_THRESHOLD: 0.15,
        EventType.MAINTENANCE_EVENT: 0.35,
        EventType.STATE_TRANSITION: 0.10,
        EventType.GRADUAL_DRIFT: 0.30,
        EventType.INTERACTION_DEVIATION: 0.10,
    },
    "process-optimization": {
        EventType.OPERATIONAL_THRESHOLD: 0.40,
        EventType.MAINTENANCE_EVENT: 0.10,
        EventType.STATE_TRANSITION: 0.15,
        EventType.GRADUAL_DRIFT: 0.10,
        EventType.INTERACTION_DEVIATION: 0.25,
    },
    "deviation-response": dict(datagen.DEFAULT_EVENT_MIX),
}

# z-space push signatures for plant-side event injection, per event type:
# (sensor index or None for all, push per cycle, duration range).
_INJECTION_SHAPES = {
    EventType.OPERATIONAL_THRESHOLD: (2, 3.0, (2, 4)),
    EventType.MAINTENANCE_EVENT: (1, -2.0, (8, 12)),
    EventType.STATE_TRANSITION: (2, 2.0, (4, 8)),
    EventType.GRADUAL_DRIFT: (0, 0.35, (30, 50)),
    EventType.INTERACTION_DEVIATION: (None, 1.5, (5, 10)),
}


@dataclass
class SamplingController:
    """Adaptive sensing interval: tightens on deviations, relaxes after a
    stretch of stable cycles."""

    interval_s: float = 300.0
    min_s: float = 60.0
    max_s: float = 600.0
    escalation: float = 2.0
    stable_needed: int = 10
    stable_count: int = 0

    def validate(self) -> None:
        if not 0 < self.min_s <= self.max_s:
            raise ValueError("sampling bounds must satisfy 0 < min <= max")
        if self.escalation <= 1.0:
            raise ValueError("escalation factor must exceed 1")


def adjust_sampling(
    ctrl: SamplingController, inference: reasoner.InferenceResult
) -> SamplingController:
    ctrl.validate()
    if inference.deviation:
        ctrl.interval_s = max(ctrl.min_s, ctrl.interval_s / ctrl.escalation)
        ctrl.stable_count = 0
    else:
        ctrl.stable_count += 1
        if ctrl.stable_count >= ctrl.stable_needed:
            ctrl.interval_s = min(ctrl.max_s, ctrl.interval_s * ctrl.escalation)
            ctrl.stable_count = 0
    return ctrl


@dataclass
class CycleRecord:
    cycle: int
    readings: dict[str, float]
    system_state: str
    facts: list[dict]
    probability: float
    inference: dict
    action: dict
    reward: dict
    kb_version: int
    sampling_interval_s: float
    duration_s: float
    status: str = "ok"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "CycleRecord":
        return cls(**data)


class RecordLog:
    """Append-only newline-delimited record log with torn-tail recovery.

    Every append is flushed and fsynced; on reopen any incomplete trailing
    line (a crash artifact) is truncated away, so readers only ever observe
    fully persisted records.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._recover()
        self._fh = open(self.path, "a", encoding="utf-8")

    def _recover(self) -> None:
        if not self.path.exists():
            return
        raw = self.path.read_bytes()
        valid_end = 0
        offset = 0
        for line in raw.split(b"\n")[:-1]:
            end = offset + len(line) + 1
            try:
                json.loads(line.decode("utf-8"))
                valid_end = end
            except (UnicodeDecodeError, json.JSONDecodeError):
                break
            offset = end
        if valid_end != len(raw):
            with open(self.path, "r+b") as fh:
                fh.truncate(valid_end)

    def append(self, record: CycleRecord) -> None:
        self._fh.write(record.to_json() + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    @staticmethod
    def read_all(path: str | Path) -> list[CycleRecord]:
        records = []
        path = Path(path)
        if not path.exists():
            return records
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.endswith("\n"):
                    break  # torn tail from a crash mid-write
                try:
                    records.append(CycleRecord.from_dict(json.loads(line)))
                except (json.JSONDecodeError, TypeError):
                    break
        return records


@dataclass
class _Injection:
    push: np.ndarray
    cycles_left: int
    event_type: EventType
    forced_state: SystemState | None = None


class SimulatedPlant:
    """Raw-reading view over the control environment plus scenario events."""

    def __init__(self, env: ControlEnv, scenario: str, seed: int) -> None:
        self.env = env
        self.scenario = scenario
        self.rng = np.random.default_rng(seed)
        self.mix = SCENARIO_EVENT_MIX[scenario]
        self.active: _Injection | None = None
        self.spontaneous_prob = 0.01
        env.plant.disturbance_prob = 0.0  # injections drive all events here
        if env.state is None:
            env.reset()

    def inject(self, event_type: EventType) -> None:
        sensor, push_scale, (lo, hi) = _INJECTION_SHAPES[event_type]
        push = np.zeros(3)
        if sensor is None:
            sign = 1.0 if self.rng.random() < 0.5 else -1.0
            push[:] = sign * push_scale
        else:
            push[sensor] = push_scale if event_type != EventType.GRADUAL_DRIFT else (
                push_scale * (1.0 if self.rng.random() < 0.5 else -1.0)
            )
        forced = (
            SystemState.MAINTENANCE
            if event_type is EventType.MAINTENANCE_EVENT
            else None
        )
        self.active = _Injection(
            push=push,
            cycles_left=int(self.rng.integers(lo, hi + 1)),
            event_type=event_type,
            forced_state=forced,
        )

    def maybe_start_spontaneous(self) -> None:
        if self.active is None and self.rng.random() < self.spontaneous_prob:
            types = list(self.mix)
            weights = np.array([self.mix[t] for t in types], dtype=float)
            weights /= weights.sum()
            self.inject(types[int(self.rng.choice(len(types), p=weights))])

    def step(self, action: Action) -> tuple[EnvState, agent_mod.RewardComponents, bool]:
        disturbance = None
        if self.active is not None:
            disturbance = self.active.push
            self.active.cycles_left -= 1
            if self.active.cycles_left <= 0:
                self.active = None
        next_state, reward, done = agent_mod.env_step(
            self.env.state,
            action,
            self.env.plant,
            self.env.rng,
            operator_pref=self.env.operator_pref,
            weights=self.env.weights,
            disturbance=disturbance,
        )
        if self.active is not None and self.active.forced_state is not None:
            onehot = np.zeros(4)
            onehot[agent_mod.STATE_ORDER.index(self.active.forced_state.value)] = 1.0
            next_state.state_onehot = onehot
        if done:
            self.env.state = None
            self.env.reset()
        else:
            self.env.state = next_state
        return next_state, reward, done

    def raw_readings(self, state: EnvState) -> dict[str, float]:
        return {
            name: float(SENSOR_MEANS[name] + SENSOR_STDS[name] * state.z[i])
            for i, name in enumerate(SENSOR_NAMES)
        }

    def system_state(self, state: EnvState) -> SystemState:
        return SystemState(agent_mod.STATE_ORDER[int(np.argmax(state.state_onehot))])


class OperatorPreference:
    """Most recent operator score, decaying toward neutral 1.0 with a
    20-cycle half-life."""

    def __init__(self, half_life: float = 20.0) -> None:
        self.half_life = half_life
        self.score = 1.0
        self.cycle = 0

    def submit(self, score: float, cycle: int) -> None:
        if not 0.0 <= score <= 1.0:
            raise ValueError("feedback score must lie in [0, 1]")
        self.score = float(score)
        self.cycle = cycle

    def value(self, cycle: int) -> float:
        age = max(0, cycle - self.cycle)
        return 1.0 + (self.score - 1.0) * 0.5 ** (age / self.half_life)


class TwinRuntime:
    """Owns all mutable loop state; service threads interact only through the
    mutation queue and immutable snapshots."""

    def __init__(
        self,
        config: TwinConfig,
        model: DetectorModel,
        discretizer: Discretizer,
        kb: KnowledgeBase,
        policy: PolicyNetwork,
        out_dir: str | Path | None = None,
    ) -> None:
        self.config = config
        self.model = model
        self.discretizer = discretizer
        self.kb = kb
        self.policy = policy
        self.out_dir = Path(out_dir) if out_dir else None

        env = ControlEnv(
            plant=config.agent.plant,
            kb_capacity=config.reasoner.capacity,
            seed=config.seed + 101,
            weights=config.agent.reward,
        )
        self.plant = SimulatedPlant(env, config.scenario, seed=config.seed + 202)
        self.action_rng = np.random.default_rng(config.seed + 303)
        self.sampling = SamplingController()
        self.preference = OperatorPreference()
        self.cycle = 0
        self.latest_record: CycleRecord | None = None
        self.latest_kg: kgraph.KGSnapshot | None = None
        self.history: list[CycleRecord] = []
        self.mutations: "queue.Queue[dict]" = queue.Queue()
        self.subscribers: list["queue.Queue[str]"] = []
        self._log = RecordLog(self.out_dir / "cycles.ndjson") if self.out_dir else None
        if self._log:
            persisted = RecordLog.read_all(self.out_dir / "cycles.ndjson")
            if persisted:
                self.cycle = persisted[-1].cycle + 1

        self._raw_buffer: list[np.ndarray] = []
        self._warmup()

    # ----- construction --------------------------------------------------

    @classmethod
    def bootstrap(
        cls,
        config: TwinConfig,
        out_dir: str | Path | None = None,
        train_policy: bool = False,
    ) -> "TwinRuntime":
        """Train every component from the configured recipe and assemble the
        loop: generate data, fit the detector, distill rules, and optionally
        pre-train the control policy."""
        config.validate()
        gen_cfg = config.datagen
        gen_cfg.event_mix = dict(SCENARIO_EVENT_MIX[config.scenario])
        data = datagen.generate(gen_cfg)
        norm = pipeline.normalize(data, window=config.pipeline.rolling_window)
        ntr, nva, nte = datagen.split(norm, (0.6, 0.2, 0.2))
        ts, stride = config.pipeline.time_steps, config.pipeline.stride
        train_b = pipeline.window(ntr, ts, stride)
        val_b = pipeline.window(nva, ts, stride)
        test_b = pipeline.window(nte, ts, stride)

        model = DetectorModel(
            config.detector.spec,
            (ts, train_b.n_features),
            seed=config.seed,
            threshold=config.detector.threshold,
        )
        model, history = detector.train(model, train_b, val_b, config.detector.train)

        discretizer = Discretizer(
            feature_order=FEATURE_ORDER,
            low_z=config.reasoner.low_z,
            high_z=config.reasoner.high_z,
            grad_z=config.reasoner.grad_z,
        ).fit(train_b.windows)

        # Symbolic feedback phase: guidance rules mined on train+validation
        # only, so the held-out evaluation stays untouched.
        trainval = WindowBatch(
            np.concatenate([train_b.windows, val_b.windows]),
            np.concatenate([train_b.labels, val_b.labels]),
        )
        bodies = _mine_guidance_bodies(model, trainval, config, discretizer)
        model = refine_with_rules(model, train_b, val_b, config, discretizer, bodies)

        kb = KnowledgeBase.seeded(tau=config.reasoner.tau, capacity=config.reasoner.capacity)
        heldout = WindowBatch(
            np.concatenate([val_b.windows, test_b.windows]),
            np.concatenate([val_b.labels, test_b.labels]),
        )
        candidates = reasoner.extract_rules(
            model,
            heldout,
            kb,
            discretizer,
            min_support=config.reasoner.min_support,
            max_body=config.reasoner.max_body,
        )
        reasoner.update_rules(kb, candidates)

        policy = PolicyNetwork(EnvState.dim(config.reasoner.capacity), seed=config.seed)
        if train_policy and config.agent.total_timesteps >= config.agent.rollout_len:
            env = ControlEnv(
                plant=config.agent.plant,
                kb_capacity=config.reasoner.capacity,
                seed=config.seed,
                weights=config.agent.reward,
            )
            policy, _ = agent_mod.train_agent(
                env,
                policy,
                config.agent.total_timesteps,
                rollout_len=config.agent.rollout_len,
                seed=config.seed,
                cfg=config.agent.ppo,
            )

        runtime = cls(config, model, discretizer, kb, policy, out_dir=out_dir)
        runtime.train_history = history
        runtime.eval_report = detector.evaluate(model, test_b)
        if out_dir:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            model.save(out / "detector.bin")
            policy.save(out / "policy.bin")
            (out / "rules.pl").write_text(reasoner.rules_to_text(kb))
            detector.export_history_csv(history, out / "training_history.csv")
        return runtime

    def _warmup(self) -> None:
        """Prime the rolling-normalization buffer with plant readings."""
        idle = Action(adjustments=np.zeros(3), maintenance=0, mode=0, raw=np.zeros(3))
        needed = self.config.pipeline.rolling_window + self.config.pipeline.time_steps
        while len(self._raw_buffer) < needed:
            state = self.plant.env.state
            self._raw_buffer.append(self._feature_row(state))
            self.plant.step(idle)

    def _feature_row(self, state: EnvState) -> np.ndarray:
        readings = self.plant.raw_readings(state)
        eff = state.efficiency_index
        perf = min(10.0, 1.0 / max(eff, 0.1)) if eff > 0.1 else 10.0
        numerics = [
            readings["temperature"],
            readings["vibration"],
            readings["pressure"],
            state.operational_hours,
            eff,
            perf,
        ]
        return np.concatenate([numerics, state.state_onehot])

    # ----- the loop -------------------------------------------------------

    def _normalized_window(self) -> np.ndarray:
        window = self.config.pipeline.rolling_window
        ts = self.config.pipeline.time_steps
        buf = np.asarray(self._raw_buffer[-(window + ts) :])
        out = np.empty_like(buf)
        numeric_cols = len(datagen.Dataset.NUMERIC_COLUMNS)
        for j in range(numeric_cols):
            out[:, j] = pipeline._rolling_zscore(buf[:, j], window)
        out[:, numeric_cols:] = buf[:, numeric_cols:]
        return out[-ts:]

    def run_cycle(self) -> CycleRecord:
        start = time.perf_counter()
        state = self.plant.env.state
        readings = self.plant.raw_readings(state)
        system_state = self.plant.system_state(state)
        try:
            record = self._cycle_core(state, readings, system_state, start)
        except Exception as exc:  # cycle isolation: log and continue
            logger.exception("cycle %d failed", self.cycle)
            record = CycleRecord(
                cycle=self.cycle,
                readings=readings,
                system_state=system_state.value,
                facts=[],
                probability=0.0,
                inference={},
                action={},
                reward={},
                kb_version=self.kb.version,
                sampling_interval_s=self.sampling.interval_s,
                duration_s=time.perf_counter() - start,
                status=f"failed: {exc}",
            )
        if self._log:
            self._log.append(record)
        self.latest_record = record
        self.history.append(record)
        self._publish(record)
        self.cycle += 1
        self._apply_mutations()
        return record

    def _cycle_core(
        self,
        state: EnvState,
        readings: dict[str, float],
        system_state: SystemState,
        start: float,
    ) -> CycleRecord:
        cfg = self.config
        self.plant.maybe_start_spontaneous()

        window = self._normalized_window()
        probability = float(self.model.predict(window[None, :, :])[0])

        facts = self.discretizer.discretize(window, time=self.cycle)
        facts = reasoner.facts_from_prediction(
            probability, facts, threshold=cfg.detector.threshold, time=self.cycle
        )
        snapshot = self.kb.snapshot()
        result = reasoner.infer(snapshot, facts)
        self.kb.record_activations(result, self.cycle)

        policy_state = EnvState(
            z=state.z.copy(),
            operational_hours=state.operational_hours,
            efficiency_index=state.efficiency_index,
            state_onehot=state.state_onehot.copy(),
            rule_bits=self.kb.rule_bitmask(result.activated_ids()),
            deviation=result.deviation,
        )
        action, _ = select_action(
            self.policy, policy_state.vector(), result.deviation, self.action_rng
        )

        pref = self.preference.value(self.cycle)
        self.plant.env.operator_pref = pref
        next_state, reward, _done = self.plant.step(action)
        self._raw_buffer.append(self._feature_row(next_state))
        del self._raw_buffer[: -(cfg.pipeline.rolling_window + cfg.pipeline.time_steps + 8)]

        self.latest_kg = kgraph.build(
            {
                "cycle": self.cycle,
                "system_state": system_state.value,
                "readings": readings,
            },
            result,
            self.kb,
            {
                "efficiency": next_state.efficiency_index,
                "performance": min(10.0, 1.0 / max(next_state.efficiency_index, 0.1)),
            },
        )
        adjust_sampling(self.sampling, result)
        if cfg.reasoner.prune_every and (self.cycle + 1) % cfg.reasoner.prune_every == 0:
            reasoner.prune_rules(
                self.kb,
                cfg.reasoner.prune_min_confidence,
                cfg.reasoner.prune_stale_window,
                now=self.cycle,
            )

        return CycleRecord(
            cycle=self.cycle,
            readings=readings,
            system_state=system_state.value,
            facts=[
                {
                    "predicate": f.predicate,
                    "subject": f.subject,
                    "level": f.level,
                    "confidence": f.confidence,
                }
                for f in facts
            ],
            probability=probability,
            inference=result.to_dict(),
            action=action.to_dict(),
            reward=reward.to_dict(),
            kb_version=self.kb.version,
            sampling_interval_s=self.sampling.interval_s,
            duration_s=time.perf_counter() - start,
        )

    def run(self, cycles: int, pace_s: float = 0.0) -> list[CycleRecord]:
        records = []
        for _ in range(cycles):
            records.append(self.run_cycle())
            if pace_s > 0:
                time.sleep(pace_s)
        return records

    # ----- mutations (queued by the service, applied between cycles) ------

    def submit_mutation(self, mutation: dict) -> None:
        self.mutations.put(mutation)

    def _apply_mutations(self) -> None:
        while True:
            try:
                mut = self.mutations.get_nowait()
            except queue.Empty:
                return
            kind = mut.get("kind")
            try:
                if kind == "verdict":
                    self.kb.set_verdict(mut["rule_id"], mut["verdict"])
                elif kind == "feedback":
                    self.preference.submit(float(mut["score"]), self.cycle)
                elif kind == "inject":
                    self.plant.inject(EventType(mut["event_type"]))
                else:
                    logger.warning("unknown mutation kind %r", kind)
            except Exception:
                logger.exception("mutation %r failed", mut)

    def _publish(self, record: CycleRecord) -> None:
        payload = record.to_json()
        for sub in list(self.subscribers):
            try:
                sub.put_nowait(payload)
            except queue.Full:
                pass

    def subscribe(self) -> "queue.Queue[str]":
        sub: "queue.Queue[str]" = queue.Queue(maxsize=1000)
        self.subscribers.append(sub)
        return sub

    def unsubscribe(self, sub: "queue.Queue[str]") -> None:
        if sub in self.subscribers:
            self.subscribers.remove(sub)

    def close(self) -> None:
        if self._log:
            self._log.close()


class LoopThread:
    """Background executor driving the loop while a service is attached."""

    def __init__(self, runtime: TwinRuntime, pace_s: float) -> None:
        self.runtime = runtime
        self.pace_s = pace_s
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.is_set():
            self.runtime.run_cycle()
            if self.pace_s > 0:
                self._stop.wait(self.pace_s)

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5.0)


def refine_with_rules(
    model: DetectorModel,
    train_b: WindowBatch,
    val_b: WindowBatch,
    config: TwinConfig,
    discretizer: Discretizer,
    rule_bodies: list[frozenset],
) -> DetectorModel:
    """Symbolic feedback into neural training: windows matching any
    high-confidence rule body get boosted sample weights, and the detector is
    fine-tuned a few more epochs so it concentrates on those
    operationally-certified patterns."""
    if not rule_bodies:
        return model
    thr_lv, grad_lv = discretizer.window_levels(train_b.windows)
    boost = np.ones(len(train_b))
    for i in range(len(train_b)):
        sig = discretizer.atom_signature(thr_lv[i], grad_lv[i])
        if any(body <= sig for body in rule_bodies):
            boost[i] = config.reasoner.rule_boost
    from dataclasses import replace as dc_replace

    fine_cfg = dc_replace(
        config.detector.train,
        max_epochs=config.reasoner.finetune_epochs,
        early_stop_patience=config.reasoner.finetune_epochs,
        seed=config.detector.train.seed + 7,
    )
    refined = DetectorModel(
        model.spec, model.input_shape, seed=model.seed, threshold=model.threshold
    )
    refined.store.set_vector(model.store.get_vector())
    refined._set_bn_state(model._bn_state())
    refined, _ = detector.train(refined, train_b, val_b, fine_cfg, sample_boost=boost)
    return refined


def _mine_guidance_bodies(
    model: DetectorModel,
    batch: WindowBatch,
    config: TwinConfig,
    discretizer: Discretizer,
) -> list[frozenset]:
    """Rule bodies for training guidance, mined from the model's soft
    positives so patterns it under-scores are still represented."""
    kb = KnowledgeBase(tau=config.reasoner.tau, capacity=config.reasoner.capacity)
    candidates = reasoner.extract_rules(
        model,
        batch,
        kb,
        discretizer,
        min_support=config.reasoner.min_support,
        max_body=config.reasoner.max_body,
        mine_threshold=config.reasoner.rule_mining_threshold,
    )
    return [c.body for c in candidates]


def ablate(config: TwinConfig, components: set[str]) -> dict[str, EvalReport]:
    """Paired evaluation with and without the named components.

    Removing the reasoner removes the symbolic feedback loop from detector
    training (rule-certified patterns no longer get emphasis), leaving plain
    detector thresholding.  Removing attention swaps in a mean-pooled
    recurrent head.  Guidance rules are mined on train+validation only, so
    the test block never leaks into either arm.
    """
    unknown = components - {"reasoner", "attention"}
    if unknown:
        raise ValueError(f"unknown ablation components: {sorted(unknown)}")
    config.validate()

    data = datagen.generate(config.datagen)
    norm = pipeline.normalize(data, window=config.pipeline.rolling_window)
    ntr, nva, nte = datagen.split(norm, (0.6, 0.2, 0.2))
    ts, stride = config.pipeline.time_steps, config.pipeline.stride
    train_b = pipeline.window(ntr, ts, stride)
    val_b = pipeline.window(nva, ts, stride)
    test_b = pipeline.window(nte, ts, stride)
    discretizer = Discretizer(
        feature_order=FEATURE_ORDER,
        low_z=config.reasoner.low_z,
        high_z=config.reasoner.high_z,
        grad_z=config.reasoner.grad_z,
    ).fit(train_b.windows)

    def build_system(spec: detector.DetectorSpec, use_reasoner: bool) -> DetectorModel:
        model = DetectorModel(
            spec, (ts, train_b.n_features), seed=config.seed,
            threshold=config.detector.threshold,
        )
        model, _ = detector.train(model, train_b, val_b, config.detector.train)
        if use_reasoner:
            trainval = WindowBatch(
                np.concatenate([train_b.windows, val_b.windows]),
                np.concatenate([train_b.labels, val_b.labels]),
            )
            bodies = _mine_guidance_bodies(model, trainval, config, discretizer)
            model = refine_with_rules(model, train_b, val_b, config, discretizer, bodies)
        return model

    with_model = build_system(config.detector.spec, use_reasoner=True)
    with_report = detector.evaluate(with_model, test_b)
    if not components:
        return {"with": with_report, "without": with_report}

    spec = config.detector.spec
    if "attention" in components:
        from dataclasses import replace as dc_replace

        spec = dc_replace(spec, attention=False)
    without_model = build_system(spec, use_reasoner="reasoner" not in components)
    without_report = detector.evaluate(without_model, test_b)
    return {"with": with_report, "without": without_report}
