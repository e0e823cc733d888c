"""Deterministic discrete-event execution of a teardown scenario.

The engine follows a fixed-rate loop (tick = ``Timing.tick`` seconds):
observe, refresh the graph, order the ready set, instantiate, dispatch,
then advance. Nothing changes between dispatch decisions, so the clock
jumps straight to the next tick at which an arm frees up; the resulting
timeline is identical to stepping every tick.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import CalibrationError, ScenarioError
from .partgraph import (
    IN_PROGRESS, PRESENT, REMOVED, PartGraph, PartNode,
    insert_nodes, ready_set, remove_node, sync_with_observations,
)
from .perception import (
    GroundTruthPart, PartTracker, RigidTransform, TrackedPart, synthetic_detect,
)
from .rng import KeyedRng
from .scheduler import (
    ArmProfile, RetryPolicy, attach_holds, capability_filter, handle_failure,
    on_complete, select_dispatch,
)
from .sequencer import ActionPrimitive, instantiate, topo_order

log = logging.getLogger(__name__)

FAULT_TYPES = ("vacuum_seal_leak", "illumination_loss", "incomplete_disengage")
TIMELINE_FIELDS = ("t_start", "t_end", "arm", "action", "target", "outcome")


@dataclass(frozen=True)
class EngagementModel:
    mode: str = "fine"
    p_success_coarse: float = 3 / 7
    p_success_fine: float = 0.9
    align_time_fine: float = 8.0
    engage_time: float = 2.0
    unscrew_time: float = 20.0
    backoff_time: float = 1.0
    coarse_max_retries: int = 0

    def __post_init__(self):
        if self.mode not in ("coarse", "fine"):
            raise ValueError(f"unknown engagement mode {self.mode!r}")
        for name in ("p_success_coarse", "p_success_fine"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("align_time_fine", "engage_time", "unscrew_time", "backoff_time"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def p_success(self) -> float:
        return self.p_success_fine if self.mode == "fine" else self.p_success_coarse


@dataclass(frozen=True)
class FaultInjector:
    """Per-opportunity fault probabilities.

    ``vacuum_seal_leak`` is drawn on each grasp of a ``seal_leak_categories``
    part, ``illumination_loss`` on each fine alignment and
    ``incomplete_disengage`` on each lift of a ``disengage_categories`` part.
    """

    vacuum_seal_leak: float = 0.0
    illumination_loss: float = 0.0
    incomplete_disengage: float = 0.0
    illumination_ticks: int = 100
    seal_leak_categories: tuple = ("platter",)
    disengage_categories: tuple = ("lid",)
    abort_on_fault: bool = True
    once_per_trial: bool = True

    def __post_init__(self):
        for name in FAULT_TYPES:
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"fault probability {name} must lie in [0, 1]")
        if self.illumination_ticks < 0:
            raise ValueError("illumination_ticks must be >= 0")

    @classmethod
    def none(cls) -> FaultInjector:
        return cls()

    @property
    def active(self) -> bool:
        return any(getattr(self, n) > 0 for n in FAULT_TYPES)


@dataclass(frozen=True)
class Timing:
    tick: float = 0.1
    scan_time: float = 10.0
    flip_time: float = 30.0
    grip_time: float = 3.0
    lift_time: float = 10.0
    release_time: float = 2.0

    def __post_init__(self):
        if not self.tick > 0:
            raise ValueError("tick must be positive")

    def ticks(self, seconds: float) -> int:
        """Duration in whole ticks, rounded up (events snap to tick boundaries)."""
        return max(0, math.ceil(seconds / self.tick - 1e-9))


@dataclass(frozen=True)
class SimModels:
    engagement: EngagementModel = field(default_factory=EngagementModel)
    faults: FaultInjector = field(default_factory=FaultInjector)
    timing: Timing = field(default_factory=Timing)
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    @property
    def policy(self) -> RetryPolicy:
        if self.engagement.mode == "coarse":
            return replace(self.retry, max_retries=self.engagement.coarse_max_retries)
        return self.retry


@dataclass(frozen=True)
class SimEvent:
    t_start: float
    t_end: float
    arm: str
    action: str
    target: str
    outcome: str = "success"

    def __post_init__(self):
        if self.t_end < self.t_start:
            raise ValueError("event ends before it starts")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def to_row(self) -> list[str]:
        return [f"{self.t_start:.3f}", f"{self.t_end:.3f}", self.arm, self.action, self.target, self.outcome]

    @classmethod
    def from_row(cls, row: Sequence[str]) -> SimEvent:
        t0, t1, arm, action, target, outcome = row
        return cls(float(t0), float(t1), arm, action, target, outcome)


@dataclass
class DispatchRecord:
    """One dispatched primitive and the interval its arm spent on it."""

    t_start: float
    t_end: float
    arm: str
    action: ActionPrimitive
    outcome: str


@dataclass
class Timeline:
    events: list[SimEvent] = field(default_factory=list)
    layer_bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    total_time: float = 0.0
    dispatches: list[DispatchRecord] = field(default_factory=list)

    def sorted(self) -> Timeline:
        self.events.sort(key=lambda e: (e.t_start, e.t_end, e.arm, e.action, e.target))
        return self

    def layer_of(self, event: SimEvent) -> str | None:
        for layer, (t0, t1) in self.layer_bounds.items():
            if t0 <= event.t_start < t1 or (event.t_start == t1 == self.total_time and t0 <= t1):
                return layer
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TIMELINE_FIELDS)
        for e in self.events:
            writer.writerow(e.to_row())
        return buf.getvalue()

    @staticmethod
    def events_from_csv(text: str) -> list[SimEvent]:
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if tuple(header or ()) != TIMELINE_FIELDS:
            raise ValueError(f"unexpected timeline header {header!r}")
        return [SimEvent.from_row(row) for row in reader if row]


@dataclass
class Metrics:
    layer_times: dict[str, float] = field(default_factory=dict)
    clearance_rate: dict[str, float] = field(default_factory=dict)
    completed: bool = False
    total_time: float = 0.0
    removed: int = 0
    abandoned: int = 0
    present_at_end: int = 0
    inserted: int = 0
    retries: int = 0
    faults: list[str] = field(default_factory=list)
    removal_order: list[str] = field(default_factory=list)
    removed_per_layer: dict[str, int] = field(default_factory=dict)
    calibration_offsets: dict[str, tuple[float, float, float]] = field(default_factory=dict)


def motion_time(src, dst, speed: float) -> float:
    if not speed > 0:
        raise ValueError("speed must be positive")
    return math.dist(src, dst) / speed


def attempt_engagement(model: EngagementModel, rng, mode: str | None = None) -> str:
    """Guarded seating check: a Bernoulli draw with the mode's success rate."""
    p = model.p_success_fine if (mode or model.mode) == "fine" else model.p_success_coarse
    if p >= 1.0:
        return "success"
    if p <= 0.0:
        return "engage_fail"
    return "success" if rng.random() < p else "engage_fail"


class _KeyedDraw:
    """Adapter giving a KeyedRng draw the ``random()`` interface."""

    __slots__ = ("rng", "keys")

    def __init__(self, rng: KeyedRng, *keys):
        self.rng = rng
        self.keys = keys

    def random(self) -> float:
        return self.rng.uniform(*self.keys)


@dataclass
class FaultState:
    fired: list = field(default_factory=list)
    illumination_until: int = -1

    def may_fire(self, injector: FaultInjector, name: str) -> bool:
        return getattr(injector, name) > 0 and not (injector.once_per_trial and name in self.fired)


@dataclass
class ExecutionResult:
    events: list[SimEvent]
    outcome: str
    t_end: int
    end_position: tuple[float, float, float]
    fault: str | None = None


def fault_outcome(name: str) -> str:
    return f"fault({name})"


def execute_action(
    action: ActionPrimitive,
    arm: ArmProfile,
    models: SimModels,
    rng: KeyedRng,
    clock: int,
    category: str = "",
    fault_state: FaultState | None = None,
) -> ExecutionResult:
    """Expand one primitive into timed sub-events starting at tick ``clock``.

    Unscrew: move, [align], engage, then unscrew/carry/drop on success.
    Lift/remove: move, grip, lift. Drop: carry to the bin and release.
    Outcomes are drawn from ``rng`` keyed on the target and retry count.
    """
    timing, eng, inj = models.timing, models.engagement, models.faults
    fs = fault_state if fault_state is not None else FaultState()
    tk = timing.tick
    events: list[SimEvent] = []
    t = clock
    pos = arm.current_position
    node = action.target_node
    attempt = action.retries_used

    def emit(name, seconds, outcome="success"):
        nonlocal t
        t0 = t
        t += timing.ticks(seconds)
        events.append(SimEvent(round(t0 * tk, 6), round(t * tk, 6), arm.name, name, node, outcome))

    kind = action.action_kind
    speed = action.nominal_speed
    if kind == "drop":
        emit("carry", motion_time(pos, action.target_position, speed))
        emit("drop", timing.release_time)
        return ExecutionResult(events, "success", t, action.target_position)

    if kind == "hold":
        dst = action.target_position
        emit("hold", motion_time(pos, dst, speed))
        return ExecutionResult(events, "success", t, dst)

    x, y, z = action.target_position
    approach = (x, y, z + action.approach_offset)
    emit("move", motion_time(pos, approach, speed))

    if kind == "unscrew":
        mode = eng.mode
        if mode == "fine":
            lost = t < fs.illumination_until
            if not lost and fs.may_fire(inj, "illumination_loss") and rng.bernoulli(
                inj.illumination_loss, "illumination_loss", node, attempt
            ):
                fs.fired.append("illumination_loss")
                fs.illumination_until = t + inj.illumination_ticks
                emit("align", eng.align_time_fine, fault_outcome("illumination_loss"))
                if inj.abort_on_fault:
                    return ExecutionResult(events, fault_outcome("illumination_loss"), t, approach,
                                           "illumination_loss")
                lost = True
            elif not lost:
                emit("align", eng.align_time_fine)
            if lost:
                mode = "coarse"
        result = attempt_engagement(eng, _KeyedDraw(rng, "engage", node, attempt), mode)
        if result != "success":
            exhausted = attempt >= models.policy.max_retries
            outcome = "abandoned" if exhausted else "engage_fail"
            emit("engage", eng.engage_time + eng.backoff_time, outcome)
            return ExecutionResult(events, outcome, t, approach)
        emit("engage", eng.engage_time)
        emit("unscrew", action.tool_params.get("unscrew_time", eng.unscrew_time))
        drop_pose = tuple(action.tool_params.get("drop_pose", approach))
        emit("carry", motion_time(approach, drop_pose, speed))
        emit("drop", timing.release_time)
        return ExecutionResult(events, "success", t, drop_pose)

    # lift / remove
    if category in inj.seal_leak_categories and fs.may_fire(inj, "vacuum_seal_leak") and rng.bernoulli(
        inj.vacuum_seal_leak, "vacuum_seal_leak", node, attempt
    ):
        fs.fired.append("vacuum_seal_leak")
        emit("grip", timing.grip_time)
        emit(kind, action.tool_params.get("lift_time", timing.lift_time) / 2,
             fault_outcome("vacuum_seal_leak"))
        return ExecutionResult(events, fault_outcome("vacuum_seal_leak"), t, approach, "vacuum_seal_leak")
    emit("grip", timing.grip_time)
    if category in inj.disengage_categories and fs.may_fire(inj, "incomplete_disengage") and rng.bernoulli(
        inj.incomplete_disengage, "incomplete_disengage", node, attempt
    ):
        fs.fired.append("incomplete_disengage")
        emit(kind, action.tool_params.get("lift_time", timing.lift_time) / 2,
             fault_outcome("incomplete_disengage"))
        return ExecutionResult(events, fault_outcome("incomplete_disengage"), t, approach,
                               "incomplete_disengage")
    emit(kind, action.tool_params.get("lift_time", timing.lift_time))
    return ExecutionResult(events, "success", t, approach)


def calibrate_frames(
    known_marker,
    measure: Callable[[np.ndarray], Iterable[float]],
    tol: float,
    max_iters: int = 10,
) -> RigidTransform:
    """Drive the measured marker onto the known one by corrective steps.

    ``measure(correction)`` returns the marker position seen with the
    accumulated translation ``correction`` applied. Each iteration subtracts
    the residual; the accumulated correction is returned once the residual
    norm drops below ``tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    known = np.asarray(known_marker, dtype=float)
    correction = np.zeros(3)
    for _ in range(max_iters):
        residual = np.asarray(measure(correction.copy()), dtype=float) - known
        if np.linalg.norm(residual) < tol:
            return RigidTransform.from_translation(correction)
        correction = correction - residual
    raise CalibrationError(f"residual still above {tol} m after {max_iters} iterations")


# --------------------------------------------------------------------------
# engine


@dataclass
class _InFlight:
    arm: ArmProfile
    action: ActionPrimitive
    result: ExecutionResult
    t_start: int
    partner: str | None = None  # hold partner's arm name


class _Engine:
    def __init__(self, scenario, seed: int, mode: str | None, arms: int, faults: bool):
        self.sc = scenario
        self.seed = seed
        eng = scenario.engagement if mode is None else replace(scenario.engagement, mode=mode)
        self.models = SimModels(
            engagement=eng,
            faults=scenario.faults if faults else FaultInjector.none(),
            timing=scenario.timing,
            retry=scenario.retry,
        )
        self.policy = self.models.policy
        self.tk = scenario.timing.tick
        self.rng = KeyedRng(seed, scenario.name)
        self.fault_state = FaultState()
        self.arms = scenario.make_arms(arms)
        self.camera_arm = self.arms[0] if arms == 1 else next(
            a for a in self.arms if a.name == scenario.camera_arm)
        self.graph = PartGraph()
        self.templates_by_cat: dict[str, list] = {}
        for tpl in scenario.templates:
            self.templates_by_cat.setdefault(tpl.applicable_category, []).append(tpl)
        self._chains: dict[str, list[ActionPrimitive]] = {}

        self.t = 0
        self.timeline = Timeline()
        self.metrics = Metrics()
        self.in_flight: dict[str, _InFlight] = {}
        self.busy_until: dict[str, int] = {a.name: 0 for a in self.arms}
        self.holding: dict[str, ActionPrimitive] = {}  # arm -> pending drop
        self.requeued: dict[str, ActionPrimitive] = {}
        self.abandoned: set[str] = set()
        self.aborted = False
        self.removed_nodes: list[PartNode] = []
        self.reinserts = 0

        # physical state
        self.layers = scenario.layer_names()
        self.parts = {p.id: p for p in scenario.parts}
        self.positions = {p.id: p.position for p in scenario.parts}
        self.physically_present = set(self.parts)
        self.revealed = 0  # number of layers revealed
        self.layer_start: dict[str, int] = {}
        self.scanning = False
        self.rescans_left = 0
        self.node_part: dict[str, str | None] = {}
        self.tracker = None
        self.scan_count = 0
        if scenario.perception.mode == "synthetic":
            self.tracker = PartTracker(
                scenario.camera, scenario.hand_eye,
                association_gate=scenario.perception.association_gate_px,
                merge_gate=scenario.perception.merge_gate_px,
                alpha=scenario.perception.ema_alpha,
                max_misses=scenario.perception.max_misses,
                min_hits=scenario.perception.min_hits,
            )

    # -- helpers ---------------------------------------------------------
    def sec(self, ticks: int) -> float:
        return round(ticks * self.tk, 6)

    def current_layer(self) -> str | None:
        return self.layers[self.revealed - 1] if self.revealed else None

    def chain(self, node: PartNode) -> list[ActionPrimitive]:
        chain = self._chains.get(node.id)
        if chain is None:
            chain = instantiate(node, self.templates_by_cat.get(node.category, ()))
            self._chains[node.id] = chain
        return chain

    def head_action(self, node_id: str) -> ActionPrimitive:
        action = self.requeued.get(node_id)
        if action is None:
            action = self.chain(self.graph.nodes[node_id])[0]
        return attach_holds(action, self.graph, self.sc.hold_categories)

    # -- perception ------------------------------------------------------
    def visible_parts(self) -> list[str]:
        shown = set(self.layers[:self.revealed])
        return sorted(pid for pid in self.physically_present if self.parts[pid].layer in shown)

    def observe(self, layer: str) -> None:
        """Refresh the graph from a scan of the device."""
        held = {a.target_node for a in self.holding.values()}
        held |= {f.action.target_node for f in self.in_flight.values()}
        if self.tracker is None:
            observed = [
                TrackedPart(pid, self.parts[pid].category, self.positions[pid], self.positions[pid],
                            self.scan_count)
                for pid in self.visible_parts() if pid not in held
            ]
            for t in observed:
                self.node_part.setdefault(t.id, t.id)
        else:
            observed = self._synthetic_scan(held)
        shown = set(self.layers[:self.revealed])
        keep = held | self.abandoned
        keep |= {nid for nid, n in self.graph.nodes.items() if n.layer not in shown}
        keep |= {nid for nid in self.graph.nodes if self.node_part.get(nid) in held}
        _, changes = sync_with_observations(self.graph, observed, self.sc.rules, layer, keep)
        for ch in changes:
            if ch.kind == "insert":
                self.metrics.inserted += 1
            else:
                self.metrics.removed += 1
                self._chains.pop(ch.node_id, None)
        self.scan_count += 1
        return changes

    def _synthetic_scan(self, held) -> list[TrackedPart]:
        sc = self.sc
        cam_pose = sc.scan_pose.compose(sc.hand_eye)
        world_to_cam = cam_pose.inverse()
        held = {self.node_part.get(nid, nid) for nid in held}
        truth = []
        for pid in self.visible_parts():
            if pid in held:
                continue
            pc = world_to_cam.apply(self.positions[pid])
            if pc[2] <= 0:
                continue
            u, v = sc.camera.project(pc)
            if 0 <= u < 640 and 0 <= v < 640:
                truth.append(GroundTruthPart(pid, self.parts[pid].category, (u, v), float(pc[2])))
        gen = np.random.default_rng([self.seed & 0xFFFFFFFF, self.seed >> 32, self.scan_count])
        for frame in range(sc.perception.scan_frames):
            dets = synthetic_detect(truth, sc.perception.noise, gen, sc.categories,
                                    frame_id=self.scan_count * 1000 + frame)
            self.tracker.update(dets, sc.scan_pose)
        confirmed = self.tracker.confirmed()
        # Physical identity of each confirmed track: the nearest part of its class
        # not owned by anything else. Re-resolved every scan so a duplicate track
        # inherits the part once the original track dies.
        busy = self.abandoned | {f.action.target_node for f in self.in_flight.values()}
        busy |= {a.target_node for a in self.holding.values()}
        claimed = {self.node_part.get(nid) for nid in busy} | held
        claimed.discard(None)
        tracks = sorted(confirmed, key=lambda t: (self.node_part.get(t.id) is None, t.id))
        for track in tracks:
            if track.id in busy:
                continue
            prev = self.node_part.get(track.id)
            if prev is not None and prev not in claimed and prev in self.physically_present:
                claimed.add(prev)
                continue
            best, best_d = None, sc.perception.match_tol_m
            for g in truth:
                if g.category != track.category or g.part_id in claimed:
                    continue
                d = math.dist(self.positions[g.part_id], track.smoothed_position)
                if d <= best_d:
                    best, best_d = g.part_id, d
            self.node_part[track.id] = best
            if best is not None:
                claimed.add(best)
        return confirmed

    # -- layer transitions ------------------------------------------------
    def layer_clear(self) -> bool:
        """Every revealed node left on the device is already held by an arm."""
        held = {a.target_node for a in self.holding.values()}
        for f in self.in_flight.values():
            if f.action.continuation:
                held.add(f.action.target_node)
        shown = set(self.layers[:self.revealed])
        return all(nid in held for nid, n in self.graph.nodes.items() if n.layer in shown)

    def fasteners_done(self) -> bool:
        """No fastener of a revealed layer is left to work on."""
        shown = set(self.layers[:self.revealed])
        fasteners = self.sc.fastener_categories
        return not any(
            n.layer in shown and n.category in fasteners and nid not in self.abandoned
            for nid, n in self.graph.nodes.items()
        )

    def revealed_nodes(self) -> list[str]:
        shown = set(self.layers[:self.revealed])
        return [nid for nid, n in self.graph.nodes.items() if n.layer in shown]

    def try_advance_layer(self) -> bool:
        if self.aborted or self.scanning:
            return False
        cam = self.camera_arm
        if cam.name in self.in_flight or cam.name in self.holding or self.busy_until[cam.name] > self.t:
            return False
        if self.tracker is not None and self.revealed and self.rescans_left > 0 and self.fasteners_done():
            # look again before any host is lifted: a missed screw shows up on a later view
            self.rescans_left -= 1
            self._scan(self.current_layer(), verify=True)
            return True
        if self.revealed >= len(self.layers) or not self.layer_clear():
            return False
        layer = self.layers[self.revealed]
        spec = self.sc.layer_spec(layer)
        start = self.t
        if spec.flip_before:
            if self.revealed_nodes() or self.in_flight or self.holding:
                return False
            flip_end = self.t + self.sc.timing.ticks(self.sc.timing.flip_time)
            self.timeline.events.append(
                SimEvent(self.sec(self.t), self.sec(flip_end), "device", "flip", layer))
            self._mirror_hidden()
            self.t = flip_end
            for a in self.arms:
                self.busy_until[a.name] = flip_end
        self.revealed += 1
        self.layer_start[layer] = start
        self.rescans_left = self.sc.perception.max_rescans
        self._scan(layer)
        return True

    def _mirror_hidden(self) -> None:
        """Re-register unrevealed parts after turning the device over."""
        hz = self.sc.holder_z
        for pid, p in self.parts.items():
            if self.layers.index(p.layer) >= self.revealed:
                x, y, z = self.positions[pid]
                self.positions[pid] = (x, y, 2 * hz - z)
                node = self.graph.nodes.get(pid)
                if node is not None:
                    node.position_world = self.positions[pid]
                    self._chains.pop(pid, None)

    def _scan(self, layer: str, verify: bool = False) -> None:
        cam = self.camera_arm
        end = self.t + self.sc.timing.ticks(self.sc.timing.scan_time)
        self.timeline.events.append(SimEvent(self.sec(self.t), self.sec(end), cam.name, "scan", layer))
        self.busy_until[cam.name] = end
        self.scanning = True
        self._scan_end = end
        self._scan_layer = layer
        self._verify = verify

    def finish_scan(self) -> None:
        self.scanning = False
        changes = self.observe(self._scan_layer)
        if self._verify and not changes:
            self.rescans_left = 0

    # -- dispatch ---------------------------------------------------------
    def idle(self, arm: ArmProfile) -> bool:
        return arm.name not in self.in_flight and self.busy_until[arm.name] <= self.t

    def dispatch(self) -> bool:
        if self.aborted:
            return False
        idle = [a for a in self.arms if self.idle(a)]
        if not idle:
            return False
        for a in self.arms:
            a.state = "idle" if self.idle(a) else "acting"
        shown = set(self.layers[:self.revealed])
        ready = {
            nid for nid in ready_set(self.graph)
            if nid not in self.abandoned and self.graph.nodes[nid].layer in shown
        }
        candidates: dict[str, list[ActionPrimitive]] = {}
        for arm in idle:
            if arm.name in self.holding:
                candidates[arm.name] = [self.holding[arm.name]]
                continue
            if not ready or self.scanning:
                continue
            order = [nid for nid in topo_order(self.graph, self.sc.priority, arm.last_target)
                     if nid in ready]
            actions = [self.head_action(nid) for nid in order]
            candidates[arm.name] = capability_filter(actions, self.arms)[arm.name]
        if not candidates:
            return False
        in_flight = [f.action for f in self.in_flight.values()]
        chosen = select_dispatch(candidates, self.arms, self.graph, in_flight)
        if not chosen:
            return False
        by_arm = {a.name: a for a in self.arms}
        pairs = list(chosen)
        results: dict[str, ExecutionResult] = {}
        # operate before hold so the hold can span the partner's interval
        for arm_name, action in sorted(pairs, key=lambda p: p[1].action_kind == "hold"):
            arm = by_arm[arm_name]
            node = self.graph.nodes[action.target_node]
            if action.action_kind == "hold":
                partner = next(n for n, act in pairs if act.hold_target == action.target_node)
                res = execute_action(action, arm, self.models, self.rng, self.t, node.category,
                                     self.fault_state)
                end = max(res.t_end, results[partner].t_end)
                if end > res.t_end:
                    res.events.append(SimEvent(self.sec(res.t_end), self.sec(end), arm.name, "hold",
                                               node.id))
                    res.t_end = end
                self._start(arm, action, res, partner)
                continue
            if action.continuation:
                self.holding.pop(arm_name, None)
            else:
                node.transition(IN_PROGRESS)
            part = self.node_part.get(node.id, node.id)
            if part is None:
                res = self._spurious(arm, action)
            else:
                res = execute_action(action, arm, self.models, self.rng, self.t, node.category,
                                     self.fault_state)
            results[arm_name] = res
            self._start(arm, action, res)
        return True

    def _spurious(self, arm: ArmProfile, action: ActionPrimitive) -> ExecutionResult:
        """Nothing at the target: the arm re-scans and the node is dropped."""
        t0 = self.t
        t1 = t0 + self.sc.timing.ticks(motion_time(arm.current_position, action.target_position,
                                                   action.nominal_speed))
        t2 = t1 + self.sc.timing.ticks(self.sc.timing.scan_time)
        events = [
            SimEvent(self.sec(t0), self.sec(t1), arm.name, "move", action.target_node),
            SimEvent(self.sec(t1), self.sec(t2), arm.name, "scan", action.target_node),
        ]
        return ExecutionResult(events, "spurious", t2, action.target_position)

    def _start(self, arm, action, res, partner=None) -> None:
        self.timeline.events.extend(res.events)
        self.in_flight[arm.name] = _InFlight(arm, action, res, self.t, partner)
        self.busy_until[arm.name] = res.t_end
        if action.action_kind != "drop":
            arm.last_target = action.target_position
        arm.state = "acting"

    # -- completion -------------------------------------------------------
    def complete(self, f: _InFlight) -> None:
        arm, action, res = f.arm, f.action, f.result
        del self.in_flight[arm.name]
        arm.current_position = res.end_position
        arm.state = "idle"
        self.timeline.dispatches.append(
            DispatchRecord(self.sec(f.t_start), self.sec(res.t_end), arm.name, action, res.outcome))
        if action.action_kind == "hold":
            return
        nid = action.target_node
        node = self.graph.nodes.get(nid)
        outcome = res.outcome
        if outcome == "success":
            if action.final:
                self.removed_nodes.append(node)
                self.metrics.removal_order.append(nid)
                self.metrics.removed += 1
                part = self.node_part.get(nid, nid)
                layer = self.parts[part].layer if part in self.parts else node.layer
                self.metrics.removed_per_layer[layer] = self.metrics.removed_per_layer.get(layer, 0) + 1
                self.physically_present.discard(self.node_part.get(nid, nid))
                on_complete(self.graph, action)
                node.transition(REMOVED)
                self.requeued.pop(nid, None)
                self._chains.pop(nid, None)
            else:
                chain = self.chain(node)
                ids = [a.id for a in chain]
                self.holding[arm.name] = chain[ids.index(action.id) + 1]
            return
        if outcome == "spurious":
            self.graph.nodes[nid].state = PRESENT
            self._drop_node(nid)
            if self.tracker is not None:
                # the arm looked and found nothing: forget the track, refresh the graph
                self.tracker.tracks = [t for t in self.tracker.tracks if t.id != nid]
                self.observe(self.current_layer())
            self.metrics.removed += 1
            return

        node.transition(PRESENT)
        if outcome == "abandoned":
            self.abandoned.add(nid)
            self.requeued.pop(nid, None)
            return
        if outcome == "engage_fail":
            self.metrics.retries += 1
            self.requeued[nid] = handle_failure(action, self.policy)
            return
        # faults
        if res.fault == "incomplete_disengage":
            self._reinsert_blocker(node)
        retry = handle_failure(action, self.policy)
        if retry is None:
            self.abandoned.add(nid)
        else:
            self.requeued[nid] = retry
        if self.models.faults.abort_on_fault:
            self.aborted = True

    def _drop_node(self, nid: str) -> None:
        remove_node(self.graph, nid)
        self._chains.pop(nid, None)
        self.requeued.pop(nid, None)

    def _reinsert_blocker(self, host: PartNode) -> None:
        """The last fastener removed from ``host`` turns out to be still engaged."""
        blockers = {r.from_category for r in self.sc.rules if r.to_category == host.category}
        for prev in reversed(self.removed_nodes):
            if prev.category in blockers and prev.layer == host.layer:
                self.reinserts += 1
                new = PartNode(f"{prev.id}~{self.reinserts}", prev.category, prev.position_world,
                               prev.layer)
                insert_nodes(self.graph, [new], self.sc.rules)
                self.node_part[new.id] = self.node_part.get(prev.id, prev.id)
                self.physically_present.add(self.node_part[new.id])
                self.metrics.inserted += 1
                return

    # -- main loop ----------------------------------------------------------
    def run(self) -> tuple[Timeline, Metrics]:
        self._calibrate()
        if not self.parts:
            return self._finish()
        if self.sc.preregister_hidden:
            self._preregister()
        self.try_advance_layer()
        while True:
            # finish whatever ends now, in fixed arm order
            for arm in self.arms:
                f = self.in_flight.get(arm.name)
                if f is not None and f.result.t_end <= self.t:
                    self.complete(f)
            if self.scanning and self._scan_end <= self.t:
                self.finish_scan()
            while self.try_advance_layer():
                pass
            self.dispatch()
            pending = [f.result.t_end for f in self.in_flight.values()]
            if self.scanning:
                pending.append(self._scan_end)
            pending.extend(t for t in self.busy_until.values() if t > self.t)
            if not pending:
                break
            self.t = min(pending)
        return self._finish()

    def _preregister(self) -> None:
        nodes = [PartNode(p.id, p.category, p.position, p.layer) for p in self.sc.parts]
        insert_nodes(self.graph, nodes, self.sc.rules)
        for p in self.sc.parts:
            self.node_part[p.id] = p.id
        self.metrics.inserted += len(nodes)

    def _calibrate(self) -> None:
        cal = self.sc.calibration
        if cal is None:
            return
        gen = np.random.default_rng([self.seed & 0xFFFFFFFF, self.seed >> 32, 0xCA1])
        marker = np.asarray(cal.marker, dtype=float)
        for arm in self.arms:
            offset = np.asarray(cal.initial_offsets.get(arm.name, (0.0, 0.0, 0.0)), dtype=float)

            def measure(correction, offset=offset):
                return marker + offset + correction + gen.normal(0.0, cal.noise_m, 3)

            tf = calibrate_frames(marker, measure, cal.tol_m, cal.max_iters)
            self.metrics.calibration_offsets[arm.name] = tuple(float(x) for x in tf.translation)

    def _finish(self) -> tuple[Timeline, Metrics]:
        m, tl = self.metrics, self.timeline
        m.faults = list(self.fault_state.fired)
        tl.sorted()
        end = max((e.t_end for e in tl.events), default=0.0)
        tl.total_time = end
        shown = self.layers[:self.revealed]
        for i, layer in enumerate(self.layers):
            if i < len(shown) and layer in self.layer_start:
                t0 = self.sec(self.layer_start[layer])
                t1 = self.sec(self.layer_start[shown[i + 1]]) if i + 1 < len(shown) else end
                tl.layer_bounds[layer] = (t0, t1)
                m.layer_times[layer] = round(t1 - t0, 6)
            else:
                m.layer_times[layer] = 0.0
        m.total_time = end
        fasteners = self.sc.fastener_categories
        for layer in self.layers:
            total = sum(1 for p in self.sc.parts if p.layer == layer and p.category in fasteners)
            if not total:
                continue
            if layer not in shown:
                m.clearance_rate[layer] = 0.0
                continue
            left = sum(
                1 for pid in self.physically_present
                if self.parts[pid].layer == layer and self.parts[pid].category in fasteners
            )
            m.clearance_rate[layer] = min(1.0, max(0.0, (total - left) / total))
        m.abandoned = len(self.abandoned & set(self.graph.nodes))
        m.present_at_end = len(self.graph.nodes) - m.abandoned
        all_revealed = self.revealed == len(self.layers) or not self.parts
        # an undetected part left on the device also makes the teardown incomplete
        m.completed = all_revealed and not self.graph.nodes and not self.physically_present and not self.aborted
        if self.graph.nodes and not self.aborted and not self.abandoned and not m.faults:
            raise ScenarioError(
                f"deadlock at t={end:.1f}s with nodes {sorted(self.graph.nodes)} and nothing dispatchable"
            )
        return tl, m


def run_loop(scenario, config=None, seed: int = 0) -> tuple[Timeline, Metrics]:
    """Run one seeded teardown trial.

    ``config`` may override ``mode`` ("coarse"/"fine"), ``arms`` (1 or 2) and
    ``faults`` (bool); anything missing falls back to the scenario.
    """
    config = dict(config or {})
    engine = _Engine(
        scenario,
        seed,
        mode=config.get("mode"),
        arms=int(config.get("arms", 2)),
        faults=bool(config.get("faults", True)),
    )
    return engine.run()
