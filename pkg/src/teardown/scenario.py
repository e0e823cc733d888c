"""Scenario files: loading, validation and the bundled HDD families."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .errors import RuleCycleError, ValidationError
from .partgraph import LAYERS, CategoryRule, PartNode, apply_rules
from .perception import (
    DEFAULT_ASSOCIATION_GATE_PX, DEFAULT_EMA_ALPHA, DEFAULT_MAX_MISSES, DEFAULT_MERGE_GATE_PX,
    CameraModel, NoiseModel, RigidTransform,
)
from .scheduler import ArmProfile, RetryPolicy
from .sequencer import DEFAULT_REGION_RADIUS, ActionTemplate, ClassPriority
from .simulator import EngagementModel, FaultInjector, Timing

BUNDLED = ("samsung", "seagate", "western_digital")

MM = 1e-3


@dataclass(frozen=True)
class ScenarioPart:
    id: str
    category: str
    layer: str
    position: tuple[float, float, float]  # metres


@dataclass(frozen=True)
class LayerSpec:
    name: str
    flip_before: bool = False


@dataclass(frozen=True)
class CalibrationSpec:
    marker: tuple[float, float, float]
    tol_m: float = 0.5 * MM
    noise_m: float = 0.0
    max_iters: int = 10
    initial_offsets: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PerceptionSpec:
    mode: str = "oracle"
    noise: NoiseModel = field(default_factory=NoiseModel)
    scan_frames: int = 10
    min_hits: int = 2
    association_gate_px: float = DEFAULT_ASSOCIATION_GATE_PX
    merge_gate_px: float = DEFAULT_MERGE_GATE_PX
    ema_alpha: float = DEFAULT_EMA_ALPHA
    max_misses: int = DEFAULT_MAX_MISSES
    match_tol_m: float = 10 * MM
    max_rescans: int = 2


@dataclass
class Scenario:
    name: str
    family: str
    categories: list[str]
    priority: ClassPriority
    rules: list[CategoryRule]
    rules_by_layer: dict[str, list[CategoryRule]]
    templates: list[ActionTemplate]
    arm_specs: list[dict]
    camera_arm: str
    parts: list[ScenarioPart]
    layers: list[LayerSpec]
    engagement: EngagementModel
    faults: FaultInjector
    timing: Timing
    retry: RetryPolicy
    camera: CameraModel
    hand_eye: RigidTransform
    scan_pose: RigidTransform
    mm_per_px: float = 0.05
    holder_z: float = 0.05
    calibration: CalibrationSpec | None = None
    perception: PerceptionSpec = field(default_factory=PerceptionSpec)
    hold_categories: frozenset = frozenset()
    preregister_hidden: bool = False
    bins: dict = field(default_factory=dict)
    source: str = ""

    @property
    def fastener_categories(self) -> frozenset:
        return frozenset(t.applicable_category for t in self.templates if t.action_kind == "unscrew")

    def layer_names(self) -> list[str]:
        return [layer.name for layer in self.layers]

    def layer_spec(self, name: str) -> LayerSpec:
        return next(layer for layer in self.layers if layer.name == name)

    def parts_in(self, layer: str) -> list[ScenarioPart]:
        return [p for p in self.parts if p.layer == layer]

    def make_arms(self, count: int = 2) -> list[ArmProfile]:
        """Fresh arm profiles; ``count=1`` merges every capability into one arm."""
        if count == 2:
            return [
                ArmProfile(a["name"], frozenset(a["capabilities"]), a["home"], a["speed"])
                for a in self.arm_specs
            ]
        if count == 1:
            first = next(a for a in self.arm_specs if a["name"] == self.camera_arm)
            caps = frozenset().union(*(a["capabilities"] for a in self.arm_specs))
            return [ArmProfile("solo", caps, first["home"], first["speed"])]
        raise ValueError("only one or two arms are supported")


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("teardown") / "scenarios" / f"{name}.json"))


def resolve_scenario_path(ref: str | Path) -> Path:
    """A filesystem path, or the name of a bundled scenario."""
    path = Path(ref)
    if path.exists():
        return path
    if str(ref) in BUNDLED:
        return bundled_path(str(ref))
    raise ValidationError("scenario", f"no such file or bundled scenario: {ref}")


def load_scenario(path: str | Path) -> Scenario:
    path = resolve_scenario_path(path)
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError("<root>", f"parse error: {exc}") from exc
    scenario = parse_scenario(raw)
    scenario.source = str(path)
    return scenario


def _req(d: dict, key: str, where: str):
    if key not in d:
        raise ValidationError(f"{where}.{key}" if where else key, "missing required field")
    return d[key]


def _vec_mm(v, where: str) -> tuple[float, float, float]:
    if not (isinstance(v, (list, tuple)) and len(v) == 3):
        raise ValidationError(where, "expected [x, y, z]")
    return tuple(float(x) * MM for x in v)


def _transform(d: dict | None, where: str) -> RigidTransform:
    if d is None:
        return RigidTransform.identity()
    try:
        return RigidTransform(d.get("rotation"), [float(x) * MM for x in d.get("translation_mm", (0, 0, 0))])
    except ValueError as exc:
        raise ValidationError(where, str(exc)) from exc


def _build(where: str, cls, **kwargs):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ValidationError(where, str(exc)) from exc


def parse_scenario(raw: dict[str, Any]) -> Scenario:
    """Build and validate a scenario from its decoded JSON document."""
    name = str(_req(raw, "name", ""))
    categories = list(_req(raw, "categories", ""))
    if len(set(categories)) != len(categories):
        raise ValidationError("categories", "duplicate category label")
    cats = set(categories)

    layers = [
        _build(f"layers[{i}]", LayerSpec, name=l["name"], flip_before=bool(l.get("flip_before", False)))
        for i, l in enumerate(raw.get("layers", [{"name": x} for x in LAYERS]))
    ]
    layer_names = [l.name for l in layers]

    priority_groups = _req(raw, "priority", "")
    try:
        priority = ClassPriority(priority_groups)
        priority.check_covers(categories)
    except ValueError as exc:
        raise ValidationError("priority", str(exc)) from exc

    rules_by_layer: dict[str, list[CategoryRule]] = {}
    for layer, items in _req(raw, "rules", "").items():
        if layer not in layer_names:
            raise ValidationError(f"rules.{layer}", "unknown layer")
        out = []
        for i, r in enumerate(items):
            where = f"rules.{layer}[{i}]"
            for key in ("from", "to"):
                if _req(r, key, where) not in cats:
                    raise ValidationError(f"{where}.{key}", f"unknown category {r[key]!r}")
            out.append(_build(where, CategoryRule, from_category=r["from"], to_category=r["to"],
                              kind=r.get("kind", "precedence"), scope=r.get("scope", "same_layer")))
        rules_by_layer[layer] = out
    rules = [r for layer in layer_names for r in rules_by_layer.get(layer, [])]

    bins = {k: _vec_mm(v, f"bins.{k}") for k, v in raw.get("bins", {}).items()}

    templates = []
    for i, t in enumerate(_req(raw, "templates", "")):
        where = f"templates[{i}]"
        cat = _req(t, "category", where)
        if cat not in cats:
            raise ValidationError(f"{where}.category", f"unknown category {cat!r}")
        params = dict(t.get("tool_params", {}))
        if "bin" in t:
            if t["bin"] not in bins:
                raise ValidationError(f"{where}.bin", f"unknown bin {t['bin']!r}")
            params["drop_pose"] = bins[t["bin"]]
        templates.append(_build(
            where, ActionTemplate,
            action_kind=_req(t, "kind", where),
            applicable_category=cat,
            approach_offset=float(t.get("approach_offset_m", 0.0)),
            nominal_speed=float(t.get("speed_mps", 0.1)),
            tool_params=params,
            capability_required=t.get("capability"),
            region_radius=float(t.get("region_radius_m", DEFAULT_REGION_RADIUS)),
        ))
    templated = {t.applicable_category for t in templates}
    for cat in categories:
        if cat not in templated:
            raise ValidationError(f"templates.{cat}", f"no action template for category {cat!r}")

    arm_specs = []
    for i, a in enumerate(_req(raw, "arms", "")):
        where = f"arms[{i}]"
        arm_specs.append({
            "name": str(_req(a, "name", where)),
            "capabilities": frozenset(_req(a, "capabilities", where)),
            "home": _vec_mm(_req(a, "home_mm", where), f"{where}.home_mm"),
            "speed": float(a.get("speed_mps", 0.1)),
        })
        _build(where, ArmProfile, name=arm_specs[-1]["name"], capabilities=arm_specs[-1]["capabilities"],
               home_pose=arm_specs[-1]["home"], speed=arm_specs[-1]["speed"])
    if len(arm_specs) != 2:
        raise ValidationError("arms", "exactly two arms are required")
    owned = frozenset().union(*(a["capabilities"] for a in arm_specs))
    for i, t in enumerate(templates):
        if t.capability_required not in owned:
            raise ValidationError(f"templates[{i}].capability",
                                  f"no arm provides {t.capability_required!r}")
    camera_arm = raw.get("camera_arm", arm_specs[0]["name"])
    if camera_arm not in {a["name"] for a in arm_specs}:
        raise ValidationError("camera_arm", f"unknown arm {camera_arm!r}")

    parts = []
    seen_ids = set()
    for i, p in enumerate(raw.get("parts", [])):
        where = f"parts[{i}]"
        pid = str(_req(p, "id", where))
        if pid in seen_ids:
            raise ValidationError(f"{where}.id", f"duplicate part id {pid!r}")
        seen_ids.add(pid)
        if _req(p, "category", where) not in cats:
            raise ValidationError(f"{where}.category", f"unknown category {p['category']!r}")
        if _req(p, "layer", where) not in layer_names:
            raise ValidationError(f"{where}.layer", f"unknown layer {p['layer']!r}")
        parts.append(ScenarioPart(pid, p["category"], p["layer"],
                                  _vec_mm(_req(p, "position_mm", where), f"{where}.position_mm")))

    # per-layer rule sets, and the union over every part registered at once
    nodes = [PartNode(p.id, p.category, p.position, p.layer) for p in parts]
    for layer in layer_names:
        try:
            apply_rules([n for n in nodes if n.layer == layer], rules_by_layer.get(layer, []))
        except RuleCycleError as exc:
            raise ValidationError(f"rules.{layer}", str(exc)) from exc
    try:
        apply_rules(nodes, rules)
    except RuleCycleError as exc:
        raise ValidationError("rules", f"union over all layers: {exc}") from exc

    cam = raw.get("camera", {})
    camera = _build("camera", CameraModel, fx=float(cam.get("fx", 600.0)), fy=float(cam.get("fy", 600.0)),
                    cx=float(cam.get("cx", 320.0)), cy=float(cam.get("cy", 320.0)))

    eng = raw.get("engagement", {})
    engagement = _build("engagement", EngagementModel, **eng)
    fl = dict(raw.get("faults", {}))
    for key in ("seal_leak_categories", "disengage_categories"):
        if key in fl:
            fl[key] = tuple(fl[key])
    faults = _build("faults", FaultInjector, **fl)
    timing = _build("timing", Timing, **raw.get("timing", {}))
    rt = dict(raw.get("retry", {}))
    if "offset_pattern" in rt:
        rt["offset_pattern"] = tuple(tuple(x) for x in rt["offset_pattern"])
    retry = _build("retry", RetryPolicy, **rt)

    calibration = None
    if "calibration" in raw:
        c = raw["calibration"]
        calibration = CalibrationSpec(
            marker=_vec_mm(_req(c, "marker_mm", "calibration"), "calibration.marker_mm"),
            tol_m=float(c.get("tol_mm", 0.5)) * MM,
            noise_m=float(c.get("noise_mm", 0.0)) * MM,
            max_iters=int(c.get("max_iters", 10)),
            initial_offsets={k: _vec_mm(v, f"calibration.initial_offsets_mm.{k}")
                             for k, v in c.get("initial_offsets_mm", {}).items()},
        )

    pc = dict(raw.get("perception", {}))
    noise = _build("perception", NoiseModel, precision=float(pc.pop("precision", 1.0)),
                   recall=float(pc.pop("recall", 1.0)), loc_error_px=float(pc.pop("loc_error_px", 0.0)),
                   depth_noise_m=float(pc.pop("depth_noise_m", 0.0)))
    if "match_tol_mm" in pc:
        pc["match_tol_m"] = float(pc.pop("match_tol_mm")) * MM
    perception = _build("perception", PerceptionSpec, noise=noise, **pc)
    if perception.mode not in ("oracle", "synthetic"):
        raise ValidationError("perception.mode", f"unknown mode {perception.mode!r}")

    return Scenario(
        name=name,
        family=str(raw.get("family", name)),
        categories=categories,
        priority=priority,
        rules=rules,
        rules_by_layer=rules_by_layer,
        templates=templates,
        arm_specs=arm_specs,
        camera_arm=camera_arm,
        parts=parts,
        layers=layers,
        engagement=engagement,
        faults=faults,
        timing=timing,
        retry=retry,
        camera=camera,
        hand_eye=_transform(raw.get("hand_eye"), "hand_eye"),
        scan_pose=_transform(raw.get("scan_pose"), "scan_pose"),
        mm_per_px=float(cam.get("mm_per_px", 0.05)),
        holder_z=float(raw.get("holder_z_mm", 50.0)) * MM,
        calibration=calibration,
        perception=perception,
        hold_categories=frozenset(raw.get("hold_categories", ())),
        preregister_hidden=bool(raw.get("preregister_hidden", False)),
        bins=bins,
    )
