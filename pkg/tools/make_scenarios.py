"""Regenerate the bundled HDD scenario files.

Coordinates are a plausible 3.5" drive layout; timing constants and fault
rates per family are fits to the published layer times and completion
counts. Pass a JSON file of per-family overrides to experiment with refits.
"""
import json
import math
import sys
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "src" / "teardown" / "scenarios"

def circle(c, r, n, z, phase=0.0):
    return [[round(c[0] + r*math.cos(phase + 2*math.pi*k/n), 2), round(c[1] + r*math.sin(phase + 2*math.pi*k/n), 2), z] for k in range(n)]

FAM = {
  "samsung": dict(family="Samsung", det=(0.92, 0.88, 6.3), dx=0.0, spindle=(540, 10), pivot=(440, -30),
                  u=(21.0, 9.9, 7.2), align=20.0, lift=dict(lid=30.0, platter_holder=12.0, platter=12.0, actuator=14.0, PCB=10.0, case=10.0),
                  faults=dict(vacuum_seal_leak=0.035, illumination_loss=0.0017, incomplete_disengage=0.027)),
  "seagate": dict(family="Seagate", det=(0.89, 0.86, 7.1), dx=3.0, spindle=(538, 12), pivot=(442, -28),
                  u=(19.0, 9.5, 7.9), align=20.0, lift=dict(lid=28.0, platter_holder=12.0, platter=12.0, actuator=14.0, PCB=10.0, case=10.0),
                  faults=dict(vacuum_seal_leak=0.035, illumination_loss=0.0017, incomplete_disengage=0.027)),
  "western_digital": dict(family="Western Digital", det=(0.93, 0.89, 5.8), dx=-2.0, spindle=(542, 8), pivot=(438, -32),
                  u=(19.8, 8.35, 9.9), align=18.2, lift=dict(lid=28.0, platter_holder=12.0, platter=12.0, actuator=14.0, PCB=10.0, case=10.0),
                  faults=dict(vacuum_seal_leak=0.12, illumination_loss=0.006, incomplete_disengage=0.08)),
}

SCREWS = ["screw", "platter_holder_screw", "actuator_screw", "case_bottom_screw"]
BIG = ["lid", "platter_holder", "platter", "actuator", "PCB", "case"]

def build(key, f):
    dx = f["dx"]
    top, bottom = 76.0, 50.0
    lid_screws = [[500+dx+x, y, top] for x, y in [(-70, -46), (70, -46), (-70, 46), (70, 46), (0, 48), (-20, -10), (35, 30)]]
    sx, sy = f["spindle"]; px, py = f["pivot"]
    phs = circle((sx, sy), 12, 6, 72.0)
    acs = circle((px, py), 20, 6, 70.0, phase=0.3)
    cbs = [[500+dx+x, y, bottom] for x, y in [(-65, -44), (65, -44), (-65, 44), (65, 44), (10, 0)]]
    parts = []
    def add(prefix, cat, layer, pts):
        for i, p in enumerate(pts, 1):
            parts.append({"id": f"{prefix}{i}", "category": cat, "layer": layer, "position_mm": [round(v, 2) for v in p]})
    add("lid_screw_", "screw", "L1", lid_screws)
    parts.append({"id": "lid", "category": "lid", "layer": "L1", "position_mm": [500+dx, 0, top]})
    add("holder_screw_", "platter_holder_screw", "L2", phs)
    add("actuator_screw_", "actuator_screw", "L2", acs)
    parts.append({"id": "platter_holder", "category": "platter_holder", "layer": "L2", "position_mm": [sx, sy, 71.0]})
    parts.append({"id": "platter", "category": "platter", "layer": "L2", "position_mm": [sx, sy, 66.0]})
    parts.append({"id": "actuator", "category": "actuator", "layer": "L2", "position_mm": [px, py, 68.0]})
    add("bottom_screw_", "case_bottom_screw", "L3", cbs)
    parts.append({"id": "pcb", "category": "PCB", "layer": "L3", "position_mm": [500+dx+10, 5, 52.0]})
    parts.append({"id": "case", "category": "case", "layer": "L3", "position_mm": [500+dx, 0, 56.0]})

    u1, u2, u3 = f["u"]
    utime = {"screw": u1, "platter_holder_screw": u2, "actuator_screw": u2, "case_bottom_screw": u3}
    templates = []
    for c in SCREWS:
        templates.append({"kind": "unscrew", "category": c, "approach_offset_m": 0.005, "speed_mps": 0.05,
                          "region_radius_m": 0.03, "bin": "screw_bin", "tool_params": {"unscrew_time": utime[c]}})
    for c in BIG:
        grasp = "remove" if c == "actuator" else "lift"
        templates.append({"kind": grasp, "category": c, "approach_offset_m": 0.01, "speed_mps": 0.05,
                          "region_radius_m": 0.05, "tool_params": {"lift_time": f["lift"][c]}})
        templates.append({"kind": "drop", "category": c, "speed_mps": 0.05, "region_radius_m": 0.05, "bin": "part_bin"})
    noise = f["det"]
    doc = {
        "name": key,
        "family": f["family"],
        "note": "timing constants, fault rates and coordinates are fits, not measurements",
        "camera": {"fx": 600.0, "fy": 600.0, "cx": 320.0, "cy": 320.0},
        "hand_eye": {"rotation": [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "translation_mm": [0, 0, 50]},
        "scan_pose": {"rotation": [[1, 0, 0], [0, -1, 0], [0, 0, -1]], "translation_mm": [500 + dx, 0, 400]},
        "arms": [
            {"name": "tooling", "capabilities": ["unscrew"], "home_mm": [650, -150, 250], "speed_mps": 0.05},
            {"name": "manipulation", "capabilities": ["lift", "remove", "drop", "hold"], "home_mm": [350, -150, 250], "speed_mps": 0.05},
        ],
        "camera_arm": "tooling",
        "bins": {"screw_bin": [620, 120, 80], "part_bin": [380, 160, 80]},
        "holder_z_mm": 63.0,
        "categories": SCREWS + BIG,
        "priority": [SCREWS, ["lid"], ["platter_holder"], ["platter"], ["actuator"], ["PCB"], ["case"]],
        "layers": [{"name": "L1"}, {"name": "L2"}, {"name": "L3", "flip_before": True}],
        "rules": {
            "L1": [{"from": "screw", "to": "lid"}],
            "L2": [
                {"from": "platter_holder_screw", "to": "platter_holder"},
                {"from": "platter_holder", "to": "platter"},
                {"from": "actuator_screw", "to": "actuator"},
                {"from": "lid", "to": "platter_holder_screw", "kind": "access", "scope": "cross_layer"},
                {"from": "lid", "to": "actuator_screw", "kind": "access", "scope": "cross_layer"},
                {"from": "lid", "to": "platter_holder", "kind": "access", "scope": "cross_layer"},
                {"from": "lid", "to": "actuator", "kind": "access", "scope": "cross_layer"},
            ],
            "L3": [
                {"from": "case_bottom_screw", "to": "PCB"},
                {"from": "PCB", "to": "case"},
                {"from": "platter", "to": "case", "kind": "access", "scope": "cross_layer"},
                {"from": "actuator", "to": "case", "kind": "access", "scope": "cross_layer"},
            ],
        },
        "templates": templates,
        "parts": parts,
        "engagement": {"mode": "fine", "p_success_coarse": 3/7, "p_success_fine": 0.9, "align_time_fine": f["align"],
                       "engage_time": 2.0, "unscrew_time": 15.0, "backoff_time": 1.0, "coarse_max_retries": 0},
        "faults": dict(f["faults"], illumination_ticks=100, seal_leak_categories=["platter"],
                       disengage_categories=["lid"], abort_on_fault=True),
        "timing": {"tick": 0.1, "scan_time": 10.0, "flip_time": 30.0, "grip_time": 3.0, "lift_time": 10.0, "release_time": 2.0},
        "retry": {"max_retries": 5, "pose_offset_mm": 0.5},
        "calibration": {"marker_mm": [500 + dx, 100, 63], "tol_mm": 0.2, "noise_mm": 0.02, "max_iters": 10,
                        "initial_offsets_mm": {"tooling": [1.5, -0.8, 0.4], "manipulation": [-1.1, 0.6, -0.3]}},
        "perception": {"mode": "oracle", "precision": noise[0], "recall": noise[1], "loc_error_px": noise[2],
                       "depth_noise_m": 0.0005, "scan_frames": 10, "min_hits": 3, "association_gate_px": 15,
                       "merge_gate_px": 5, "ema_alpha": 0.3, "max_misses": 3, "match_tol_mm": 10, "max_rescans": 2},
        "hold_categories": [],
        "preregister_hidden": False,
    }
    (OUT / f"{key}.json").write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    if len(sys.argv) > 1:
        FAM.update(json.loads(Path(sys.argv[1]).read_text()))
    for k, f in FAM.items():
        build(k, f)
