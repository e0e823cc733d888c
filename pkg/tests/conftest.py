import copy
import json

import pytest
from hypothesis import HealthCheck, settings

from teardown.scenario import bundled_path, parse_scenario

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# filled by tests/test_acceptance.py, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def toy_doc(with_l2=True):
    """Two lid screws and a lid, plus one pin under the lid on L2.

    Geometry (mm) is chosen so every motion time is easy to work out by hand.
    """
    doc = {
        "name": "toy",
        "categories": ["screw", "lid", "pin"],
        "priority": [["screw", "pin"], ["lid"]],
        "layers": [{"name": "L1"}, {"name": "L2"}],
        "rules": {"L1": [{"from": "screw", "to": "lid"}],
                  "L2": [{"from": "lid", "to": "pin", "kind": "access", "scope": "cross_layer"}]},
        "bins": {"screw_bin": [100, 100, 0], "part_bin": [300, 0, 0]},
        "arms": [
            {"name": "tooling", "capabilities": ["unscrew"], "home_mm": [0, 0, 0], "speed_mps": 0.1},
            {"name": "manipulation", "capabilities": ["lift", "remove", "drop", "hold"],
             "home_mm": [150, -100, 0], "speed_mps": 0.1},
        ],
        "camera_arm": "tooling",
        "templates": [
            {"kind": "unscrew", "category": "screw", "speed_mps": 0.1, "region_radius_m": 0.03,
             "bin": "screw_bin", "tool_params": {"unscrew_time": 20.0}},
            {"kind": "unscrew", "category": "pin", "speed_mps": 0.1, "region_radius_m": 0.03,
             "bin": "screw_bin", "tool_params": {"unscrew_time": 20.0}},
            {"kind": "lift", "category": "lid", "speed_mps": 0.1, "region_radius_m": 0.03,
             "tool_params": {"lift_time": 10.0}},
            {"kind": "drop", "category": "lid", "speed_mps": 0.1, "region_radius_m": 0.03, "bin": "part_bin"},
        ],
        "parts": [
            {"id": "s1", "category": "screw", "layer": "L1", "position_mm": [100, 0, 0]},
            {"id": "s2", "category": "screw", "layer": "L1", "position_mm": [200, 0, 0]},
            {"id": "lid", "category": "lid", "layer": "L1", "position_mm": [150, 0, 0]},
            {"id": "pin", "category": "pin", "layer": "L2", "position_mm": [150, 0, -10]},
        ],
        "engagement": {"mode": "fine", "p_success_fine": 1.0, "p_success_coarse": 1.0,
                       "align_time_fine": 8.0, "engage_time": 2.0, "backoff_time": 1.0},
        "timing": {"tick": 0.1, "scan_time": 10.0, "flip_time": 30.0, "grip_time": 3.0,
                   "lift_time": 10.0, "release_time": 2.0},
    }
    if not with_l2:
        doc["layers"] = [{"name": "L1"}]
        doc["rules"] = {"L1": doc["rules"]["L1"]}
        doc["parts"] = doc["parts"][:3]
        doc["categories"] = ["screw", "lid"]
        doc["priority"] = [["screw"], ["lid"]]
        doc["templates"] = [t for t in doc["templates"] if t["category"] != "pin"]
    return doc


@pytest.fixture
def toy():
    return lambda **kw: parse_scenario(toy_doc(**kw))


@pytest.fixture(scope="session")
def bundled_docs():
    return {name: json.loads(bundled_path(name).read_text())
            for name in ("samsung", "seagate", "western_digital")}


@pytest.fixture
def samsung_doc(bundled_docs):
    return copy.deepcopy(bundled_docs["samsung"])
