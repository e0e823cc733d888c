"""Device-agnostic disassembly planning and a seeded teardown simulator."""
from .errors import ScenarioError, TeardownError, ValidationError
from .partgraph import CategoryRule, PartGraph, PartNode, PrecedenceEdge, apply_rules, ready_set
from .scenario import BUNDLED, Scenario, load_scenario
from .sequencer import ActionPrimitive, ActionTemplate, ClassPriority, instantiate, topo_order
from .simulator import Metrics, SimEvent, Timeline, run_loop

__version__ = "0.1.0"

__all__ = [
    "ActionPrimitive", "ActionTemplate", "BUNDLED", "CategoryRule", "ClassPriority", "Metrics",
    "PartGraph", "PartNode", "PrecedenceEdge", "Scenario", "ScenarioError", "SimEvent",
    "TeardownError", "Timeline", "ValidationError", "apply_rules", "instantiate", "load_scenario",
    "ready_set", "run_loop", "topo_order",
]
