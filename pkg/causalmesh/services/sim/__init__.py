from causalmesh.services.sim.baseline import EventualServer, run_baseline
from causalmesh.services.sim.experiments import anomaly_rates, mode_config, visibility_window
from causalmesh.services.sim.scenarios import (
    ScenarioScript,
    ScriptRunner,
    ScriptStep,
    StepKind,
    load_scenario,
    run_script,
)
from causalmesh.services.sim.simulator import (
    Simulator,
    deliver_next,
    measure_visibility,
    place_function,
    sim_run,
)
from causalmesh.services.sim.workflow import FunctionSpec, OpKind, OpSpec, WorkflowDag

__all__ = [
    "EventualServer",
    "FunctionSpec",
    "OpKind",
    "OpSpec",
    "ScenarioScript",
    "ScriptRunner",
    "ScriptStep",
    "Simulator",
    "StepKind",
    "WorkflowDag",
    "anomaly_rates",
    "deliver_next",
    "load_scenario",
    "measure_visibility",
    "mode_config",
    "place_function",
    "run_baseline",
    "run_script",
    "sim_run",
    "visibility_window",
]
