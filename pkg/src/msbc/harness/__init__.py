from msbc.harness.metrics import Distribution, MetricsReport
from msbc.harness.scenario import (
    Scenario,
    ScenarioFailed,
    ScenarioRunner,
    Step,
    parse_scenario,
    run_scenario,
    run_scenario_file,
)
from msbc.harness.smarthome import SmartHome, simulate_smart_home

__all__ = [
    "Distribution",
    "MetricsReport",
    "Scenario",
    "ScenarioFailed",
    "ScenarioRunner",
    "SmartHome",
    "Step",
    "parse_scenario",
    "run_scenario",
    "run_scenario_file",
    "simulate_smart_home",
]
