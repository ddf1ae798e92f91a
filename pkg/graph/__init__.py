from .workflow import ScenarioGraph, run_scenario, scenario_variant, sweep

__all__ = ['ScenarioGraph', 'run_scenario', 'scenario_variant', 'sweep']
