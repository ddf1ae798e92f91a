from .planning_node import plan_scenario_node
from .simulation_node import simulate_scenario_node
from .evaluation_node import evaluate_run_node

__all__ = ['plan_scenario_node', 'simulate_scenario_node', 'evaluate_run_node']
