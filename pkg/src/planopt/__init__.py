"""Planner optimization: learn instance-conditioned planner parameters."""
from .algorithms import CEMOptimizer, GeneratorCritic, UniformGenerator, evaluate
from .board import GridBoard
from .domain import (
    Domain,
    PlannerResult,
    ProblemSet,
    create_problem_set,
    encode_instance,
    load_problem_set,
    planner_call,
    save_problem_set,
)
from .grid2d import Maze2D, RandomWalk2D, parse_domain
from .spaces import Assignment, CompositeSpace, IntervalBlock, SimplexBlock

__all__ = [
    "Assignment",
    "CEMOptimizer",
    "CompositeSpace",
    "Domain",
    "GeneratorCritic",
    "GridBoard",
    "IntervalBlock",
    "Maze2D",
    "PlannerResult",
    "ProblemSet",
    "RandomWalk2D",
    "SimplexBlock",
    "UniformGenerator",
    "create_problem_set",
    "encode_instance",
    "evaluate",
    "load_problem_set",
    "parse_domain",
    "planner_call",
    "save_problem_set",
]
