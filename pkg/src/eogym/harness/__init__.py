"""Fixtures, scripted agents, evaluation runner, service and CLI."""

from .agents import POLICIES, AgentState, AnswerAction, CallAction, make_agent
from .fixtures import FixtureSpec, gen_fixtures
from .runner import EvalRun, load_environment, run_attempt, run_eval

__all__ = ["POLICIES", "AgentState", "AnswerAction", "CallAction", "make_agent", "FixtureSpec", "gen_fixtures",
           "EvalRun", "load_environment", "run_attempt", "run_eval"]
