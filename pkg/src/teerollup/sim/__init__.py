"""Discrete-event simulation of a rollup committee, its clients and DAPs."""

from .harness import InvariantBreach, RunResult, Simulation, replay, run_scenario

__all__ = ["InvariantBreach", "RunResult", "Simulation", "replay", "run_scenario"]
