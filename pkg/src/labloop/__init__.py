"""Whole-lab orchestration: workflows, scheduling, execution, records, and
closed-loop screening campaigns against a simulated laboratory."""

__version__ = "0.1.0"
