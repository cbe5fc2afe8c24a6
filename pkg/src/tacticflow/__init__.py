"""Tactic-guided reasoning harness.

Executes two-level routing / problem-solving trajectories against pluggable
LLM backends, scores them (accuracy variants, CodeBLEU program quality,
subproblem BLEU, agreement statistics), synthesizes hybrid problems and
routing trajectories, and prepares masked training samples.
"""

__version__ = "0.1.0"
