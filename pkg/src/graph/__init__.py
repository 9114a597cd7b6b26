"""Ablation graph module."""

from graph.workflow import build_ablation_graph

__all__ = ["build_ablation_graph"]
