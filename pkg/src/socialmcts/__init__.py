"""Game-theoretic longitudinal planning with prediction-heuristic MCTS."""
__version__ = "0.1.0"
