"""Predicted opponent trajectories and the confidence ranges around them."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .scenario import ScenarioError, _as_document, _validate

DEFAULT_RHO = 4.0
_PROB_EPS = 1e-9
# relative slack on the closed range boundary, so decimal endpoints such as
# 20 - 0.8 still count as inside after rounding
RANGE_SLACK = 1e-9


@dataclass(frozen=True)
class PredictedTrajectory:
    points: tuple[float, ...]
    variances: tuple[float, ...]
    probability: float

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(float(p) for p in self.points))
        object.__setattr__(self, "variances", tuple(float(v) for v in self.variances))
        if len(self.points) != len(self.variances):
            raise ValueError("points and variances differ in length")
        if not self.points:
            raise ValueError("empty predicted trajectory")
        if min(self.variances) <= 0:
            raise ValueError("variances must be positive")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")


@dataclass(frozen=True)
class PredictionSet:
    trajectories: tuple[PredictedTrajectory, ...]
    rho: float = DEFAULT_RHO

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        if not self.trajectories:
            raise ValueError("need at least one predicted trajectory")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        n = len(self.trajectories[0].points)
        if any(len(tr.points) != n for tr in self.trajectories):
            raise ValueError("predicted trajectories differ in horizon")
        total = sum(tr.probability for tr in self.trajectories)
        if total > 1.0 + _PROB_EPS:
            raise ValueError(f"probabilities sum to {total} > 1")

    @property
    def horizon(self) -> int:
        return len(self.trajectories[0].points)

    def normalized(self) -> "PredictionSet":
        total = sum(tr.probability for tr in self.trajectories)
        k = len(self.trajectories)
        trs = tuple(PredictedTrajectory(tr.points, tr.variances,
                                        tr.probability / total if total > 0 else 1.0 / k)
                    for tr in self.trajectories)
        return PredictionSet(trs, self.rho)


def in_confidence_range(pred: PredictedTrajectory, t: int, s_opp: float, rho: float) -> bool:
    """Squared Mahalanobis distance of ``s_opp`` to the prediction at step
    ``t`` (1-based) is at most ``rho``."""
    if not 1 <= t <= len(pred.points):
        raise ValueError(f"step {t} outside 1..{len(pred.points)}")
    d = s_opp - pred.points[t - 1]
    return d * d <= rho * pred.variances[t - 1] * (1.0 + RANGE_SLACK)


def containing(s_opp: float, t: int, preds: PredictionSet) -> list[int]:
    """Indices of the trajectories whose range at step ``t`` holds ``s_opp``."""
    return [i for i, tr in enumerate(preds.trajectories) if in_confidence_range(tr, t, s_opp, preds.rho)]


def confidence_weight(s_opp: float, t: int, preds: PredictionSet) -> float:
    return sum(preds.trajectories[i].probability for i in containing(s_opp, t, preds))


class Predictor(Protocol):
    """Anything that turns an opponent ground truth into a PredictionSet."""

    def __call__(self, ground_truth: Sequence[float], seed: int) -> PredictionSet: ...


def synthetic_predict(ground_truth: Sequence[float], sigma: float, k: int = 1,
                      probabilities: Sequence[float] | None = None, seed: int = 0,
                      variance: float | None = None, rho: float = DEFAULT_RHO,
                      min_variance: float = 1e-4) -> PredictionSet:
    """Ground truth plus independent Gaussian noise, ``k`` noisy copies
    (one by default).

    Variances default to ``sigma**2`` (floored at ``min_variance`` so the
    ranges stay well defined when ``sigma == 0``).
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if k < 1:
        raise ValueError("k must be >= 1")
    gt = np.asarray(ground_truth, dtype=float)
    rng = np.random.default_rng(seed)
    probs = np.full(k, 1.0 / k) if probabilities is None else np.asarray(probabilities, dtype=float)
    if probs.shape != (k,) or probs.min() < 0 or probs.sum() <= 0:
        raise ValueError("probabilities must be k non-negative values with positive sum")
    probs = probs / probs.sum()
    var = max(sigma * sigma if variance is None else variance, min_variance)
    trs = []
    for i in range(k):
        pts = gt + sigma * rng.standard_normal(gt.shape) if sigma > 0 else gt.copy()
        trs.append(PredictedTrajectory(tuple(pts), (var,) * len(gt), float(probs[i])))
    return PredictionSet(tuple(trs), rho)


class SyntheticPredictor:
    """Callable wrapper of :func:`synthetic_predict` with fixed settings."""

    def __init__(self, sigma=0.4, k=1, rho=DEFAULT_RHO, variance=None):
        self.sigma, self.k, self.rho, self.variance = sigma, k, rho, variance

    def __call__(self, ground_truth, seed):
        return synthetic_predict(ground_truth, self.sigma, self.k, seed=seed,
                                 variance=self.variance, rho=self.rho)


PREDICTION_SCHEMA = {
    "type": "object",
    "required": ["version", "rho", "trajectories"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": 1},
        "rho": {"type": "number", "exclusiveMinimum": 0},
        "trajectories": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["probability", "points", "variances"],
                "additionalProperties": False,
                "properties": {
                    "probability": {"type": "number", "minimum": 0},
                    "points": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                    "variances": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                                  "minItems": 1},
                },
            },
        },
    },
}


def load_predictions(document, horizon: int | None = None) -> PredictionSet:
    """Parse a prediction document; probabilities are normalized to sum 1."""
    doc = _as_document(document)
    _validate(doc, PREDICTION_SCHEMA)
    trs = []
    for i, t in enumerate(doc["trajectories"]):
        if len(t["points"]) != len(t["variances"]):
            raise ScenarioError(f"trajectories.{i}: points and variances differ in length")
        if horizon is not None and len(t["points"]) != horizon:
            raise ScenarioError(f"trajectories.{i}.points: expected {horizon} points")
        trs.append(PredictedTrajectory(tuple(t["points"]), tuple(t["variances"]),
                                       min(1.0, float(t["probability"]))))
    total = sum(float(t["probability"]) for t in doc["trajectories"])
    if total <= 0:
        raise ScenarioError("trajectories: probabilities sum to zero")
    trs = [PredictedTrajectory(tr.points, tr.variances, float(t["probability"]) / total)
           for tr, t in zip(trs, doc["trajectories"])]
    return PredictionSet(tuple(trs), float(doc["rho"]))


def predictions_to_document(preds: PredictionSet) -> dict:
    return {
        "version": 1,
        "rho": preds.rho,
        "trajectories": [{"probability": tr.probability, "points": list(tr.points),
                          "variances": list(tr.variances)} for tr in preds.trajectories],
    }


def dump_predictions(preds: PredictionSet, path) -> None:
    with open(path, "w") as f:
        json.dump(predictions_to_document(preds), f, indent=2)
