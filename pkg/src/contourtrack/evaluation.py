"""Pose error, success-rate curve and its area."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyErrors
from .geometry import Mesh, Pose

K_MAX = 0.2
AUC_MAX = 20.0  # 100 % success over the whole k range


def pose_error(p: Pose, p_hat: Pose, mesh: Mesh) -> float:
    """Mean distance between model vertices placed by the two poses."""
    return float(np.linalg.norm(p_hat.apply(mesh.vertices) - p.apply(mesh.vertices), axis=1).mean())


@dataclass
class EvalReport:
    errors: np.ndarray
    diameter: float
    ks: np.ndarray
    success: np.ndarray
    auc: float

    def to_dict(self) -> dict:
        return {
            "diameter": self.diameter,
            "auc": self.auc,
            "errors": [float(e) for e in self.errors],
            "curve": [[float(k), float(s)] for k, s in zip(self.ks, self.success)],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_curve(self, path) -> None:
        lines = ["k,success"] + [f"{k!r},{s!r}" for k, s in zip(self.ks.tolist(), self.success.tolist())]
        Path(path).write_text("\n".join(lines) + "\n")


def success_curve(errors, diameter: float, ks) -> np.ndarray:
    """Percentage of frames with error strictly below ``k * diameter`` for each k."""
    e = np.asarray(errors, dtype=float)
    return 100.0 * (e[None, :] < np.asarray(ks)[:, None] * diameter).mean(axis=1)


def success_auc(errors, diameter: float, samples: int = 201, method: str = "exact") -> EvalReport:
    """Success curve on ``samples`` uniform k in [0, 0.2] and its area (0 to 20).

    ``method="exact"`` integrates the step function in closed form,
    ``100 * mean(max(0, 0.2 - delta / d))``, which is what the trapezoid rule on the
    sampled curve converges to; ``"trapezoid"`` integrates the samples directly.
    """
    e = np.asarray(errors, dtype=float).reshape(-1)
    if e.size == 0:
        raise EmptyErrors("no per-frame errors to evaluate")
    if not diameter > 0:
        raise ValueError("diameter must be positive")
    if samples < 2:
        raise ValueError("need at least two curve samples")
    ks = np.linspace(0.0, K_MAX, samples)
    curve = success_curve(e, diameter, ks)
    if method == "trapezoid":
        auc = float(np.sum(0.5 * (curve[1:] + curve[:-1]) * np.diff(ks)))
    elif method == "exact":
        auc = float(AUC_MAX * np.mean(np.maximum(0.0, 1.0 - e / (K_MAX * diameter))))
    else:
        raise ValueError(f"unknown AUC method {method!r}")
    return EvalReport(e, float(diameter), ks, curve, auc)


def evaluate_sequences(gt: dict, est: dict, mesh: Mesh, diameter: float, samples: int = 201,
                       method: str = "exact") -> EvalReport:
    """Compare pose dicts keyed by frame; frames missing from ``est`` count as failures."""
    frames = sorted(gt)
    errs = [pose_error(est[f], gt[f], mesh) if f in est else np.inf for f in frames]
    return success_auc(errs, diameter, samples, method)
