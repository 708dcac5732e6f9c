"""Solver output shared by the EM solver and the baselines."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import OUTLIER, RigidTransform


@dataclass(frozen=True)
class Hypothesis:
    pose: RigidTransform
    sigma: float
    weight: float
    centroid: np.ndarray


@dataclass
class MultiModelEstimate:
    """Hypotheses plus the hard labeling that refers to them by position."""

    hypotheses: list[Hypothesis]
    labels: np.ndarray
    iterations_run: int = 0
    trace: list = field(default_factory=list, repr=False, compare=False)

    @property
    def poses(self) -> dict[int, RigidTransform]:
        return {j: h.pose for j, h in enumerate(self.hypotheses)}

    def __len__(self):
        return len(self.hypotheses)

    def to_dict(self) -> dict:
        return {
            "num_clusters": len(self.hypotheses),
            "iterations_run": int(self.iterations_run),
            "clusters": [
                {
                    "id": j,
                    "pose": h.pose.to_list(),
                    "sigma": float(h.sigma),
                    "weight": float(h.weight),
                    "centroid": [float(v) for v in h.centroid],
                    "size": int(np.count_nonzero(self.labels == j)),
                }
                for j, h in enumerate(self.hypotheses)
            ],
            "labels": [int(v) for v in self.labels],
        }

    @classmethod
    def from_dict(cls, d: dict) -> MultiModelEstimate:
        hyps = [
            Hypothesis(
                pose=RigidTransform.from_list(c["pose"]),
                sigma=float(c.get("sigma", 0.0)),
                weight=float(c.get("weight", 0.0)),
                centroid=np.asarray(c.get("centroid", [0.0, 0.0, 0.0]), dtype=np.float64),
            )
            for c in d["clusters"]
        ]
        labels = np.asarray(d["labels"], dtype=np.int64)
        bad = (labels != OUTLIER) & ((labels < 0) | (labels >= len(hyps)))
        if bad.any():
            raise ValueError(f"label {int(labels[bad][0])} has no cluster entry")
        return cls(hyps, labels, int(d.get("iterations_run", 0)))
