"""Omniscient Byzantine behaviour.

All Byzantine clients collude: at a given step they send the same vector,
built from the honest messages they observe on the wire.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("none", "ipm", "sign_flip", "random_gaussian", "label_flip")
MESSAGE_KINDS = ("none", "ipm", "sign_flip", "random_gaussian")


@dataclass(frozen=True)
class AttackSpec:
    """``scale`` is the IPM multiplier or the std of the random attack.

    ``label_flip`` acts on the training data of the Byzantine clients, who
    then follow the protocol honestly; it never produces a message here.
    """

    kind: str = "none"
    scale: float = 10.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack {self.kind!r}; expected one of {KINDS}")

    @property
    def data_level(self) -> bool:
        return self.kind == "label_flip"


def byzantine_message(spec: AttackSpec, honest_msgs, rng: np.random.Generator | None = None) -> np.ndarray:
    H = np.asarray(honest_msgs, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] == 0:
        raise ValueError("byzantine_message needs a non-empty (G, d) array of honest messages")
    if spec.kind == "random_gaussian":
        return spec.scale * rng.standard_normal(H.shape[1])
    mean = H.mean(axis=0)
    if spec.kind == "ipm":
        return -spec.scale * mean
    if spec.kind == "sign_flip":
        return -mean
    if spec.kind == "none":
        return mean
    raise ValueError(f"{spec.kind!r} is a data-level attack and has no message form")


def flip_labels(labels, num_classes: int) -> np.ndarray:
    """Map label y to (num_classes - 1) - y."""
    y = np.asarray(labels)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return (num_classes - 1) - y
