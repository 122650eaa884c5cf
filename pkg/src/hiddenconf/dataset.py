"""Multi-environment observational data: one block of (t, y, x) rows per environment."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import UsageError
from .stats import BINARY, CATEGORICAL, CONTINUOUS, infer_kind


@dataclass
class EnvBlock:
    env_id: str
    t: np.ndarray
    y: np.ndarray
    x: np.ndarray | None = None  # shape (n_k, p); None means no covariates

    def __post_init__(self):
        self.env_id = str(self.env_id)
        self.t = np.asarray(self.t, dtype=float).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        x = np.zeros((len(self.t), 0)) if self.x is None else np.asarray(self.x, dtype=float)
        if x.size == 0:
            x = x.reshape(len(self.t), 0)
        self.x = x.reshape(len(self.t), -1) if x.ndim == 1 else x
        if not (len(self.t) == len(self.y) == self.x.shape[0]):
            raise UsageError(f"environment {self.env_id}: t, y and x have different lengths")
        if len(self.t) < 1:
            raise UsageError(f"environment {self.env_id} is empty")

    @property
    def n(self) -> int:
        return len(self.t)


def env_sort_key(env_id: str):
    try:
        return (0, float(env_id), env_id)
    except ValueError:
        return (1, 0.0, env_id)


@dataclass
class MultiEnvDataset:
    blocks: list[EnvBlock]
    kinds: dict[str, str] = field(default_factory=dict)
    # populated only by simulators called with debug=True
    ground_truth: dict[str, Any] | None = None

    def __post_init__(self):
        ids = [b.env_id for b in self.blocks]
        if len(set(ids)) != len(ids):
            raise UsageError("environment ids must be unique")
        ps = {b.x.shape[1] for b in self.blocks}
        if len(ps) > 1:
            raise UsageError(f"environments disagree on the number of covariates: {sorted(ps)}")
        for name in self.column_names:
            if name not in self.kinds:
                self.kinds[name] = infer_kind(self.column(name)) if self.blocks else CONTINUOUS
            if self.kinds[name] not in (BINARY, CATEGORICAL, CONTINUOUS):
                raise UsageError(f"unknown column kind {self.kinds[name]!r}")

    @property
    def p(self) -> int:
        return self.blocks[0].x.shape[1] if self.blocks else 0

    @property
    def x_names(self) -> list[str]:
        return [f"x{d + 1}" for d in range(self.p)]

    @property
    def column_names(self) -> list[str]:
        return ["t", "y", *self.x_names]

    @property
    def K(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> list[int]:
        return [b.n for b in self.blocks]

    def column(self, name: str) -> np.ndarray:
        if name == "t":
            return np.concatenate([b.t for b in self.blocks])
        if name == "y":
            return np.concatenate([b.y for b in self.blocks])
        d = self.x_names.index(name)
        return np.concatenate([b.x[:, d] for b in self.blocks])

    def sorted_blocks(self) -> list[EnvBlock]:
        return sorted(self.blocks, key=lambda b: env_sort_key(b.env_id))

    @classmethod
    def from_arrays(cls, env: Sequence, t: Sequence, y: Sequence, x: np.ndarray | None = None,
                    kinds: dict[str, str] | None = None) -> "MultiEnvDataset":
        """Group flat per-observation arrays by environment (first-appearance order)."""
        env = [str(e) for e in env]
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        x = np.zeros((len(t), 0)) if x is None else np.asarray(x, dtype=float).reshape(len(t), -1)
        order: dict[str, list[int]] = {}
        for row, e in enumerate(env):
            order.setdefault(e, []).append(row)
        blocks = [EnvBlock(e, t[idx], y[idx], x[idx]) for e, idx in order.items()]
        return cls(blocks, dict(kinds or {}))
