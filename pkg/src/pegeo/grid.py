"""Shared grid types and the package error class."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidArgument(ValueError):
    """Raised when an argument violates an operation's precondition."""


@dataclass(frozen=True)
class GridShape:
    rows: int
    cols: int

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise InvalidArgument(f"grid shape must be positive, got {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def positions(self) -> np.ndarray:
        """(N, 2) integer array of (row, col) in row-major token order."""
        r, c = np.meshgrid(np.arange(self.rows), np.arange(self.cols), indexing="ij")
        return np.stack([r.ravel(), c.ravel()], axis=1)


@dataclass(frozen=True, eq=False)
class TokenGrid:
    """Patch tokens of one view laid out as rows x cols x dim."""

    data: np.ndarray
    layer: int = 0

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InvalidArgument(f"token grid must be 3D (rows, cols, dim), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise InvalidArgument("token grid contains non-finite entries")

    @property
    def shape(self) -> GridShape:
        return GridShape(self.data.shape[0], self.data.shape[1])

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1, self.dim)
