"""Block-structured latent vectors.

A latent vector is one flat double-precision array carved into named,
shaped blocks.  The block order is the declaration order and is stable,
so flattening and unflattening round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class BlockLayout:
    """Immutable description of the blocks inside a flat latent vector."""

    names: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if len(self.names) != len(self.shapes):
            raise ValueError("names and shapes must have equal length")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"block names must be unique, got {self.names}")
        for shape in self.shapes:
            if int(np.prod(shape)) <= 0:
                raise ValueError(f"block shape {shape} has non-positive size")

    @staticmethod
    def of(*blocks: tuple[str, tuple[int, ...]]) -> "BlockLayout":
        names = tuple(name for name, _ in blocks)
        shapes = tuple(tuple(int(n) for n in shape) for _, shape in blocks)
        return BlockLayout(names, shapes)

    @cached_property
    def sizes(self) -> tuple[int, ...]:
        return tuple(int(np.prod(shape)) for shape in self.shapes)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        return tuple(np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(int))

    @property
    def total_dim(self) -> int:
        return sum(self.sizes)

    def slice_of(self, name: str) -> slice:
        i = self.names.index(name)
        return slice(self.offsets[i], self.offsets[i] + self.sizes[i])

    def shape_of(self, name: str) -> tuple[int, ...]:
        return self.shapes[self.names.index(name)]


class LatentVector:
    """A flat float64 array with a :class:`BlockLayout` attached.

    Supports the vector arithmetic the inference loop needs (+, -, scalar
    multiplication, dot products).  All operations return new vectors; the
    underlying array is never shared between results.
    """

    __slots__ = ("layout", "values")

    def __init__(self, layout: BlockLayout, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size != layout.total_dim:
            raise ValueError(
                f"values have size {values.size}, layout expects {layout.total_dim}"
            )
        self.layout = layout
        self.values = values

    @staticmethod
    def zeros(layout: BlockLayout) -> "LatentVector":
        return LatentVector(layout, np.zeros(layout.total_dim))

    @staticmethod
    def from_blocks(layout: BlockLayout, **blocks: np.ndarray) -> "LatentVector":
        out = LatentVector.zeros(layout)
        for name, value in blocks.items():
            out.block(name)[...] = np.asarray(value, dtype=np.float64).reshape(
                layout.shape_of(name)
            )
        return out

    def block(self, name: str) -> np.ndarray:
        """A writable, shaped view of one block."""
        return self.values[self.layout.slice_of(name)].reshape(
            self.layout.shape_of(name)
        )

    def copy(self) -> "LatentVector":
        return LatentVector(self.layout, self.values.copy())

    @property
    def total_dim(self) -> int:
        return self.layout.total_dim

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def dot(self, other: "LatentVector") -> float:
        return float(self.values @ other.values)

    def __add__(self, other: "LatentVector") -> "LatentVector":
        return LatentVector(self.layout, self.values + other.values)

    def __sub__(self, other: "LatentVector") -> "LatentVector":
        return LatentVector(self.layout, self.values - other.values)

    def __mul__(self, scalar: float) -> "LatentVector":
        return LatentVector(self.layout, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "LatentVector":
        return LatentVector(self.layout, np.negative(self.values))

    def __repr__(self) -> str:
        parts = ", ".join(
            f"{n}{s}" for n, s in zip(self.layout.names, self.layout.shapes)
        )
        return f"LatentVector({parts}; dim={self.total_dim})"


def as_flat(xi) -> np.ndarray:
    """Accept a LatentVector or an array-like and return the flat array."""
    if isinstance(xi, LatentVector):
        return xi.values
    return np.asarray(xi, dtype=np.float64).ravel()
