"""
Parameter Vectors
Flat real arrays with a named, immutable block layout
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Tuple

import numpy as np

from src.error_handling import AutodiffError, NumericalError

Shape = Tuple[int, ...]


@dataclass(frozen=True)
class ParameterLayout:
    """Ordered (name, shape) blocks packed into one flat vector"""
    blocks: Tuple[Tuple[str, Shape], ...]
    offsets: Dict[str, int] = field(init=False, repr=False, compare=False)
    size: int = field(init=False, compare=False)

    def __post_init__(self):
        offsets = {}
        position = 0
        for name, shape in self.blocks:
            if name in offsets:
                raise AutodiffError(f"Duplicate parameter block name: {name}")
            offsets[name] = position
            position += int(np.prod(shape))
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "size", position)

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.blocks]

    def shape_of(self, name: str) -> Shape:
        return dict(self.blocks)[name]

    def span(self, name: str) -> slice:
        start = self.offsets[name]
        return slice(start, start + int(np.prod(self.shape_of(name))))

    def unflatten(self, flat: np.ndarray) -> Dict[str, np.ndarray]:
        """Block views; leading axes of flat are kept"""
        if flat.shape[-1] != self.size:
            raise AutodiffError(f"Flat vector has {flat.shape[-1]} entries, layout needs {self.size}")
        lead = flat.shape[:-1]
        return {name: flat[..., self.span(name)].reshape(lead + shape) for name, shape in self.blocks}

    def describe(self) -> List[Dict]:
        return [{"name": name, "shape": list(shape)} for name, shape in self.blocks]


@dataclass
class ParameterVector:
    """Network parameters; values has shape (..., layout.size)

    Leading axes hold independent copies (one per agent, or one per sample
    when tiling for per-sample gradients).
    """
    layout: ParameterLayout
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape[-1] != self.layout.size:
            raise AutodiffError(
                f"Parameter array has {self.values.shape[-1]} entries, layout needs {self.layout.size}"
            )
        check_finite(self.layout, self.values, "parameter")

    @property
    def lead_shape(self) -> Shape:
        return self.values.shape[:-1]

    def blocks(self) -> Dict[str, np.ndarray]:
        return self.layout.unflatten(self.values)

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self.blocks().items())

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.layout, self.values.copy())

    def with_values(self, values: np.ndarray) -> "ParameterVector":
        return ParameterVector(self.layout, values)

    def select(self, index) -> "ParameterVector":
        """Sub-population along the leading axis"""
        return ParameterVector(self.layout, self.values[index])

    def tiled(self, count: int) -> "ParameterVector":
        """Insert a sample axis before the flat axis: (..., P) -> (..., count, P)"""
        values = np.repeat(self.values[..., None, :], count, axis=-2)
        return ParameterVector(self.layout, values)


def check_finite(layout: ParameterLayout, values: np.ndarray, what: str):
    """Raise naming the first block holding a non-finite entry"""
    if np.all(np.isfinite(values)):
        return
    for name, _ in layout.blocks:
        if not np.all(np.isfinite(values[..., layout.span(name)])):
            raise NumericalError(f"Non-finite {what} entries in block '{name}'")
    raise NumericalError(f"Non-finite {what} entries")
