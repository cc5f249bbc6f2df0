"""Stroke containers.

:class:`StrokeSet` is the editable, object-per-stroke view. The renderer and
optimizer work on :class:`PackedStrokes`, a struct-of-arrays copy with all
control points concatenated into one array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .geometry import BezierChain, sampling_matrix


@dataclass
class Stroke:
    chain: BezierChain
    color: np.ndarray
    opacity: float = 1.0
    width: float = 4.0
    height: float = 0.0
    id: int = 0

    def __post_init__(self):
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)


class StrokeSet:
    """Ordered strokes. Index order is depth order: the last stroke is in front."""

    def __init__(self, strokes=()):
        self.strokes: list[Stroke] = list(strokes)

    def __len__(self):
        return len(self.strokes)

    def __iter__(self):
        return iter(self.strokes)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return StrokeSet(self.strokes[i])
        return self.strokes[i]

    def append(self, stroke: Stroke):
        self.strokes.append(stroke)

    def extend(self, strokes):
        self.strokes.extend(strokes)

    def next_id(self) -> int:
        return max((s.id for s in self.strokes), default=-1) + 1

    def pack(self) -> "PackedStrokes":
        return PackedStrokes.from_strokes(self.strokes)


@dataclass
class PackedStrokes:
    ctrl: np.ndarray              # (P, 2) all control points
    offsets: np.ndarray           # (N + 1,) start of each stroke's control points
    color: np.ndarray             # (N, 3)
    opacity: np.ndarray           # (N,)
    width: np.ndarray             # (N,)
    height: np.ndarray            # (N,)
    ids: np.ndarray               # (N,)
    degree: int = 3
    _jac_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def empty(cls, degree: int = 3) -> "PackedStrokes":
        return cls(np.zeros((0, 2)), np.zeros(1, dtype=np.int64), np.zeros((0, 3)), np.zeros(0),
                   np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64), degree)

    @classmethod
    def from_strokes(cls, strokes) -> "PackedStrokes":
        strokes = list(strokes)
        if not strokes:
            return cls.empty()
        degree = strokes[0].chain.degree
        if any(s.chain.degree != degree for s in strokes):
            raise ValueError("all strokes must share one Bezier degree")
        sizes = [len(s.chain.points) for s in strokes]
        return cls(
            ctrl=np.concatenate([s.chain.points for s in strokes]).astype(np.float64),
            offsets=np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64),
            color=np.array([s.color for s in strokes], dtype=np.float64),
            opacity=np.array([s.opacity for s in strokes], dtype=np.float64),
            width=np.array([s.width for s in strokes], dtype=np.float64),
            height=np.array([s.height for s in strokes], dtype=np.float64),
            ids=np.array([s.id for s in strokes], dtype=np.int64),
            degree=degree,
        )

    def __len__(self):
        return len(self.opacity)

    def copy(self) -> "PackedStrokes":
        out = PackedStrokes(self.ctrl.copy(), self.offsets.copy(), self.color.copy(),
                            self.opacity.copy(), self.width.copy(), self.height.copy(),
                            self.ids.copy(), self.degree)
        out._jac_cache = self._jac_cache
        return out

    def chain(self, i: int) -> BezierChain:
        return BezierChain(self.ctrl[self.offsets[i]:self.offsets[i + 1]].copy(), self.degree)

    def stroke(self, i: int) -> Stroke:
        return Stroke(self.chain(i), self.color[i].copy(), float(self.opacity[i]),
                      float(self.width[i]), float(self.height[i]), int(self.ids[i]))

    def unpack(self) -> StrokeSet:
        return StrokeSet(self.stroke(i) for i in range(len(self)))

    def subset(self, index) -> "PackedStrokes":
        """Strokes selected by a boolean mask or index array, order preserved."""
        idx = np.arange(len(self))[index]
        return PackedStrokes.from_strokes([self.stroke(i) for i in idx]) if len(idx) else \
            PackedStrokes.empty(self.degree)

    def jacobian(self, n_samples: int) -> sparse.csr_matrix:
        """Block-diagonal map from ``ctrl`` to the stacked sampled vertices."""
        key = (n_samples, self.offsets.tobytes())
        jac = self._jac_cache.get(key)
        if jac is None:
            blocks = []
            for a, b in zip(self.offsets[:-1], self.offsets[1:]):
                blocks.append(sampling_matrix((b - a - 1) // self.degree, n_samples, self.degree))
            jac = sparse.block_diag(blocks, format="csr") if blocks else \
                sparse.csr_matrix((0, 0))
            if len(self._jac_cache) > 8:
                self._jac_cache.clear()
            self._jac_cache[key] = jac
        return jac

    def sample(self, n_samples: int) -> np.ndarray:
        """Sampled polylines, shape ``(N, n_samples, 2)``."""
        if len(self) == 0:
            return np.zeros((0, n_samples, 2))
        return (self.jacobian(n_samples) @ self.ctrl).reshape(len(self), n_samples, 2)
