"""Three-axis rotary position encoding for multimodal sequences.

Each token carries a (t, h, w) position triple.  Every adjacent coordinate
pair of a head vector is driven by exactly one of the three axes and one
angular frequency; the *allocation* decides which.  Two schemes are
provided:

* ``interleaved`` - axes cycle t, h, w, t, h, w, ... across the frequency
  ladder, so every axis touches both the fast and the slow end of the
  spectrum.
* ``chunked`` - each axis owns one contiguous block of frequencies (the
  baseline the interleaved scheme improves on).

Frequencies follow the standard rotary ladder ``theta[i] = base**(-2i/D)``
for pair index ``i`` and head width ``D``.  Rotation of pair i at position
component p is by angle ``p * theta[i]`` with the convention
``(x1*cos - x2*sin, x1*sin + x2*cos)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import numerics
from .errors import ConfigError, ShapeError
from .numerics import Tensor
from .sequence import FrameGroup, ImageBlock, MultimodalSequence, TextSpan

AXES = ("t", "h", "w")
DEFAULT_BASE = 10000.0


class PositionId(NamedTuple):
    """Temporal / vertical / horizontal indices of one token."""

    t: int
    h: int
    w: int

    def shifted(self, dt: int, dh: int, dw: int) -> "PositionId":
        return PositionId(self.t + dt, self.h + dh, self.w + dw)


@dataclass(frozen=True)
class FrequencyAllocation:
    """Assignment of axes and frequencies to rotary pairs.

    ``axis_of_pair[i]`` names the position component that drives pair i;
    ``theta[i]`` is its angular frequency.  ``chunk_split`` is retained for
    serialization of chunked allocations.
    """

    head_dim: int
    base: float
    scheme: str
    axis_of_pair: tuple[str, ...]
    theta: tuple[float, ...]
    chunk_split: tuple[int, int, int] | None = None

    def to_config(self) -> dict:
        cfg = {"head_dim": self.head_dim, "base": self.base, "scheme": self.scheme}
        if self.chunk_split is not None:
            cfg["chunk_split"] = list(self.chunk_split)
        return cfg

    @staticmethod
    def from_config(cfg: dict) -> "FrequencyAllocation":
        split = cfg.get("chunk_split")
        return build_frequency_allocation(
            head_dim=cfg["head_dim"],
            base=cfg.get("base", DEFAULT_BASE),
            scheme=cfg.get("scheme", "interleaved"),
            chunk_split=tuple(split) if split is not None else None,
        )


def default_chunk_split(num_pairs: int) -> tuple[int, int, int]:
    """Near-equal thirds; remainder pairs go to t, then h."""
    b, r = divmod(num_pairs, 3)
    return (b + (1 if r > 0 else 0), b + (1 if r > 1 else 0), b)


def build_frequency_allocation(head_dim: int, base: float = DEFAULT_BASE,
                               scheme: str = "interleaved",
                               chunk_split: Sequence[int] | None = None) -> FrequencyAllocation:
    """Construct and validate a frequency allocation."""
    if head_dim < 2 or head_dim % 2 != 0:
        raise ConfigError(f"head_dim must be even and >= 2, got {head_dim}")
    if base <= 1.0:
        raise ConfigError(f"rotary base must exceed 1, got {base}")
    num_pairs = head_dim // 2
    theta = tuple(float(base) ** (-2.0 * i / head_dim) for i in range(num_pairs))

    if scheme == "interleaved":
        if chunk_split is not None:
            raise ConfigError("chunk_split only applies to the chunked scheme")
        axis_of_pair = tuple(AXES[i % 3] for i in range(num_pairs))
        split = None
    elif scheme == "chunked":
        split = tuple(int(c) for c in (chunk_split or default_chunk_split(num_pairs)))
        if len(split) != 3 or any(c < 0 for c in split) or sum(split) != num_pairs:
            raise ConfigError(f"chunk_split {split} must be three counts summing to {num_pairs}")
        axis_of_pair = tuple(
            axis for axis, count in zip(AXES, split) for _ in range(count)
        )
    else:
        raise ConfigError(f"unknown scheme {scheme!r}; expected 'interleaved' or 'chunked'")

    return FrequencyAllocation(head_dim=head_dim, base=float(base), scheme=scheme,
                               axis_of_pair=axis_of_pair, theta=theta, chunk_split=split)


def assign_position_ids(seq: MultimodalSequence) -> list[PositionId]:
    """Assign one (t, h, w) triple per token of a multimodal sequence.

    Text tokens advance a running scalar index and take it on all three
    axes.  An image block starting at running index o keeps t = o and spans
    h in [o, o+rows), w in [o, o+cols); afterwards the running index resumes
    one past the largest component emitted.  Video frame groups lay out h/w
    the same way, but their temporal component forms a chain: the first
    group anchors at its running index and each later group takes the
    previous group's t plus one, so group t ids stay consecutive no matter
    how much text (e.g. timestamps) sits between them.
    """
    ids: list[PositionId] = []
    nxt = 0
    group_t: int | None = None
    for element in seq.elements:
        if isinstance(element, TextSpan):
            for _ in element.token_ids:
                ids.append(PositionId(nxt, nxt, nxt))
                nxt += 1
        elif isinstance(element, ImageBlock):
            o = nxt
            for r in range(element.gh):
                for c in range(element.gw):
                    ids.append(PositionId(o, o + r, o + c))
            nxt = o + max(element.gh, element.gw)
        elif isinstance(element, FrameGroup):
            o = nxt
            t = o if group_t is None else group_t + 1
            group_t = t
            for r in range(element.gh):
                for c in range(element.gw):
                    ids.append(PositionId(t, o + r, o + c))
            nxt = max(t, o + max(element.gh, element.gw) - 1) + 1
        else:
            raise TypeError(f"unknown sequence element {type(element).__name__}")
    return ids


def frame_group_position_ids(seq: MultimodalSequence) -> list[int]:
    """The temporal id of each frame group, in sequence order."""
    ids = assign_position_ids(seq)
    out: list[int] = []
    cursor = 0
    for element in seq.elements:
        n = element.token_count()
        if isinstance(element, FrameGroup):
            out.append(ids[cursor].t)
        cursor += n
    return out


def _angles(ids: Sequence[PositionId], alloc: FrequencyAllocation) -> np.ndarray:
    pos = np.asarray([[p.t, p.h, p.w] for p in ids], dtype=np.float64)
    axis_index = np.asarray([AXES.index(a) for a in alloc.axis_of_pair])
    theta = np.asarray(alloc.theta)
    # (seq, pairs): position component of the pair's axis times its frequency
    return pos[:, axis_index] * theta[None, :]


def apply_mrope(x: Tensor, ids: Sequence[PositionId], alloc: FrequencyAllocation) -> Tensor:
    """Rotate each token's coordinate pairs by its position angles."""
    if x.data.ndim != 2:
        raise ShapeError(f"apply_mrope expects (seq, head_dim), got {x.shape}")
    if x.shape[1] != alloc.head_dim:
        raise ShapeError(f"head_dim mismatch: tensor {x.shape[1]} vs allocation {alloc.head_dim}")
    if len(ids) != x.shape[0]:
        raise ShapeError(f"{len(ids)} position ids for {x.shape[0]} tokens")
    ang = _angles(ids, alloc)
    return numerics.rotate_pairs(x, np.cos(ang), np.sin(ang))


def spectrum_report(alloc: FrequencyAllocation) -> dict[str, dict[str, int]]:
    """Per-axis occupancy statistics over the pair indices.

    ``max_gap`` is the largest difference between consecutive assigned
    indices; axes with fewer than two indices report 0.
    """
    report: dict[str, dict[str, int]] = {}
    for axis in AXES:
        indices = [i for i, a in enumerate(alloc.axis_of_pair) if a == axis]
        if not indices:
            report[axis] = {"count": 0, "min_index": -1, "max_index": -1, "max_gap": 0}
            continue
        gaps = [b - a for a, b in zip(indices, indices[1:])]
        report[axis] = {
            "count": len(indices),
            "min_index": indices[0],
            "max_index": indices[-1],
            "max_gap": max(gaps) if gaps else 0,
        }
    return report


def spans_spectrum_ends(alloc: FrequencyAllocation, axis: str) -> bool:
    """Whether ``axis`` reaches both the low and high end of the ladder.

    The ends are bands of width max(ceil(P/3), 3) over the P pair indices
    (never wider than the ladder itself); an axis must place at least one
    pair in each band.  The floor of 3 keeps the check meaningful for tiny
    ladders, where exact thirds would be narrower than the cyclic stride.
    """
    num_pairs = len(alloc.axis_of_pair)
    band = min(num_pairs, max(-(-num_pairs // 3), 3))
    indices = [i for i, a in enumerate(alloc.axis_of_pair) if a == axis]
    if not indices:
        return False
    return indices[0] < band and indices[-1] >= num_pairs - band


def text_position_ids(n: int, start: int = 0) -> list[PositionId]:
    """The plain 1-D rotary index sequence, copied onto all three axes."""
    return [PositionId(i, i, i) for i in range(start, start + n)]


def shift_ids(ids: Iterable[PositionId], delta: tuple[int, int, int]) -> list[PositionId]:
    dt, dh, dw = delta
    return [p.shifted(dt, dh, dw) for p in ids]
