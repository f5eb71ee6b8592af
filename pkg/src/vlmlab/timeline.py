"""Video frame sampling, textual timestamps, and temporal-id diagnostics.

Covers the encoder-side timeline plumbing: choosing frame times under a
token budget, rendering timestamps as text (``<3.0 seconds>`` or
``<HH:MM:SS>``), a lossless byte-level tokenizer, interleaving timestamp
text with frame groups, and a report contrasting the density of temporal
position ids under textual timestamps versus absolute-time encoding.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Sequence

from . import mrope
from .errors import ConfigError
from .sequence import FrameGroup, MultimodalSequence, TextSpan

# Byte-level vocabulary: ids 0..255 are raw byte values.  One special id is
# reserved (and documented) for padding; the tokenizer itself never emits it.
BYTE_VOCAB_SIZE = 256
PAD_TOKEN_ID = 256
VOCAB_SIZE = 257

_HMS_RE = re.compile(r"^<(\d{2,}):(\d{2}):(\d{2})>$")
_SECONDS_RE = re.compile(r"^<(\d+\.\d) seconds>$")


@dataclass(frozen=True)
class SamplingPolicy:
    """Frame-sampling knobs: target rate, frame cap, and token budget."""

    fps: float = 1.0
    max_frames: int = 2048
    tokens_per_frame: int = 1
    token_budget: int = 2048
    group_size: int = 2

    def __post_init__(self):
        for name in ("fps", "max_frames", "tokens_per_frame", "token_budget", "group_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"sampling policy field {name} must be positive")

    def frame_cap(self) -> int:
        return min(self.max_frames, self.token_budget // self.tokens_per_frame)


def sample_frames(duration: float, native_fps: float, policy: SamplingPolicy) -> list[float]:
    """Pick frame timestamps in [0, duration) for a clip.

    The target count is floor(duration * rate), clamped to at least one
    frame, where the rate is the policy fps capped by what the source
    actually provides.  If the target fits under the frame cap the frames
    sit on the sampling grid k/rate; otherwise exactly cap frames are
    spread uniformly over [0, duration).
    """
    if duration < 0:
        raise ConfigError(f"duration must be non-negative, got {duration}")
    if native_fps <= 0:
        raise ConfigError(f"native fps must be positive, got {native_fps}")
    if duration == 0:
        return [0.0]
    rate = min(policy.fps, native_fps)
    target = max(1, math.floor(duration * rate))
    cap = policy.frame_cap()
    if target <= cap:
        return [k / rate for k in range(target)]
    return [k * duration / cap for k in range(cap)]


def format_timestamp(t: float, style: str = "seconds") -> str:
    """Render a time offset as timestamp text.

    ``seconds`` gives one decimal place with half-up rounding, e.g.
    ``<3.0 seconds>``.  ``hms`` gives ``<HH:MM:SS>`` with zero padding,
    seconds truncated toward zero, and hours unbounded.
    """
    if not math.isfinite(t) or t < 0:
        raise ValueError(f"timestamp must be finite and non-negative, got {t}")
    if style == "seconds":
        value = Decimal(repr(float(t))).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
        return f"<{value} seconds>"
    if style == "hms":
        total = int(t)
        hours, rem = divmod(total, 3600)
        minutes, seconds = divmod(rem, 60)
        return f"<{hours:02d}:{minutes:02d}:{seconds:02d}>"
    raise ConfigError(f"unknown timestamp style {style!r}")


def parse_timestamp(text: str) -> float:
    """Invert :func:`format_timestamp` (seconds value for either style)."""
    m = _HMS_RE.match(text)
    if m:
        h, mnt, s = (int(g) for g in m.groups())
        if mnt >= 60 or s >= 60:
            raise ValueError(f"minutes/seconds out of range in {text!r}")
        return float(h * 3600 + mnt * 60 + s)
    m = _SECONDS_RE.match(text)
    if m:
        return float(m.group(1))
    raise ValueError(f"not a timestamp: {text!r}")


def tokenize(text: str) -> list[int]:
    """UTF-8 byte tokenization; every byte maps to its own id."""
    return list(text.encode("utf-8"))


def detokenize(ids: Sequence[int]) -> str:
    for i, t in enumerate(ids):
        if not 0 <= t < BYTE_VOCAB_SIZE:
            raise ValueError(f"token {t} at position {i} is not a byte value")
    return bytes(ids).decode("utf-8")


def interleave_timestamps(frames: Sequence[float], group_size: int = 2,
                          style: str = "seconds", gh: int = 1, gw: int = 1,
                          tokenizer: Callable[[str], list[int]] = tokenize) -> MultimodalSequence:
    """Group frames and prefix each group with its start timestamp as text.

    Frames are split into consecutive runs of ``group_size`` (the last run
    may be short); each run becomes one frame group preceded by a text span
    holding the formatted time of the run's first frame.
    """
    if not frames:
        raise ConfigError("interleave_timestamps needs at least one frame")
    if group_size < 1:
        raise ConfigError(f"group_size must be >= 1, got {group_size}")
    elements = []
    for start in range(0, len(frames), group_size):
        chunk = frames[start:start + group_size]
        stamp = format_timestamp(chunk[0], style)
        elements.append(TextSpan(tuple(tokenizer(stamp))))
        elements.append(FrameGroup(start_time=chunk[0], end_time=chunk[-1],
                                   gh=gh, gw=gw, timestamp_style=style))
    return MultimodalSequence(tuple(elements))


def position_id_range_report(seq: MultimodalSequence, scheme: str = "textual_timestamp",
                             granularity: float = 0.1) -> dict[str, float]:
    """Density statistics of the temporal ids assigned to frame groups.

    Under ``textual_timestamp`` the groups take the ids produced by the
    position assignment (one consecutive integer per group); under
    ``absolute_time`` each group's id is its start time divided by the
    granularity, rounded half up.  ``sparsity`` is the occupied span
    divided by the number of distinct ids, so consecutive ids score
    exactly 1 regardless of where the run starts.
    """
    groups = seq.frame_groups()
    if not seq.elements:
        raise ConfigError("empty sequence")
    if not groups:
        raise ConfigError("sequence has no frame groups")
    if scheme == "textual_timestamp":
        t_ids = mrope.frame_group_position_ids(seq)
    elif scheme == "absolute_time":
        if granularity <= 0:
            raise ConfigError(f"granularity must be positive, got {granularity}")
        t_ids = [math.floor(g.start_time / granularity + 0.5) for g in groups]
    else:
        raise ConfigError(f"unknown scheme {scheme!r}")
    distinct = sorted(set(t_ids))
    span = distinct[-1] - distinct[0] + 1
    return {
        "max_t": distinct[-1],
        "min_t": distinct[0],
        "count_t_distinct": len(distinct),
        "sparsity": span / len(distinct),
    }
