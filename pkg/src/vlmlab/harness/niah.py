"""Synthetic needle-in-a-haystack retrieval probe over long video timelines.

A probe sequence is a long run of frame groups sampled at one frame per
second, each prefixed with its textual timestamp.  Hay groups share one
content signature; a single needle group carries a distinct signature at a
chosen relative depth.  Retrieval scores each group by rotating both the
query and the group's key to the group's position before taking the dot
product, i.e. the attention score the decoder would produce with query and
key co-located.  Because the rotary map is an isometry, a clean needle is
found at any depth and any length; degrading the signature separation
degrades retrieval rather than the mechanism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..mrope import FrequencyAllocation, apply_mrope, assign_position_ids
from ..numerics import Tensor
from ..seeding import Rng
from ..sequence import FrameGroup, MultimodalSequence
from ..timeline import format_timestamp, interleave_timestamps, sample_frames, SamplingPolicy


@dataclass(frozen=True)
class NiahConfig:
    """Grid shape and signature generation for the probe."""

    num_frames: int = 4096
    needle_depths: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    trials: int = 3
    seed: int = 0
    durations_min: tuple[float, ...] = (1.0, 8.0, 32.0, 68.27)
    signature_dim: int = 16
    overlap: float = 0.0
    signature_noise: float = 0.0
    timestamp_style: str = "seconds"

    def __post_init__(self):
        if self.num_frames < 1:
            raise ConfigError("num_frames must be positive")
        depths = tuple(float(d) for d in self.needle_depths)
        if not depths or any(not 0 < d < 1 for d in depths):
            raise ConfigError("needle depths must lie strictly inside (0, 1)")
        if list(depths) != sorted(set(depths)):
            raise ConfigError("needle depths must be strictly increasing")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.durations_min or any(d <= 0 for d in self.durations_min):
            raise ConfigError("durations must be positive")
        if self.signature_dim < 2 or self.signature_dim % 2:
            raise ConfigError("signature_dim must be even and >= 2")
        if not 0.0 <= self.overlap <= 1.0:
            raise ConfigError("overlap must lie in [0, 1]")
        if self.signature_noise < 0:
            raise ConfigError("signature_noise must be non-negative")
        object.__setattr__(self, "needle_depths", depths)
        object.__setattr__(self, "durations_min", tuple(float(d) for d in self.durations_min))

    def to_dict(self) -> dict:
        return {
            "num_frames": self.num_frames,
            "needle_depths": list(self.needle_depths),
            "trials": self.trials,
            "seed": self.seed,
            "durations_min": list(self.durations_min),
            "signature_dim": self.signature_dim,
            "overlap": self.overlap,
            "signature_noise": self.signature_noise,
            "timestamp_style": self.timestamp_style,
        }


@dataclass(frozen=True)
class NiahGroundTruth:
    group_index: int
    timestamp: float
    timestamp_text: str
    query_signature: tuple[float, ...] = field(compare=False, default=())


def _signatures(cfg: NiahConfig, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """A unit needle signature and a hay signature with chosen overlap."""
    needle = rng.split("needle").normal(cfg.signature_dim)
    needle /= np.linalg.norm(needle)
    raw = rng.split("hay").normal(cfg.signature_dim)
    ortho = raw - (raw @ needle) * needle
    ortho /= np.linalg.norm(ortho)
    hay = cfg.overlap * needle + math.sqrt(max(0.0, 1.0 - cfg.overlap ** 2)) * ortho
    return needle, hay


def build_niah_sequence(cfg: NiahConfig, duration_s: float, depth: float,
                        trial_seed: int = 0) -> tuple[MultimodalSequence, NiahGroundTruth]:
    """Build one probe timeline with the needle at the given relative depth.

    Frames are taken at 1 fps (capped at ``num_frames``), one frame per
    group; the needle sits at group round(depth * (groups - 1)).
    """
    if not 0 < depth < 1:
        raise ConfigError(f"depth must lie strictly inside (0, 1), got {depth}")
    if duration_s <= 0:
        raise ConfigError(f"duration must be positive, got {duration_s}")
    policy = SamplingPolicy(fps=1.0, max_frames=cfg.num_frames,
                            tokens_per_frame=1, token_budget=cfg.num_frames,
                            group_size=1)
    frames = sample_frames(duration_s, native_fps=30.0, policy=policy)
    base = interleave_timestamps(frames, group_size=1, style=cfg.timestamp_style)

    rng = Rng(cfg.seed).split("build").split(trial_seed)
    needle_sig, hay_sig = _signatures(cfg, rng)
    groups = len(base.frame_groups())
    needle_index = math.floor(depth * (groups - 1) + 0.5)  # round half up

    elements = []
    group_cursor = 0
    noise_rng = rng.split("noise")
    for element in base.elements:
        if isinstance(element, FrameGroup):
            sig = needle_sig if group_cursor == needle_index else hay_sig
            if cfg.signature_noise > 0:
                sig = sig + noise_rng.split(group_cursor).normal(
                    cfg.signature_dim, cfg.signature_noise)
            elements.append(FrameGroup(
                start_time=element.start_time, end_time=element.end_time,
                gh=element.gh, gw=element.gw,
                timestamp_style=element.timestamp_style,
                signature=tuple(sig)))
            group_cursor += 1
        else:
            elements.append(element)

    needle_time = frames[needle_index]
    truth = NiahGroundTruth(
        group_index=needle_index,
        timestamp=needle_time,
        timestamp_text=format_timestamp(needle_time, cfg.timestamp_style),
        query_signature=tuple(needle_sig))
    return MultimodalSequence(tuple(elements)), truth


@dataclass(frozen=True)
class ProbeResult:
    predicted_index: int
    margin: float
    scores: tuple[float, ...]


def run_niah_probe(seq: MultimodalSequence, query_signature,
                   alloc: FrequencyAllocation) -> ProbeResult:
    """Score every frame group against the query and predict the argmax.

    Keys are the groups' signatures rotated at their own positions; the
    query is rotated to each group's position before the dot product, so a
    score reduces to the content similarity the rotary isometry preserves.
    The margin is top1 minus top2 (0.0 with a single group).
    """
    groups = seq.frame_groups()
    if not groups:
        raise ConfigError("probe sequence has no frame groups")
    if any(g.signature is None for g in groups):
        raise ConfigError("every frame group needs a signature")
    query = np.asarray(query_signature, dtype=np.float64)
    dim = query.shape[0]
    if query.ndim != 1 or dim != alloc.head_dim:
        raise ConfigError(f"query width {query.shape} vs allocation head_dim {alloc.head_dim}")

    ids = assign_position_ids(seq)
    group_ids = []
    cursor = 0
    for element in seq.elements:
        if isinstance(element, FrameGroup):
            group_ids.append(ids[cursor])
        cursor += element.token_count()

    keys = np.stack([g.signature_array() for g in groups])
    if keys.shape[1] != dim:
        raise ConfigError(f"signature width {keys.shape[1]} vs query width {dim}")
    rotated_keys = apply_mrope(Tensor(keys), group_ids, alloc).data
    rotated_queries = apply_mrope(Tensor(np.tile(query, (len(groups), 1))),
                                  group_ids, alloc).data
    scores = np.einsum("ij,ij->i", rotated_queries, rotated_keys)

    order = np.argsort(scores)[::-1]
    predicted = int(order[0])
    margin = float(scores[order[0]] - scores[order[1]]) if len(groups) > 1 else 0.0
    return ProbeResult(predicted_index=predicted, margin=margin,
                       scores=tuple(float(s) for s in scores))


def run_niah_grid(cfg: NiahConfig, alloc: FrequencyAllocation) -> dict:
    """Accuracy per (duration, depth) cell, averaged over trials."""
    if alloc.head_dim != cfg.signature_dim:
        raise ConfigError("allocation head_dim must match signature_dim")
    accuracies = []
    for duration_min in cfg.durations_min:
        row = []
        for depth in cfg.needle_depths:
            hits = 0
            for trial in range(cfg.trials):
                seq, truth = build_niah_sequence(cfg, duration_min * 60.0, depth, trial)
                result = run_niah_probe(seq, truth.query_signature, alloc)
                hits += int(result.predicted_index == truth.group_index)
            row.append(hits / cfg.trials)
        accuracies.append(row)
    return {
        "durations_min": list(cfg.durations_min),
        "depths": list(cfg.needle_depths),
        "accuracies": accuracies,
        "trials": cfg.trials,
    }
