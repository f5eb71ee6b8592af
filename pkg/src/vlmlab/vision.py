"""Toy encoder/decoder stack with multi-level visual token injection.

The vision encoder is a small pre-norm transformer over patch features with
two-axis rotary encoding (temporal component frozen to zero).  Hidden
states are tapped at three levels; each tap feeds a dedicated 2x2 merger
that projects four neighbouring patch features into one decoder-width
visual token.  The main merger (over the final encoder output) produces
the visual tokens spliced into the decoder input; the per-tap merger
outputs are added onto the hidden states entering the first decoder layers
at the visual-token positions, adding no sequence length.

The decoder is a standard pre-norm causal transformer whose q/k vectors
get the three-axis rotary treatment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import numerics
from .errors import ConfigError, ShapeError
from .mrope import FrequencyAllocation, PositionId, apply_mrope, assign_position_ids, \
    build_frequency_allocation
from .numerics import Tensor
from .seeding import Rng
from .sequence import FrameGroup, ImageBlock, MultimodalSequence, TextSpan

INIT_STD = 0.02


@dataclass(frozen=True)
class PatchGrid:
    """Patch features laid out row-major over a (gh, gw) grid."""

    gh: int
    gw: int
    dim: int
    features: Tensor

    def __post_init__(self):
        if self.gh < 1 or self.gw < 1:
            raise ConfigError(f"patch grid must be at least 1x1, got {self.gh}x{self.gw}")
        if self.features.shape != (self.gh * self.gw, self.dim):
            raise ShapeError(
                f"features {self.features.shape} vs grid {self.gh}x{self.gw} width {self.dim}")


@dataclass(frozen=True)
class TapSet:
    """Three strictly increasing encoder layer indices to tap."""

    levels: tuple[int, int, int]

    def __post_init__(self):
        lv = tuple(int(x) for x in self.levels)
        if len(lv) != 3 or not (0 <= lv[0] < lv[1] < lv[2]):
            raise ConfigError(f"taps must be three strictly increasing indices, got {lv}")
        object.__setattr__(self, "levels", lv)

    def validate_for_depth(self, depth: int) -> None:
        if self.levels[-1] >= depth:
            raise ConfigError(f"tap {self.levels[-1]} out of range for encoder depth {depth}")

    @staticmethod
    def default(depth: int) -> "TapSet":
        levels = (depth // 4, depth // 2, (3 * depth) // 4)
        if not (levels[0] < levels[1] < levels[2]):
            # Degenerate shallow encoders fall back to the first three layers.
            levels = (0, 1, 2)
        return TapSet(levels)


@dataclass(frozen=True)
class InjectionPlan:
    """Where each tap level lands in the decoder, and at which positions."""

    layer_map: tuple[int, int, int] = (0, 1, 2)
    visual_token_positions: tuple[int, ...] = ()

    def validate(self, decoder_depth: int, seq_len: int) -> None:
        if len(set(self.layer_map)) != len(self.layer_map):
            raise ConfigError(f"duplicate decoder layers in {self.layer_map}")
        if any(not 0 <= l < decoder_depth for l in self.layer_map):
            raise ConfigError(f"injection layers {self.layer_map} out of range for depth {decoder_depth}")
        if any(not 0 <= p < seq_len for p in self.visual_token_positions):
            raise ConfigError("visual token position out of sequence bounds")


@dataclass(frozen=True)
class ModelConfig:
    encoder_depth: int = 4
    decoder_depth: int = 3
    dim: int = 8
    llm_dim: int = 16
    head_dim: int = 8
    taps: tuple[int, int, int] | None = None
    inject_layers: tuple[int, int, int] = (0, 1, 2)
    vocab: int = 300
    rope_base: float = 10000.0
    rope_scheme: str = "interleaved"
    # Ablation knobs; defaults reflect the reference behaviour.
    inject_after_layer: bool = False
    normalize_taps: bool = False

    def __post_init__(self):
        if self.head_dim % 2 != 0:
            raise ConfigError(f"head_dim must be even, got {self.head_dim}")
        if min(self.dim, self.llm_dim, self.vocab, self.encoder_depth, self.decoder_depth) < 1:
            raise ConfigError("model dims and depths must be positive")
        taps = TapSet(self.taps) if self.taps is not None else TapSet.default(self.encoder_depth)
        taps.validate_for_depth(self.encoder_depth)
        object.__setattr__(self, "taps", taps.levels)
        if len(self.inject_layers) != 3:
            raise ConfigError("inject_layers must name three decoder layers")
        if any(not 0 <= l < self.decoder_depth for l in self.inject_layers):
            raise ConfigError(
                f"inject_layers {self.inject_layers} out of range for depth {self.decoder_depth}")

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": 1,
            "encoder_depth": self.encoder_depth, "decoder_depth": self.decoder_depth,
            "dim": self.dim, "llm_dim": self.llm_dim, "head_dim": self.head_dim,
            "taps": list(self.taps), "inject_layers": list(self.inject_layers),
            "vocab": self.vocab,
        }, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ModelConfig":
        raw = json.loads(text)
        version = raw.pop("schema_version", 1)
        if version != 1:
            raise ConfigError(f"unsupported model config schema_version {version}")
        known = {"encoder_depth", "decoder_depth", "dim", "llm_dim", "head_dim",
                 "taps", "inject_layers", "vocab", "rope_base", "rope_scheme",
                 "inject_after_layer", "normalize_taps"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        for key in ("taps", "inject_layers"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return ModelConfig(**raw)


def _linear_params(rng: Rng, fan_in: int, fan_out: int, prefix: str) -> dict[str, Tensor]:
    return {
        f"{prefix}.w": numerics.parameter(rng.split("w").normal((fan_in, fan_out), INIT_STD)),
        f"{prefix}.b": numerics.parameter(np.zeros(fan_out)),
    }


def _norm_params(width: int, prefix: str) -> dict[str, Tensor]:
    return {
        f"{prefix}.gain": numerics.parameter(np.ones(width)),
        f"{prefix}.bias": numerics.parameter(np.zeros(width)),
    }


def _linear(params: Mapping[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    return numerics.add_bias(numerics.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def _norm(params: Mapping[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    return numerics.layer_norm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def _block_params(rng: Rng, width: int, head_dim: int, prefix: str) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    p.update(_norm_params(width, f"{prefix}.ln1"))
    p.update(_linear_params(rng.split("q"), width, head_dim, f"{prefix}.q"))
    p.update(_linear_params(rng.split("k"), width, head_dim, f"{prefix}.k"))
    p.update(_linear_params(rng.split("v"), width, head_dim, f"{prefix}.v"))
    p.update(_linear_params(rng.split("o"), head_dim, width, f"{prefix}.o"))
    p.update(_norm_params(width, f"{prefix}.ln2"))
    p.update(_linear_params(rng.split("m1"), width, 2 * width, f"{prefix}.mlp1"))
    p.update(_linear_params(rng.split("m2"), 2 * width, width, f"{prefix}.mlp2"))
    return p


def _block_forward(params: Mapping[str, Tensor], prefix: str, x: Tensor,
                   ids: Sequence[PositionId], alloc: FrequencyAllocation,
                   causal: bool) -> Tensor:
    n = x.shape[0]
    a = _norm(params, f"{prefix}.ln1", x)
    q = apply_mrope(_linear(params, f"{prefix}.q", a), ids, alloc)
    k = apply_mrope(_linear(params, f"{prefix}.k", a), ids, alloc)
    v = _linear(params, f"{prefix}.v", a)
    scores = numerics.scale(numerics.matmul(q, numerics.transpose(k)),
                            1.0 / np.sqrt(alloc.head_dim))
    if causal:
        mask = np.tril(np.ones((n, n), dtype=bool))
        attn = numerics.masked_softmax(scores, mask, axis=-1)
    else:
        attn = numerics.softmax(scores, axis=-1)
    x = numerics.add(x, _linear(params, f"{prefix}.o", numerics.matmul(attn, v)))
    m = _norm(params, f"{prefix}.ln2", x)
    h = numerics.gelu(_linear(params, f"{prefix}.mlp1", m))
    return numerics.add(x, _linear(params, f"{prefix}.mlp2", h))


class VisionEncoder:
    """Transformer over patch features with per-level taps."""

    def __init__(self, config: ModelConfig, rng: Rng, pos_table: tuple[int, int] = (4, 4)):
        self.config = config
        self.depth = config.encoder_depth
        self.taps = TapSet(config.taps)
        self.taps.validate_for_depth(self.depth)
        self.alloc = build_frequency_allocation(config.head_dim, config.rope_base,
                                                config.rope_scheme)
        self.params: dict[str, Tensor] = {}
        th, tw = pos_table
        self.params["pos_table"] = numerics.parameter(
            rng.split("pos").normal((th, tw, config.dim), INIT_STD))
        for layer in range(self.depth):
            self.params.update(_block_params(rng.split(f"block{layer}"),
                                             config.dim, config.head_dim, f"block{layer}"))

    def hidden_states(self, grid: PatchGrid) -> list[Tensor]:
        """Hidden state after each block (index L = output of block L)."""
        if grid.dim != self.config.dim:
            raise ShapeError(f"grid width {grid.dim} vs encoder width {self.config.dim}")
        pos = interpolate_pos_embed(self.params["pos_table"], grid.gh, grid.gw)
        pos_flat = numerics.reshape(pos, (grid.gh * grid.gw, grid.dim))
        ids = [PositionId(0, r, c) for r in range(grid.gh) for c in range(grid.gw)]
        x = numerics.add(grid.features, pos_flat)
        states = []
        for layer in range(self.depth):
            x = _block_forward(self.params, f"block{layer}", x, ids, self.alloc, causal=False)
            states.append(x)
        return states

    def forward(self, grid: PatchGrid) -> tuple[Tensor, list[Tensor]]:
        """Final hidden state plus the three tapped states."""
        states = self.hidden_states(grid)
        return states[-1], [states[level] for level in self.taps.levels]


def interpolate_pos_embed(table: Tensor, gh: int, gw: int) -> Tensor:
    """Bilinearly resample a (th, tw, dim) position table to (gh, gw, dim)."""
    return numerics.interpolate_bilinear(table, gh, gw)


def encoder_forward(encoder: VisionEncoder, grid: PatchGrid) -> list[Tensor]:
    """The encoder's three tapped hidden states for one patch grid."""
    _, taps = encoder.forward(grid)
    return taps


class Merger:
    """Two-layer MLP collapsing each 2x2 patch block into one visual token."""

    def __init__(self, dim: int, llm_dim: int, rng: Rng, name: str = "merger"):
        self.dim = dim
        self.llm_dim = llm_dim
        self.name = name
        self.params: dict[str, Tensor] = {}
        self.params.update(_linear_params(rng.split("fc1"), 4 * dim, llm_dim, "fc1"))
        self.params.update(_linear_params(rng.split("fc2"), llm_dim, llm_dim, "fc2"))

    def forward(self, merged_features: Tensor) -> Tensor:
        h = numerics.gelu(_linear(self.params, "fc1", merged_features))
        return _linear(self.params, "fc2", h)


def merge_2x2(level_features: Tensor, gh: int, gw: int, merger: Merger) -> Tensor:
    """Concatenate disjoint 2x2 feature blocks and project to decoder width.

    The grid must be even on both axes; padding odd grids is the caller's
    job.  Output rows follow block row-major order, gh*gw/4 in total.
    """
    if gh % 2 or gw % 2:
        raise ShapeError(f"merge_2x2 needs even grid sides, got {gh}x{gw}")
    if level_features.shape != (gh * gw, merger.dim):
        raise ShapeError(f"features {level_features.shape} vs grid {gh}x{gw} width {merger.dim}")
    corner_rows: list[list[int]] = [[], [], [], []]
    for br in range(gh // 2):
        for bc in range(gw // 2):
            r, c = 2 * br, 2 * bc
            corner_rows[0].append(r * gw + c)
            corner_rows[1].append(r * gw + c + 1)
            corner_rows[2].append((r + 1) * gw + c)
            corner_rows[3].append((r + 1) * gw + c + 1)
    corners = [numerics.gather_rows(level_features, rows) for rows in corner_rows]
    return merger.forward(numerics.concat_cols(corners))


def deepstack_inject(hidden: Tensor, injected: Tensor, positions: Sequence[int]) -> Tensor:
    """Add projected visual features onto selected rows of a hidden state."""
    return numerics.add_rows_at(hidden, injected, positions)


class Decoder:
    """Pre-norm causal transformer producing vocabulary logits."""

    def __init__(self, config: ModelConfig, rng: Rng):
        self.config = config
        self.depth = config.decoder_depth
        self.alloc = build_frequency_allocation(config.head_dim, config.rope_base,
                                                config.rope_scheme)
        self.params: dict[str, Tensor] = {}
        self.params["embed"] = numerics.parameter(
            rng.split("embed").normal((config.vocab, config.llm_dim), INIT_STD))
        for layer in range(self.depth):
            self.params.update(_block_params(rng.split(f"block{layer}"),
                                             config.llm_dim, config.head_dim, f"block{layer}"))
        self.params.update(_norm_params(config.llm_dim, "ln_f"))
        self.params.update(_linear_params(rng.split("head"), config.llm_dim,
                                          config.vocab, "head"))

    def embed_tokens(self, token_ids: Sequence[int]) -> Tensor:
        return numerics.gather_rows(self.params["embed"], token_ids)

    def forward(self, embeddings: Tensor, ids: Sequence[PositionId],
                injections: Mapping[int, tuple[Tensor, Sequence[int]]] | None = None) -> Tensor:
        return decoder_forward(embeddings, ids, self.alloc, injections, self)


def decoder_forward(embeddings: Tensor, ids: Sequence[PositionId],
                    alloc: FrequencyAllocation,
                    injections: Mapping[int, tuple[Tensor, Sequence[int]]] | None,
                    decoder: Decoder) -> Tensor:
    """Run the decoder stack; returns (seq, vocab) logits.

    ``injections`` maps a decoder layer index to (visual tokens, positions);
    the tokens are added onto that layer's input hidden state (or its
    output, under the post-layer ablation).  The sequence never grows.
    """
    if embeddings.shape[1] != decoder.config.llm_dim:
        raise ShapeError(f"embedding width {embeddings.shape[1]} vs {decoder.config.llm_dim}")
    if len(ids) != embeddings.shape[0]:
        raise ShapeError(f"{len(ids)} position ids for {embeddings.shape[0]} tokens")
    injections = dict(injections or {})
    for layer in injections:
        if not 0 <= layer < decoder.depth:
            raise ConfigError(f"injection layer {layer} out of range for depth {decoder.depth}")

    x = embeddings
    for layer in range(decoder.depth):
        if layer in injections and not decoder.config.inject_after_layer:
            rows, positions = injections[layer]
            x = deepstack_inject(x, rows, positions)
        x = _block_forward(decoder.params, f"block{layer}", x, ids, alloc, causal=True)
        if layer in injections and decoder.config.inject_after_layer:
            rows, positions = injections[layer]
            x = deepstack_inject(x, rows, positions)
    x = _norm(decoder.params, "ln_f", x)
    return _linear(decoder.params, "head", x)


@dataclass
class PreparedInput:
    """A multimodal sequence lowered to decoder inputs."""

    embeddings: Tensor
    position_ids: list[PositionId]
    visual_positions: list[int]
    injections: dict[int, tuple[Tensor, list[int]]] = field(default_factory=dict)


class VisionLanguageModel:
    """Bundle of encoder, mergers, and decoder with named parameters.

    Parameter names are prefixed by component (``encoder.``, ``merger.``,
    ``decoder.``) so training stages can freeze whole components.
    """

    def __init__(self, config: ModelConfig, rng: Rng):
        self.config = config
        self.encoder = VisionEncoder(config, rng.split("encoder"))
        self.main_merger = Merger(config.dim, config.llm_dim, rng.split("merger_main"), "main")
        self.tap_mergers = [
            Merger(config.dim, config.llm_dim, rng.split(f"merger_tap{i}"), f"tap{i}")
            for i in range(3)
        ]
        self.decoder = Decoder(config, rng.split("decoder"))

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, p in self.encoder.params.items():
            out[f"encoder.{name}"] = p
        for name, p in self.main_merger.params.items():
            out[f"merger.main.{name}"] = p
        for i, merger in enumerate(self.tap_mergers):
            for name, p in merger.params.items():
                out[f"merger.tap{i}.{name}"] = p
        for name, p in self.decoder.params.items():
            out[f"decoder.{name}"] = p
        return out

    def set_parameter(self, name: str, value: Tensor) -> None:
        component, _, rest = name.partition(".")
        if component == "encoder":
            self.encoder.params[rest] = value
        elif component == "decoder":
            self.decoder.params[rest] = value
        elif component == "merger":
            which, _, leaf = rest.partition(".")
            merger = self.main_merger if which == "main" else self.tap_mergers[int(which[3:])]
            merger.params[leaf] = value
        else:
            raise KeyError(name)

    @staticmethod
    def component_of(name: str) -> str:
        return name.split(".", 1)[0]

    def prepare(self, seq: MultimodalSequence,
                grids: Mapping[int, PatchGrid]) -> PreparedInput:
        """Lower a sequence to embeddings, ids, and deepstack injections.

        ``grids`` maps element indices of image blocks / frame groups to
        patch grids whose sides are twice the element's token grid (the
        merger halves each side).
        """
        embed_parts: list[Tensor] = []
        visual_positions: list[int] = []
        deepstack_parts: list[list[Tensor]] = [[], [], []]
        cursor = 0
        for idx, element in enumerate(seq.elements):
            if isinstance(element, TextSpan):
                if element.token_ids:
                    embed_parts.append(self.decoder.embed_tokens(element.token_ids))
                cursor += element.token_count()
                continue
            if not isinstance(element, (ImageBlock, FrameGroup)):
                raise TypeError(f"unknown element {type(element).__name__}")
            if idx not in grids:
                raise ConfigError(f"element {idx} has no patch grid")
            grid = grids[idx]
            if grid.gh != 2 * element.gh or grid.gw != 2 * element.gw:
                raise ShapeError(
                    f"element {idx}: patch grid {grid.gh}x{grid.gw} is not twice "
                    f"the token grid {element.gh}x{element.gw}")
            final, taps = self.encoder.forward(grid)
            tokens = merge_2x2(final, grid.gh, grid.gw, self.main_merger)
            embed_parts.append(tokens)
            n = element.token_count()
            visual_positions.extend(range(cursor, cursor + n))
            for level, (tap_state, merger) in enumerate(zip(taps, self.tap_mergers)):
                if self.config.normalize_taps:
                    # Ablation: parameter-free standardization of tap features.
                    ones = Tensor(np.ones(self.config.dim))
                    zeros = Tensor(np.zeros(self.config.dim))
                    tap_state = numerics.layer_norm(tap_state, ones, zeros)
                deepstack_parts[level].append(merge_2x2(tap_state, grid.gh, grid.gw, merger))
            cursor += n

        if not embed_parts:
            raise ConfigError("cannot prepare an empty sequence")
        embeddings = numerics.concat_rows(embed_parts)
        injections: dict[int, tuple[Tensor, list[int]]] = {}
        if visual_positions:
            plan = InjectionPlan(layer_map=self.config.inject_layers,
                                 visual_token_positions=tuple(visual_positions))
            plan.validate(self.config.decoder_depth, seq.token_count())
            for level, parts in enumerate(deepstack_parts):
                layer = plan.layer_map[level]
                injections[layer] = (numerics.concat_rows(parts), list(visual_positions))
        return PreparedInput(
            embeddings=embeddings,
            position_ids=assign_position_ids(seq),
            visual_positions=visual_positions,
            injections=injections,
        )

    def forward(self, prepared: PreparedInput, use_deepstack: bool = True) -> Tensor:
        injections = prepared.injections if use_deepstack else None
        return self.decoder.forward(prepared.embeddings, prepared.position_ids, injections)
