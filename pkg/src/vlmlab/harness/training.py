"""Toy training loop with component freezing.

Plain gradient descent over synthetic next-token-prediction batches.  The
loss path uses per-token weights from the objective module, so the chosen
aggregation scheme shapes the gradients exactly as it shapes the reported
loss.  Parameters of components outside the stage's trainable set are never
touched, so they remain bit-identical across any number of steps.
"""

from __future__ import annotations

from dataclasses import dataclass

from .. import numerics, objective
from ..errors import ConfigError
from ..numerics import Tensor
from ..seeding import Rng
from ..sequence import ImageBlock, MultimodalSequence, TextSpan
from ..vision import ModelConfig, PatchGrid, VisionLanguageModel
from .stages import StageConfig


@dataclass
class TrainingExample:
    """One next-token-prediction sample, optionally with an image."""

    sequence: MultimodalSequence
    grids: dict[int, PatchGrid]
    target_positions: list[int]
    target_ids: list[int]
    modality: str


@dataclass
class TrainResult:
    losses: list[float]
    per_scheme_initial: dict[str, float]
    per_scheme_final: dict[str, float]


def make_synthetic_batch(config: ModelConfig, rng: Rng, n_examples: int = 8,
                         text_len: int = 12, image_tokens: tuple[int, int] = (1, 2),
                         multimodal_every: int = 2) -> list[TrainingExample]:
    """Random token sequences; every ``multimodal_every``-th gets an image.

    Targets are the next token at each text position (teacher forcing);
    visual positions carry no loss.  Lengths vary across the batch so the
    aggregation schemes are distinguishable.
    """
    if text_len < 2:
        raise ConfigError("text_len must be at least 2")
    examples = []
    for i in range(n_examples):
        ex_rng = rng.split(f"example{i}")
        length = text_len + (i % 3)
        tokens = [int(t) for t in ex_rng.split("tokens").integers(0, config.vocab, length)]
        with_image = (i % multimodal_every) == 0
        if with_image:
            eh, ew = image_tokens
            block = ImageBlock(eh, ew)
            seq = MultimodalSequence((TextSpan(tuple(tokens[:2])), block,
                                      TextSpan(tuple(tokens[2:]))))
            features = Tensor(ex_rng.split("patches").normal((4 * eh * ew, config.dim)))
            grids = {1: PatchGrid(2 * eh, 2 * ew, config.dim, features)}
            n_visual = block.token_count()
            # Positions of text tokens within the flattened sequence.
            positions = list(range(2)) + [2 + n_visual + j for j in range(length - 2)]
        else:
            seq = MultimodalSequence((TextSpan(tuple(tokens)),))
            grids = {}
            positions = list(range(length))
        # Predict the following text token at every text position but the last.
        target_positions = positions[:-1]
        target_ids = tokens[1:]
        examples.append(TrainingExample(
            sequence=seq, grids=grids,
            target_positions=target_positions, target_ids=target_ids,
            modality="multimodal" if with_image else "text"))
    return examples


def _batch_loss(model: VisionLanguageModel, batch: list[TrainingExample],
                scheme: str) -> tuple[Tensor, list[objective.SampleLossRecord]]:
    records: list[objective.SampleLossRecord] = []
    nll_tensors: list[Tensor] = []
    for example in batch:
        prepared = model.prepare(example.sequence, example.grids)
        logits = model.forward(prepared)
        picked = numerics.gather_rows(logits, example.target_positions)
        nll = numerics.token_nll(picked, example.target_ids)
        nll_tensors.append(nll)
        records.append(objective.SampleLossRecord(tuple(nll.data.tolist()), example.modality))
    weights = objective.gradient_weights(records, scheme)
    terms = [numerics.scale(numerics.sum_all(nll), w[0])
             for nll, w in zip(nll_tensors, weights)]
    total = terms[0]
    for term in terms[1:]:
        total = numerics.add(total, term)
    return total, records


def train_toy(model: VisionLanguageModel, stage: StageConfig,
              data: list[TrainingExample], steps: int, lr: float,
              scheme: str = "sqrt") -> TrainResult:
    """Run ``steps`` of gradient descent on the stage's trainable components.

    The model is updated in place; its parameters after the call are the
    final ones.  ``lr`` may be zero (a legal no-op step, useful for freeze
    checks) but not negative.
    """
    if lr < 0:
        raise ConfigError(f"learning rate must be non-negative, got {lr}")
    if steps < 0:
        raise ConfigError(f"steps must be non-negative, got {steps}")
    if not data:
        raise ConfigError("training data must be non-empty")

    losses: list[float] = []
    initial = final = None
    for _ in range(steps):
        loss, records = _batch_loss(model, data, scheme)
        losses.append(loss.item())
        if initial is None:
            initial = {name: objective.aggregate(records, name) for name in objective.SCHEMES}
        final = {name: objective.aggregate(records, name) for name in objective.SCHEMES}
        loss.backward()
        for name, param in model.parameters().items():
            if model.component_of(name) not in stage.trainable:
                continue
            if param.grad is None:
                continue
            model.set_parameter(name, numerics.parameter(param.data - lr * param.grad))
    if initial is None:
        loss, records = _batch_loss(model, data, scheme)
        losses.append(loss.item())
        initial = final = {name: objective.aggregate(records, name) for name in objective.SCHEMES}
    return TrainResult(losses=losses, per_scheme_initial=initial, per_scheme_final=final)
