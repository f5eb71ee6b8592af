"""vlmlab: desk-scale mechanisms of a multimodal transformer, with teeth.

The package implements and property-tests the encoder-side machinery of a
vision-language model: three-axis rotary position encoding with interleaved
or chunked frequency allocation, a tapped vision encoder whose multi-level
features are merged 2x2 and injected into the first decoder layers, textual
video timestamps with frame sampling under token budgets, normalized
grounding coordinate formats, and square-root loss reweighting; plus a CLI
harness with a synthetic long-context retrieval probe.
"""

__version__ = "0.1.0"
