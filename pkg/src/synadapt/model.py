"""Frozen transformer backbone, entity-masked adapters, and feature fusion.

The backbone is a standard post-layer-norm transformer encoder whose
parameters are write-protected after seeded initialization. Each adapter
layer is a bottlenecked stack (down-projection, a few transformer layers
at the bottleneck width, up-projection) with a residual from its summed
input; the final transformer layer of every adapter layer restricts
entity-row attention to the marked span via an additive -inf mask.

Forward passes run on the autodiff tape; frozen parameters enter the
graph as constants, so only adapter and aggregator weights ever receive
gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import (DataError, DimensionError, IncompatibleConfigError,
                     InvalidSpanError)
from .tensor import NEG_INF, Parameter

# weight std 0.1: a frozen *random* backbone needs stronger-than-usual
# init mixing for marker positions to carry any context signal
_INIT_STD = 0.1


@dataclass(frozen=True)
class ModelConfig:
    """Widths and layout of the backbone and its adapters."""

    hidden_dim: int
    n_layers: int
    n_heads: int
    ffn_dim: int
    max_len: int
    vocab_size: int
    adapter_positions: tuple[int, ...]
    adapter_depth: int      # transformer layers inside each adapter layer
    bottleneck_dim: int
    agg_dim: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "adapter_positions",
                           tuple(int(p) for p in self.adapter_positions))
        if self.hidden_dim % self.n_heads != 0:
            raise IncompatibleConfigError("hidden_dim must be divisible by n_heads")
        if self.bottleneck_dim % self.n_heads != 0:
            raise IncompatibleConfigError("bottleneck_dim must be divisible by n_heads")
        if self.adapter_depth < 1:
            raise IncompatibleConfigError("adapter_depth must be >= 1")
        pos = self.adapter_positions
        if not pos:
            raise IncompatibleConfigError("at least one adapter position required")
        if any(p2 <= p1 for p1, p2 in zip(pos, pos[1:])):
            raise IncompatibleConfigError("adapter_positions must strictly increase")
        if pos[0] < 0 or pos[-1] >= self.n_layers:
            raise IncompatibleConfigError(
                f"adapter_positions must lie in [0, {self.n_layers})")
        if min(self.n_layers, self.ffn_dim, self.max_len, self.vocab_size,
               self.agg_dim) < 1:
            raise IncompatibleConfigError("all widths and counts must be >= 1")

    @classmethod
    def desk(cls, vocab_size: int, max_len: int = 64) -> "ModelConfig":
        """Desk-scale defaults small enough for exhaustive verification."""
        return cls(hidden_dim=64, n_layers=6, n_heads=4, ffn_dim=128,
                   max_len=max_len, vocab_size=vocab_size,
                   adapter_positions=(0, 2, 5), adapter_depth=2,
                   bottleneck_dim=32, agg_dim=64)

    @property
    def adapter_ffn_dim(self) -> int:
        # mirror the backbone's 2x ratio at the bottleneck width
        return 2 * self.bottleneck_dim

    def adapter_signature(self) -> tuple:
        return (self.hidden_dim, self.adapter_positions, self.adapter_depth,
                self.bottleneck_dim, self.n_heads)

    def to_dict(self) -> dict:
        return {
            "hidden_dim": self.hidden_dim, "n_layers": self.n_layers,
            "n_heads": self.n_heads, "ffn_dim": self.ffn_dim,
            "max_len": self.max_len, "vocab_size": self.vocab_size,
            "adapter_positions": list(self.adapter_positions),
            "adapter_depth": self.adapter_depth,
            "bottleneck_dim": self.bottleneck_dim, "agg_dim": self.agg_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(hidden_dim=d["hidden_dim"], n_layers=d["n_layers"],
                   n_heads=d["n_heads"], ffn_dim=d["ffn_dim"],
                   max_len=d["max_len"], vocab_size=d["vocab_size"],
                   adapter_positions=tuple(d["adapter_positions"]),
                   adapter_depth=d["adapter_depth"],
                   bottleneck_dim=d["bottleneck_dim"], agg_dim=d["agg_dim"])


class SequenceTooLongError(DataError):
    """Input longer than max_len is rejected rather than silently cut."""


# ---------------------------------------------------------------------------
# weight containers


@dataclass
class TransformerLayerWeights:
    wq: Parameter
    wk: Parameter
    wv: Parameter
    wo: Parameter
    bo: Parameter
    ln1_gain: Parameter
    ln1_bias: Parameter
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter
    ln2_gain: Parameter
    ln2_bias: Parameter

    def parameters(self) -> list[Parameter]:
        return [self.wq, self.wk, self.wv, self.wo, self.bo,
                self.ln1_gain, self.ln1_bias,
                self.w1, self.b1, self.w2, self.b2,
                self.ln2_gain, self.ln2_bias]


def _init_layer(rng: np.random.Generator, width: int, ffn_dim: int,
                prefix: str, frozen: bool) -> TransformerLayerWeights:
    def w(name: str, rows: int, cols: int) -> Parameter:
        return Parameter(f"{prefix}.{name}",
                         rng.normal(0.0, _INIT_STD, (rows, cols)), frozen=frozen)

    def vec(name: str, cols: int, value: float) -> Parameter:
        return Parameter(f"{prefix}.{name}", np.full((1, cols), value),
                         frozen=frozen)

    return TransformerLayerWeights(
        wq=w("wq", width, width), wk=w("wk", width, width),
        wv=w("wv", width, width), wo=w("wo", width, width),
        bo=vec("bo", width, 0.0),
        ln1_gain=vec("ln1_gain", width, 1.0), ln1_bias=vec("ln1_bias", width, 0.0),
        w1=w("w1", width, ffn_dim), b1=vec("b1", ffn_dim, 0.0),
        w2=w("w2", ffn_dim, width), b2=vec("b2", width, 0.0),
        ln2_gain=vec("ln2_gain", width, 1.0), ln2_bias=vec("ln2_bias", width, 0.0),
    )


# ---------------------------------------------------------------------------
# attention and transformer layers (tape)


def entity_mask(layer_index: int, depth: int, p_s: int, p_e: int,
                seq_len: int) -> np.ndarray:
    """Additive attention mask for one adapter transformer layer.

    All-zero except in the final layer of the stack (layer_index ==
    depth), where rows inside the closed span [p_s, p_e] get -inf on
    every column outside that span. Rows outside the span always see the
    whole sequence.
    """
    if not 1 <= layer_index <= depth:
        raise DataError(f"layer_index {layer_index} outside [1, {depth}]")
    if not 0 <= p_s < p_e < seq_len:
        raise InvalidSpanError(
            f"span ({p_s}, {p_e}) invalid for sequence length {seq_len}")
    mask = np.zeros((seq_len, seq_len))
    if layer_index == depth:
        cols = np.ones(seq_len, dtype=bool)
        cols[p_s:p_e + 1] = False
        mask[p_s:p_e + 1, cols] = NEG_INF
    return mask


def masked_attention_var(h: ad.Var, wq: ad.Var, wk: ad.Var, wv: ad.Var,
                         mask: np.ndarray | None, n_heads: int) -> ad.Var:
    """Multi-head scaled dot-product attention with an additive mask.

    The mask is added to every head's score matrix; -inf entries zero
    out the corresponding attention weights exactly.
    """
    width = h.shape[1]
    if width % n_heads != 0:
        raise DimensionError(f"width {width} not divisible by {n_heads} heads")
    dk = width // n_heads
    inv_scale = 1.0 / math.sqrt(dk)
    q = ad.matmul(h, wq)
    k = ad.matmul(h, wk)
    v = ad.matmul(h, wv)
    heads: list[ad.Var] = []
    for i in range(n_heads):
        lo, hi = i * dk, (i + 1) * dk
        qs, ks, vs = (ad.slice_cols(x, lo, hi) for x in (q, k, v))
        scores = ad.scale(ad.matmul(qs, ad.transpose(ks)), inv_scale)
        if mask is not None:
            scores = ad.add_const(scores, mask)
        heads.append(ad.matmul(ad.softmax_rows(scores), vs))
    return ad.concat_cols(heads)


def masked_attention(h: np.ndarray, wq, wk, wv, mask: np.ndarray | None,
                     n_heads: int) -> np.ndarray:
    """Array-in/array-out wrapper around the tape implementation."""
    def as_const(x):
        return ad.const(x.value if isinstance(x, Parameter) else x)
    return masked_attention_var(ad.const(h), as_const(wq), as_const(wk),
                                as_const(wv), mask, n_heads).value


def transformer_layer_var(h: ad.Var, w: TransformerLayerWeights, n_heads: int,
                          mask: np.ndarray | None) -> ad.Var:
    """Post-layer-norm transformer layer: attention and GELU feed-forward."""
    pv = ad.param_var
    ctx = masked_attention_var(h, pv(w.wq), pv(w.wk), pv(w.wv), mask, n_heads)
    attn_out = ad.add(ad.matmul(ctx, pv(w.wo)), pv(w.bo))
    h1 = ad.layer_norm(ad.add(h, attn_out), pv(w.ln1_gain), pv(w.ln1_bias))
    inner = ad.gelu(ad.add(ad.matmul(h1, pv(w.w1)), pv(w.b1)))
    ffn_out = ad.add(ad.matmul(inner, pv(w.w2)), pv(w.b2))
    return ad.layer_norm(ad.add(h1, ffn_out), pv(w.ln2_gain), pv(w.ln2_bias))


# ---------------------------------------------------------------------------
# backbone


class Backbone:
    """Frozen transformer encoder with learned positional embeddings."""

    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.hidden_dim
        self.tok_emb = Parameter(
            "backbone.tok_emb", rng.normal(0.0, _INIT_STD, (config.vocab_size, d)),
            frozen=True)
        self.pos_emb = Parameter(
            "backbone.pos_emb", rng.normal(0.0, _INIT_STD, (config.max_len, d)),
            frozen=True)
        self.layers = [
            _init_layer(rng, d, config.ffn_dim, f"backbone.layer{i}", frozen=True)
            for i in range(config.n_layers)
        ]

    def parameters(self) -> list[Parameter]:
        out = [self.tok_emb, self.pos_emb]
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def forward(self, tokens: Sequence[int]) -> list[np.ndarray]:
        """Per-layer hidden states [H0 .. Hn]; H0 is the embedding output."""
        n = len(tokens)
        if n == 0:
            raise DataError("cannot encode an empty token sequence")
        if n > self.config.max_len:
            raise SequenceTooLongError(
                f"sequence of {n} tokens exceeds max_len {self.config.max_len}")
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise DataError("token id outside vocabulary range")
        h = ad.const(self.tok_emb.value[ids, :] + self.pos_emb.value[:n, :])
        states = [h.value]
        for layer in self.layers:
            h = transformer_layer_var(h, layer, self.config.n_heads, mask=None)
            states.append(h.value)
        return states


class BackboneStateCache:
    """Memoized backbone states keyed by the token sequence.

    The backbone is frozen, so cached states stay valid for the lifetime
    of the model; reuse removes the dominant cost from training loops.
    """

    def __init__(self, backbone: Backbone):
        self.backbone = backbone
        self._states: dict[tuple[int, ...], list[np.ndarray]] = {}

    def states(self, tokens: tuple[int, ...]) -> list[np.ndarray]:
        cached = self._states.get(tokens)
        if cached is None:
            cached = self.backbone.forward(tokens)
            self._states[tokens] = cached
        return cached


# ---------------------------------------------------------------------------
# entity-aware adapter


@dataclass
class AdapterLayerWeights:
    down_w: Parameter
    down_b: Parameter
    blocks: list[TransformerLayerWeights]
    up_w: Parameter
    up_b: Parameter

    def parameters(self) -> list[Parameter]:
        out = [self.down_w, self.down_b]
        for blk in self.blocks:
            out.extend(blk.parameters())
        out.extend([self.up_w, self.up_b])
        return out


class EntityAwareAdapter:
    """Trainable adapter stack attached at selected backbone layers.

    Layer k consumes the backbone state at its position summed with the
    previous adapter layer's output (a zero tensor for the first layer)
    and applies down-projection, `adapter_depth` bottleneck transformer
    layers (the last one entity-masked), up-projection, and a residual
    from the layer input.
    """

    def __init__(self, config: ModelConfig, domain: str, seed: int):
        self.config = config
        self.domain = domain
        rng = np.random.default_rng(seed)
        d, b = config.hidden_dim, config.bottleneck_dim
        self.layers: list[AdapterLayerWeights] = []
        for k in range(len(config.adapter_positions)):
            prefix = f"adapter.{domain}.layer{k}"
            blocks = [
                _init_layer(rng, b, config.adapter_ffn_dim,
                            f"{prefix}.block{i}", frozen=False)
                for i in range(config.adapter_depth)
            ]
            self.layers.append(AdapterLayerWeights(
                down_w=Parameter(f"{prefix}.down_w",
                                 rng.normal(0.0, _INIT_STD, (d, b))),
                down_b=Parameter(f"{prefix}.down_b", np.zeros((1, b))),
                blocks=blocks,
                up_w=Parameter(f"{prefix}.up_w",
                               rng.normal(0.0, _INIT_STD, (b, d))),
                up_b=Parameter(f"{prefix}.up_b", np.zeros((1, d))),
            ))

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def forward_var(self, backbone_states: list[np.ndarray], p_s: int,
                    p_e: int) -> ad.Var:
        cfg = self.config
        seq_len = backbone_states[0].shape[0]
        if not 0 <= p_s < p_e < seq_len:
            raise InvalidSpanError(
                f"span ({p_s}, {p_e}) invalid for sequence length {seq_len}")
        prev: ad.Var | None = None
        for k, pos in enumerate(cfg.adapter_positions):
            inp = ad.const(backbone_states[pos])
            if prev is not None:
                inp = ad.add(inp, prev)
            x = ad.add(ad.matmul(inp, ad.param_var(self.layers[k].down_w)),
                       ad.param_var(self.layers[k].down_b))
            for li in range(1, cfg.adapter_depth + 1):
                mask = entity_mask(li, cfg.adapter_depth, p_s, p_e, seq_len)
                x = transformer_layer_var(x, self.layers[k].blocks[li - 1],
                                          cfg.n_heads, mask)
            y = ad.add(ad.matmul(x, ad.param_var(self.layers[k].up_w)),
                       ad.param_var(self.layers[k].up_b))
            prev = ad.add(y, inp)
        return prev


def adapter_forward(backbone_states: list[np.ndarray],
                    adapter: EntityAwareAdapter, p_s: int, p_e: int) -> np.ndarray:
    """Array-valued adapter output for the given backbone states."""
    return adapter.forward_var(backbone_states, p_s, p_e).value


# ---------------------------------------------------------------------------
# aggregation


class Aggregator:
    """Pools marker-position features into one unit-norm vector."""

    def __init__(self, config: ModelConfig, domain: str, seed: int):
        self.config = config
        self.domain = domain
        rng = np.random.default_rng(seed)
        self.w = Parameter(f"aggregator.{domain}.w",
                           rng.normal(0.0, _INIT_STD,
                                      (4 * config.hidden_dim, config.agg_dim)))
        self.b = Parameter(f"aggregator.{domain}.b", np.zeros((1, config.agg_dim)))

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


def aggregate_pretrain_var(h_p: np.ndarray, h_a: ad.Var, p_s: int, p_e: int,
                           agg: Aggregator) -> ad.Var:
    """Concat backbone and adapter features, pool at the marker rows,
    project, and normalize to the unit sphere."""
    if h_a is None:
        raise DataError("pre-training pooling needs a single adapter output")
    if h_p.shape != h_a.shape:
        raise DimensionError(
            f"backbone/adapter feature shapes differ: {h_p.shape} vs {h_a.shape}")
    stacked = ad.concat_cols([ad.const(h_p), h_a])
    pooled = ad.concat_cols([ad.slice_rows(stacked, p_s, p_s + 1),
                             ad.slice_rows(stacked, p_e, p_e + 1)])
    projected = ad.add(ad.matmul(pooled, ad.param_var(agg.w)), ad.param_var(agg.b))
    return ad.l2_normalize_rows(projected)


def aggregate_pretrain(h_p: np.ndarray, h_a: np.ndarray, p_s: int, p_e: int,
                       agg: Aggregator) -> np.ndarray:
    v = aggregate_pretrain_var(h_p, ad.const(h_a), p_s, p_e, agg).value
    return v


def aggregate_finetune(h_p: np.ndarray, adapter_outputs: list[np.ndarray]) -> np.ndarray:
    """Feature-wise concat: backbone first, adapters in attachment order."""
    if not adapter_outputs:
        raise DataError("at least one adapter output is required")
    for out in adapter_outputs:
        if out.shape != h_p.shape:
            raise DimensionError("adapter output shape differs from backbone")
    return np.concatenate([h_p, *adapter_outputs], axis=1)


def aggregate_feature_extractor(h_p: np.ndarray, h_a: np.ndarray) -> np.ndarray:
    """Backbone features plus the row-normalized adapter features."""
    from .tensor import l2_normalize_rows
    if h_p.shape != h_a.shape:
        raise DimensionError("adapter output shape differs from backbone")
    return h_p + l2_normalize_rows(h_a)


# ---------------------------------------------------------------------------
# composition


class ComposedModel:
    """A frozen backbone with independent adapters sharing its states."""

    def __init__(self, backbone: Backbone, adapters: list[EntityAwareAdapter]):
        sig = backbone.config.adapter_signature()
        for adapter in adapters:
            if adapter.config.adapter_signature() != sig:
                raise IncompatibleConfigError(
                    f"adapter {adapter.domain!r} built for a different configuration")
        self.backbone = backbone
        self.adapters = list(adapters)
        self.cache = BackboneStateCache(backbone)

    def forward(self, tokens: tuple[int, ...], p_s: int,
                p_e: int) -> tuple[np.ndarray, list[np.ndarray]]:
        states = self.cache.states(tuple(tokens))
        h_p = states[-1]
        outputs = [adapter_forward(states, a, p_s, p_e) for a in self.adapters]
        return h_p, outputs


def compose_adapters(backbone: Backbone,
                     adapters: list[EntityAwareAdapter]) -> ComposedModel:
    return ComposedModel(backbone, adapters)


# ---------------------------------------------------------------------------
# full bundle (backbone + per-domain adapter/aggregator pairs)


@dataclass
class EncoderBundle:
    """Everything a checkpoint holds: one backbone, ordered domain
    adapters, and the matching pooling heads."""

    config: ModelConfig
    backbone: Backbone
    adapters: list[EntityAwareAdapter] = field(default_factory=list)
    aggregators: dict[str, Aggregator] = field(default_factory=dict)

    @property
    def domains(self) -> list[str]:
        return [a.domain for a in self.adapters]

    def adapter_for(self, domain: str) -> EntityAwareAdapter:
        for adapter in self.adapters:
            if adapter.domain == domain:
                return adapter
        raise DataError(f"no adapter for domain {domain!r}; have {self.domains}")

    def aggregator_for(self, domain: str) -> Aggregator:
        if domain not in self.aggregators:
            raise DataError(f"no aggregator for domain {domain!r}")
        return self.aggregators[domain]

    def parameters(self) -> list[Parameter]:
        out = self.backbone.parameters()
        for adapter in self.adapters:
            out.extend(adapter.parameters())
        for domain in self.domains:
            if domain in self.aggregators:
                out.extend(self.aggregators[domain].parameters())
        return out
