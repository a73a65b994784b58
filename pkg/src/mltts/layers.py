"""Embedding tables, pointwise convolutions, transformer blocks and the
language-conditioned parameter generator for the text encoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autograd as ag
from .autograd import ContractError, Tensor


class ConfigurationError(ValueError):
    pass


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class EmbeddingTable:
    def __init__(self, num_entries: int, dim: int, rng: np.random.Generator | None = None, weights=None):
        if weights is None:
            weights = uniform_init(rng, (num_entries, dim), dim)
        self.weights = ag.parameter(weights)
        if self.weights.shape != (num_entries, dim):
            raise ContractError(f"embedding weights must be [{num_entries} x {dim}], got {self.weights.shape}")

    @property
    def num_entries(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def __call__(self, ids) -> Tensor:
        return embedding_lookup(self, ids)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weights": self.weights}


def embedding_lookup(table: EmbeddingTable, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.intp)
    for i in ids.reshape(-1):
        if not 0 <= i < table.num_entries:
            raise ContractError(f"embedding id {int(i)} out of range for table of size {table.num_entries}")
    return ag.take(table.weights, ids)


class PointwiseConv:
    """Kernel-size-1 convolution: the same affine map at every position."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator | None = None):
        self.weight = ag.parameter(uniform_init(rng, (out_channels, in_channels), in_channels))
        self.bias = ag.parameter(uniform_init(rng, (out_channels,), in_channels))

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return pointwise_conv_forward(self, x)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


def pointwise_conv_forward(layer: PointwiseConv, x) -> Tensor:
    """``out[t] = weight @ x[t] + bias``; accepts ``[len x in]`` or a single ``[in]`` vector."""
    x = ag.as_tensor(x)
    if x.shape[-1] != layer.in_channels:
        raise ContractError(f"pointwise conv expects {layer.in_channels} channels, got {x.shape[-1]}")
    return x @ layer.weight.T + layer.bias


class Conv1d:
    """Same-padded temporal convolution with odd kernel size."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator):
        fan_in = in_channels * kernel_size
        self.weight = ag.parameter(uniform_init(rng, (kernel_size, in_channels, out_channels), fan_in))
        self.bias = ag.parameter(uniform_init(rng, (out_channels,), fan_in))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv1d(x, self.weight, self.bias)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class LayerNorm:
    def __init__(self, dim: int):
        self.gamma = ag.parameter(np.ones(dim))
        self.beta = ag.parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gamma, self.beta)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


Linear = PointwiseConv


ACTIVATIONS = {"relu": ag.relu, "tanh": ag.tanh}


# ----------------------------------------------------------------------
# text encoder
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class TextEncoderSpec:
    num_blocks: int = 2
    hidden_dim: int = 32
    num_heads: int = 2
    ffn_dim: int = 64
    window: int = 4
    activation: str = "relu"

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise ConfigurationError(
                f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads


def encoder_layout(spec: TextEncoderSpec) -> dict[str, tuple[tuple[int, ...], int]]:
    """Name -> (shape, offset) for every transformer-block tensor."""
    h, d, f = spec.hidden_dim, spec.head_dim, spec.ffn_dim
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for b in range(spec.num_blocks):
        p = f"block{b}"
        shapes += [(f"{p}.ln1.gamma", (h,)), (f"{p}.ln1.beta", (h,))]
        for k in range(spec.num_heads):
            hp = f"{p}.head{k}"
            shapes += [(f"{hp}.wq", (h, d)), (f"{hp}.wk", (h, d)), (f"{hp}.wv", (h, d)), (f"{hp}.wo", (d, h))]
        shapes += [
            (f"{p}.rel_bias", (spec.num_heads, 2 * spec.window + 1)),
            (f"{p}.ln2.gamma", (h,)),
            (f"{p}.ln2.beta", (h,)),
            (f"{p}.ffn.w1", (h, f)),
            (f"{p}.ffn.b1", (f,)),
            (f"{p}.ffn.w2", (f, h)),
            (f"{p}.ffn.b2", (h,)),
        ]
    layout = {}
    offset = 0
    for name, shape in shapes:
        layout[name] = (shape, offset)
        offset += int(np.prod(shape))
    return layout


def layout_size(layout: Mapping[str, tuple[tuple[int, ...], int]]) -> int:
    return sum(int(np.prod(shape)) for shape, _ in layout.values())


def init_encoder_vector(spec: TextEncoderSpec, rng: np.random.Generator) -> np.ndarray:
    """Flat initial values matching :func:`encoder_layout`: unit LayerNorm gains,
    zero relative bias, uniform(+-1/sqrt(fan_in)) elsewhere."""
    layout = encoder_layout(spec)
    out = np.empty(layout_size(layout))
    for name, (shape, off) in layout.items():
        n = int(np.prod(shape))
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            vals = np.ones(n)
        elif leaf in ("beta", "rel_bias"):
            vals = np.zeros(n)
        elif leaf == "b1":
            vals = uniform_init(rng, n, spec.hidden_dim)
        elif leaf == "b2":
            vals = uniform_init(rng, n, spec.ffn_dim)
        else:
            vals = uniform_init(rng, n, shape[0])
        out[off:off + n] = vals
    return out


class GeneratedParameters:
    """Flat generated vector plus a name -> (shape, offset) layout."""

    def __init__(self, flat: Tensor, layout: Mapping[str, tuple[tuple[int, ...], int]]):
        if flat.shape != (layout_size(layout),):
            raise ConfigurationError(
                f"flat parameter vector has {flat.size} entries, layout needs {layout_size(layout)}"
            )
        self.flat = flat
        self.layout = dict(layout)
        self._cache: dict[str, Tensor] = {}

    def __getitem__(self, name: str) -> Tensor:
        t = self._cache.get(name)
        if t is None:
            shape, off = self.layout[name]
            t = ag.reshape(self.flat[off:off + int(np.prod(shape))], shape)
            self._cache[name] = t
        return t

    def __contains__(self, name: str) -> bool:
        return name in self.layout


class ParameterGenerator:
    """Affine map from a language embedding to the flat encoder parameter vector."""

    def __init__(self, spec: TextEncoderSpec, embed_dim: int, rng: np.random.Generator):
        self.spec = spec
        self.layout = encoder_layout(spec)
        n = layout_size(self.layout)
        self.weight = ag.parameter(uniform_init(rng, (n, embed_dim), embed_dim))
        self.base = ag.parameter(init_encoder_vector(spec, rng))

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.base": self.base}


def generate_encoder_params(generator: ParameterGenerator, language_embedding) -> GeneratedParameters:
    e = ag.as_tensor(language_embedding)
    if e.shape != (generator.weight.shape[1],):
        raise ContractError(
            f"language embedding must have width {generator.weight.shape[1]}, got shape {e.shape}"
        )
    return GeneratedParameters(generator.weight @ e + generator.base, generator.layout)


def relative_index(length: int, window: int) -> np.ndarray:
    pos = np.arange(length)
    return np.clip(pos[None, :] - pos[:, None], -window, window) + window


def transformer_block_forward(params, x, spec: TextEncoderSpec, block: int = 0) -> Tensor:
    """Pre-norm self-attention with clipped relative-position bias, then a
    position-wise feed-forward layer; both wrapped in residual connections."""
    x = ag.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != spec.hidden_dim:
        raise ContractError(f"transformer block expects width {spec.hidden_dim}, got shape {x.shape}")
    p = f"block{block}"
    act = ACTIVATIONS[spec.activation]
    length = x.shape[0]
    rel = relative_index(length, spec.window)
    scale = 1.0 / np.sqrt(spec.head_dim)

    y = ag.layer_norm(x, params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"])
    rel_bias = params[f"{p}.rel_bias"]
    attn_out = None
    for k in range(spec.num_heads):
        hp = f"{p}.head{k}"
        q = y @ params[f"{hp}.wq"]
        kk = y @ params[f"{hp}.wk"]
        v = y @ params[f"{hp}.wv"]
        logits = (q @ kk.T) * scale + ag.take(rel_bias[k], rel)
        head = ag.softmax(logits, axis=-1) @ v
        contrib = head @ params[f"{hp}.wo"]
        attn_out = contrib if attn_out is None else attn_out + contrib
    x = x + attn_out

    y = ag.layer_norm(x, params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"])
    ff = act(y @ params[f"{p}.ffn.w1"] + params[f"{p}.ffn.b1"]) @ params[f"{p}.ffn.w2"] + params[f"{p}.ffn.b2"]
    return x + ff


class TextEncoder:
    """Shared phoneme table, language-generated transformer blocks, a shared
    output LayerNorm, and an additive language injection at the output."""

    def __init__(self, spec: TextEncoderSpec, num_phonemes: int, embed_dim: int, rng: np.random.Generator):
        self.spec = spec
        self.phonemes = EmbeddingTable(num_phonemes, spec.hidden_dim, rng)
        self.generator = ParameterGenerator(spec, embed_dim, rng)
        self.final_norm = LayerNorm(spec.hidden_dim)
        self.lang_inject = PointwiseConv(embed_dim, spec.hidden_dim, rng)

    def __call__(self, phoneme_ids, language_embedding, generated: GeneratedParameters | None = None) -> Tensor:
        if generated is None:
            generated = generate_encoder_params(self.generator, language_embedding)
        return text_encoder_forward(self, generated, phoneme_ids, language_embedding)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        out.update(self.phonemes.named_parameters(f"{prefix}.phonemes"))
        out.update(self.generator.named_parameters(f"{prefix}.generator"))
        out.update(self.final_norm.named_parameters(f"{prefix}.final_norm"))
        out.update(self.lang_inject.named_parameters(f"{prefix}.lang_inject"))
        return out


def text_encoder_forward(
    encoder: TextEncoder, generated: GeneratedParameters, phoneme_ids: Sequence[int], language_embedding
) -> Tensor:
    spec = encoder.spec
    if generated.layout != encoder.generator.layout:
        raise ConfigurationError("generated parameter layout does not match the encoder spec")
    x = embedding_lookup(encoder.phonemes, phoneme_ids)
    for b in range(spec.num_blocks):
        x = transformer_block_forward(generated, x, spec, b)
    x = encoder.final_norm(x)
    return x + pointwise_conv_forward(encoder.lang_inject, language_embedding)
