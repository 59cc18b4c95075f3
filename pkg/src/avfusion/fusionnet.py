"""Dual-branch Transformer with safe cross-attention and gated fusion."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .numcore import affine, layer_norm, masked_softmax


class ConfigError(ValueError):
    pass


@dataclass
class FusionConfig:
    d_v: int
    d_a: int
    d_model: int = 256
    layers: int = 3
    heads: int = 4
    ff_dim: int | None = None  # defaults to 4 * d_model
    head_hidden: int | None = None  # defaults to d_model
    attn_dropout: float = 0.1
    residual_dropout: float = 0.1
    p: float = 0.10
    n_classes: int = 8

    def __post_init__(self):
        if self.ff_dim is None:
            self.ff_dim = 4 * self.d_model
        if self.head_hidden is None:
            self.head_hidden = self.d_model
        self.validate()

    def validate(self) -> None:
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even for sinusoidal encoding, got {self.d_model}")
        if self.heads < 1 or self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.layers < 0:
            raise ConfigError("layers must be >= 0")
        for name in ("attn_dropout", "residual_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError("p must lie in [0, 1]")
        if min(self.d_v, self.d_a, self.ff_dim, self.head_hidden, self.n_classes) < 1:
            raise ConfigError("dimensions must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def positional_encoding(W: int, d_model: int) -> torch.Tensor:
    """Sinusoidal table: sin on even channels, cos on odd ones."""
    if d_model % 2:
        raise ConfigError(f"d_model must be even, got {d_model}")
    pos = np.arange(W, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.zeros((W, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return torch.from_numpy(pe)


def dropout(x: torch.Tensor, rate: float, train: bool, gen: torch.Generator | None) -> torch.Tensor:
    if not train or rate == 0.0:
        return x
    keep = torch.rand(x.shape, generator=gen, dtype=x.dtype) >= rate
    return x * keep / (1.0 - rate)


class Affine(nn.Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_in, d_out))
        self.bias = nn.Parameter(torch.zeros(d_out)) if bias else None

    def reset(self, gen: torch.Generator) -> None:
        bound = 1.0 / math.sqrt(self.weight.shape[0])
        with torch.no_grad():
            self.weight.uniform_(-bound, bound, generator=gen)
            if self.bias is not None:
                self.bias.uniform_(-bound, bound, generator=gen)

    def forward(self, x):
        return affine(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(d))
        self.shift = nn.Parameter(torch.zeros(d))

    def forward(self, x):
        return layer_norm(x, self.gain, self.shift)


class MultiHeadAttention(nn.Module):
    """Masked multi-head attention that returns an exact zero output for any
    sample whose key set is entirely masked.

    The key projection has no bias: a key bias only shifts every score in a row
    by the same amount and cannot change the softmax.
    """

    def __init__(self, d_model: int, heads: int, attn_dropout: float):
        super().__init__()
        self.heads = heads
        self.attn_dropout = attn_dropout
        self.q = Affine(d_model, d_model)
        self.k = Affine(d_model, d_model, bias=False)
        self.v = Affine(d_model, d_model)
        self.o = Affine(d_model, d_model)

    def forward(self, query, keyval, kv_valid, train=False, gen=None):
        B, Wq, d = query.shape
        Wk = keyval.shape[1]
        h = self.heads
        dh = d // h
        q = self.q(query).view(B, Wq, h, dh).transpose(1, 2)
        k = self.k(keyval).view(B, Wk, h, dh).transpose(1, 2)
        v = self.v(keyval).view(B, Wk, h, dh).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        kv_valid = kv_valid.to(torch.bool)
        empty = ~kv_valid.any(dim=-1)
        # unmask the first key of empty samples so the softmax is defined; their output is zeroed below
        mask = kv_valid.clone()
        mask[:, 0] |= empty
        probs = masked_softmax(scores, mask[:, None, :])
        probs = dropout(probs, self.attn_dropout, train, gen)
        ctx = (probs @ v).transpose(1, 2).reshape(B, Wq, d)
        out = self.o(ctx)
        if bool(empty.any()):
            out = torch.where(empty[:, None, None], torch.zeros_like(out), out)
        return out


class EncoderLayer(nn.Module):
    """Pre-norm self-attention + GELU feed-forward, residual around each."""

    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.norm1 = LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.attn_dropout)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ff1 = Affine(cfg.d_model, cfg.ff_dim)
        self.ff2 = Affine(cfg.ff_dim, cfg.d_model)
        self.rate = cfg.residual_dropout

    def forward(self, x, key_valid, train=False, gen=None):
        y = self.norm1(x)
        x = x + dropout(self.attn(y, y, key_valid, train, gen), self.rate, train, gen)
        y = self.ff2(F.gelu(self.ff1(self.norm2(x))))
        return x + dropout(y, self.rate, train, gen)


class Encoder(nn.Module):
    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))

    def forward(self, x, key_valid, train=False, gen=None):
        for layer in self.layers:
            x = layer(x, key_valid, train, gen)
        return x


class CrossAttention(nn.Module):
    """``layer_norm(Q + dropout(attn(Q, KV)))``; reduces to ``layer_norm(Q)`` when no key is valid."""

    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.attn_dropout)
        self.norm = LayerNorm(cfg.d_model)
        self.rate = cfg.residual_dropout

    def forward(self, q_seq, kv_seq, kv_valid, train=False, gen=None):
        out = self.attn(q_seq, kv_seq, kv_valid, train, gen)
        return self.norm(q_seq + dropout(out, self.rate, train, gen))


class Gate(nn.Module):
    def __init__(self, d_model: int):
        super().__init__()
        self.proj = Affine(2 * d_model, d_model)

    def weights(self, h, h_cross):
        return torch.sigmoid(self.proj(torch.cat([h, h_cross], dim=-1)))

    def forward(self, h, h_cross):
        g = self.weights(h, h_cross)
        return g * h + (1.0 - g) * h_cross


class Head(nn.Module):
    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.fc1 = Affine(2 * cfg.d_model, cfg.head_hidden)
        self.fc2 = Affine(cfg.head_hidden, cfg.n_classes)

    def forward(self, f_v, f_a):
        return self.fc2(F.gelu(self.fc1(torch.cat([f_v, f_a], dim=-1))))


class FusionModel(nn.Module):
    def __init__(self, cfg: FusionConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.proj_v = Affine(cfg.d_v, cfg.d_model)
        self.proj_a = Affine(cfg.d_a, cfg.d_model)
        self.enc_v = Encoder(cfg)
        self.enc_a = Encoder(cfg)
        self.cross_va = CrossAttention(cfg)  # queries visual, keys/values audio
        self.cross_av = CrossAttention(cfg)  # queries audio, keys/values visual
        self.gate_v = Gate(cfg.d_model)
        self.gate_a = Gate(cfg.d_model)
        self.head = Head(cfg)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, Affine):
                m.reset(gen)
        with torch.no_grad():
            for g in (self.gate_v, self.gate_a):
                g.proj.bias.zero_()

    def project(self, v_in, a_in):
        pe = positional_encoding(v_in.shape[1], self.cfg.d_model).to(v_in.dtype)
        return self.proj_v(v_in) + pe, self.proj_a(a_in) + pe

    def forward(self, v_in, a_in, frame_mask=None, v_missing=None, train=False, gen=None):
        """Per-frame logits ``(B, W, n_classes)``.

        ``frame_mask`` flags unpadded frames, ``v_missing`` flags windows
        without visual input; both default to all-present.
        """
        B, W, _ = v_in.shape
        if frame_mask is None:
            frame_mask = torch.ones(B, W, dtype=torch.bool)
        if v_missing is None:
            v_missing = torch.zeros(B, dtype=torch.bool)
        frame_mask = frame_mask.to(torch.bool)
        a_valid = frame_mask
        v_valid = frame_mask & ~v_missing.to(torch.bool)[:, None]
        hv0, ha0 = self.project(v_in, a_in)
        hv = self.enc_v(hv0, v_valid, train, gen)
        ha = self.enc_a(ha0, a_valid, train, gen)
        h_va = self.cross_va(hv, ha, a_valid, train, gen)
        h_av = self.cross_av(ha, hv, v_valid, train, gen)
        f_v = self.gate_v(hv, h_va)
        f_a = self.gate_a(ha, h_av)
        return self.head(f_v, f_a)

    def forward_batch(self, batch: dict, train=False, gen=None) -> torch.Tensor:
        dtype = next(self.parameters()).dtype
        return self(
            torch.as_tensor(batch["v_in"], dtype=dtype),
            torch.as_tensor(batch["a_in"], dtype=dtype),
            torch.as_tensor(batch["frame_mask"]),
            torch.as_tensor(batch["v_missing"]),
            train=train,
            gen=gen,
        )


def modality_dropout(batch: dict, p: float, rng: np.random.Generator, train: bool = True) -> dict:
    """Zero the visual window of each sample independently with probability ``p``."""
    if not train or p <= 0.0:
        return batch
    hit = rng.random(len(batch["v_missing"])) < p
    if not hit.any():
        return batch
    out = dict(batch)
    v = batch["v_in"].copy()
    v[hit] = 0.0
    out["v_in"] = v
    out["v_missing"] = batch["v_missing"] | hit
    return out
