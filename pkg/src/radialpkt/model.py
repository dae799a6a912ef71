"""Encoder-decoder Transformer that predicts a block of unacquired projection tokens.

One model serves one output block ``b`` in {1, 2, 3}. The encoder sees the
``L_in`` acquired tokens at relative spoke indices ``0 .. L_in-1``; the
decoder emits tokens for relative indices ``b*L_in .. (b+1)*L_in - 1``. The
only index information entering the network is the sinusoidal encoding
added to the (projected) tokens.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from . import numerics as nx


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 256
    n_stacks: int = 2
    n_heads: int = 4
    d_k: int = 64
    d_v: int = 64
    d_ff: int = 1024
    dropout: float = 0.1
    L_in: int = 25
    block: int = 1
    index_base: float = 10000.0

    def __post_init__(self):
        if self.n_heads * self.d_k != self.d_model:
            raise ValueError(f"n_heads * d_k = {self.n_heads * self.d_k} must equal d_model = {self.d_model}")
        if self.d_v != self.d_k:
            raise ValueError("d_v must equal d_k")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.block not in (1, 2, 3):
            raise ValueError(f"block must be 1, 2 or 3, got {self.block}")
        if self.d_model % 2:
            raise ValueError("d_model must be even")
        if self.L_in < 1 or self.n_stacks < 1 or self.d_ff < 1:
            raise ValueError("L_in, n_stacks and d_ff must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def output_indices(self) -> np.ndarray:
        return self.block * self.L_in + np.arange(self.L_in)


FULL_SCALE_CONFIG = dict(d_model=1024, n_stacks=6, n_heads=16, d_k=64, d_v=64, d_ff=4096, dropout=0.1, L_in=100)


def positional_encoding(indices, d_model: int, base: float = 10000.0, dtype=torch.float64) -> torch.Tensor:
    """Sinusoidal encoding rows for spoke indices: sin on even, cos on odd columns."""
    pos = torch.as_tensor(np.asarray(indices, dtype=np.float64)).reshape(-1, 1)
    two_j = torch.arange(0, d_model, 2, dtype=torch.float64)
    angle = pos / base ** (two_j / d_model)
    pe = torch.zeros(pos.shape[0], d_model, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle)
    return pe.to(dtype)


class LayerNorm(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(d))
        self.bias = nn.Parameter(torch.zeros(d))

    def forward(self, x):
        return nx.layer_norm(x, self.gain, self.bias)


class MultiHeadAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.h, self.d_k, self.d_v = cfg.n_heads, cfg.d_k, cfg.d_v
        self.w_q = nn.Linear(cfg.d_model, cfg.n_heads * cfg.d_k)
        self.w_k = nn.Linear(cfg.d_model, cfg.n_heads * cfg.d_k)
        self.w_v = nn.Linear(cfg.d_model, cfg.n_heads * cfg.d_v)
        self.w_o = nn.Linear(cfg.n_heads * cfg.d_v, cfg.d_model)

    def forward(self, q_in, kv_in, mask=None):
        b, lq, _ = q_in.shape
        lk = kv_in.shape[1]
        q = self.w_q(q_in).view(b, lq, self.h, self.d_k).transpose(1, 2)
        k = self.w_k(kv_in).view(b, lk, self.h, self.d_k).transpose(1, 2)
        v = self.w_v(kv_in).view(b, lk, self.h, self.d_v).transpose(1, 2)
        scores = nx.matmul(q, nx.transpose(k)) / math.sqrt(self.d_k)
        attn = nx.softmax(scores, mask)
        heads = nx.matmul(attn, v).transpose(1, 2).reshape(b, lq, self.h * self.d_v)
        return self.w_o(heads)


class FeedForward(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.w1 = nn.Linear(cfg.d_model, cfg.d_ff)
        self.w2 = nn.Linear(cfg.d_ff, cfg.d_model)

    def forward(self, x):
        return self.w2(nx.relu(self.w1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.rate = cfg.dropout
        self.attn = MultiHeadAttention(cfg)
        self.ff = FeedForward(cfg)
        self.norm1 = LayerNorm(cfg.d_model)
        self.norm2 = LayerNorm(cfg.d_model)

    def forward(self, x):
        x = self.norm1(x + nx.dropout(self.attn(x, x), self.rate, self.training))
        return self.norm2(x + nx.dropout(self.ff(x), self.rate, self.training))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.rate = cfg.dropout
        self.self_attn = MultiHeadAttention(cfg)
        self.cross_attn = MultiHeadAttention(cfg)
        self.ff = FeedForward(cfg)
        self.norm1 = LayerNorm(cfg.d_model)
        self.norm2 = LayerNorm(cfg.d_model)
        self.norm3 = LayerNorm(cfg.d_model)

    def forward(self, y, memory, mask):
        y = self.norm1(y + nx.dropout(self.self_attn(y, y, mask), self.rate, self.training))
        y = self.norm2(y + nx.dropout(self.cross_attn(y, memory), self.rate, self.training))
        return self.norm3(y + nx.dropout(self.ff(y), self.rate, self.training))


def causal_mask(n: int) -> torch.Tensor:
    return torch.tril(torch.ones(n, n, dtype=torch.bool))


class PKTransformer(nn.Module):
    """Projection-token Transformer for one output block.

    Inputs and outputs are token matrices of shape ``(batch, L_in, d_model)``.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.in_proj = nn.Linear(d, d)
        self.start = nn.Parameter(torch.randn(d) * 0.02)
        self.encoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_stacks))
        self.decoder = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_stacks))
        self.head = nn.Linear(d, d)
        self.register_buffer("pe_src", positional_encoding(np.arange(cfg.L_in), d, cfg.index_base, torch.float32),
                             persistent=False)
        self.register_buffer("pe_tgt", positional_encoding(cfg.output_indices, d, cfg.index_base, torch.float32),
                             persistent=False)

    def _check(self, x, what):
        if x.dim() != 3 or x.shape[-1] != self.cfg.d_model:
            raise nx.ShapeError(f"{what}: expected (batch, L, {self.cfg.d_model}), got {tuple(x.shape)}")

    def encode(self, src: torch.Tensor, indices=None) -> torch.Tensor:
        """Encoder memory; ``indices`` overrides the default relative indices ``0 .. L_in-1``."""
        self._check(src, "src")
        if src.shape[1] != self.cfg.L_in:
            raise nx.ShapeError(f"src length {src.shape[1]} != L_in {self.cfg.L_in}")
        pe = self.pe_src if indices is None else positional_encoding(
            indices, self.cfg.d_model, self.cfg.index_base, src.dtype)
        x = nx.dropout(self.in_proj(src) + pe, self.cfg.dropout, self.training)
        for layer in self.encoder:
            x = layer(x)
        return x

    def decoder_inputs(self, prev_tokens: torch.Tensor) -> torch.Tensor:
        """Start token followed by projected previous tokens, plus output-index encodings."""
        b, t, _ = prev_tokens.shape
        start = self.start.expand(b, 1, -1)
        y = torch.cat([start, self.in_proj(prev_tokens)], dim=1) if t else start
        return y + self.pe_tgt[: t + 1]

    def decode(self, memory: torch.Tensor, prev_tokens: torch.Tensor) -> torch.Tensor:
        """Predictions for decoder positions ``0 .. len(prev_tokens)``."""
        y = nx.dropout(self.decoder_inputs(prev_tokens), self.cfg.dropout, self.training)
        mask = causal_mask(y.shape[1]).to(y.device)
        for layer in self.decoder:
            y = layer(y, memory, mask)
        return self.head(y)

    def forward(self, src: torch.Tensor, tgt: torch.Tensor) -> torch.Tensor:
        """Teacher-forced pass: position ``t`` sees ground-truth tokens ``< t``."""
        self._check(tgt, "tgt")
        return self.decode(self.encode(src), tgt[:, :-1])

    def decode_step(self, memory: torch.Tensor, generated: torch.Tensor) -> torch.Tensor:
        """Next-token prediction given the tokens generated so far."""
        return self.decode(memory, generated)[:, -1]

    @torch.no_grad()
    def predict(self, src: torch.Tensor) -> torch.Tensor:
        """Free-running generation of ``L_in`` tokens, feeding predictions back."""
        memory = self.encode(src)
        out = src.new_zeros(src.shape[0], 0, self.cfg.d_model)
        for _ in range(self.cfg.L_in):
            nxt = nx.check_finite(self.decode_step(memory, out), "generated token")
            out = torch.cat([out, nxt[:, None]], dim=1)
        return out


def parameter_count(cfg: ModelConfig) -> int:
    d, hk, hv = cfg.d_model, cfg.n_heads * cfg.d_k, cfg.n_heads * cfg.d_v
    attn = 2 * (d * hk + hk) + (d * hv + hv) + (hv * d + d)
    ff = d * cfg.d_ff + cfg.d_ff + cfg.d_ff * d + d
    ln = 2 * d
    enc = attn + ff + 2 * ln
    dec = 2 * attn + ff + 3 * ln
    return (d * d + d) + d + cfg.n_stacks * (enc + dec) + (d * d + d)
