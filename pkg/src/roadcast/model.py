"""The forecasting network: multi-scale temporal fusion, fused multi-graph
convolution, stacked spatial-temporal transformer blocks, convolutional head.

Tensors flow as (B, C, N, L): batch, channels, nodes, time steps.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig

ATTN_BIAS_EPS = 1e-6


class ForwardError(RuntimeError):
    """Non-finite values detected during the forward pass."""


def _check_finite(name: str, t: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise ForwardError(f"non-finite values after {name}")
    return t


# ---------------------------------------------------------------------------
# Graph preparation (numpy; precomputed once per dataset)
# ---------------------------------------------------------------------------

def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Symmetric renormalization with self-loops: D^-1/2 (A + I) D^-1/2."""
    a = np.asarray(a, dtype=np.float64)
    if (a < 0).any():
        raise ValueError("adjacency must be nonnegative; clamp correlations first")
    a_hat = a + np.eye(a.shape[0])
    d = a_hat.sum(axis=1)
    d_inv_sqrt = 1.0 / np.sqrt(d)
    return d_inv_sqrt[:, None] * a_hat * d_inv_sqrt[None, :]


def normalize_adjacency_torch(a: torch.Tensor) -> torch.Tensor:
    """Differentiable D^-1/2 (A + I) D^-1/2 for strictly nonnegative inputs."""
    a_hat = a + torch.eye(a.shape[0], dtype=a.dtype, device=a.device)
    d_inv_sqrt = a_hat.sum(dim=1).rsqrt()
    return d_inv_sqrt[:, None] * a_hat * d_inv_sqrt[None, :]


def prepare_correlation(a_c: np.ndarray) -> np.ndarray:
    """Clamp negative correlations to 0 and zero the diagonal before
    renormalization (self-loops are re-added there)."""
    a = np.clip(np.asarray(a_c, dtype=np.float64), 0.0, None)
    np.fill_diagonal(a, 0.0)
    return a


def fusion_weights(w_r: torch.Tensor, w_c: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Softmax over the two scalars; the pair sums to 1 exactly because the
    second weight is computed as the complement of the first."""
    first = torch.softmax(torch.stack([w_r, w_c]), dim=0)[0]
    return first, 1.0 - first


def fuse_graphs(a_hat_r: torch.Tensor, a_hat_c: torch.Tensor,
                w_r: torch.Tensor, w_c: torch.Tensor) -> torch.Tensor:
    """Convex combination of the two normalized graphs with softmax weights."""
    p_r, p_c = fusion_weights(w_r, w_c)
    return p_r * a_hat_r + p_c * a_hat_c


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------

class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention over the last-but-one axis of (..., L, C)."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        if channels % heads != 0:
            raise ValueError("channels must be divisible by heads")
        self.heads = heads
        self.d_head = channels // heads
        self.w_q = nn.Linear(channels, channels, bias=False)
        self.w_k = nn.Linear(channels, channels, bias=False)
        self.w_v = nn.Linear(channels, channels, bias=False)
        self.w_o = nn.Linear(channels, channels, bias=False)

    def forward(self, x: torch.Tensor, bias: torch.Tensor | None = None,
                return_weights: bool = False):
        *lead, L, C = x.shape
        def split(t):
            return t.reshape(*lead, L, self.heads, self.d_head).transpose(-3, -2)
        q, k, v = split(self.w_q(x)), split(self.w_k(x)), split(self.w_v(x))
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        if bias is not None:
            logits = logits + bias
        weights = torch.softmax(logits, dim=-1)
        out = weights @ v
        out = out.transpose(-3, -2).reshape(*lead, L, C)
        out = self.w_o(out)
        if return_weights:
            return out, weights
        return out


def attend_over_time(attn: MultiHeadAttention, x: torch.Tensor,
                     return_weights: bool = False):
    """Apply attention along the time axis of (B, C, N, L), per node."""
    tokens = x.permute(0, 2, 3, 1)  # B, N, L, C
    out = attn(tokens, return_weights=return_weights)
    if return_weights:
        out, w = out
        return out.permute(0, 3, 1, 2), w
    return out.permute(0, 3, 1, 2)


def attend_over_nodes(attn: MultiHeadAttention, x: torch.Tensor,
                      bias: torch.Tensor | None = None,
                      return_weights: bool = False):
    """Apply attention along the node axis of (B, C, N, L), per time step."""
    tokens = x.permute(0, 3, 2, 1)  # B, L, N, C
    out = attn(tokens, bias=bias, return_weights=return_weights)
    if return_weights:
        out, w = out
        return out.permute(0, 3, 2, 1), w
    return out.permute(0, 3, 2, 1)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class TemporalFusion(nn.Module):
    """Fuse recent/daily/weekly windows: attention over the concatenated
    recent+daily and recent+weekly sequences, mixed with a residual of the
    embedded recent window, aggregated by a 1x1 convolution."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.embed_size
        self.t_r = cfg.t_r
        self.attn_rd = MultiHeadAttention(c, cfg.heads_fusion_rd)
        self.attn_rw = MultiHeadAttention(c, cfg.heads_fusion_rw)
        self.mix_rd = nn.Conv2d(c, c, 1, bias=False)
        self.mix_rw = nn.Conv2d(c, c, 1, bias=False)
        self.out_conv = nn.Conv2d(c, c, 1)

    def forward(self, e_r: torch.Tensor, e_d: torch.Tensor, e_w: torch.Tensor) -> torch.Tensor:
        m_rd = attend_over_time(self.attn_rd, torch.cat([e_r, e_d], dim=-1))[..., :self.t_r]
        m_rw = attend_over_time(self.attn_rw, torch.cat([e_r, e_w], dim=-1))[..., :self.t_r]
        return self.out_conv(self.mix_rd(m_rd) + self.mix_rw(m_rw) + e_r)


class GraphConvolution(nn.Module):
    """Two-layer propagation over the fused graph with a residual path:
    A W2 (A W1 X) + X."""

    def __init__(self, channels: int):
        super().__init__()
        self.w1 = nn.Conv2d(channels, channels, 1, bias=False)
        self.w2 = nn.Conv2d(channels, channels, 1, bias=False)

    def forward(self, x: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        h = torch.einsum("ij,bcjt->bcit", a, self.w1(x))
        h = torch.einsum("ij,bcjt->bcit", a, self.w2(h))
        return h + x


class TemporalEmbedding(nn.Module):
    """One-hot time-of-day and day-of-week codes refined by three 1x1 convs."""

    def __init__(self, q: int, channels: int):
        super().__init__()
        self.q = q
        self.conv1 = nn.Conv2d(q + 7, channels, 1)
        self.conv2 = nn.Conv2d(channels, channels, 1)
        self.conv3 = nn.Conv2d(channels, channels, 1)

    def forward(self, codes: torch.Tensor) -> torch.Tensor:
        # codes: (B, L, 2) integers -> (B, C, 1, L)
        tod, dow = codes[..., 0], codes[..., 1]
        if (tod < 0).any() or (tod >= self.q).any():
            raise ValueError("time-of-day code out of range")
        if (dow < 0).any() or (dow >= 7).any():
            raise ValueError("day-of-week code out of range")
        dtype = self.conv1.weight.dtype
        onehot = torch.cat([
            F.one_hot(tod.long(), self.q).to(dtype),
            F.one_hot(dow.long(), 7).to(dtype),
        ], dim=-1)                       # B, L, q+7
        h = onehot.transpose(1, 2).unsqueeze(-2)  # B, q+7, 1, L
        h = F.relu(self.conv1(h))
        h = F.relu(self.conv2(h))
        return self.conv3(h)


class STBlock(nn.Module):
    """Spatial transformer then temporal transformer, each with residual
    connection and layer normalization over channels.

    The temporal transformer sees the block input extended along time with
    the embedded temporal codes; its output is cropped back to the content
    steps so the block preserves shape.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.embed_size
        self.t_r = cfg.t_r
        self.spatial = MultiHeadAttention(c, cfg.heads_spatial)
        self.temporal = MultiHeadAttention(c, cfg.heads_temporal)
        self.norm_s = nn.LayerNorm(c)
        self.norm_t = nn.LayerNorm(c)

    @staticmethod
    def _layernorm(norm: nn.LayerNorm, x: torch.Tensor) -> torch.Tensor:
        return norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)

    def forward(self, x: torch.Tensor, a: torch.Tensor, code_emb: torch.Tensor) -> torch.Tensor:
        bias = torch.log(a + ATTN_BIAS_EPS)
        y_s = attend_over_nodes(self.spatial, x, bias=bias)
        y_s = self._layernorm(self.norm_s, y_s + x)
        ext = torch.cat([y_s, code_emb.expand(-1, -1, y_s.shape[2], -1)], dim=-1)
        y_t = attend_over_time(self.temporal, ext)[..., :self.t_r]
        return self._layernorm(self.norm_t, y_t + y_s)


# ---------------------------------------------------------------------------
# Full network
# ---------------------------------------------------------------------------

class DFMT(nn.Module):
    """Dynamic-fusion multi-scale transformer over a fixed node set.

    Forward consumes normalized multi-scale windows plus temporal codes and
    the two precomputed renormalized graphs; it emits (B, N, horizon)
    predictions in normalized units.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.embed_size
        self.input_proj = nn.Conv2d(1, c, 1)
        self.fusion = TemporalFusion(cfg)
        self.w_r = nn.Parameter(torch.zeros(()))
        self.w_c = nn.Parameter(torch.zeros(()))
        self.gcn = GraphConvolution(c)
        self.temporal_codes = TemporalEmbedding(cfg.q, c)
        self.blocks = nn.ModuleList(STBlock(cfg) for _ in range(cfg.n_blocks))
        self.head1 = nn.Conv2d(c, cfg.out_channels, 1)
        self.head2 = nn.Conv2d(cfg.out_channels * cfg.t_r, cfg.horizon, 1)
        self.register_buffer("a_hat_r", torch.eye(cfg.n_nodes))
        self.register_buffer("a_hat_c", torch.eye(cfg.n_nodes))

    def set_graphs(self, a_r: np.ndarray, a_c: np.ndarray) -> None:
        """Install raw connectivity and correlation matrices (renormalized here)."""
        dtype = self.w_r.dtype
        self.a_hat_r = torch.as_tensor(normalize_adjacency(a_r), dtype=dtype)
        self.a_hat_c = torch.as_tensor(normalize_adjacency(prepare_correlation(a_c)), dtype=dtype)

    def fused_graph(self, a_hat_r: torch.Tensor | None = None,
                    a_hat_c: torch.Tensor | None = None) -> torch.Tensor:
        return fuse_graphs(self.a_hat_r if a_hat_r is None else a_hat_r,
                           self.a_hat_c if a_hat_c is None else a_hat_c,
                           self.w_r, self.w_c)

    def _embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.input_proj(x.unsqueeze(1))  # (B,N,L) -> (B,C,N,L)

    def forward(self, x_r: torch.Tensor, x_d: torch.Tensor, x_w: torch.Tensor,
                t_h: torch.Tensor, t_p: torch.Tensor,
                a_hat_r: torch.Tensor | None = None,
                a_hat_c: torch.Tensor | None = None) -> torch.Tensor:
        for name, t in (("x_r", x_r), ("x_d", x_d), ("x_w", x_w)):
            _check_finite(f"input {name}", t)
        e_r, e_d, e_w = self._embed(x_r), self._embed(x_d), self._embed(x_w)
        x_t = _check_finite("temporal_fusion", self.fusion(e_r, e_d, e_w))
        a = self.fused_graph(a_hat_r, a_hat_c)
        h = _check_finite("graph_convolution", self.gcn(x_t, a))
        emb_h = self.temporal_codes(t_h)
        emb_p = self.temporal_codes(t_p)
        for i, block in enumerate(self.blocks):
            last = i == len(self.blocks) - 1
            h = _check_finite(f"st_block[{i}]", block(h, a, emb_p if last else emb_h))
        out = F.relu(self.head1(h))                     # B, F, N, T_r
        b, f, n, t = out.shape
        out = out.permute(0, 1, 3, 2).reshape(b, f * t, n, 1)
        out = self.head2(out).squeeze(-1).permute(0, 2, 1)  # B, N, tau
        return _check_finite("output_head", out)
