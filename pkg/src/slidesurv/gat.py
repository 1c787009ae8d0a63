"""Graph attention layer with edge features.

Attention logits for edge (i, j) are a^T [W x_i || W x_j || W e_ij] passed
through LeakyReLU, normalized by softmax over each node's neighborhood, and
the node update is the alpha-weighted sum of W x_j. Edge features are first
projected linearly to the node input dimension so the same W applies to all
three slots. Single head by default; extra heads are averaged.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .ssm import _init_linear


class GatLayer(nn.Module):
    def __init__(self, d_in: int, d_out: int, d_edge: int, heads: int = 1,
                 leaky_slope: float = 0.2, dtype: torch.dtype = torch.float64):
        super().__init__()
        if heads < 1:
            raise ValueError("heads must be >= 1")
        self.d_in = d_in
        self.d_out = d_out
        self.heads = heads
        self.leaky_slope = leaky_slope
        self.proj_edge = nn.Linear(d_edge, d_in, bias=False, dtype=dtype)
        self.w = nn.Linear(d_in, heads * d_out, bias=False, dtype=dtype)
        self.att = nn.Parameter(torch.zeros(heads, 3 * d_out, dtype=dtype))

    def reset_parameters(self, gen: torch.Generator) -> None:
        _init_linear(self.proj_edge, gen)
        _init_linear(self.w, gen)
        bound = 1.0 / math.sqrt(3 * self.d_out)
        with torch.no_grad():
            self.att.uniform_(-bound, bound, generator=gen)

    def _alpha(self, x, edge_index, edge_attr):
        """Per-edge attention, softmax-normalized over each source node's
        neighborhood. Edges are processed in (src, dst) lexicographic order so
        the result is invariant to edge-list ordering; alpha comes back
        aligned with the input edge order."""
        n = x.shape[0]
        if x.shape[1] != self.d_in:
            raise ValueError(f"shape mismatch: expected {self.d_in} input features, got {x.shape[1]}")
        if edge_attr.shape[0] != edge_index.shape[0]:
            raise ValueError("shape mismatch: edge_attr rows must align with edges")
        src, dst = edge_index[:, 0], edge_index[:, 1]
        if n > 0 and torch.bincount(src, minlength=n).min() == 0:
            raise ValueError("node without incident edges")

        order = torch.argsort(src * n + dst)
        s, d = src[order], dst[order]
        e = self.proj_edge(edge_attr[order])

        wx = self.w(x).view(n, self.heads, self.d_out)
        we = self.w(e).view(-1, self.heads, self.d_out)
        feat = torch.cat([wx[s], wx[d], we], dim=2)          # (M, H, 3*d_out)
        logits = nn.functional.leaky_relu(
            (feat * self.att).sum(dim=2), negative_slope=self.leaky_slope)

        seg_max = logits.new_full((n, self.heads), -math.inf)
        seg_max.scatter_reduce_(0, s[:, None].expand_as(logits), logits,
                                reduce="amax", include_self=True)
        ex = torch.exp(logits - seg_max[s])
        seg_sum = logits.new_zeros(n, self.heads).index_add_(0, s, ex)
        alpha = ex / seg_sum[s]

        inv = torch.empty_like(order)
        inv[order] = torch.arange(order.numel(), device=order.device)
        return alpha, wx, s, d, inv

    def attention(self, x, edge_index, edge_attr) -> torch.Tensor:
        """Attention coefficients per edge, aligned with the input edge list.

        Shape (M,) for a single head, (M, heads) otherwise.
        """
        alpha, _, _, _, inv = self._alpha(x, edge_index, edge_attr)
        alpha = alpha[inv]
        return alpha[:, 0] if self.heads == 1 else alpha

    def forward(self, x, edge_index, edge_attr) -> torch.Tensor:
        alpha, wx, s, d, _ = self._alpha(x, edge_index, edge_attr)
        msg = alpha[:, :, None] * wx[d]                      # (M, H, d_out)
        out = wx.new_zeros(x.shape[0], self.heads, self.d_out)
        out.index_add_(0, s, msg)
        return out.mean(dim=1)
