"""Selective state-space (Mamba-style) sequence layer.

The layer treats each node of a canonically ordered graph as a token. B, C,
and the step size delta are functions of the input token, the state matrix A
is diagonal and negative, and the recurrence

    h_t = Abar_t h_{t-1} + Bbar_t x_t,   y_t = C_t^T h_t

runs as a plain sequential scan over the padded batch. Padding rows are safe
because the recurrence is causal and real tokens always precede padding.
"""

from __future__ import annotations

import math

import torch
from torch import nn

SERIES_THRESHOLD = 1e-8


def _expm1_over_z(z: torch.Tensor) -> torch.Tensor:
    """expm1(z)/z with a series fallback 1 + z/2 + z^2/6 for |z| < 1e-8.

    Both branches are evaluated on safe inputs and merged with torch.where so
    gradients stay finite at z ~ 0.
    """
    small = z.abs() < SERIES_THRESHOLD
    z_safe = torch.where(small, torch.ones_like(z), z)
    exact = torch.expm1(z_safe) / z_safe
    series = 1.0 + z / 2.0 + z * z / 6.0
    return torch.where(small, series, exact)


def discretize(A: torch.Tensor, B: torch.Tensor, delta) -> tuple[torch.Tensor, torch.Tensor]:
    """Zero-order-hold discretization of a diagonal continuous system.

    Abar = exp(delta*A), Bbar = (delta*A)^{-1} (exp(delta*A) - 1) * delta*B,
    computed as delta * B * expm1(z)/z with z = delta*A. Shapes broadcast.
    """
    delta = torch.as_tensor(delta, dtype=A.dtype if torch.is_tensor(A) else torch.float64)
    A = torch.as_tensor(A, dtype=delta.dtype)
    B = torch.as_tensor(B, dtype=delta.dtype)
    if (delta <= 0).any():
        raise ValueError("delta must be positive")
    z = delta * A
    abar = torch.exp(z)
    bbar = delta * B * _expm1_over_z(z)
    return abar, bbar


def _init_linear(lin: nn.Linear, gen: torch.Generator) -> None:
    bound = 1.0 / math.sqrt(lin.in_features)
    with torch.no_grad():
        lin.weight.uniform_(-bound, bound, generator=gen)
        if lin.bias is not None:
            lin.bias.uniform_(-bound, bound, generator=gen)


class Mamba(nn.Module):
    """Gated selective-SSM block: out = W_out(scan(silu(W_in x)) * silu(W_gate x)).

    All channel mixes are bias-free so zero input maps to zero output; only
    the delta projection carries a bias, which fixes the initial step-size
    scale. euler_discretization = True swaps the exact ZOH Bbar for the
    simplified Bbar = delta*B.
    """

    def __init__(self, d_model: int, d_state: int = 16,
                 euler_discretization: bool = False,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        self.d_model = d_model
        self.d_state = d_state
        self.euler_discretization = euler_discretization
        kw = {"dtype": dtype}
        self.w_in = nn.Linear(d_model, d_model, bias=False, **kw)
        self.w_gate = nn.Linear(d_model, d_model, bias=False, **kw)
        self.w_out = nn.Linear(d_model, d_model, bias=False, **kw)
        self.w_b = nn.Linear(d_model, d_state, bias=False, **kw)
        self.w_c = nn.Linear(d_model, d_state, bias=False, **kw)
        self.w_delta = nn.Linear(d_model, d_model, bias=True, **kw)
        self.A_log = nn.Parameter(torch.zeros(d_model, d_state, dtype=dtype))

    def reset_parameters(self, gen: torch.Generator) -> None:
        for lin in (self.w_in, self.w_gate, self.w_out, self.w_b, self.w_c, self.w_delta):
            _init_linear(lin, gen)
        with torch.no_grad():
            # S4D-real: A = -[1..S] per channel
            arange = torch.arange(1, self.d_state + 1, dtype=self.A_log.dtype)
            self.A_log.copy_(arange.log().expand(self.d_model, self.d_state))
            # delta bias so that softplus(bias) ~ logUniform(0.01, 0.1)
            u = torch.empty(self.d_model, dtype=self.A_log.dtype)
            u.uniform_(math.log(0.01), math.log(0.1), generator=gen)
            dt = u.exp()
            self.w_delta.bias.copy_(torch.log(torch.expm1(dt)))

    def scan(self, x: torch.Tensor) -> torch.Tensor:
        """Selective scan over x of shape (L, D) or (G, L, D)."""
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        g, length, d = x.shape
        A = -torch.exp(self.A_log)                    # (D, S)
        Bseq = self.w_b(x)                            # (G, L, S)
        Cseq = self.w_c(x)                            # (G, L, S)
        delta = nn.functional.softplus(self.w_delta(x))  # (G, L, D)

        h = x.new_zeros(g, d, self.d_state)
        ys = []
        for t in range(length):
            z = delta[:, t, :, None] * A              # (G, D, S)
            abar = torch.exp(z)
            dbx = (delta[:, t] * x[:, t])[:, :, None] * Bseq[:, t, None, :]
            if not self.euler_discretization:
                dbx = dbx * _expm1_over_z(z)
            h = abar * h + dbx
            ys.append((h * Cseq[:, t, None, :]).sum(-1))
        y = torch.stack(ys, dim=1)                    # (G, L, D)
        if not torch.isfinite(y).all():
            bad = (~torch.isfinite(y)).any(dim=2).nonzero()[0]
            raise ValueError(f"non-finite scan output at position {int(bad[1])}"
                             f" of sequence {int(bad[0])}")
        return y.squeeze(0) if squeeze else y

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        u = nn.functional.silu(self.w_in(x))
        y = self.scan(u)
        return self.w_out(y * nn.functional.silu(self.w_gate(x)))
