"""Diffusion Molecule Transformer: three-stream equivariant denoiser."""

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .molgraph import ContinuousGraph, D_EDGE, D_NODE


@dataclass
class DMTConfig:
    n_blocks: int = 6
    d_h: int = 128
    d_a: int = 64
    d_m: int = 128
    n_heads: int = 8
    d_k: int = 16
    n_rbf: int = 32
    r_max: float = 10.0
    mask_radius: float = 5.0
    d_node: int = D_NODE
    d_edge: int = D_EDGE
    d_cond: int = 128
    d_spec: int = 0  # spectra embedding width; 0 disables conditioning input
    time_embed_dim: int = 64

    def __post_init__(self):
        if self.d_m % self.n_heads != 0:
            raise ValueError("d_m must be divisible by n_heads")
        if self.d_m != self.d_h:
            raise ValueError("d_m must equal d_h (residual node update)")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def small(cls, **kw) -> "DMTConfig":
        base = dict(n_blocks=2, d_h=32, d_a=16, d_m=32, n_heads=4, d_k=8, n_rbf=8,
                    d_cond=32, time_embed_dim=16)
        base.update(kw)
        return cls(**base)


def sinusoidal_embedding(x: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sinusoidal encoding of a scalar per batch element."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=x.dtype, device=x.device) / max(half - 1, 1)
    )
    ang = x[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class RBFEncoding(nn.Module):
    """Gaussian radial basis on equispaced centers in [0, r_max]."""

    def __init__(self, n_rbf: int, r_max: float):
        super().__init__()
        centers = torch.linspace(0.0, r_max, n_rbf)
        self.register_buffer("centers", centers)
        self.width = r_max / max(n_rbf - 1, 1)

    def forward(self, d: torch.Tensor) -> torch.Tensor:
        z = (d.unsqueeze(-1) - self.centers) / self.width
        return torch.exp(-0.5 * z * z)


def _cond_view(v: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    """Reshape [B, d] conditioning output to broadcast over ref's middle dims."""
    return v.view(v.shape[0], *([1] * (ref.ndim - 2)), v.shape[-1])


class AdaLN(nn.Module):
    """LayerNorm with conditioning-derived scale and bias."""

    def __init__(self, dim: int, d_cond: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim, elementwise_affine=False)
        self.scale = nn.Linear(d_cond, dim)
        self.bias = nn.Linear(d_cond, dim)

    def forward(self, h: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        return (1 + _cond_view(self.scale(c), h)) * self.norm(h) + _cond_view(self.bias(c), h)


class ScaleMod(nn.Module):
    """Multiplicative conditioning gate."""

    def __init__(self, dim: int, d_cond: int):
        super().__init__()
        self.scale = nn.Linear(d_cond, dim)

    def forward(self, h: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        return _cond_view(self.scale(c), h) * h


def _ffn(dim: int, hidden_mult: int = 2, out_dim: int = None) -> nn.Sequential:
    out_dim = dim if out_dim is None else out_dim
    return nn.Sequential(nn.Linear(dim, hidden_mult * dim), nn.SiLU(), nn.Linear(hidden_mult * dim, out_dim))


class DMTBlock(nn.Module):
    """One node/edge/coordinate update with relational multi-head attention."""

    def __init__(self, cfg: DMTConfig):
        super().__init__()
        self.cfg = cfg
        d_rel = cfg.d_a + 1 + cfg.n_rbf
        self.rbf = RBFEncoding(cfg.n_rbf, cfg.r_max)
        self.phi0 = nn.Linear(d_rel, cfg.n_heads)
        self.phi1 = nn.Linear(d_rel, cfg.d_m)
        self.q_proj = nn.Linear(cfg.d_h, cfg.n_heads * cfg.d_k)
        self.k_proj = nn.Linear(cfg.d_h, cfg.n_heads * cfg.d_k)
        self.v_proj = nn.Linear(cfg.d_h, cfg.d_m)

        self.node_scale1 = ScaleMod(cfg.d_h, cfg.d_cond)
        self.node_adaln = AdaLN(cfg.d_h, cfg.d_cond)
        self.node_ffn = _ffn(cfg.d_h)
        self.node_scale2 = ScaleMod(cfg.d_h, cfg.d_cond)

        self.w1 = nn.Linear(cfg.d_m, cfg.d_a)
        self.edge_scale1 = ScaleMod(cfg.d_a, cfg.d_cond)
        self.edge_adaln = AdaLN(cfg.d_a, cfg.d_cond)
        self.edge_ffn = _ffn(cfg.d_a)
        self.edge_scale2 = ScaleMod(cfg.d_a, cfg.d_cond)

        self.w2 = nn.Linear(2 * cfg.d_h + cfg.d_a + 1, cfg.d_h)
        self.coord_adaln = AdaLN(cfg.d_h, cfg.d_cond)
        self.coord_ffn = _ffn(cfg.d_h, out_dim=1)
        self.gamma = nn.Parameter(torch.tensor(0.1))

    def forward(self, h, a, x, c, mask_bias):
        b, n, _ = h.shape
        cfg = self.cfg
        diff = x.unsqueeze(2) - x.unsqueeze(1)  # [B, N, N, 3]
        dist = torch.linalg.norm(diff, dim=-1, keepdim=True)  # [B, N, N, 1]
        rel = torch.cat([a, dist, self.rbf(dist.squeeze(-1))], dim=-1)

        gate0 = torch.tanh(self.phi0(rel))  # [B, N, N, H]
        gate1 = torch.tanh(self.phi1(rel)).view(b, n, n, cfg.n_heads, -1)
        q = self.q_proj(h).view(b, n, cfg.n_heads, cfg.d_k)
        k = self.k_proj(h).view(b, n, cfg.n_heads, cfg.d_k)
        v = self.v_proj(h).view(b, n, cfg.n_heads, -1)

        logits = torch.einsum("bihd,bjhd->bijh", q, k) * gate0 / math.sqrt(cfg.d_k)
        logits = logits + mask_bias.unsqueeze(-1)
        attn = torch.softmax(logits, dim=2)  # over keys j
        m = torch.einsum("bijh,bijhd,bjhd->bihd", attn, gate1, v).reshape(b, n, cfg.d_m)

        h_mid = self.node_scale1(m, c) + h
        h_next = self.node_scale2(self.node_ffn(self.node_adaln(h_mid, c)), c) + h_mid

        a_hat = self.w1(m.unsqueeze(2) + m.unsqueeze(1))
        a_mid = self.edge_scale1(a_hat, c) + a
        a_next = self.edge_scale2(self.edge_ffn(self.edge_adaln(a_mid, c)), c) + a_mid

        pair = torch.cat(
            [h_next.unsqueeze(2).expand(-1, -1, n, -1), h_next.unsqueeze(1).expand(-1, n, -1, -1),
             a_next, dist],
            dim=-1,
        )
        e = self.coord_adaln(self.w2(pair), c)
        w = torch.tanh(self.coord_ffn(e))  # [B, N, N, 1]
        direction = diff / (dist + 1e-6)
        off_diag = 1.0 - torch.eye(n, dtype=h.dtype, device=h.device).view(1, n, n, 1)
        delta = self.gamma * (direction * w * off_diag).sum(dim=2)
        x_next = x + delta
        x_next = x_next - x_next.mean(dim=1, keepdim=True)

        if not torch.isfinite(h_next).all() or not torch.isfinite(x_next).all():
            raise RuntimeError("non-finite activation in DMT block")
        return h_next, a_next, x_next


class DMT(nn.Module):
    """Stacked equivariant blocks mapping a noisy graph to a clean-graph estimate."""

    def __init__(self, cfg: DMTConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.cfg = cfg
        self.node_in = nn.Linear(2 * cfg.d_node, cfg.d_h)
        self.edge_in = nn.Linear(2 * cfg.d_edge + 1 + cfg.n_rbf, cfg.d_a)
        self.rbf0 = RBFEncoding(cfg.n_rbf, cfg.r_max)
        cond_in = cfg.time_embed_dim + cfg.d_spec
        self.cond_mlp = nn.Sequential(
            nn.Linear(cond_in, cfg.d_cond), nn.SiLU(), nn.Linear(cfg.d_cond, cfg.d_cond)
        )
        self.blocks = nn.ModuleList(DMTBlock(cfg) for _ in range(cfg.n_blocks))
        self.node_out = nn.Linear(cfg.d_h, cfg.d_node)
        self.edge_out = nn.Linear(cfg.d_a, cfg.d_edge)
        self.to(dtype)

    def _masks(self, a0: torch.Tensor, x0: torch.Tensor) -> torch.Tensor:
        """-inf attention bias outside bonded pairs and the distance cutoff."""
        b, n = a0.shape[0], a0.shape[1]
        sym = 0.5 * (a0 + a0.transpose(1, 2))
        bonded = sym.argmax(dim=-1) > 0
        dist = torch.linalg.norm(x0.unsqueeze(2) - x0.unsqueeze(1), dim=-1)
        near = dist < self.cfg.mask_radius
        eye = torch.eye(n, dtype=torch.bool, device=a0.device).unsqueeze(0).expand(b, -1, -1)
        allowed = bonded | near | eye
        bias = torch.zeros(b, n, n, dtype=a0.dtype, device=a0.device)
        return bias.masked_fill(~allowed, float("-inf"))

    def forward(
        self,
        g_t: ContinuousGraph,
        self_cond: ContinuousGraph,
        log_snr,
        z_spec: torch.Tensor = None,
    ) -> ContinuousGraph:
        squeeze = g_t.h.ndim == 2
        if squeeze:
            g_t = g_t.map(lambda v: v.unsqueeze(0))
            self_cond = self_cond.map(lambda v: v.unsqueeze(0))
            if z_spec is not None and z_spec.ndim == 1:
                z_spec = z_spec.unsqueeze(0)

        b = g_t.h.shape[0]
        x_t = g_t.x - g_t.x.mean(dim=1, keepdim=True)
        x0 = self_cond.x - self_cond.x.mean(dim=1, keepdim=True)

        dist0 = torch.linalg.norm(x0.unsqueeze(2) - x0.unsqueeze(1), dim=-1)
        h = self.node_in(torch.cat([g_t.h, self_cond.h], dim=-1))
        a = self.edge_in(
            torch.cat([g_t.a, self_cond.a, dist0.unsqueeze(-1), self.rbf0(dist0)], dim=-1)
        )

        log_snr = torch.as_tensor(log_snr, dtype=h.dtype, device=h.device).reshape(-1)
        if log_snr.shape[0] == 1 and b > 1:
            log_snr = log_snr.expand(b)
        temb = sinusoidal_embedding(log_snr, self.cfg.time_embed_dim)
        if self.cfg.d_spec:
            if z_spec is None:
                z_spec = torch.zeros(b, self.cfg.d_spec, dtype=h.dtype, device=h.device)
            temb = torch.cat([temb, z_spec], dim=-1)
        c = self.cond_mlp(temb)

        mask_bias = self._masks(self_cond.a, x0)
        x = x_t
        for block in self.blocks:
            h, a, x = block(h, a, x, c, mask_bias)

        h_out = self.node_out(h)
        a_out = self.edge_out(a)
        a_out = 0.5 * (a_out + a_out.transpose(1, 2))
        x_out = x - x.mean(dim=1, keepdim=True)
        out = ContinuousGraph(h_out, a_out, x_out)
        if squeeze:
            out = out.map(lambda v: v.squeeze(0))
        return out
