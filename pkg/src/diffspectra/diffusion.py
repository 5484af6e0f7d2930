"""Continuous-time variational diffusion engine for graph-structured data.

All operations treat a graph as three tensor components (nodes, edges,
coordinates) and apply the same scalar schedule to each. Tensors may carry
an arbitrary leading batch dimension.
"""

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
import torch

from .molgraph import ContinuousGraph, MolecularGraph, center_coords, discretize, kabsch_align


@dataclass
class CosineSchedule:
    """Variance-preserving cosine schedule with numeric clipping."""

    s0: float = 0.008
    alpha_min: float = 1e-4
    sigma_min: float = 1e-4

    def alpha(self, t):
        raw = np.cos(0.5 * np.pi * (np.asarray(t, dtype=np.float64) + self.s0) / (1.0 + self.s0))
        hi = math.sqrt(1.0 - self.sigma_min**2)
        return np.clip(raw, self.alpha_min, hi)

    def sigma(self, t):
        return np.sqrt(1.0 - self.alpha(t) ** 2)

    def snr(self, t):
        a2 = self.alpha(t) ** 2
        return a2 / (1.0 - a2)

    def log_snr(self, t):
        return np.log(self.snr(t))


@dataclass
class TransitionParams:
    """Coefficients of q(G_t | G_s) and the reverse posterior q(G_s | G_t, G_0)."""

    alpha_ts: float
    sigma_ts_sq: float
    c_t: float  # posterior weight on G_t
    c_0: float  # posterior weight on G_0
    sigma_q_sq: float  # posterior variance


def transition_params(s: float, t: float, schedule: CosineSchedule) -> TransitionParams:
    if not 0.0 <= s < t <= 1.0:
        raise ValueError(f"need 0 <= s < t <= 1, got s={s}, t={t}")
    alpha_s, alpha_t = float(schedule.alpha(s)), float(schedule.alpha(t))
    sigma_s_sq = 1.0 - alpha_s**2
    sigma_t_sq = 1.0 - alpha_t**2
    alpha_ts = alpha_t / alpha_s
    sigma_ts_sq = sigma_t_sq - alpha_ts**2 * sigma_s_sq
    c_t = alpha_ts * sigma_s_sq / sigma_t_sq
    c_0 = alpha_s * sigma_ts_sq / sigma_t_sq
    sigma_q_sq = sigma_s_sq * sigma_ts_sq / sigma_t_sq
    return TransitionParams(alpha_ts, sigma_ts_sq, c_t, c_0, sigma_q_sq)


@dataclass
class LossWeights:
    lambda_a: float = 1.0
    lambda_x: float = 1.0
    lambda_h: float = 1.0


def _expand(coef, ref: torch.Tensor, batched: bool) -> torch.Tensor:
    """Broadcast a scalar or per-batch coefficient over trailing dims of ref."""
    c = torch.as_tensor(coef, dtype=ref.dtype, device=ref.device)
    if batched and c.ndim == 1:
        return c.view(-1, *([1] * (ref.ndim - 1)))
    return c


def _is_batched(g: ContinuousGraph) -> bool:
    return g.h.ndim == 3


def symmetric_noise(g: ContinuousGraph, generator: Optional[torch.Generator] = None) -> ContinuousGraph:
    """Standard normal noise with the edge block mirrored from its upper triangle."""
    def randn(ref):
        return torch.randn(ref.shape, generator=generator, dtype=ref.dtype, device=ref.device)

    h = randn(g.h)
    a = randn(g.a)
    iu = torch.triu(torch.ones(a.shape[-3], a.shape[-2], dtype=torch.bool, device=a.device))
    a = torch.where(iu.unsqueeze(-1), a, a.transpose(-3, -2))
    x = randn(g.x)
    return ContinuousGraph(h, a, x)


def forward_sample(g0: ContinuousGraph, t, noise: ContinuousGraph, schedule: CosineSchedule) -> ContinuousGraph:
    """G_t = alpha_t * G_0 + sigma_t * noise, per component."""
    batched = _is_batched(g0)
    alpha, sigma = schedule.alpha(t), schedule.sigma(t)

    def mix(x0, eps):
        return _expand(alpha, x0, batched) * x0 + _expand(sigma, x0, batched) * eps

    return ContinuousGraph(mix(g0.h, noise.h), mix(g0.a, noise.a), mix(g0.x, noise.x))


def reverse_step(
    g_t: ContinuousGraph,
    g0_hat: ContinuousGraph,
    s: float,
    t: float,
    tau: float,
    noise: ContinuousGraph,
    schedule: CosineSchedule,
) -> ContinuousGraph:
    """One ancestral step: posterior mean plus temperature-scaled posterior noise."""
    p = transition_params(s, t, schedule)
    scale = tau * math.sqrt(p.sigma_q_sq)

    def step(gt, g0, eps):
        return p.c_t * gt + p.c_0 * g0 + scale * eps

    h = step(g_t.h, g0_hat.h, noise.h)
    a = step(g_t.a, g0_hat.a, noise.a)
    x = step(g_t.x, g0_hat.x, noise.x)
    x = x - x.mean(dim=-2, keepdim=True)
    return ContinuousGraph(h, a, x)


def _sq(v: torch.Tensor, batched: bool) -> torch.Tensor:
    if batched:
        return v.flatten(1).pow(2).sum(dim=1)
    return v.pow(2).sum()


def align_target_coords(x0: torch.Tensor, x_t: torch.Tensor) -> torch.Tensor:
    """Kabsch-align clean coordinates onto the noisy frame (no gradients)."""
    batched = x0.ndim == 3
    x0_np = x0.detach().cpu().double().numpy()
    xt_np = x_t.detach().cpu().double().numpy()
    if not batched:
        x0_np, xt_np = x0_np[None], xt_np[None]
    out = np.empty_like(x0_np)
    for b in range(x0_np.shape[0]):
        ref = center_coords(xt_np[b])
        mov = center_coords(x0_np[b])
        out[b] = kabsch_align(ref, mov).aligned
    if not batched:
        out = out[0]
    return torch.as_tensor(out, dtype=x0.dtype, device=x0.device)


def training_loss(
    pred: ContinuousGraph,
    target: ContinuousGraph,
    g_t: ContinuousGraph,
    t,
    schedule: CosineSchedule,
    weights: LossWeights = LossWeights(),
    align: bool = True,
    weighting: str = "sqrt_alpha_over_sigma",
) -> torch.Tensor:
    """Time-weighted squared error between prediction and (aligned) target.

    weighting is either the printed sqrt(alpha_t/sigma_t) factor or the
    clipped-SNR alternative min(SNR(t), 5).
    """
    batched = _is_batched(pred)
    x0 = align_target_coords(target.x, g_t.x) if align else target.x
    per_item = (
        weights.lambda_a * _sq(pred.a - target.a, batched)
        + weights.lambda_x * _sq(pred.x - x0, batched)
        + weights.lambda_h * _sq(pred.h - target.h, batched)
    )
    if weighting == "sqrt_alpha_over_sigma":
        w = np.sqrt(schedule.alpha(t) / schedule.sigma(t))
    elif weighting == "min_snr_5":
        w = np.minimum(schedule.snr(t), 5.0)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    w = torch.as_tensor(w, dtype=per_item.dtype, device=per_item.device)
    return (w * per_item).mean() if batched else w * per_item


Denoiser = Callable[..., ContinuousGraph]


class SampleResult(NamedTuple):
    molecule: MolecularGraph
    g0_hat: ContinuousGraph  # final clean-graph prediction (continuous)


def _zeros_like_graph(g: ContinuousGraph) -> ContinuousGraph:
    return g.map(torch.zeros_like)


def _check_finite(g: ContinuousGraph, step: int):
    for name, v in (("h", g.h), ("a", g.a), ("x", g.x)):
        if not torch.isfinite(v).all():
            raise RuntimeError(f"non-finite {name} block from denoiser at step {step}")


def ancestral_sample(
    denoiser: Denoiser,
    n_atoms: int,
    schedule: CosineSchedule,
    steps: int = 1000,
    tau: float = 1.0,
    generator: Optional[torch.Generator] = None,
    condition=None,
    d_node: int = 6,
    d_edge: int = 5,
    batch: Optional[int] = None,
    dtype: torch.dtype = torch.float32,
    device: str = "cpu",
):
    """Reverse-time ancestral sampling with self-conditioning.

    denoiser(g_t, self_cond, log_snr, condition) must return the predicted
    clean graph with matching shapes. Returns a SampleResult (or a list of
    them when batch is given).
    """
    shape = (n_atoms,) if batch is None else (batch, n_atoms)
    proto = ContinuousGraph(
        torch.empty(*shape, d_node, dtype=dtype, device=device),
        torch.empty(*shape, n_atoms, d_edge, dtype=dtype, device=device),
        torch.empty(*shape, 3, dtype=dtype, device=device),
    )
    g = symmetric_noise(proto, generator)
    g = ContinuousGraph(g.h, g.a, g.x - g.x.mean(dim=-2, keepdim=True))
    self_cond = _zeros_like_graph(g)
    times = np.linspace(1.0, 0.0, steps + 1)
    g0_hat = self_cond
    for i in range(steps):
        t, s = float(times[i]), float(times[i + 1])
        g0_hat = denoiser(g, self_cond, float(schedule.log_snr(t)), condition)
        for name in ("h", "a", "x"):
            if getattr(g0_hat, name).shape != getattr(g, name).shape:
                raise ValueError(f"denoiser output shape mismatch in {name} block")
        _check_finite(g0_hat, i)
        noise = symmetric_noise(g, generator)
        g = reverse_step(g, g0_hat, s, t, tau, noise, schedule)
        self_cond = g0_hat

    final = g0_hat.map(lambda v: v.detach().cpu().double().numpy())
    if batch is None:
        return SampleResult(discretize(final), g0_hat)
    results = []
    for b in range(batch):
        item = ContinuousGraph(final.h[b], final.a[b], final.x[b])
        g0_b = ContinuousGraph(g0_hat.h[b], g0_hat.a[b], g0_hat.x[b])
        results.append(SampleResult(discretize(item), g0_b))
    return results
