"""Multi-spectrum patch transformer encoder and its pretraining objectives."""

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .dmt import DMTBlock, DMTConfig
from .molgraph import ContinuousGraph, MolecularGraph, center_coords
from .spectra import IR_LEN, RAMAN_LEN, UV_LEN, SpectraSet

MODALITIES = ("uv", "ir", "raman")
MODALITY_LENGTHS = {"uv": UV_LEN, "ir": IR_LEN, "raman": RAMAN_LEN}


@dataclass
class PatchConfig:
    """Per-modality patch length and stride."""

    patch: dict = field(default_factory=lambda: {"uv": 20, "ir": 50, "raman": 50})
    stride: dict = field(default_factory=lambda: {"uv": 20, "ir": 50, "raman": 50})

    def n_patches(self, modality: str, length: int = None) -> int:
        length = MODALITY_LENGTHS[modality] if length is None else length
        p, d = self.patch[modality], self.stride[modality]
        if not 0 < d <= p <= length:
            raise ValueError(f"need 0 < stride <= patch <= length for {modality}")
        return (length - p) // d + 1

    def total_tokens(self) -> int:
        return sum(self.n_patches(m) for m in MODALITIES)


def patchify(s: np.ndarray, patch: int, stride: int) -> np.ndarray:
    """Split a 1D spectrum into [n_patches, patch]; trailing remainder dropped."""
    s = np.asarray(s, dtype=np.float64)
    length = s.shape[0]
    if not 0 < stride <= patch <= length:
        raise ValueError("need 0 < stride <= patch <= length")
    n = (length - patch) // stride + 1
    return np.stack([s[j * stride : j * stride + patch] for j in range(n)])


@dataclass
class SpecFormerConfig:
    d: int = 256
    n_layers: int = 4
    n_heads: int = 8
    d_k: int = 32
    patches: PatchConfig = field(default_factory=PatchConfig)
    modalities: tuple = MODALITIES

    def to_dict(self) -> dict:
        return {
            "d": self.d, "n_layers": self.n_layers, "n_heads": self.n_heads,
            "d_k": self.d_k, "patches": {"patch": self.patches.patch, "stride": self.patches.stride},
            "modalities": list(self.modalities),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpecFormerConfig":
        return cls(
            d=d["d"], n_layers=d["n_layers"], n_heads=d["n_heads"], d_k=d["d_k"],
            patches=PatchConfig(dict(d["patches"]["patch"]), dict(d["patches"]["stride"])),
            modalities=tuple(d["modalities"]),
        )

    @classmethod
    def small(cls, **kw) -> "SpecFormerConfig":
        base = dict(d=32, n_layers=2, n_heads=4, d_k=8)
        base.update(kw)
        return cls(**base)


class EncoderLayer(nn.Module):
    """Multi-head attention + FFN with batch-norm residual wiring."""

    def __init__(self, d: int, n_heads: int, d_k: int):
        super().__init__()
        self.n_heads, self.d_k = n_heads, d_k
        self.q = nn.Linear(d, n_heads * d_k)
        self.k = nn.Linear(d, n_heads * d_k)
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)
        self.bn1 = nn.BatchNorm1d(d)
        self.bn2 = nn.BatchNorm1d(d)
        self.ffn = nn.Sequential(nn.Linear(d, 2 * d), nn.GELU(), nn.Linear(2 * d, d))

    def attention(self, z: torch.Tensor) -> tuple:
        b, t, d = z.shape
        q = self.q(z).view(b, t, self.n_heads, self.d_k)
        k = self.k(z).view(b, t, self.n_heads, self.d_k)
        v = self.v(z).view(b, t, self.n_heads, -1)
        logits = torch.einsum("bihd,bjhd->bhij", q, k) / math.sqrt(self.d_k)
        attn = torch.softmax(logits, dim=-1)
        o = torch.einsum("bhij,bjhd->bihd", attn, v).reshape(b, t, d)
        return self.out(o), attn

    def _bn(self, bn: nn.BatchNorm1d, z: torch.Tensor) -> torch.Tensor:
        b, t, d = z.shape
        return bn(z.reshape(b * t, d)).view(b, t, d)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        o, _ = self.attention(z)
        z = self._bn(self.bn1, z + o)
        z = self._bn(self.bn2, z + self.ffn(z))
        return z


class SpecFormer(nn.Module):
    """Encodes a SpectraSet into tokens z and a pooled embedding z_s."""

    def __init__(self, cfg: SpecFormerConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.cfg = cfg
        self.patch_proj = nn.ModuleDict()
        self.pos = nn.ParameterDict()
        self.recon = nn.ModuleDict()
        for m in cfg.modalities:
            p = cfg.patches.patch[m]
            n = cfg.patches.n_patches(m)
            self.patch_proj[m] = nn.Linear(p, cfg.d)
            self.pos[m] = nn.Parameter(0.02 * torch.randn(n, cfg.d))
            self.recon[m] = nn.Linear(cfg.d, p)
        self.layers = nn.ModuleList(
            EncoderLayer(cfg.d, cfg.n_heads, cfg.d_k) for _ in range(cfg.n_layers)
        )
        total = sum(cfg.patches.n_patches(m) for m in cfg.modalities)
        self.head = nn.Linear(total * cfg.d, cfg.d)
        self.to(dtype)

    @property
    def dtype(self):
        return self.head.weight.dtype

    def patch_batch(self, spectra_list) -> dict:
        """Raw patches per modality: {name: [B, N_i, P_i] tensor} (normalized input)."""
        out = {}
        for m in self.cfg.modalities:
            cfgp = self.cfg.patches
            arrs = [
                patchify(s.normalized().modality(m), cfgp.patch[m], cfgp.stride[m])
                for s in spectra_list
            ]
            out[m] = torch.as_tensor(np.stack(arrs), dtype=self.dtype)
        return out

    def embed(self, patches: dict) -> torch.Tensor:
        """Project per-modality patches, add positions, concatenate tokens."""
        toks = [self.patch_proj[m](patches[m]) + self.pos[m] for m in self.cfg.modalities]
        return torch.cat(toks, dim=1)

    def encode_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            tokens = layer(tokens)
        return tokens

    def pool(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.head(tokens.flatten(1))

    def forward(self, spectra_list) -> tuple:
        """Returns (token sequence z [B, T, d], pooled z_s [B, d])."""
        tokens = self.encode_tokens(self.embed(self.patch_batch(spectra_list)))
        return tokens, self.pool(tokens)

    def token_slices(self) -> dict:
        """Token index range per modality in the concatenated sequence."""
        out, start = {}, 0
        for m in self.cfg.modalities:
            n = self.cfg.patches.n_patches(m)
            out[m] = (start, start + n)
            start += n
        return out


def mask_patches(patches: dict, ratio: float, seed: int) -> tuple:
    """Zero floor(ratio * N_i) patches per modality, uniformly without replacement.

    Returns (masked patches dict, mask sets {modality: [B, N_i] bool tensor}).
    """
    rng = np.random.default_rng(seed)
    masked, mask_sets = {}, {}
    for m, p in patches.items():
        b, n, _ = p.shape
        k = int(ratio * n)
        mask = np.zeros((b, n), dtype=bool)
        for i in range(b):
            mask[i, rng.choice(n, size=k, replace=False)] = True
        mask_t = torch.as_tensor(mask)
        masked[m] = p.masked_fill(mask_t.unsqueeze(-1), 0.0)
        mask_sets[m] = mask_t
    return masked, mask_sets


def mpr_loss(model: SpecFormer, tokens: torch.Tensor, originals: dict, mask_sets: dict) -> torch.Tensor:
    """Squared-L2 reconstruction error over masked patches, summed over modalities."""
    slices = model.token_slices()
    total = tokens.new_zeros(())
    for m, (lo, hi) in slices.items():
        if m not in mask_sets:
            continue
        mask = mask_sets[m].to(tokens.device)
        if not mask.any():
            continue
        recon = model.recon[m](tokens[:, lo:hi])
        err = ((recon - originals[m]) ** 2).sum(dim=-1)  # [B, N_i] squared L2 per patch
        total = total + err[mask].mean()
    return total


def contrastive_loss(z_x: torch.Tensor, z_s: torch.Tensor) -> torch.Tensor:
    """Symmetric InfoNCE with inner-product scores over in-batch negatives."""
    if z_x.shape[0] < 2:
        raise ValueError("contrastive loss needs batch size >= 2")
    scores = z_x @ z_s.T  # [B, B]
    labels = torch.arange(scores.shape[0], device=scores.device)
    loss_x = nn.functional.cross_entropy(scores, labels)
    loss_s = nn.functional.cross_entropy(scores.T, labels)
    return 0.5 * (loss_x + loss_s)


class StructureEncoder(nn.Module):
    """Invariant graph encoder (DMT blocks) pooling node features to z_x.

    The coordinate stream is consumed for geometry but its output is used
    only by the coordinate-denoising head.
    """

    def __init__(self, d_out: int, cfg: DMTConfig = None, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.cfg = cfg or DMTConfig.small()
        self.node_in = nn.Linear(self.cfg.d_node, self.cfg.d_h)
        self.edge_in = nn.Linear(self.cfg.d_edge, self.cfg.d_a)
        self.blocks = nn.ModuleList(DMTBlock(self.cfg) for _ in range(self.cfg.n_blocks))
        self.pool_proj = nn.Linear(self.cfg.d_h, d_out)
        self.to(dtype)

    @property
    def dtype(self):
        return self.pool_proj.weight.dtype

    def forward(self, mol: MolecularGraph, coords: torch.Tensor = None) -> tuple:
        """Returns (z_x [d_out], denoised coordinates [N, 3])."""
        dtype = self.dtype
        h = torch.as_tensor(mol.h, dtype=dtype).unsqueeze(0)
        a = torch.as_tensor(mol.a, dtype=dtype).unsqueeze(0)
        if coords is None:
            coords = torch.as_tensor(center_coords(mol.x), dtype=dtype)
        x = coords.unsqueeze(0)
        x = x - x.mean(dim=1, keepdim=True)

        hs = self.node_in(h)
        as_ = self.edge_in(a)
        c = torch.zeros(1, self.cfg.d_cond, dtype=dtype)
        n = h.shape[1]
        bias = torch.zeros(1, n, n, dtype=dtype)
        for block in self.blocks:
            hs, as_, x = block(hs, as_, x, c, bias)
        z_x = self.pool_proj(hs.mean(dim=1)).squeeze(0)
        return z_x, x.squeeze(0)


def structure_denoising_loss(
    encoder: StructureEncoder,
    mol: MolecularGraph,
    noise_scale: float,
    generator: torch.Generator = None,
) -> tuple:
    """Coordinate-denoising objective; returns (loss, z_x)."""
    dtype = encoder.dtype
    x0 = torch.as_tensor(center_coords(mol.x), dtype=dtype)
    eps = torch.randn(x0.shape, generator=generator, dtype=dtype)
    noisy = x0 + noise_scale * eps
    noisy = noisy - noisy.mean(dim=0, keepdim=True)
    z_x, x_hat = encoder(mol, coords=noisy)
    loss = ((x_hat - x0) ** 2).mean()
    return loss, z_x
