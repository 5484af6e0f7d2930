"""Experiment orchestration: configs, training loops, checkpoints, sampling, evaluation."""

import csv
import json
import os
import subprocess
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from . import metrics as met
from .diffusion import (
    CosineSchedule,
    LossWeights,
    ancestral_sample,
    forward_sample,
    symmetric_noise,
    training_loss,
)
from .dmt import DMT, DMTConfig
from .molgraph import ContinuousGraph, MolecularGraph
from .spectra import CorpusError, SpectraSet, load_corpus, parse_record
from .specformer import (
    SpecFormer,
    SpecFormerConfig,
    StructureEncoder,
    contrastive_loss,
    mask_patches,
    mpr_loss,
    structure_denoising_loss,
)


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class OptimConfig:
    lr: float = 3e-4
    batch_size: int = 32
    steps: int = 1000
    grad_clip: float = 1.0
    seed: int = 0
    self_cond_prob: float = 0.5
    val_every: int = 200


@dataclass
class SamplingConfig:
    steps: int = 1000
    tau: float = 1.0
    k: int = 1
    seed: int = 0
    n_atoms_policy: str = "empirical"  # or "fixed:<k>"


@dataclass
class PretrainConfig:
    mask_ratio: float = 0.3
    betas: tuple = (1.0, 1.0, 0.1)
    stage1_steps: int = 200
    stage2_steps: int = 200
    noise_scale: float = 0.1
    batch_size: int = 16
    lr: float = 3e-4
    seed: int = 0


@dataclass
class ExperimentConfig:
    dataset: str = ""
    out_dir: str = "runs/exp"
    split_seed: int = 0
    modalities: tuple = ("uv", "ir", "raman")
    dmt: DMTConfig = field(default_factory=DMTConfig)
    specformer: SpecFormerConfig = field(default_factory=SpecFormerConfig)
    schedule_s0: float = 0.008
    loss: LossWeights = field(default_factory=LossWeights)
    loss_weighting: str = "sqrt_alpha_over_sigma"
    optim: OptimConfig = field(default_factory=OptimConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    metrics: tuple = ("acc", "mces", "tanimoto_mg", "cosine_mg", "fraggle", "fgsim")
    mces_timeout_ms: int = 2000

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dmt"] = self.dmt.to_dict()
        d["specformer"] = self.specformer.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        try:
            d["dmt"] = DMTConfig(**d.get("dmt", {}))
            d["specformer"] = SpecFormerConfig.from_dict(d["specformer"]) if "specformer" in d else SpecFormerConfig()
            d["loss"] = LossWeights(**d.get("loss", {}))
            d["optim"] = OptimConfig(**d.get("optim", {}))
            sampling = d.get("sampling", {})
            d["sampling"] = SamplingConfig(**sampling)
            pre = d.get("pretrain", {})
            if "betas" in pre:
                pre["betas"] = tuple(pre["betas"])
            d["pretrain"] = PretrainConfig(**pre)
            d["modalities"] = tuple(d.get("modalities", ("uv", "ir", "raman")))
            d["metrics"] = tuple(d.get("metrics", cls.metrics))
            return cls(**d)
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def schedule(self) -> CosineSchedule:
        return CosineSchedule(s0=self.schedule_s0)


def _git_describe() -> str:
    try:
        return subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        ).stdout.strip() or "unknown"
    except OSError:
        return "unknown"


def save_checkpoint(path, kind: str, state: dict, config: ExperimentConfig, extra: dict = None):
    meta = {"kind": kind, "config": config.to_dict(), "git_describe": _git_describe()}
    meta.update(extra or {})
    torch.save({"state": state, "meta": meta}, path)


def load_checkpoint(path) -> dict:
    try:
        return torch.load(path, weights_only=False)
    except (OSError, RuntimeError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from exc


def _restricted_spec_config(cfg: ExperimentConfig) -> SpecFormerConfig:
    return replace(cfg.specformer, modalities=tuple(cfg.modalities))


def _load_dataset(cfg: ExperimentConfig):
    try:
        records, split, diags = load_corpus(cfg.dataset, cfg.split_seed)
    except (OSError, CorpusError) as exc:
        raise DataError(str(exc)) from exc
    return records, split, diags


# ---------------------------------------------------------------------------
# SpecFormer pretraining


def cmd_pretrain_spec(cfg: ExperimentConfig, stage: int = None, resume: str = None) -> str:
    """Two-stage SpecFormer pretraining; returns the checkpoint path."""
    records, split, _ = _load_dataset(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    cfg.save(os.path.join(cfg.out_dir, "config.resolved.json"))
    pre = cfg.pretrain
    torch.manual_seed(pre.seed)
    spec_model = SpecFormer(_restricted_spec_config(cfg))
    struct_model = StructureEncoder(d_out=cfg.specformer.d, cfg=DMTConfig.small())
    start_step = 0
    if resume:
        ck = load_checkpoint(resume)
        spec_model.load_state_dict(ck["state"]["specformer"])
        struct_model.load_state_dict(ck["state"]["structure_encoder"])
        start_step = ck["meta"].get("step", 0)
    opt = torch.optim.Adam(
        list(spec_model.parameters()) + list(struct_model.parameters()), lr=pre.lr
    )
    rng = np.random.default_rng(pre.seed)
    gen = torch.Generator().manual_seed(pre.seed)

    train_mols = [records[i][0] for i in split.train]
    train_specs = [records[i][1] for i in split.train]
    val_mols = [records[i][0] for i in split.val]

    stages = [1, 2] if stage is None else [stage]
    best_val = float("inf")
    ckpt_path = os.path.join(cfg.out_dir, "specformer.pt")
    step = start_step
    for st in stages:
        n_steps = pre.stage1_steps if st == 1 else pre.stage2_steps
        betas = (1.0, 0.0, 0.0) if st == 1 else pre.betas
        log_path = os.path.join(cfg.out_dir, f"pretrain_stage{st}.csv")
        header = ["step", "denoising"] if st == 1 else ["step", "denoising", "mpr", "contrastive", "total"]
        with open(log_path, "a" if resume else "w", newline="") as log_fh:
            writer = csv.writer(log_fh)
            if not resume:
                writer.writerow(header)
            for _ in range(n_steps):
                idx = rng.choice(len(train_mols), size=min(pre.batch_size, len(train_mols)), replace=False)
                opt.zero_grad()
                zx_list, denoise_losses = [], []
                for i in idx:
                    dl, zx = structure_denoising_loss(struct_model, train_mols[i], pre.noise_scale, gen)
                    denoise_losses.append(dl)
                    zx_list.append(zx)
                loss_d = torch.stack(denoise_losses).mean()
                if st == 1:
                    total = betas[0] * loss_d
                    writer.writerow([step, loss_d.item()])
                else:
                    batch_specs = [train_specs[i] for i in idx]
                    raw = spec_model.patch_batch(batch_specs)
                    masked, mask_sets = mask_patches(raw, pre.mask_ratio, int(rng.integers(2**31)))
                    tokens = spec_model.encode_tokens(spec_model.embed(masked))
                    loss_m = mpr_loss(spec_model, tokens, raw, mask_sets)
                    clean_tokens = spec_model.encode_tokens(spec_model.embed(raw))
                    z_s = spec_model.pool(clean_tokens)
                    z_x = torch.stack(zx_list)
                    loss_c = contrastive_loss(z_x, z_s)
                    total = betas[0] * loss_d + betas[1] * loss_m + betas[2] * loss_c
                    writer.writerow(
                        [step, loss_d.item(), loss_m.item(), loss_c.item(), total.item()]
                    )
                total.backward()
                opt.step()
                step += 1
                if step % cfg.optim.val_every == 0 and val_mols:
                    with torch.no_grad():
                        vl = float(
                            torch.stack(
                                [structure_denoising_loss(struct_model, m, pre.noise_scale, gen)[0] for m in val_mols]
                            ).mean()
                        )
                    if vl <= best_val:
                        best_val = vl
                        _save_spec(ckpt_path, spec_model, struct_model, cfg, step)
    _save_spec(ckpt_path, spec_model, struct_model, cfg, step)
    return ckpt_path


def _save_spec(path, spec_model, struct_model, cfg, step):
    save_checkpoint(
        path,
        "specformer",
        {"specformer": spec_model.state_dict(), "structure_encoder": struct_model.state_dict()},
        cfg,
        {"step": step},
    )


def load_specformer(path) -> SpecFormer:
    ck = load_checkpoint(path)
    cfg = ExperimentConfig.from_dict(ck["meta"]["config"])
    model = SpecFormer(_restricted_spec_config(cfg))
    model.load_state_dict(ck["state"]["specformer"])
    model.eval()
    return model


# ---------------------------------------------------------------------------
# conditional diffusion training


def _encode_conditions(spec_model: SpecFormer, spectra_list) -> torch.Tensor:
    spec_model.eval()
    with torch.no_grad():
        _, z_s = spec_model(spectra_list)
    return z_s


def _graph_batch(mols, dtype=torch.float32) -> ContinuousGraph:
    h = torch.stack([torch.as_tensor(m.h, dtype=dtype) for m in mols])
    a = torch.stack([torch.as_tensor(m.a, dtype=dtype) for m in mols])
    x = torch.stack([torch.as_tensor(m.x - m.x.mean(axis=0), dtype=dtype) for m in mols])
    return ContinuousGraph(h, a, x)


def cmd_train(cfg: ExperimentConfig, spec_checkpoint: str = None, no_pretrain: bool = False) -> str:
    """Train the DMT denoiser; SpecFormer is frozen (pretrained or fresh)."""
    records, split, _ = _load_dataset(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    cfg.save(os.path.join(cfg.out_dir, "config.resolved.json"))

    torch.manual_seed(cfg.optim.seed)
    if spec_checkpoint and not no_pretrain:
        spec_model = load_specformer(spec_checkpoint)
    else:
        spec_model = SpecFormer(_restricted_spec_config(cfg))
    spec_model.eval()

    dmt_cfg = replace(cfg.dmt, d_spec=cfg.specformer.d)
    model = DMT(dmt_cfg)
    schedule = cfg.schedule()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.optim.lr)
    rng = np.random.default_rng(cfg.optim.seed)
    gen = torch.Generator().manual_seed(cfg.optim.seed)

    train_idx = split.train
    mols = [records[i][0] for i in train_idx]
    conds = _encode_conditions(spec_model, [records[i][1] for i in train_idx])
    # standardize conditioning over the training set so different spectra map
    # to well-separated vectors even when the encoder output scale is small
    cond_mean = conds.mean(dim=0)
    cond_std = conds.std(dim=0).clamp_min(1e-8)
    conds = (conds - cond_mean) / cond_std
    buckets = {}
    for pos, m in enumerate(mols):
        buckets.setdefault(m.n_atoms, []).append(pos)
    bucket_sizes = {n: len(v) for n, v in buckets.items()}
    n_atoms_hist = sorted(bucket_sizes.items())

    log_path = os.path.join(cfg.out_dir, "train.csv")
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for step in range(cfg.optim.steps):
            n = int(rng.choice(list(buckets), p=np.array(list(bucket_sizes.values())) / len(mols)))
            pool = buckets[n]
            idx = rng.choice(pool, size=min(cfg.optim.batch_size, len(pool)), replace=False)
            g0 = _graph_batch([mols[i] for i in idx])
            z_s = conds[[int(i) for i in idx]]
            t = rng.uniform(0.0, 1.0, size=len(idx))
            noise = symmetric_noise(g0, gen)
            g_t = forward_sample(g0, t, noise, schedule)
            log_snr = torch.as_tensor(schedule.log_snr(t), dtype=torch.float32)

            self_cond = g_t.map(torch.zeros_like)
            if rng.random() < cfg.optim.self_cond_prob:
                with torch.no_grad():
                    self_cond = model(g_t, self_cond, log_snr, z_s).map(lambda v: v.detach())
            pred = model(g_t, self_cond, log_snr, z_s)
            loss = training_loss(
                pred, g0, g_t, t, schedule, cfg.loss, weighting=cfg.loss_weighting
            )
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.optim.grad_clip)
            opt.step()
            writer.writerow([step, loss.item()])

    ckpt_path = os.path.join(cfg.out_dir, "dmt.pt")
    save_checkpoint(
        ckpt_path,
        "dmt",
        {"dmt": model.state_dict(), "specformer": spec_model.state_dict()},
        cfg,
        {
            "schedule_s0": cfg.schedule_s0,
            "seed": cfg.optim.seed,
            "n_atoms_hist": n_atoms_hist,
            "cond_mean": cond_mean.tolist(),
            "cond_std": cond_std.tolist(),
        },
    )
    return ckpt_path


class LoadedModel:
    """A trained denoiser plus its frozen spectra encoder and sampling metadata."""

    def __init__(self, ckpt_path):
        ck = load_checkpoint(ckpt_path)
        if ck["meta"]["kind"] != "dmt":
            raise DataError(f"{ckpt_path} is not a denoiser checkpoint")
        self.cfg = ExperimentConfig.from_dict(ck["meta"]["config"])
        dmt_cfg = replace(self.cfg.dmt, d_spec=self.cfg.specformer.d)
        self.dmt = DMT(dmt_cfg)
        self.dmt.load_state_dict(ck["state"]["dmt"])
        self.dmt.eval()
        self.spec_model = SpecFormer(_restricted_spec_config(self.cfg))
        self.spec_model.load_state_dict(ck["state"]["specformer"])
        self.spec_model.eval()
        self.schedule = CosineSchedule(s0=ck["meta"].get("schedule_s0", 0.008))
        self.n_atoms_hist = ck["meta"].get("n_atoms_hist", [])
        meta = ck["meta"]
        self.cond_mean = torch.tensor(meta["cond_mean"]) if "cond_mean" in meta else None
        self.cond_std = torch.tensor(meta["cond_std"]) if "cond_std" in meta else None

    def encode(self, spectra: SpectraSet) -> torch.Tensor:
        with torch.no_grad():
            _, z_s = self.spec_model([spectra])
        if self.cond_mean is not None:
            z_s = (z_s - self.cond_mean) / self.cond_std
        return z_s

    def denoiser(self):
        def fn(g_t, self_cond, log_snr, condition):
            with torch.no_grad():
                return self.dmt(g_t, self_cond, log_snr, condition)

        return fn


def _draw_n_atoms(policy: str, hist, rng) -> int:
    if policy.startswith("fixed:"):
        return int(policy.split(":", 1)[1])
    if policy == "empirical":
        if not hist:
            raise ConfigError("empirical n_atoms policy needs a training histogram")
        ns = np.array([n for n, _ in hist])
        ws = np.array([c for _, c in hist], dtype=float)
        return int(rng.choice(ns, p=ws / ws.sum()))
    raise ConfigError(f"unknown n_atoms policy {policy!r}")


def sample_candidates(model: LoadedModel, spectra: SpectraSet, k: int, tau: float, seed: int,
                      steps: int = None, n_atoms_policy: str = None):
    """K ancestral samples for one spectra record, with derived per-record seed."""
    cfg = model.cfg.sampling
    steps = cfg.steps if steps is None else steps
    policy = n_atoms_policy or cfg.n_atoms_policy
    rng = np.random.default_rng(seed)
    z_s = model.encode(spectra)
    out = []
    for c in range(k):
        n = _draw_n_atoms(policy, model.n_atoms_hist, rng)
        gen = torch.Generator().manual_seed(seed * 1000003 + c)
        res = ancestral_sample(
            model.denoiser(), n, model.schedule, steps=steps, tau=tau,
            generator=gen, condition=z_s,
        )
        out.append(res.molecule)
    return out


def cmd_sample(ckpt_path, spectra_file, out_path, k: int, tau: float, seed: int, steps: int = None) -> str:
    """Write K candidate molecules per input spectra record as JSONL."""
    model = LoadedModel(ckpt_path)
    try:
        with open(spectra_file) as fh:
            lines = [json.loads(s) for s in fh if s.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {spectra_file}: {exc}") from exc
    if not lines:
        raise DataError(f"no records in {spectra_file}")
    with open(out_path, "w") as out:
        for r, rec in enumerate(lines):
            try:
                spectra = SpectraSet(rec["uv"], rec["ir"], rec["raman"])
            except (KeyError, ValueError) as exc:
                raise DataError(f"record {r}: {exc}") from exc
            cands = sample_candidates(model, spectra, k, tau, seed * 100003 + r, steps)
            for c, mol in enumerate(cands):
                row = mol.to_record()
                row["target_index"] = r
                row["candidate"] = c
                out.write(json.dumps(row) + "\n")
    return out_path


# ---------------------------------------------------------------------------
# evaluation


def _read_molecules(path):
    try:
        with open(path) as fh:
            rows = [json.loads(s) for s in fh if s.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"no records in {path}")
    mols = []
    for i, rec in enumerate(rows):
        try:
            mols.append((MolecularGraph.from_record(rec), rec))
        except (KeyError, ValueError) as exc:
            raise DataError(f"record {i} in {path}: {exc}") from exc
    return mols


def cmd_evaluate(samples_file, reference_file, selection=None, mces_timeout_ms: int = 2000,
                 out_json: str = None, plots: bool = False, train_file: str = None) -> dict:
    """Compute the selected metrics for a sample file vs. a reference file."""
    selection = tuple(selection or ("acc", "mces", "tanimoto_mg", "cosine_mg", "fraggle", "fgsim"))
    sample_rows = _read_molecules(samples_file)
    refs = [m for m, _ in _read_molecules(reference_file)]

    grouped = {}
    for mol, rec in sample_rows:
        grouped.setdefault(rec.get("target_index", len(grouped)), []).append(mol)
    targets = {i: refs[i] for i in grouped if i < len(refs)}
    if len(targets) != len(grouped):
        raise DataError("sample target_index out of range of the reference file")

    report = {"n_targets": len(targets), "fcd": None, "fcd_reason": "requires external pretrained chemistry network"}
    detail = []

    k_max = max(len(v) for v in grouped.values())
    if "acc" in selection:
        curve = met.acc_curve(
            [targets[i] for i in sorted(targets)],
            [grouped[i] for i in sorted(targets)],
            sorted({1, min(5, k_max), k_max}),
        )
        for k, v in curve.items():
            report[f"acc_at_{k}"] = v

    pair_metrics = {
        "mces": None, "tanimoto_mg": None, "cosine_mg": None, "fraggle": None, "fgsim": None,
    }
    per_pair = {k: [] for k in pair_metrics}
    mces_common = []
    for i in sorted(targets):
        target, cand = targets[i], grouped[i][0]
        row = {"target_index": i}
        if "mces" in selection:
            res = met.mces(target, cand, timeout_s=mces_timeout_ms / 1000.0)
            per_pair["mces"].append(res.distance)
            mces_common.append(res.common_edges)
            row["mces_distance"] = res.distance
            row["mces_exact"] = res.exact
        if "tanimoto_mg" in selection or "cosine_mg" in selection:
            fa = met.morgan_fingerprint(target)
            fb = met.morgan_fingerprint(cand)
            if "tanimoto_mg" in selection:
                per_pair["tanimoto_mg"].append(met.tanimoto(fa, fb))
                row["tanimoto_mg"] = per_pair["tanimoto_mg"][-1]
            if "cosine_mg" in selection:
                per_pair["cosine_mg"].append(met.cosine(fa, fb))
                row["cosine_mg"] = per_pair["cosine_mg"][-1]
        if "fraggle" in selection:
            per_pair["fraggle"].append(met.fraggle_sim(target, cand))
            row["fraggle"] = per_pair["fraggle"][-1]
        if "fgsim" in selection:
            per_pair["fgsim"].append(met.fg_sim(target, cand))
            row["fgsim"] = per_pair["fgsim"][-1]
        detail.append(row)
    for name, vals in per_pair.items():
        if vals:
            report[name] = float(np.mean(vals))
    if mces_common:
        report["mces_common_edges"] = float(np.mean(mces_common))

    all_samples = [m for group in grouped.values() for m in group]
    if "generation" in selection:
        train_refs = [m for m, _ in _read_molecules(train_file)] if train_file else refs
        report.update(met.generation_metrics(all_samples, train_refs, refs))
    if "geometry" in selection:
        for feat in ("bond", "angle", "dihedral"):
            try:
                report[f"mmd_{feat}"] = met.geometry_mmd(all_samples, refs, feat)
            except ValueError:
                report[f"mmd_{feat}"] = None

    report["detail"] = detail
    if out_json:
        with open(out_json, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    if plots and out_json:
        _write_plots(all_samples, refs, report, os.path.dirname(os.path.abspath(out_json)))
    return report


def _write_plots(samples, refs, report, out_dir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for feat, fn in (("bond", met.bond_lengths), ("angle", met.bond_angles), ("dihedral", met.dihedral_angles)):
        fig, ax = plt.subplots()
        for label, mols in (("samples", samples), ("reference", refs)):
            vals = fn(mols)
            if vals.size:
                ax.hist(vals, bins=40, alpha=0.5, density=True, label=label)
        ax.set_title(feat)
        ax.legend()
        fig.savefig(os.path.join(out_dir, f"hist_{feat}.png"))
        plt.close(fig)
    acc_items = sorted(
        (int(k.split("_")[-1]), v) for k, v in report.items() if k.startswith("acc_at_")
    )
    if acc_items:
        fig, ax = plt.subplots()
        ax.plot([k for k, _ in acc_items], [v for _, v in acc_items], marker="o")
        ax.set_xlabel("K")
        ax.set_ylabel("ACC@K")
        fig.savefig(os.path.join(out_dir, "acc_curve.png"))
        plt.close(fig)


def cmd_report(report_json) -> str:
    """Render a saved metric report as aligned text lines."""
    try:
        with open(report_json) as fh:
            report = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {report_json}: {exc}") from exc
    lines = []
    for key in sorted(report):
        if key == "detail":
            continue
        lines.append(f"{key:24s} {report[key]}")
    return "\n".join(lines)
