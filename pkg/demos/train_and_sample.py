"""End-to-end pipeline on a synthetic corpus: pretrain the spectra encoder,
train the conditional denoiser, sample candidates, evaluate.

Everything is scaled down to run in a couple of minutes on CPU.
Run: python3 demos/train_and_sample.py
"""

import json

from diffspectra.dmt import DMTConfig
from diffspectra.harness import (
    ExperimentConfig,
    cmd_evaluate,
    cmd_pretrain_spec,
    cmd_report,
    cmd_sample,
    cmd_train,
)
from diffspectra.specformer import SpecFormerConfig
from diffspectra.spectra import write_corpus
from diffspectra.toydata import toy_corpus


def main():
    corpus = toy_corpus(n_mols=32, n_atoms=10, seed=0)
    write_corpus("demo_corpus.jsonl", corpus)

    cfg = ExperimentConfig(
        dataset="demo_corpus.jsonl",
        out_dir="demo_run",
        dmt=DMTConfig.small(),
        specformer=SpecFormerConfig.small(),
    )
    cfg.pretrain.stage1_steps = 30
    cfg.pretrain.stage2_steps = 30
    cfg.pretrain.batch_size = 8
    cfg.optim.steps = 200
    cfg.optim.batch_size = 16
    cfg.sampling.steps = 30

    spec_ckpt = cmd_pretrain_spec(cfg)
    print(f"pretrained spectra encoder -> {spec_ckpt}")
    dmt_ckpt = cmd_train(cfg, spec_checkpoint=spec_ckpt)
    print(f"trained denoiser -> {dmt_ckpt}")

    # targets: the first four training molecules (spectra only for sampling,
    # structures as the evaluation reference)
    with open("demo_corpus.jsonl") as fh:
        recs = [json.loads(next(fh)) for _ in range(4)]
    with open("demo_targets_spectra.jsonl", "w") as fh:
        for r in recs:
            fh.write(json.dumps({k: r[k] for k in ("uv", "ir", "raman")}) + "\n")
    with open("demo_targets_ref.jsonl", "w") as fh:
        for r in recs:
            fh.write(json.dumps({k: v for k, v in r.items()
                                 if k not in ("uv", "ir", "raman")}) + "\n")

    cmd_sample(dmt_ckpt, "demo_targets_spectra.jsonl", "demo_samples.jsonl",
               k=3, tau=0.6, seed=1, steps=30)
    print("sampled 3 candidates per target -> demo_samples.jsonl")

    cmd_evaluate("demo_samples.jsonl", "demo_targets_ref.jsonl",
                 out_json="demo_report.json")
    print("\nmetric report:")
    print(cmd_report("demo_report.json"))
    print("\n(a 200-step run will not recover structures; see the acceptance "
          "suite for a converged overfit demonstration)")


if __name__ == "__main__":
    main()
