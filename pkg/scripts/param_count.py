"""Parameter totals of the full-scale separator, broken down by sub-module."""
from __future__ import annotations

import argparse
from collections import defaultdict
from dataclasses import replace

import numpy as np

from atss_net.embedder import EmbedderConfig, SpeakerEmbedder
from atss_net.model import MODES, AtssNet, ModelConfig, expected_shapes

REPORTED = 4.68e6  # published total for the full model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-blocks", type=int, default=3)
    ap.add_argument("--n-heads", type=int, default=2)
    ap.add_argument("--d-k", type=int, default=64)
    ap.add_argument("--embed-dim", type=int, default=256)
    args = ap.parse_args()

    cfg = ModelConfig(n_blocks=args.n_blocks, n_heads=args.n_heads, d_k=args.d_k, embed_dim=args.embed_dim)
    groups = defaultdict(int)
    for name, shape in expected_shapes(cfg).items():
        parts = name.split(".")
        key = parts[1] if parts[0].startswith("block") else parts[0]
        groups[key] += int(np.prod(shape))
    total = AtssNet(cfg).n_parameters()
    print(f"separator ({cfg.n_blocks} blocks, {cfg.n_heads} heads, d_k={cfg.d_k}, F={cfg.freq_bins}, "
          f"embedding {cfg.embed_dim})")
    for key, count in sorted(groups.items(), key=lambda kv: -kv[1]):
        print(f"  {key:<10s} {count:>10,d}  {count / total:6.1%}")
    print(f"  {'total':<10s} {total:>10,d}")
    print(f"reported total {REPORTED:,.0f}; ratio {total / REPORTED:.2f}")
    for mode in MODES:
        if mode != "full":
            print(f"{mode:<13s} variant: {AtssNet(replace(cfg, mode=mode)).n_parameters():,d}")
    emb = SpeakerEmbedder(EmbedderConfig(embed_dim=cfg.embed_dim, n_speakers=2)).without_head()
    print(f"speaker embedder (without classifier head): {sum(p.size for p in emb.params.values()):,d}")


if __name__ == "__main__":
    main()
