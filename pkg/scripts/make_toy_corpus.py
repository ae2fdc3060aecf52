"""Write the synthetic desk-scale corpus and a noise set to disk, with manifests for the CLI."""
from __future__ import annotations

import argparse

from atss_net import synth


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--speakers", type=int, default=4)
    ap.add_argument("--utterances", type=int, default=6)
    ap.add_argument("--seconds", type=float, nargs=2, default=(2.0, 3.0), metavar=("MIN", "MAX"))
    ap.add_argument("--noise-clips", type=int, default=6)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    corpus = synth.make_corpus(args.speakers, args.utterances, tuple(args.seconds), seed=args.seed)
    manifest = synth.write_corpus(corpus, f"{args.out}/speech")
    noise = synth.write_noise(synth.make_noise_set(args.noise_clips, seed=args.seed), f"{args.out}/noise")
    print(f"speech manifest: {manifest}")
    print(f"noise manifest:  {noise}")


if __name__ == "__main__":
    main()
