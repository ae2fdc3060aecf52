"""``atss`` command-line entry point.

Exit codes: 0 success, 1 bad arguments, 2 data/checkpoint errors, 3 numeric
failure, 4 gradient-check failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path


from . import checkpoint, checks
from .config import Config
from .embedder import SpeakerEmbedder, train_embedder
from .errors import AtssError, CheckpointError, ConfigError, DataError, NumericError
from .model import AtssNet
from .pipeline import ABLATIONS, ablation_config, evaluate, separate, train_separator
from .simulate import MixtureSample, load_manifest, load_noise_manifest, sample_seed, simulate_noisy, \
    simulate_two_speaker
from .wavio import read_wav, write_wav

log = logging.getLogger("atss")

EXIT_ARGS, EXIT_DATA, EXIT_NUMERIC, EXIT_GRADCHECK = 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_ARGS)


def _config(path) -> Config:
    return Config.load(path) if path else Config()


def _load(path, kind):
    model, cfg = checkpoint.load_model(path)
    if not isinstance(model, kind):
        raise CheckpointError(f"{path} does not hold a {'speaker embedder' if kind is SpeakerEmbedder else 'separator'}")
    return model, cfg


def cmd_train_embedder(args) -> int:
    cfg = _config(args.config)
    corpus = load_manifest(args.manifest, min_samples=cfg["stft.frame_len"])
    if len(corpus) < 2:
        raise DataError(f"{args.manifest}: need at least two speakers")
    result = train_embedder(corpus, cfg.embedder_config(len(corpus)), cfg.embedder_train_config())
    checkpoint.save_model(args.out, result.model, cfg.to_text())
    for epoch, loss in enumerate(result.history):
        print(f"epoch {epoch} loss {loss:.6f}")
    return 0


def _history_csv(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, train, val in history:
            writer.writerow([epoch, repr(train), repr(val)])


def loss_csv_path(out) -> Path:
    return Path(str(out) + ".loss.csv")


def cmd_train_separator(args) -> int:
    cfg = _config(args.config)
    mcfg = cfg.model_config()
    tcfg = cfg.train_config()
    embedder = None
    if mcfg.uses_embedding:
        embedder, _ = _load(args.embedder, SpeakerEmbedder)
    train = load_manifest(args.manifest, tcfg.segment)
    val = load_manifest(args.val_manifest, tcfg.segment)
    noise = load_noise_manifest(args.noise_manifest) if args.noise_manifest else None
    try:
        result = train_separator(train, val, embedder, mcfg, tcfg, cfg.stft_config(), noise,
                                 fault_step=args.inject_nan_step,
                                 on_epoch=lambda e, r: print("epoch {} train {:.6f} val {:.6f}".format(*r.history[-1])))
    except NumericError as exc:
        if exc.state is not None:
            partial = Path(str(args.out) + ".partial")
            checkpoint.save_model(partial, exc.state.model, cfg.to_text())
            _history_csv(loss_csv_path(partial), exc.state.history)
            print(f"partial state written to {partial}", file=sys.stderr)
        raise
    checkpoint.save_model(args.out, result.model, cfg.to_text())
    _history_csv(loss_csv_path(args.out), result.history)
    print(f"best epoch {result.best_epoch}")
    return 0


def cmd_separate(args) -> int:
    embedder, _ = _load(args.embedder, SpeakerEmbedder)
    model, cfg = _load(args.model, AtssNet)
    mixture = read_wav(args.mixture)
    reference = read_wav(args.reference)
    if args.debug_ones_mask:
        model.forced_mask = 1.0
    est = separate(mixture, reference, embedder, model, cfg.stft_config())
    if isinstance(est, tuple):
        est = est[0]
    clipped = write_wav(args.out, est, mixture.sample_rate, warn=False)
    if clipped:
        print(f"warning: {clipped} samples clipped to [-1, 1)", file=sys.stderr)
    return 0


def load_index(path) -> list[MixtureSample]:
    path = Path(path)
    try:
        index = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    samples = []
    for entry in index.get("samples", []):
        def wav(key):
            return read_wav(path.parent / entry[key]).samples
        mixture, target = wav("mixture"), wav("target")
        s = MixtureSample(mixture, target, wav("reference"), mixture - target, entry.get("target_speaker", ""),
                          entry.get("interference", ""), entry.get("seed", 0), entry.get("snr_db"))
        s.sample_id = entry["id"]
        samples.append(s)
    if not samples:
        raise DataError(f"{path}: no samples to evaluate")
    return samples


def cmd_evaluate(args) -> int:
    samples = load_index(args.manifest)
    model, cfg = _load(args.model, AtssNet)
    if args.ablation:
        want = ablation_config(args.ablation, model.cfg)
        keep = {k: v for k, v in model.params.items() if k in _param_names(want)}
        try:
            model = AtssNet(want, keep)
        except AtssError as exc:
            raise CheckpointError(f"cannot evaluate {args.model} as '{args.ablation}': {exc}") from None
    embedder = None
    if model.cfg.uses_embedding:
        embedder, _ = _load(args.embedder, SpeakerEmbedder)
    report = evaluate(samples, embedder, model, cfg.stft_config())
    payload = report.to_json()
    payload["ablation"] = model.cfg.mode
    Path(args.report).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(report.summary_line())
    return 0


def _param_names(model_cfg):
    from .model import expected_shapes
    return set(expected_shapes(model_cfg))


def cmd_simulate(args) -> int:
    cfg = _config(args.config)
    tcfg = cfg.train_config()
    corpus = load_manifest(args.manifest, tcfg.segment)
    noise = None
    if args.mode == "noisy":
        if not args.noise_manifest:
            raise DataError("--mode noisy needs --noise-manifest")
        noise = load_noise_manifest(args.noise_manifest)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(args.count):
        seed = sample_seed(args.seed, i)
        if args.mode == "noisy":
            s = simulate_noisy(corpus, noise, seed, tcfg.snr_range, tcfg.segment)
        else:
            s = simulate_two_speaker(corpus, seed, tcfg.segment)
        names = {k: f"{k}_{i:05d}.wav" for k in ("mixture", "target", "reference")}
        write_wav(out / names["mixture"], s.mixture)
        write_wav(out / names["target"], s.target)
        write_wav(out / names["reference"], s.reference)
        entries.append({"id": f"{i:05d}", **names, **s.metadata()})
    index = {"mode": args.mode, "seed": args.seed, "samples": entries}
    (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(entries)} samples to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    ok = True
    with checks.injected_fault(args.inject_fault):
        for name, err, limit, skipped in checks.run(args.scope):
            passed = err < limit
            ok &= passed
            print(f"{name:<24s} max_rel_err={err:.3e} limit={limit:.0e} skipped={skipped} "
                  f"{'ok' if passed else 'FAIL'}")
    return 0 if ok else EXIT_GRADCHECK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="atss", description="Target-speaker separation with temporal attention.")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-embedder", help="train the speaker embedder")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_embedder)

    p = sub.add_parser("train-separator", help="train the mask estimator")
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest", required=True)
    p.add_argument("--embedder")
    p.add_argument("--noise-manifest")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--inject-nan-step", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_train_separator)

    p = sub.add_parser("separate", help="extract the reference speaker from a mixture")
    p.add_argument("--mixture", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--embedder", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--debug-ones-mask", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("evaluate", help="mean SDR before/after separation")
    p.add_argument("--manifest", required=True, help="index.json written by 'simulate'")
    p.add_argument("--embedder")
    p.add_argument("--model", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="write simulated mixtures to disk")
    p.add_argument("--manifest", required=True)
    p.add_argument("--noise-manifest")
    p.add_argument("--mode", choices=("two_speaker", "noisy"), default="two_speaker")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--scope", choices=checks.SCOPES, default="layers")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
