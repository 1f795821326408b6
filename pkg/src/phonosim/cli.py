"""Command-line pipeline: synth, features, pairs, train, eval, analyze, gradcheck.

Each subcommand writes the fully resolved configuration next to its
outputs.  Exit codes: 0 on success, 1 on usage errors, 2 on data or
validation errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


from . import analysis, corpus, dsp, net, train as training
from .errors import PhonosimError


def _echo_config(args: argparse.Namespace, out: str) -> None:
    """Serialize the resolved arguments next to the subcommand's outputs."""
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    if os.path.isdir(out) or not os.path.splitext(out)[1]:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, "resolved_config.json")
    else:
        path = os.path.splitext(out)[0] + ".config.json"
    with open(path, "w") as fh:
        json.dump(resolved, fh, indent=1, default=str)


def _parse_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError:
        raise PhonosimError(f"bad sentence range {text!r}, expected LO:HI")


def _parse_sessions(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s]
    except ValueError:
        raise PhonosimError(f"bad session list {text!r}, expected e.g. 1,2")


def _load_pairs_file(path: str):
    try:
        with open(path) as fh:
            doc = json.load(fh)
        return [(p["left"], p["right"], int(p["label"])) for p in doc["pairs"]]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise PhonosimError(f"cannot read pairs file {path}: {exc}")


def _load_train_config(path: str | None, seed_override: int | None) -> training.TrainConfig:
    values = {}
    if path:
        try:
            with open(path) as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise PhonosimError(f"cannot read training config {path}: {exc}")
    if seed_override is not None:
        values["seed"] = seed_override
    try:
        return training.TrainConfig(**values)
    except TypeError as exc:
        raise PhonosimError(f"bad training config: {exc}")


def _cmd_synth(args) -> None:
    cfg = corpus.SynthConfig(
        n_speakers=args.speakers,
        n_sentences=args.sentences,
        lam=getattr(args, "lambda"),
        interactive_sessions=args.interactive_sessions,
    )
    corpus.generate_synthetic_corpus(cfg, args.seed, args.out)
    _echo_config(args, args.out)
    print(f"wrote synthetic corpus to {args.out}", file=sys.stderr)


def _feature_config(path: str | None) -> dsp.MfccConfig:
    if not path:
        return dsp.MfccConfig()
    try:
        with open(path) as fh:
            return dsp.MfccConfig(**json.load(fh))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise PhonosimError(f"cannot read MFCC config {path}: {exc}")


def _cmd_features(args) -> None:
    manifest = corpus.load_manifest(args.manifest)
    cfg = _feature_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    for u in manifest.utterances:
        if u.audio_path is None:
            raise PhonosimError(f"utterance {u.key} has no audio_path")
        wav = dsp.load_audio(manifest.resolve(u.audio_path))
        feats = dsp.append_deltas(dsp.compute_mfcc(wav, cfg), cfg.delta_window)
        if not args.no_cmvn:
            feats = dsp.cmvn(feats)
        dsp.write_features(feats, os.path.join(args.out, u.key + ".artf"))
    _echo_config(args, args.out)
    print(f"wrote {len(manifest.utterances)} feature files to {args.out}", file=sys.stderr)


def _cmd_pairs(args) -> None:
    manifest = corpus.load_manifest(args.manifest)
    if args.condition == "solo":
        lo, hi = _parse_range(args.range)
        pairs = corpus.build_solo_pairs(manifest, lo, hi)
    else:
        if not args.sessions:
            raise PhonosimError(f"condition {args.condition!r} requires --sessions")
        pairs = corpus.build_condition_pairs(
            manifest, args.condition, _parse_sessions(args.sessions)
        )
    doc = {
        "pairs": [
            {
                "left": p.left.key,
                "right": p.right.key,
                "label": p.label,
                "condition": p.condition,
            }
            for p in pairs
        ]
    }
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=1)
    _echo_config(args, args.out)
    print(f"wrote {len(pairs)} pairs to {args.out}", file=sys.stderr)


def _cmd_train(args) -> None:
    cfg = _load_train_config(args.config, args.seed)
    pairs = _load_pairs_file(args.pairs)
    val_pairs = _load_pairs_file(args.val_pairs) if args.val_pairs else []
    store = dsp.FeatureStore(args.features)
    init = net.load_checkpoint(args.init) if args.init else None
    result = training.train(cfg, pairs, val_pairs, store, init=init)
    os.makedirs(args.out, exist_ok=True)
    net.save_checkpoint(result.best_params, os.path.join(args.out, "model.artm"))
    net.save_checkpoint(result.params, os.path.join(args.out, "model_final.artm"))
    with open(os.path.join(args.out, "history.json"), "w") as fh:
        json.dump(result.history, fh, indent=1)
    _echo_config(args, args.out)
    last = result.history[-1]
    print(
        f"trained {cfg.epochs} epochs, final train accuracy "
        f"{last['train_accuracy']:.3f}",
        file=sys.stderr,
    )


def _cmd_eval(args) -> None:
    params = net.load_checkpoint(args.model)
    pairs = _load_pairs_file(args.pairs)
    store = dsp.FeatureStore(args.features)
    report = training.evaluate(params, pairs, store, args.threshold)
    with open(args.report, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1)
    _echo_config(args, args.report)
    print(
        f"accuracy {report.accuracy:.3f}, AUC {report.auc:.3f} "
        f"on {report.n} pairs",
        file=sys.stderr,
    )


def _cmd_analyze(args) -> None:
    params = net.load_checkpoint(args.model)
    manifest = corpus.load_manifest(args.manifest)
    store = dsp.FeatureStore(args.features)
    solo_range = _parse_range(args.solo_range) if args.solo_range else None
    report = analysis.build_report(
        params,
        manifest,
        store,
        sessions=_parse_sessions(args.sessions),
        threshold=args.threshold,
        solo_range=solo_range,
    )
    analysis.emit_report(report, args.out)
    _echo_config(args, args.out)
    print(f"wrote convergence report to {args.out}", file=sys.stderr)


def _cmd_gradcheck(args) -> None:
    try:
        d_in, d_hidden, d_rep = (int(v) for v in args.dims.split(","))
    except ValueError:
        raise PhonosimError(f"bad dims {args.dims!r}, expected e.g. 5,4,3")
    errors = training.gradient_check(
        net.ModelDims(d_in, d_hidden, d_rep), seed=args.seed
    )
    worst = max(errors.values())
    for name, err in errors.items():
        print(f"{name:10s} max relative error {err:.3e}")
    if worst >= args.tolerance:
        raise PhonosimError(
            f"gradient check failed: worst relative error {worst:.3e} "
            f">= {args.tolerance}"
        )
    print(f"gradient check passed (worst {worst:.3e} < {args.tolerance})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phonosim",
        description=(
            "Measure phonetic convergence with a Siamese recurrent network: "
            "synth -> features -> pairs -> train -> eval -> analyze; "
            "gradcheck verifies the gradient machinery."
        ),
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="cap worker threads globally (also caps BLAS thread pools)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a deterministic synthetic corpus")
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--sentences", type=int, default=20)
    p.add_argument("--lambda", type=float, default=0.0, dest="lambda")
    p.add_argument("--interactive-sessions", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("features", help="extract 39-dim MFCC features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-cmvn", action="store_true")
    p.add_argument("--config", help="JSON file of MFCC parameter overrides")
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("pairs", help="build labeled verification pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--condition", choices=corpus.CONDITIONS, required=True)
    p.add_argument("--range", default="1:40", help="solo sentence range LO:HI")
    p.add_argument("--sessions", help="session ids for interactive/imitation, e.g. 1,2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pairs)

    p = sub.add_parser("train", help="train the Siamese verifier")
    p.add_argument("--manifest", help="unused convenience reference, kept for provenance")
    p.add_argument("--features", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--val-pairs")
    p.add_argument("--config", help="JSON training configuration")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--init", help="checkpoint to fine-tune from")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on labeled pairs")
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("analyze", help="convergence report across conditions")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--sessions", required=True, help="interactive sessions, e.g. 1,2")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--solo-range", help="solo sentence range LO:HI")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--dims", default="5,4,3", help="d_in,d_hidden,d_rep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 1
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        args.func(args)
    except PhonosimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
