"""Command-line entry points.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure. `SLEEPSET_OUT_DIR` provides a default output directory and
`SLEEPSET_THREADS` a default worker count.
"""

import argparse
import dataclasses
import json
import os
import shutil
import sys

from . import gradcheck as gradcheck_mod
from . import synth as synth_mod
from .config import RunConfig, config_digest, load_run_config
from .data import (is_preprocessed_container, load_split, manifest_paths,
                   load_manifest, preprocess_recording, read_container,
                   write_container, write_manifest)
from .errors import DataError, NumericalError, SleepsetError, UsageError
from .evaluate import (CLASS_NAMES, evaluate_recordings,
                       render_confusion_svg)
from .model import predict
from .signals import ALL_KINDS, parse_kind
from .train import load_checkpoint, save_checkpoint, train_loop


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _env_threads(value):
    if value is not None:
        return value
    return int(os.environ.get("SLEEPSET_THREADS", "1"))


def _out_dir(value):
    if value is not None:
        return value
    env = os.environ.get("SLEEPSET_OUT_DIR")
    if env:
        return env
    raise UsageError("no output directory given (use --out or "
                     "SLEEPSET_OUT_DIR)")


def _load_config(path, seed_override=None):
    cfg = load_run_config(path) if path else RunConfig().validate()
    if seed_override is not None:
        cfg.seed = seed_override
    return cfg


def _parse_modalities(text):
    if not text:
        raise UsageError("empty modality list")
    kinds = []
    for name in text.split(","):
        try:
            kinds.append(parse_kind(name.strip()))
        except ValueError as exc:
            raise UsageError(str(exc))
    return kinds


def _split_counts(n, ratios):
    raw = [n * r for r in ratios]
    counts = [int(x) for x in raw]
    remainder = n - sum(counts)
    order = sorted(range(len(ratios)),
                   key=lambda i: (-(raw[i] - counts[i]), i))
    for i in range(remainder):
        counts[order[i % len(order)]] += 1
    return counts


def cmd_synth(args):
    cfg = _load_config(args.config, args.seed)
    out_dir = _out_dir(args.out)
    try:
        os.makedirs(out_dir, exist_ok=True)
        probe = os.path.join(out_dir, ".write-test")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        raise DataError(f"output directory {out_dir!r} is not writable: "
                        f"{exc}")
    n = args.n if args.n is not None else cfg.data.n_recordings
    counts = _split_counts(n, cfg.data.split)
    splits = ["train"] * counts[0] + ["val"] * counts[1] + ["test"] * counts[2]
    base_seed = cfg.seed * 1_000_000
    entries = []
    for i in range(n):
        rec_cfg = dataclasses.replace(cfg.data.synth, seed=base_seed + i)
        rec = synth_mod.synth_generate(rec_cfg)
        fname = f"{rec.id}.sset"
        write_container(os.path.join(out_dir, fname), rec)
        entries.append({"path": fname, "split": splits[i],
                        "group_keys": rec.group_keys})
    manifest = os.path.join(out_dir, "manifest.json")
    write_manifest(manifest, entries)
    print(f"wrote {n} recordings "
          f"({counts[0]} train / {counts[1]} val / {counts[2]} test) "
          f"to {out_dir}")
    return 0


def cmd_preprocess(args):
    cfg = _load_config(args.config)
    out_dir = _out_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    entries = load_manifest(args.manifest)
    paths = manifest_paths(args.manifest)
    out_entries = []
    for entry, path in zip(entries, paths):
        fname = os.path.basename(path)
        dest = os.path.join(out_dir, fname)
        if not os.path.exists(path):
            raise DataError(f"input container missing: {path}")
        if is_preprocessed_container(path):
            print(f"{fname}: already preprocessed; no-op")
            if os.path.abspath(path) != os.path.abspath(dest):
                shutil.copyfile(path, dest)
        else:
            raw = read_container(path)
            rec = preprocess_recording(
                raw, samples_per_epoch=cfg.model.samples_per_epoch,
                target_epochs=cfg.model.epochs_t)
            write_container(dest, rec)
        out_entries.append({"path": fname, "split": entry["split"],
                            "group_keys": entry.get("group_keys", {})})
    manifest = os.path.join(out_dir, "manifest.json")
    write_manifest(manifest, out_entries)
    print(f"preprocessed {len(out_entries)} recordings to {out_dir}")
    return 0


def cmd_train(args):
    if args.resume_schedule and not args.init_from:
        raise UsageError("--resume-schedule requires --init-from")
    cfg = _load_config(args.config, args.seed)
    train_recs = load_split(args.manifest, "train")
    val_manifest = args.val_manifest or args.manifest
    val_recs = load_split(val_manifest, "val")

    init = None
    resume_state = None
    if args.init_from:
        init, prev_state, prev_model_cfg, _, _, _ = \
            load_checkpoint(args.init_from)[:6]
        if args.resume_schedule:
            resume_state = prev_state
            resume_state.epoch = 0  # schedule (step) continues; epochs restart
            resume_state.best_val_loss = float("inf")
            resume_state.patience = 0

    def log_writer(record):
        log_fh.write(json.dumps(record, sort_keys=True) + "\n")

    log_path = args.log or (args.out + ".log.jsonl")
    with open(log_path, "w") as log_fh:
        result = train_loop(
            train_recs, val_recs, cfg.model, cfg.train,
            masking_config=cfg.masking, seed=cfg.seed, init=init,
            resume_state=resume_state, log_writer=log_writer,
            max_steps=args.max_steps,
            progress=(None if args.quiet else _print_epoch))
    save_checkpoint(args.out, result.params, result.state, cfg.model,
                    cfg.train, cfg.masking, cfg.seed)
    print(f"best validation loss {result.state.best_val_loss:.6f} "
          f"(epoch {result.best_epoch}); checkpoint: {args.out}; "
          f"log: {log_path}")
    return 0


def _print_epoch(epoch, step, val_loss):
    print(f"epoch {epoch:3d} step {step:5d} val_loss {val_loss:.5f}")


def cmd_eval(args):
    params, _, model_cfg, _, _, _ = load_checkpoint(args.checkpoint)
    recordings = load_split(args.manifest, args.split)
    subset = _parse_modalities(args.modalities) if args.modalities \
        else list(ALL_KINDS)
    report = evaluate_recordings(
        params, model_cfg, recordings, subset,
        group_key=args.group_by, threads=_env_threads(args.threads),
        config_digest=config_digest(model_cfg))
    text = report.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        print(f"report: {args.out}")
    else:
        print(text)
    if args.svg:
        with open(args.svg, "w") as fh:
            fh.write(render_confusion_svg(report.confusion))
        print(f"svg: {args.svg}")
    print(f"kappa_total {report.kappa_total:.4f} "
          f"accuracy_total {report.accuracy_total:.4f} "
          f"over {report.n_recordings} recordings "
          f"({report.skipped} skipped)")
    return 0


def cmd_infer(args):
    params, _, model_cfg, _, _, _ = load_checkpoint(args.checkpoint)
    rec = read_container(args.container)
    if not hasattr(rec, "labels"):
        raise DataError(f"{args.container} holds a raw recording; run "
                        "`sleepset preprocess` first")
    subset = _parse_modalities(args.modalities) if args.modalities \
        else [k for k in ALL_KINDS if k in rec.series]
    hypnogram, probs = predict(rec, subset, params, model_cfg)
    with open(args.out, "w") as fh:
        fh.write("epoch,stage,p_wake,p_light,p_deep,p_rem\n")
        for t in range(len(hypnogram)):
            row = ",".join(repr(float(p)) for p in probs[t])
            fh.write(f"{t},{CLASS_NAMES[hypnogram[t]]},{row}\n")
    print(f"wrote {len(hypnogram)} epochs to {args.out}")
    return 0


def cmd_gradcheck(args):
    trials = args.trials if args.trials is not None else \
        (3 if args.tiny else 5)
    failures = 0

    def report(res):
        nonlocal failures
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name:20s} max_rel_error {res.max_rel_error:.3e} "
              f"(tolerance {res.tolerance:g})")
        if not res.passed:
            failures += 1

    gradcheck_mod.run_all(trials=trials, include_model=not args.tiny,
                          corrupt=args.inject_fault, progress=report)
    if failures:
        raise NumericalError(f"{failures} gradient check(s) failed")
    print("all gradient checks passed")
    return 0


def build_parser():
    parser = _Parser(prog="sleepset",
                     description="Multi-modal sleep staging toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--n", type=int, help="override recording count")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="resample/normalize/pad recordings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="run config JSON")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--manifest", required=True,
                   help="manifest with train (and val) splits")
    p.add_argument("--val-manifest", help="separate validation manifest")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", help="JSONL training log path")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--init-from", help="checkpoint to initialize weights")
    p.add_argument("--resume-schedule", action="store_true",
                   help="continue the lr schedule from the loaded step")
    p.add_argument("--max-steps", type=int, help="hard step budget")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test",
                   choices=("train", "val", "test"))
    p.add_argument("--modalities", help="comma-separated subset, e.g. "
                   "ECG,THX (default: all)")
    p.add_argument("--group-by", help="group sub-reports by a metadata key")
    p.add_argument("--out", help="report JSON path (default: stdout)")
    p.add_argument("--svg", help="confusion-matrix SVG path")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="classify one recording to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--container", required=True)
    p.add_argument("--modalities")
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--tiny", action="store_true",
                   help="fewer trials, primitives only")
    p.add_argument("--trials", type=int)
    p.add_argument("--inject-fault", metavar="NAME",
                   help="damage one check's gradients (negative control)")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SleepsetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
