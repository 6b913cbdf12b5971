"""Command-line entry point: ``posegan <command> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import io as pio
from .skeleton import BODY8, MOTION_CLASSES, PoseSequence, make_synthetic_dataset
from .training import (ABLATION_TERMS, TrainConfig, TrainingDiverged, compare_arms, run_ablation,
                       run_unseen_class_experiment, stratified_split, stratified_subset, train_classifier)

log = logging.getLogger("posegan")


def _load_config(args) -> TrainConfig:
    cfg = pio.load_config(args.config)[0] if args.config else TrainConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    if getattr(args, "cls_epochs", None) is not None:
        changes["cls_epochs"] = args.cls_epochs
    return cfg.replace(**changes) if changes else cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _json(path: Path, obj) -> None:
    pio.atomic_write(path, (json.dumps(obj, indent=2, default=_jsonable) + "\n").encode("utf-8"))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# commands

def cmd_make_synth(args) -> int:
    ds = make_synthetic_dataset(args.clips, args.classes, T=args.frames, seed=args.seed or 0)
    classes = {i: MOTION_CLASSES[i].name for i in range(args.classes)}
    pio.save_dataset(pio.Dataset(ds, BODY8, classes), args.out)
    print(f"wrote {len(ds)} clips ({args.classes} classes, {args.frames} frames) to {args.out}")
    return 0


def cmd_train_gan(args) -> int:
    cfg = _load_config(args)
    data = pio.load_dataset(args.data)
    out = _out_dir(args)
    pio.save_config(cfg, out / "config.yaml", {"train": str(args.data)})
    from .training import GANTrainer
    trainer = GANTrainer(data.clips, cfg, data.skeleton)

    def report(tr, rows):
        r = rows[-1]
        print(f"epoch {tr.epoch}/{cfg.epochs} loss_d={r['loss_d']:.4f} loss_g={r['loss_g']:.4f} "
              f"loss_q={r['loss_q']:.4f} k_best={tr.k_best}", flush=True)
        pio.write_metrics_csv(out / "metrics.csv", tr.history)

    try:
        trainer.fit(callback=report)
    except TrainingDiverged as exc:
        pio.write_metrics_csv(out / "metrics.csv", trainer.history)
        _json(out / "diverged.json", exc.snapshot)
        pio.save_checkpoint(trainer.checkpoint(), out / "diverged.ckpt")
        print(f"error: {exc}; snapshot written to {out / 'diverged.json'}", file=sys.stderr)
        return 3
    pio.write_metrics_csv(out / "metrics.csv", trainer.history)
    pio.save_checkpoint(trainer.checkpoint(), out / "final.ckpt")
    if trainer.best is not None:
        pio.save_checkpoint(trainer.best, out / "best.ckpt")
    print(f"wrote {out / 'final.ckpt'} (best k={trainer.k_best} at epoch "
          f"{trainer.best.epoch if trainer.best else '-'}) and {out / 'metrics.csv'}")
    return 0


def _priors_from(data: pio.Dataset, stride: int, count: int, clip: Optional[int]):
    clips = data.clips if clip is None else [data.clips[clip]]
    ids = data.clip_ids if clip is None else [data.clip_ids[clip]]
    priors = []
    for cid, c in zip(ids, clips):
        frames = c.frames[::stride]
        if len(frames) < count:
            raise ValueError(f"clip {cid} has {len(frames)} frames at stride {stride}; --priors needs {count}")
        priors.append(frames[:count])
    return ids, clips, np.stack(priors)


def cmd_predict(args) -> int:
    from .estimators import MotionGAN
    model = MotionGAN.load(args.checkpoint)
    data = pio.load_dataset(args.data)
    cfg = model.config_
    count = args.priors if args.priors is not None else cfg.m
    ids, clips, priors = _priors_from(data, cfg.frame_stride, count, args.clip)
    preds = model.predict(priors, samples=args.samples, horizon=args.horizon,
                          seed=args.seed if args.seed is not None else cfg.seed)     # (S, B, h, J, 3)
    out_clips, out_ids = [], []
    for b, (cid, c) in enumerate(zip(ids, clips)):
        for s in range(args.samples):
            out_clips.append(PoseSequence(preds[s, b], c.label, c.subject))
            out_ids.append(f"{cid}_z{s}")
    pio.save_dataset(pio.Dataset(out_clips, data.skeleton, data.classes, out_ids, data.units), args.out)
    print(f"wrote {len(out_clips)} sequences of {preds.shape[2]} poses to {args.out}")
    if args.svg:
        from .svg import save_strips
        save_strips(args.svg, preds[:, 0], data.skeleton, prior=priors[0],
                    labels=[f"z{s}" for s in range(args.samples)])
        print(f"wrote {args.svg}")
    return 0


def cmd_score_quality(args) -> int:
    from .estimators import MotionGAN
    model = MotionGAN.load(args.checkpoint)
    data = pio.load_dataset(args.data)
    cfg = model.config_
    length = cfg.m + cfg.n
    rows = []
    for cid, c in zip(data.clip_ids, data.clips):
        frames = c.frames[::cfg.frame_stride]
        seq = frames[:length] if len(frames) >= length else frames
        prob = float(model.score_quality(seq)[0])
        rows.append((cid, prob))
        print(f"{cid}\t{prob:.6f}")
    if args.out:
        pio.write_csv(args.out, ("clip", "probability"), rows)
    return 0


def _write_arm_results(out: Path, arms: dict) -> None:
    names = list(arms)
    epochs = len(next(iter(arms.values())).train_accuracy)
    header = ["epoch"] + [f"{n}_{k}" for n in names for k in ("train_acc", "test_acc")]
    rows = []
    for e in range(epochs):
        row = [e + 1]
        for n in names:
            r = arms[n]
            row += [r.train_accuracy[e], r.test_accuracy[e] if r.test_accuracy else ""]
        rows.append(row)
    pio.write_csv(out / "accuracy.csv", header, rows)
    for n, r in arms.items():
        if r.confusion:
            cm = r.final_confusion
            pio.write_csv(out / f"confusion_{n}.csv", ["true\\pred"] + [str(c) for c in r.classes],
                          ([str(c)] + cm[i].tolist() for i, c in enumerate(r.classes)))


def cmd_train_classifier(args) -> int:
    cfg = _load_config(args)
    data = pio.load_dataset(args.data)
    out = _out_dir(args)
    n_classes = max(c.label for c in data.clips) + 1
    summary = {}
    if args.holdout_classes:
        holdout = [int(v) for v in args.holdout_classes.split(",") if v.strip()]
        cmp = run_unseen_class_experiment(data.clips, holdout, cfg, data.skeleton)
        arms = {"pretrained": cmp.pretrained, "scratch": cmp.scratch}
        summary = cmp.summary()
        summary["holdout_classes"] = holdout
    else:
        train, test = stratified_split(data.clips, 1 - cfg.test_fraction, cfg.seed)
        if args.fraction is not None:
            train = stratified_subset(train, args.fraction, cfg.seed + 5)
        if args.checkpoint:
            ckpt = pio.load_checkpoint(args.checkpoint)
            cmp = compare_arms(train, test, cfg, ckpt, data.skeleton, n_classes=n_classes)
            arms = {"pretrained": cmp.pretrained, "scratch": cmp.scratch}
            summary = cmp.summary()
        else:
            res = train_classifier(train, test, cfg, "random", None, data.skeleton, n_classes=n_classes)
            arms = {"scratch": res}
    for n, r in arms.items():
        summary[f"final_test_{n}"] = r.test_accuracy[-1]
        print(f"{n}: final train acc {r.train_accuracy[-1]:.4f}, test acc {r.test_accuracy[-1]:.4f}")
    summary["fraction"] = args.fraction if args.fraction is not None else 1.0
    _write_arm_results(out, arms)
    _json(out / "summary.json", summary)
    print(f"wrote {out / 'accuracy.csv'} and confusion matrices")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    data = pio.load_dataset(args.data)
    result = run_ablation(data.clips, cfg, args.toggle, data.skeleton, samples=args.samples)
    for arm in ("baseline", "ablated"):
        m = result[arm]
        shown = {k: (round(v, 6) if isinstance(v, float) else v) for k, v in m.items()}
        print(f"{arm}: {shown}")
    if args.out:
        _json(Path(args.out), result)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all
    report = run_all(args.instances, args.seed or 0, networks=not args.skip_networks)
    for r in report["results"]:
        print(r.line())
    print(f"{'all suites passed' if report['passed'] else 'FAILED'} in {report['seconds']:.1f}s")
    return 0 if report["passed"] else 1


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posegan", description="Probabilistic human motion prediction with GANs")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, seed=True):
        if config:
            p.add_argument("--config", help="YAML run configuration")
        if seed:
            p.add_argument("--seed", type=int, help="overrides the configured seed")

    p = sub.add_parser("make-synth", help="write a synthetic skeleton dataset")
    common(p, config=False)
    p.add_argument("--clips", type=int, default=400)
    p.add_argument("--classes", type=int, default=2, choices=range(1, len(MOTION_CLASSES) + 1), metavar="K")
    p.add_argument("--frames", type=int, default=80)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_synth)

    p = sub.add_parser("train-gan", help="adversarial training with quality-based model selection")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_gan)

    p = sub.add_parser("predict", help="sample future poses from a checkpoint")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset providing the prior poses")
    p.add_argument("--clip", type=int, help="use only this clip index")
    p.add_argument("--priors", type=int, help="number of prior poses (default: configured m)")
    p.add_argument("--horizon", type=int, help="number of predicted poses (default: configured n)")
    p.add_argument("--samples", type=int, default=1, help="number of z draws")
    p.add_argument("--svg", help="also write stick-figure strips for the first prior")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score-quality", help="print quality-network probabilities per clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="optional CSV")
    p.set_defaults(func=cmd_score_quality)

    p = sub.add_parser("train-classifier", help="action recognition, scratch vs pretrained discriminator")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="GAN checkpoint for the pretrained arm")
    p.add_argument("--fraction", type=float, help="fraction of the training split to use")
    p.add_argument("--holdout-classes", help="comma-separated classes hidden from GAN training")
    p.add_argument("--epochs", type=int, help="GAN epochs (holdout experiment)")
    p.add_argument("--cls-epochs", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("ablate", help="train with and without one loss term")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--toggle", required=True, choices=sorted(ABLATION_TERMS))
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="optional JSON result")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    common(p, config=False)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--skip-networks", action="store_true")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)     # usage errors exit with status 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError, KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
