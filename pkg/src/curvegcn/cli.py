"""Command-line entry points: dataset generation, the two training phases,
evaluation, batch annotation, the gradient-check suite, and the HTTP
service.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

CONFIG_ENV = "CURVEGCN_CONFIG"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _load_config(args):
    from . import trainer
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        return trainer.TrainConfig.from_json_file(path)
    return trainer.TrainConfig()


def cmd_gen_data(args) -> int:
    from . import data
    out = Path(args.out)
    for split, count, seed in (("train", args.train, args.seed),
                               ("val", args.val, args.seed + 1),
                               ("test", args.test, args.seed + 2)):
        if count <= 0:
            continue
        manifest = data.gen_synthetic(count, seed=seed, out_dir=out / split,
                                      size=args.size, split=split)
        print(f"{split}: {len(manifest)} samples under {manifest.root}")
    return 0


def cmd_train(args) -> int:
    from . import data, trainer
    if args.phase in ("diffacc", "interactive") and not args.init:
        raise UsageError(f"--phase {args.phase} needs --init CHECKPOINT")
    config = _load_config(args)
    train_m = data.load_manifest(args.train_dir)
    val_m = data.load_manifest(args.val_dir)
    log = print if not args.quiet else None
    if args.phase == "matching":
        out = trainer.train_matching_phase(config, train_m, val_m, args.out, log=log)
    elif args.phase == "diffacc":
        out = trainer.finetune_diffacc_phase(config, train_m, val_m, args.init,
                                             args.out, epochs=args.epochs, log=log)
    else:  # interactive
        out = trainer.train_interactive_phase(config, train_m, args.init,
                                              args.out, log=log)
    print(f"checkpoint written to {out}")
    return 0


def cmd_eval(args) -> int:
    from . import data, trainer
    config = _load_config(args)
    manifest = data.load_manifest(args.data)
    thresholds = [float(t) for t in args.thresholds.split(",")] \
        if args.thresholds else None
    report = trainer.evaluate(args.checkpoint, manifest, mode=args.mode,
                              thresholds=thresholds, max_clicks=args.max_clicks,
                              config=config, with_baseline=args.baseline)
    if args.out:
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
        print(f"report written to {args.out}")
    print(report.summary_text())
    return 0


def cmd_annotate(args) -> int:
    from . import data, interactive, model as mdl, raster, trainer
    config = _load_config(args)
    manifest = data.load_manifest(args.data)
    base, _ = interactive.load_bundle(args.checkpoint)
    items = trainer.prepare_samples(manifest, config, want_targets=False)
    results = []
    for item in items:
        pred = mdl.iterative_inference(base, item["crop"])
        h, w = item["gt_mask"].shape
        mask = interactive.curve_mask(pred.final, h, w, config.k_render)
        results.append({"id": item["id"],
                        "curve": pred.final.points.tolist(),
                        "iou": raster.iou(mask, item["gt_mask"])})
    payload = json.dumps(results, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
        print(f"{len(results)} annotations written to {args.out}")
    else:
        print(payload)
    return 0


def cmd_gradcheck(args) -> int:
    from . import gradcheck
    results = gradcheck.run_suite(cases=args.cases, seed=args.seed)
    width = max(len(name) for name in results)
    ok = True
    for name, res in results.items():
        status = "ok" if res["passed"] else "FAIL"
        print(f"{name:<{width}}  max rel err {res['max_rel_err']:.3e}  "
              f"(tol {res['tolerance']:.0e}, {res['seconds']:.1f}s)  {status}")
        ok = ok and res["passed"]
    if not ok:
        print("gradient check FAILED", file=sys.stderr)
        return 2
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from . import server
    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    app = server.app_from_checkpoint(args.checkpoint)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="curvegcn",
                     description="closed-contour annotation models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic blob dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=500)
    p.add_argument("--val", type=int, default=60)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run a training phase")
    p.add_argument("--config", help=f"TrainConfig JSON (or ${CONFIG_ENV})")
    p.add_argument("--phase", choices=("matching", "diffacc", "interactive"),
                   required=True)
    p.add_argument("--train-dir", required=True)
    p.add_argument("--val-dir", required=True)
    p.add_argument("--init", help="input checkpoint (diffacc/interactive)")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None,
                   help="override epoch count (diffacc)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", help=f"TrainConfig JSON (or ${CONFIG_ENV})")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("automatic", "interactive"),
                   default="automatic")
    p.add_argument("--thresholds", help="comma-separated IoU thresholds")
    p.add_argument("--max-clicks", type=int, default=20)
    p.add_argument("--baseline", action="store_true",
                   help="also run the no-model correction baseline")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("annotate", help="batch inference to JSON")
    p.add_argument("--config", help=f"TrainConfig JSON (or ${CONFIG_ENV})")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("serve", help="HTTP annotation service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure contract: diagnostic + exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
