"""``multicenter`` command-line entry point.

Exit codes: 0 ok, 1 check or run failure, 2 input error, 3 numeric abort.
"""
import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import checkpoint, config, gradcheck
from .data import DataError, MixtureSpec, gen_mixture, load_csv, load_idx, write_csv
from .trainer import TrainingAborted, build_model, evaluate, model_checkpoint, train

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
SWEEP_SPREAD_WARNING = 0.02


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _write_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _check_labels(cfg_head, *sets):
    for ds in sets:
        if len(ds) and ds.labels.max() >= cfg_head.num_classes:
            raise DataError(f"{ds.split} labels reach {ds.labels.max()}, head has {cfg_head.num_classes} classes")


def _run_one(run_cfg, head_cfg, train_cfg, out_dir):
    """Train once into ``out_dir``; returns the last MetricsRecord."""
    train_set, test_set = run_cfg.load_data()
    _check_labels(head_cfg, train_set, test_set)
    os.makedirs(out_dir, exist_ok=True)
    model = build_model(head_cfg, run_cfg.layer_dims, train_cfg.seed)
    if model.backbone is not None and model.backbone.layer_dims[0] != train_set.dim:
        raise DataError(f"backbone expects {model.backbone.layer_dims[0]} inputs, data has {train_set.dim}")
    model, metrics = train(
        model, train_set, test_set, head_cfg, train_cfg, run_cfg.variants,
        metrics_path=os.path.join(out_dir, "metrics.jsonl"), checkpoint_dir=out_dir,
    )
    checkpoint.save(os.path.join(out_dir, "final.ckpt"), model_checkpoint(model, head_cfg.sub_centers))
    return metrics[-1]


def cmd_train(args):
    try:
        run_cfg = config.load(args.config)
        if args.seed is not None:
            run_cfg.train = dataclasses.replace(run_cfg.train, seed=args.seed)
        out_dir = args.out or run_cfg.output_dir
        run_cfg.output_dir = out_dir
        head_cfg = run_cfg.head_config()
        os.makedirs(out_dir, exist_ok=True)
        _write_json(os.path.join(out_dir, "resolved-config.json"), run_cfg.resolved(head_cfg))
        last = _run_one(run_cfg, head_cfg, run_cfg.train, out_dir)
    except (config.ConfigError, DataError, OSError) as exc:
        _err(exc)
        return EXIT_INPUT
    except (TrainingAborted, FloatingPointError) as exc:
        _err(exc)
        return EXIT_NUMERIC
    print(f"epoch={last.epoch} total={last.total:.6f} train_acc={last.train_acc:.6f} test_acc={last.test_acc:.6f}")
    print(f"artifacts written to {out_dir}")
    return EXIT_OK


def _eval_data(args):
    if args.config:
        return config.load(args.config).load_data()[1]
    if args.csv:
        return load_csv(args.csv, args.label_column, "test")
    if args.idx:
        return load_idx(args.idx[0], args.idx[1], "test")
    raise DataError("give one of --config, --csv or --idx")


def cmd_eval(args):
    try:
        ckpt = checkpoint.load(args.checkpoint)
        data = _eval_data(args)
        d_in = ckpt.backbone.layer_dims[0] if ckpt.backbone is not None else ckpt.W.shape[0]
        if data.dim != d_in:
            raise DataError(f"checkpoint expects {d_in} input features, data has {data.dim}")
    except (checkpoint.CheckpointError, config.ConfigError, DataError, OSError) as exc:
        _err(exc)
        return EXIT_INPUT
    # sigma never enters evaluation: collapsed and full checkpoints agree
    acc = evaluate(ckpt.W, data, ckpt.backbone)
    print(f"top1={acc:.6f} n={len(data)}")
    return EXIT_OK


def cmd_collapse(args):
    try:
        ckpt = checkpoint.load(args.checkpoint)
        checkpoint.save(args.out, checkpoint.collapse(ckpt))
    except (checkpoint.CheckpointError, OSError) as exc:
        _err(exc)
        return EXIT_INPUT
    print(f"collapsed head: {ckpt.W.size} head parameters (dropped {0 if ckpt.collapsed else ckpt.log_sigma.size})")
    return EXIT_OK


def cmd_gradcheck(args):
    if args.dims is not None and len(args.dims) != 4:
        _err("--dims takes four integers d,C,K,n")
        return EXIT_INPUT
    dims = tuple(args.dims) if args.dims else None
    if dims is not None:
        d, C, K, n = dims
        if d < 1 or C < 2 or K < 0 or n < 1:
            _err("--dims needs d >= 1, C >= 2, K >= 0, n >= 1")
            return EXIT_INPUT
        if 2 * d * C + n * d > 10_000:
            _err("--dims too large for a finite-difference check (limit 1e4 parameters)")
            return EXIT_INPUT
    reports = gradcheck.run(args.trials, args.seed, dims, fault=args.inject_fault)
    worst_by_tensor = {}
    for r in reports:
        for c in r.checks:
            prev = worst_by_tensor.get(c.name)
            if prev is None or c.max_rel_error > prev[0]:
                worst_by_tensor[c.name] = (c.max_rel_error, r.dims, c.worst_index)
    for name, (err, dims_, idx) in worst_by_tensor.items():
        print(f"{name:28s} max_rel_err={err:.3e}  (d,C,K,n)={dims_} at {idx}")
    vanilla = [r.vanilla_error for r in reports if r.vanilla_error is not None]
    if vanilla:
        print(f"{'vanilla_reduction':28s} max_abs_err={max(vanilla):.3e}  over {len(vanilla)} K=0 trial(s)")
    failed = [r for r in reports if not r.passed]
    if failed:
        r = max(failed, key=lambda r: r.worst.max_rel_error)
        w = r.worst
        print(f"FAIL: {len(failed)}/{len(reports)} trial(s); worst {w.name}{w.worst_index} rel_err={w.max_rel_error:.3e} at (d,C,K,n)={r.dims}")
        return EXIT_FAIL
    print(f"PASS: {len(reports)} trial(s), tolerance {gradcheck.TOLERANCE:g}")
    return EXIT_OK


def cmd_sweep_k(args):
    try:
        run_cfg = config.load(args.config)
        out_dir = args.out or os.path.join(run_cfg.output_dir, "sweep_k")
        run_cfg.output_dir = out_dir
        run_cfg.load_data()
        base_alpha = run_cfg.head.get("main_label_mass", 0.5)
        head_cfgs = {
            K: run_cfg.head_config(sub_centers=K, main_label_mass=1.0 if K == 0 else base_alpha)
            for K in args.k_list
        }
        os.makedirs(out_dir, exist_ok=True)
    except (config.ConfigError, DataError, OSError) as exc:
        _err(exc)
        return EXIT_INPUT

    rows, failures = [], 0
    for K in args.k_list:
        for i in range(args.seeds):
            seed = run_cfg.train.seed + i
            train_cfg = dataclasses.replace(run_cfg.train, seed=seed)
            try:
                last = _run_one(run_cfg, head_cfgs[K], train_cfg, os.path.join(out_dir, f"k{K}_seed{seed}"))
                top1 = last.test_acc
            except (TrainingAborted, FloatingPointError, DataError, OSError) as exc:
                _err(f"K={K} seed={seed}: {exc}")
                failures += 1
                top1 = float("nan")
            rows.append((K, seed, top1))

    with open(os.path.join(out_dir, "sweep.csv"), "w") as f:
        f.write("k,seed,top1\n")
        for K, seed, top1 in rows:
            f.write(f"{K},{seed},{top1!r}\n")
    summary = []
    for K in args.k_list:
        accs = np.array([t for k, _, t in rows if k == K and np.isfinite(t)])
        summary.append((K, float(accs.mean()) if accs.size else float("nan"), float(accs.std()) if accs.size else float("nan")))
    with open(os.path.join(out_dir, "sweep_summary.csv"), "w") as f:
        f.write("k,mean_top1,std_top1\n")
        for K, mean, std in summary:
            f.write(f"{K},{mean!r},{std!r}\n")
    print("k,mean_top1,std_top1")
    for K, mean, std in summary:
        print(f"{K},{mean:.6f},{std:.6f}")
    multi = [mean for K, mean, _ in summary if K >= 1 and np.isfinite(mean)]
    if len(multi) > 1 and max(multi) - min(multi) > SWEEP_SPREAD_WARNING:
        print(f"warning: K>=1 mean accuracies spread {100 * (max(multi) - min(multi)):.2f} points (> 2)", file=sys.stderr)
    if failures:
        _err(f"{failures} run(s) failed")
        return EXIT_FAIL
    return EXIT_OK


def cmd_gen_data(args):
    try:
        spec = MixtureSpec(
            num_classes=args.num_classes, clusters_per_class=args.clusters_per_class, dim=args.dim,
            cluster_separation=args.separation, cluster_scale=args.scale,
            samples_per_class=args.samples_per_class, seed=args.seed,
        )
        train_set, test_set = gen_mixture(spec)
        os.makedirs(args.out, exist_ok=True)
        write_csv(os.path.join(args.out, "train.csv"), train_set)
        write_csv(os.path.join(args.out, "test.csv"), test_set)
    except (ValueError, OSError) as exc:
        _err(exc)
        return EXIT_INPUT
    print(f"wrote {len(train_set)} train / {len(test_set)} test rows to {args.out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="multicenter", description="Multi-center classifier training and checks")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a JSON run config")
    t.add_argument("config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="top-1 accuracy of a checkpoint's collapsed head")
    e.add_argument("checkpoint")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="use the test split of this run config")
    src.add_argument("--csv")
    src.add_argument("--idx", nargs=2, metavar=("IMAGES", "LABELS"))
    e.add_argument("--label-column", default="label")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("collapse", help="write a copy of a checkpoint without sigma")
    c.add_argument("checkpoint")
    c.add_argument("out")
    c.set_defaults(func=cmd_collapse)

    g = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    g.add_argument("--dims", type=_int_list, help="fixed d,C,K,n (default: random per trial)")
    g.add_argument("--trials", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--inject-fault", choices=["dlog_sigma"], help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("sweep-k", help="train over a list of sub-center counts and seeds")
    s.add_argument("config")
    s.add_argument("--k-list", type=_int_list, default=[0, 1, 2, 4, 8])
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep_k)

    d = sub.add_parser("gen-data", help="write a Gaussian-mixture train/test pair as CSV")
    defaults = MixtureSpec()
    d.add_argument("--num-classes", type=int, default=defaults.num_classes)
    d.add_argument("--clusters-per-class", type=int, default=defaults.clusters_per_class)
    d.add_argument("--dim", type=int, default=defaults.dim)
    d.add_argument("--separation", type=float, default=defaults.cluster_separation)
    d.add_argument("--scale", type=float, default=defaults.cluster_scale)
    d.add_argument("--samples-per-class", type=int, default=defaults.samples_per_class)
    d.add_argument("--seed", type=int, default=defaults.seed)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
