"""Command-line entry point.

Subcommands: train, eval, gradcheck, ablate-eps, analyze.  Every run
writes manifest.json (resolved config + versions + seed) next to its
outputs, and the report paths render PNG figures alongside the CSV/JSON
files.  Exit codes: 0 ok, 1 check failed, 2 config error, 3 io error,
4 numeric/contract error.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys

import numpy as np

from . import __version__, encoding, neurons, network, report, training, tropical
from .errors import ConfigError, DataFormatError, UltraError

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

BLOB_DEFAULTS = dict(classes=4, dim=16, per_class=250, spread=0.25)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(outdir, command, args, config):
    manifest = {
        "command": command,
        "argv": list(args),
        "config": config,
        "versions": {
            "ultrasnn": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    _write_json(os.path.join(outdir, "manifest.json"), manifest)
    return manifest


def _load_split(args):
    """Resolve (train_ds, test_ds, classes, encode_default)."""
    if args.dataset == "blobs":
        train_ds = encoding.make_blobs(args.blobs_classes, args.blobs_per_class,
                                       args.blobs_dim, seed=args.seed,
                                       spread=args.blobs_spread)
        test_ds = encoding.make_blobs(args.blobs_classes,
                                      max(args.blobs_per_class // 4, 1),
                                      args.blobs_dim, seed=args.seed + 1,
                                      spread=args.blobs_spread)
        return train_ds, test_ds, args.blobs_classes, "analog"
    train_ds = encoding.load_idx_dataset(args.dataset, "train", args.data_dir)
    test_ds = encoding.load_idx_dataset(args.dataset, "test", args.data_dir)
    if args.subset:
        train_ds = train_ds.subset(args.subset)
        test_ds = test_ds.subset(args.test_subset or max(args.subset // 4, 1))
    elif args.test_subset:
        test_ds = test_ds.subset(args.test_subset)
    classes = int(max(train_ds.labels.max(), test_ds.labels.max())) + 1
    return train_ds, test_ds, classes, "rate"


def _train_config(args, encode_default):
    return training.TrainConfig(
        epochs=args.epochs, lr0=args.lr, batch=args.batch, seed=args.seed,
        schedule=args.schedule, lambda_sparsity=args.lambda_sparsity,
        eps_mode=args.eps_mode, encode=args.encode or encode_default,
        gain=args.gain,
    )


def _config_dict(tc, spec, args):
    cfg = {k: getattr(tc, k) for k in
           ("epochs", "lr0", "batch", "seed", "schedule", "lambda_sparsity",
            "eps_mode", "encode", "gain")}
    cfg.update(dataset=args.dataset, model=spec.kind, timesteps=spec.timesteps,
               hidden=list(spec.hidden), subset=getattr(args, "subset", None))
    return cfg


def cmd_train(args):
    train_ds, test_ds, classes, encode_default = _load_split(args)
    if args.config:
        with open(args.config) as fh:
            tc = training.TrainConfig.from_text(fh.read())
    else:
        tc = _train_config(args, encode_default)
    spec = network.NetworkSpec(
        input_width=train_ds.images.shape[1], classes=classes,
        timesteps=args.timesteps, kind=args.model, hidden=tuple(args.hidden),
        lambda_sparsity=tc.lambda_sparsity,
    )
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(args.out, "train", sys.argv[1:], _config_dict(tc, spec, args))
    with open(os.path.join(args.out, "config.txt"), "w") as fh:
        fh.write(tc.to_text())
    result = training.train(spec, train_ds, test_ds, tc)
    result.metrics.write_csv(os.path.join(args.out, "metrics.csv"))
    network.save_checkpoint(os.path.join(args.out, "checkpoint.npz"),
                            result.best_network(),
                            {"seed": tc.seed, "epoch": result.best_epoch,
                             "selection": "best_test_accuracy"})
    network.save_checkpoint(os.path.join(args.out, "checkpoint_final.npz"),
                            result.net,
                            {"seed": tc.seed, "epoch": tc.epochs - 1,
                             "selection": "final"})
    final = result.metrics.rows[-1]
    summary = {
        "final": final,
        "best": {"acc": result.best_acc, "epoch": result.best_epoch},
        "eps_final": result.net.eps_values(),
        "energy_final": final["energy"],
    }
    _write_json(os.path.join(args.out, "summary.json"), summary)
    if not args.no_figures:
        report.save_training_figures(result.metrics.rows, result.metrics.columns,
                                     args.out)
    print(f"final acc {final['acc']:.4f} best acc {result.best_acc:.4f} "
          f"(epoch {result.best_epoch}); outputs in {args.out}")
    return EXIT_OK


def cmd_eval(args):
    net, manifest = network.load_checkpoint(args.checkpoint)
    args.seed = args.seed if args.seed is not None else manifest.get("seed", 42)
    train_ds, test_ds, _, encode_default = _load_split(args)
    tc = training.TrainConfig(epochs=1, seed=args.seed, batch=args.batch,
                              encode=args.encode or encode_default, gain=args.gain)
    stats = training.evaluate(net, test_ds, tc)
    rate = stats["spike_hard"] if args.hard_spikes else stats["spike_soft"]
    summary = {
        "checkpoint": args.checkpoint,
        "dataset": args.dataset,
        "acc": stats["acc_hard"] if args.hard_spikes else stats["acc"],
        "spike_soft": stats["spike_soft"],
        "spike_hard": stats["spike_hard"],
        "energy": network.energy(rate, net.spec.timesteps),
        "hard_spikes": bool(args.hard_spikes),
    }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_manifest(args.out, "eval", sys.argv[1:],
                        {"checkpoint": args.checkpoint, "dataset": args.dataset,
                         "seed": args.seed, "hard_spikes": bool(args.hard_spikes)})
        _write_json(os.path.join(args.out, "summary.json"), summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args):
    kinds = list(neurons.ULTRA_KINDS) if args.model == "all" else [args.model]
    worst = 0.0
    results = []
    ok = True
    for kind in kinds:
        kind = neurons.normalize_kind(kind)
        if kind in neurons.ULTRA_KINDS:
            err, _ = network.full_gradcheck(kind, fd_step=args.fd_step, seed=args.seed)
            worst = max(worst, err)
            results.append({"kind": kind, "max_rel_err": err})
            print(f"{kind}: max rel err {err:.3e}")
        else:
            rep = network.surrogate_mismatch_check(kind, fd_step=args.fd_step,
                                                   seed=args.seed)
            results.append({"kind": kind, **rep})
            print(f"{kind}: surrogate/FD mismatch demo -> max surrogate "
                  f"{rep['max_surrogate']:.3e}, max fd {rep['max_fd']:.3e}")
            ok &= rep["max_fd"] == 0.0 and rep["max_surrogate"] > 1e-3
    if worst >= 1e-4:
        print(f"FAIL: max rel err {worst:.3e} >= 1e-4")
        ok = False
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_manifest(args.out, "gradcheck", sys.argv[1:],
                        {"model": args.model, "fd_step": args.fd_step,
                         "seed": args.seed})
        _write_json(os.path.join(args.out, "gradcheck.json"),
                    {"results": results, "passed": ok})
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_ablate(args):
    train_ds, test_ds, classes, encode_default = _load_split(args)
    tc = _train_config(args, encode_default)
    spec = network.NetworkSpec(
        input_width=train_ds.images.shape[1], classes=classes,
        timesteps=args.timesteps, kind=args.model, hidden=tuple(args.hidden),
        lambda_sparsity=tc.lambda_sparsity,
    )
    fixed = [float(v) for v in args.fixed.split(",")] if args.fixed else []
    runs = training.ablate_epsilon(spec, train_ds, test_ds, tc,
                                   fixed=fixed, learned=args.learned)
    os.makedirs(args.out, exist_ok=True)
    cfgd = _config_dict(tc, spec, args)
    cfgd.update(fixed=fixed, learned=bool(args.learned))
    _write_manifest(args.out, "ablate-eps", sys.argv[1:], cfgd)
    _write_json(os.path.join(args.out, "ablation.json"), runs)
    if not args.no_figures:
        report.save_ablation_figure(runs, args.out)
    for r in runs:
        print(f"{r['eps_mode']:>12}: acc {r['final_acc']:.4f} "
              f"spike {r['spike_soft']:.3f} final eps {r['final_eps']}")
    return EXIT_OK


def _analysis_weights(args):
    if args.checkpoint:
        net, _ = network.load_checkpoint(args.checkpoint)
        W = net.params["W0"].data.T  # rows = units
        b = net.params["b0"].data
        return W, b, net.cfg.theta, net.cfg.tau0
    rng = tropical.philox(args.seed, tropical.STREAM_ARRANGE)
    W = rng.normal(size=(args.hidden, args.inputs))
    b = np.zeros(args.hidden)
    return W, b, 0.5, 0.9


def cmd_analyze(args):
    os.makedirs(args.out, exist_ok=True)
    payload = {"analysis": args.what}
    figures = []
    if args.what == "regions":
        W, b, theta, tau0 = _analysis_weights(args)
        if args.checkpoint:
            arr = tropical.spike_arrangement(W, b, theta, tau0)
        else:
            arr = tropical.Arrangement(W, np.full(len(W), np.log(tau0)))
        rep = tropical.count_regions_bruteforce(arr, method=args.method,
                                                resolution=args.resolution)
        payload.update(formula=rep.formula, empirical=rep.empirical,
                       method=rep.method, hidden=arr.h, inputs=arr.n)
        if not args.no_figures:
            figures = report.save_arrangement_figure(
                arr.W, arr.offsets, {"formula": rep.formula, "empirical": rep.empirical},
                args.out)
    elif args.what == "zonotope":
        W, _, _, _ = _analysis_weights(args)
        vol = tropical.zonotope_volume(W)
        diag = tropical.general_position_check(W)
        payload.update(volume=vol, diagnostics=diag)
        if not args.no_figures:
            figures = report.save_zonotope_figure(W, vol, args.out)
    elif args.what == "temporal":
        W, b, theta, tau0 = _analysis_weights(args)
        result = tropical.temporal_region_count(W, b, T=args.timesteps,
                                                theta=theta, tau0=tau0,
                                                resolution=args.resolution)
        payload.update(result)
        if not args.no_figures:
            figures = report.save_temporal_figure(result, args.out)
    elif args.what == "energy":
        rows = _read_metrics(args.metrics)
        energies = [{"epoch": r["epoch"],
                     "spike_soft": r["spike_soft"],
                     "timesteps": args.timesteps,
                     "energy": network.energy(r["spike_soft"], args.timesteps)}
                    for r in rows]
        payload.update(rows=energies)
        if not args.no_figures:
            figures = report.save_energy_figure(
                [{"epoch": e["epoch"], "energy": e["energy"]} for e in energies],
                args.out)
    payload["figures"] = [os.path.basename(f) for f in figures]
    _write_manifest(args.out, f"analyze {args.what}", sys.argv[1:],
                    {k: v for k, v in vars(args).items() if k != "func"})
    _write_json(os.path.join(args.out, "analysis.json"), payload)
    print(json.dumps({k: v for k, v in payload.items() if k != "rows"},
                     indent=2, sort_keys=True, default=str))
    return EXIT_OK


def _read_metrics(path):
    import csv

    with open(path) as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            rows.append({k: (int(v) if k == "epoch" else float(v))
                         for k, v in row.items() if v != ""})
    return rows


def _add_dataset_args(p, with_subset=True):
    p.add_argument("--dataset", default="blobs",
                   choices=["mnist", "fashion", "blobs"])
    p.add_argument("--data-dir", default=None,
                   help="IDX cache dir (default $ULTRASNN_DATA_DIR or ./data)")
    if with_subset:
        p.add_argument("--subset", type=int, default=None,
                       help="first N training samples (test gets N/4 unless --test-subset)")
        p.add_argument("--test-subset", type=int, default=None)
    p.add_argument("--blobs-classes", type=int, default=BLOB_DEFAULTS["classes"])
    p.add_argument("--blobs-dim", type=int, default=BLOB_DEFAULTS["dim"])
    p.add_argument("--blobs-per-class", type=int, default=BLOB_DEFAULTS["per_class"])
    p.add_argument("--blobs-spread", type=float, default=BLOB_DEFAULTS["spread"])


def _add_train_args(p):
    p.add_argument("--model", default="ultralif")
    p.add_argument("--timesteps", type=int, default=1)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--hidden", type=lambda s: [int(x) for x in s.split(",")],
                   default=[64])
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda", dest="lambda_sparsity", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--schedule", default="cosine", choices=["cosine", "constant"])
    p.add_argument("--eps-mode", default="learned")
    p.add_argument("--encode", default=None, choices=["rate", "analog"],
                   help="default: rate for image datasets, analog for blobs")
    p.add_argument("--gain", type=float, default=0.5)
    p.add_argument("--no-figures", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="ultrasnn")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write run outputs")
    _add_dataset_args(p)
    _add_train_args(p)
    p.add_argument("--config", default=None, help="key-value config file")
    p.add_argument("--out", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_dataset_args(p)
    p.add_argument("--hard-spikes", action="store_true")
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--encode", default=None, choices=["rate", "analog"])
    p.add_argument("--gain", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--model", default="all")
    p.add_argument("--fd-step", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write gradcheck.json + manifest here")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate-eps", help="fixed-vs-learned temperature runs")
    _add_dataset_args(p)
    _add_train_args(p)
    p.add_argument("--fixed", default="0.5,1.0,2.0")
    p.add_argument("--learned", action="store_true", default=True)
    p.add_argument("--no-learned", dest="learned", action="store_false")
    p.add_argument("--out", default="runs/ablate")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze", help="tropical-geometry and energy reports")
    p.add_argument("what", choices=["regions", "zonotope", "temporal", "energy"])
    p.add_argument("--hidden", type=int, default=3)
    p.add_argument("--inputs", type=int, default=2)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--method", default="auto", choices=["auto", "exact", "grid"])
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--timesteps", type=int, default=1)
    p.add_argument("--metrics", default=None, help="metrics.csv for energy analysis")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", default="runs/analyze")
    p.set_defaults(func=cmd_analyze)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "analyze" and args.what == "temporal":
        args.resolution = args.resolution or 300
    if args.command == "analyze" and args.what == "energy" and not args.metrics:
        parser.error("analyze energy requires --metrics")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UltraError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run())
