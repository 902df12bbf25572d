"""Command-line entry points.

Subcommands: generate, train, explain, evaluate, ablate, export-dot.
Each prints a small JSON manifest on success (no timestamps, so reruns with
the same arguments print identical bytes).

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure
(non-finite loss, walk that does not converge), 4 file I/O or parse error.
"""

import argparse
import json
import sys

import numpy as np

from . import explain as ex
from .evaluation import ablate, ablation_csv, evaluate, motif_components
from .graphs import ParseError, load_dataset, save_dataset, NODE_TASK
from .models import (
    CheckpointError,
    file_sha256,
    load_checkpoint,
    save_checkpoint,
)
from .synthetic import GENERATORS, default_config, generate
from .training import (
    NumericError,
    RunConfig,
    build_inputs,
    compute_artifacts,
    joint_train,
    load_config,
    preset,
    student_embeddings,
)

USAGE_ERROR, NUMERIC_ERROR, IO_ERROR = 2, 3, 4


def _emit(manifest):
    json.dump(manifest, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args):
    cfg = default_config(args.dataset, seed=args.seed)
    ds = generate(args.dataset, cfg)
    save_dataset(ds, args.out)
    units = ds.graphs[0].num_nodes if ds.task == NODE_TASK else len(ds.graphs)
    _emit({
        "command": "generate",
        "dataset": args.dataset,
        "seed": args.seed,
        "path": args.out,
        "task": ds.task,
        "units": units,
        "sha256": file_sha256(args.out),
    })
    return 0


def _resolve_config(args):
    overrides = {}
    for name in ("seed", "lam", "epochs", "hidden_size", "gcn_layers",
                 "mlp_layers", "tau", "lr", "kd_setting", "jump_d"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    if getattr(args, "config", None):
        return load_config(args.config, **overrides)
    return preset(args.preset, **overrides)


def cmd_train(args):
    cfg = _resolve_config(args)
    ds = load_dataset(args.data)
    models, inputs, log = joint_train(ds, cfg)
    info = {
        "path": args.data,
        "sha256": file_sha256(args.data),
        "task": ds.task,
        "feature_dim": ds.feature_dim,
        "num_classes": inputs.n_classes,
    }
    save_checkpoint(args.out, models, cfg.to_dict(), info)
    log_path = args.log or f"{args.out}/train_log.csv"
    log.to_csv(log_path)
    last = dict(zip(log.columns, log.rows[-1])) if log.rows else {}
    _emit({
        "command": "train",
        "checkpoint": args.out,
        "dataset": args.data,
        "config": cfg.to_dict(),
        "log": log_path,
        "final": {k: last.get(k) for k in log.columns if k != "epoch"},
    })
    return 0


def _load_for_explain(args):
    models, config, info = load_checkpoint(args.checkpoint)
    cfg = RunConfig.from_dict(config)
    ds = load_dataset(args.data)
    if info.get("sha256") and file_sha256(args.data) != info["sha256"]:
        raise ParseError(
            f"{args.data}: contents differ from the dataset this checkpoint "
            "was trained on")
    return models, cfg, ds


def cmd_explain(args):
    models, cfg, ds = _load_for_explain(args)
    if args.d is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "jump_d": args.d})
    inputs = build_inputs(ds)
    art = compute_artifacts(models, inputs, cfg)
    preds = (np.argmax(art.teacher_logits, axis=1)
             if art.teacher_logits is not None else None)
    if ds.task == NODE_TASK:
        if args.target is None:
            raise ValueError("node datasets need --target")
        target = args.target
        if not 0 <= target < ds.graphs[0].num_nodes:
            raise ValueError(f"--target {target} out of range")
        k = args.k
        if not k:
            g = ds.graphs[0]
            if g.gt_node_mask is not None and g.gt_node_mask[target]:
                comp_nodes, _, comp_of = motif_components(g)
                k = len(comp_nodes[comp_of[target]])
            else:
                raise ValueError(
                    "--k is required for nodes without a ground-truth motif")
        walker = ex.RandomWalker(inputs.support, art.arc_scores, cfg.jump_d,
                                 cfg.rwr_iters, cfg.rwr_tol)
        explanation = ex.explain_node(
            walker, target, k, None if preds is None else preds[target])
        x_rows = ds.graphs[0].features[[target]]
        pool = False
    else:
        gi = args.graph_index
        if gi is None:
            raise ValueError("graph datasets need --graph-index")
        if not 0 <= gi < len(ds.graphs):
            raise ValueError(f"--graph-index {gi} out of range")
        lo, hi = int(inputs.node_offset[gi]), int(inputs.node_offset[gi + 1])
        pairs, scores = ex.undirected_mask_scores(inputs.support,
                                                  art.arc_scores, lo, hi)
        explanation = ex.explain_graph(
            pairs, scores, args.threshold, gi,
            None if preds is None else preds[gi])
        x_rows = ds.graphs[gi].features
        pool = True
    payload = explanation.to_json()
    if "feature_student" in models and explanation.prediction >= 0:
        phi = ex.attribute_features(models["feature_student"].mlp, x_rows,
                                    explanation.prediction)
        if pool:
            phi = phi / phi.shape[0]
        payload["feature_attributions"] = phi.sum(axis=0).tolist()
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    if args.dot:
        with open(args.dot, "w") as fh:
            fh.write(ex.to_dot(explanation))
    _emit({"command": "explain", "out": args.out, "dot": args.dot,
           "prediction": explanation.prediction})
    return 0


def cmd_evaluate(args):
    models, cfg, ds = _load_for_explain(args)
    if args.d is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "jump_d": args.d})
    report = evaluate(models, ds, cfg)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report.to_json(), fh, indent=1)
            fh.write("\n")
    if args.per_instance:
        report.per_instance_csv(args.per_instance)
    _emit({"command": "evaluate", **report.to_json()})
    return 0


def cmd_ablate(args):
    cfg = _resolve_config(args)
    ds = load_dataset(args.data)
    values = None
    if args.values:
        raw = args.values.split(",")
        values = raw if args.mode == "kd_setting" \
            else [float(v) for v in raw]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    rows = ablate(ds, cfg, args.mode, values=values, seeds=seeds,
                  workers=args.workers)
    ablation_csv(rows, args.out)
    _emit({"command": "ablate", "mode": args.mode, "out": args.out,
           "rows": len(rows)})
    return 0


def cmd_export_dot(args):
    with open(args.explanation) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{args.explanation}: invalid JSON: {exc}") \
                from exc
    text = ex.dot_from_json(payload)
    with open(args.out, "w") as fh:
        fh.write(text)
    _emit({"command": "export-dot", "out": args.out})
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_config_flags(p):
    p.add_argument("--preset", default="ba-shapes",
                   help="named hyperparameter preset (dataset name)")
    p.add_argument("--config", help="JSON config file overriding the preset")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lam", type=float, default=None,
                   help="distillation weight lambda")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--hidden-size", dest="hidden_size", type=int,
                   default=None)
    p.add_argument("--gcn-layers", dest="gcn_layers", type=int, default=None)
    p.add_argument("--mlp-layers", dest="mlp_layers", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--kd-setting", dest="kd_setting", default=None,
                   choices=["naive", "embed", "kdl", "joint"])
    p.add_argument("--jump-d", dest="jump_d", type=float, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="scalegnn",
        description="Self-explaining GNN training, explanation, evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic benchmark")
    p.add_argument("--dataset", required=True, choices=sorted(GENERATORS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="joint teacher/student training")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--log", help="training log CSV path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="explain one node or graph")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", type=int, help="node id (node tasks)")
    p.add_argument("--graph-index", dest="graph_index", type=int,
                   help="graph index (graph tasks)")
    p.add_argument("--k", type=int, default=0,
                   help="explanation size; defaults to the motif size")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="edge-mask selection threshold (graph tasks)")
    p.add_argument("--d", type=float, help="override walk jump chance")
    p.add_argument("--out", required=True, help="explanation JSON path")
    p.add_argument("--dot", help="also write Graphviz DOT here")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", help="score explanations vs ground truth")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--d", type=float, help="override walk jump chance")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--per-instance", dest="per_instance",
                   help="per-instance CSV path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="sweep one knob and score each run")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", required=True,
                   choices=["jump_d", "lambda", "kd_setting", "epochs"])
    p.add_argument("--values", help="comma-separated sweep values")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--workers", type=int, default=None,
                   help="worker threads (capped by SCALE_THREADS)")
    p.add_argument("--out", required=True, help="results CSV path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-dot", help="render an explanation JSON as DOT")
    p.add_argument("--explanation", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_dot)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return IO_ERROR
    except (NumericError, ex.ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NUMERIC_ERROR
    except (ValueError, ex.ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
