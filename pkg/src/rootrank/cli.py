"""Command-line entry point.

Subcommands cover the whole pipeline: generate synthetic data, train,
evaluate (single split or cross-validation), rank commits, and run the
gradient self-check.  Every command is deterministic given its flags;
all randomness flows from --seed.

Hyperparameters resolve in three layers: built-in defaults, then a flat
key=value config file (--config), then explicit flags.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .embedding import HashingEmbedder, detect_precomputed_dim, embed_dataset
from .evaluation import (
    cross_validate,
    evaluate_model,
    multi_report_table,
    report_json,
    report_table,
)
from .graphs import DatasetFormatError, load_dataset, save_dataset
from .network import (
    CheckpointError,
    Mode,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
)
from .ranker import (
    TrainedModel,
    TrainingError,
    gradient_check_full_loss,
    rank_commit,
    train,
)
from .synthetic import GenConfig, generate


class CliError(ValueError):
    pass


def _parse_config_file(path: str) -> dict[str, str]:
    """Flat key=value overlay; blank lines and # comments ignored."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise CliError(f"not a boolean: {raw!r}")


_HYPER_SPECS = {
    "dim": (int, 64),
    "heads": (int, 8),
    "layers": (int, 2),
    "proj_dim": (int, None),
    "epochs": (int, 50),
    "lr": (float, 5e-6),
    "sigma": (float, 1.0),
    "mode": (str, "full"),
    "seed": (int, 42),
    "ties": (_parse_bool, False),
    "step_per_pair": (_parse_bool, False),
}


def _resolve_hypers(args: argparse.Namespace) -> tuple[dict, set[str]]:
    """Merge defaults < config file < flags; also report explicitly set keys."""
    overlay: dict[str, str] = {}
    if getattr(args, "config", None):
        overlay = _parse_config_file(args.config)
        unknown = set(overlay) - set(_HYPER_SPECS)
        if unknown:
            raise CliError(f"{args.config}: unknown config key(s) {sorted(unknown)}")
    resolved = {}
    explicit = set()
    for key, (convert, default) in _HYPER_SPECS.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
            explicit.add(key)
        elif key in overlay:
            resolved[key] = convert(overlay[key])
            explicit.add(key)
        else:
            resolved[key] = default
    return resolved, explicit


def _model_config(args: argparse.Namespace) -> tuple[ModelConfig, set[str]]:
    h, explicit = _resolve_hypers(args)
    try:
        mode = Mode(h["mode"])
    except ValueError:
        raise CliError(f"unknown mode {h['mode']!r}; choose from "
                       f"{', '.join(m.value for m in Mode)}") from None
    cfg = ModelConfig(
        dim=h["dim"],
        heads=h["heads"],
        layers=h["layers"],
        proj_dim=h["proj_dim"],
        mode=mode,
        include_tie_pairs=h["ties"],
        lr=h["lr"],
        epochs=h["epochs"],
        seed=h["seed"],
        sigma=h["sigma"],
        step_per_pair=h["step_per_pair"],
    )
    cfg.validate()
    return cfg, explicit


def _provider_for(ds, dim: int, source: str):
    """Hashing provider, unless the dataset ships its own vectors."""
    pre = detect_precomputed_dim(ds)
    if pre is None:
        return HashingEmbedder(dim)
    if pre != dim:
        raise CliError(
            f"dimension mismatch: {source} expects dim {dim}, dataset embeddings have dim {pre}"
        )
    return HashingEmbedder(pre)


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = GenConfig(
        n_commits=args.commits,
        deleted_per_commit=args.deleted,
        added_per_commit=args.added,
        edge_density=args.density,
        signal_strength=args.signal,
        seed=args.seed,
        structure_only=args.structure_only,
    )
    cfg.validate()
    ds = generate(cfg)
    save_dataset(ds, args.output)
    print(f"wrote {len(ds)} commits to {args.output}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg, explicit = _model_config(args)
    ds = load_dataset(args.dataset)
    precomputed = detect_precomputed_dim(ds)
    if precomputed is not None and "dim" not in explicit:
        cfg.dim = precomputed
        cfg.validate()
    provider = _provider_for(ds, cfg.dim, "model")
    embedded = embed_dataset(ds, provider)

    log_lines: list[str] = []

    def on_epoch(epoch: int, loss: float) -> None:
        line = f"{epoch},{loss!r}"
        log_lines.append(line)
        print(line)

    print("epoch,mean_loss")
    model = train(embedded, cfg, on_epoch=on_epoch)
    save_checkpoint(args.output, model.params, cfg)
    if args.log:
        Path(args.log).write_text("epoch,mean_loss\n" + "\n".join(log_lines) + "\n",
                                  encoding="utf-8")
    print(f"wrote checkpoint to {args.output}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    if args.cv:
        cfg, explicit = _model_config(args)
        ds = load_dataset(args.dataset)
        precomputed = detect_precomputed_dim(ds)
        if precomputed is not None and "dim" not in explicit:
            cfg.dim = precomputed
            cfg.validate()
        provider = _provider_for(ds, cfg.dim, "model")
        mean, folds = cross_validate(
            ds, cfg, provider, k=args.cv, seed=cfg.seed,
            chronological=args.chronological,
            with_classification=args.classification,
        )
        labels = [f"fold{i}" for i in range(len(folds))] + ["mean"]
        print(multi_report_table(labels, folds + [mean]))
        if args.output:
            Path(args.output).write_text(report_json(mean, per_fold=folds) + "\n",
                                         encoding="utf-8")
        return 0

    if not args.model:
        raise CliError("evaluate needs -m/--model (or --cv N to cross-validate)")
    params, cfg = load_checkpoint(args.model)
    ds = load_dataset(args.dataset)
    provider = _provider_for(ds, cfg.dim, f"checkpoint {args.model}")
    embedded = embed_dataset(ds, provider)
    model = TrainedModel(params=params, cfg=cfg, training_log=[])
    report = evaluate_model(model, embedded,
                            with_classification=args.classification,
                            mfr_first_only=not args.mfr_all)
    print(report_table(report))
    if args.output:
        Path(args.output).write_text(report_json(report) + "\n", encoding="utf-8")
    return 0


def cmd_rank(args: argparse.Namespace) -> int:
    params, cfg = load_checkpoint(args.model)
    ds = load_dataset(args.dataset, require_root_cause=False)
    provider = _provider_for(ds, cfg.dim, f"checkpoint {args.model}")
    embedded = embed_dataset(ds, provider)
    model = TrainedModel(params=params, cfg=cfg, training_log=[])

    header = "commit_id,rank,node_id,score,text"
    if args.show_truth:
        header += ",is_root_cause"
    lines = [header]
    ranked_commits = 0
    for eg in embedded:
        if not eg.graph.deleted_ids():
            print(f"warning: commit {eg.graph.commit_id!r} has no deleted lines, skipped",
                  file=sys.stderr)
            continue
        for position, (node_id, node_score) in enumerate(rank_commit(model, eg), start=1):
            text = eg.graph.nodes[node_id].text or ""
            text = text.replace('"', '""')
            row = f'{eg.graph.commit_id},{position},{node_id},{node_score!r},"{text}"'
            if args.show_truth:
                row += f",{int(eg.graph.nodes[node_id].is_root_cause)}"
            lines.append(row)
        ranked_commits += 1

    body = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(body, encoding="utf-8")
    else:
        sys.stdout.write(body)
    print(f"{ranked_commits} commits ranked", file=sys.stderr)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    err = gradient_check_full_loss(
        dim=args.dim, heads=args.heads, layers=args.layers,
        proj_dim=args.proj_dim, seed=args.seed,
    )
    ok = err < args.tolerance
    print(f"max_rel_err={err:.3e} {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rootrank",
        description="Rank the deleted lines of bug-fixing commits by root-cause likelihood.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write a synthetic labeled dataset")
    p_gen.add_argument("--commits", type=int, default=200)
    p_gen.add_argument("--deleted", type=int, default=10)
    p_gen.add_argument("--added", type=int, default=5)
    p_gen.add_argument("--density", type=float, default=0.08)
    p_gen.add_argument("--signal", type=float, default=1.0,
                       help="0 disables the planted signal (baseline-difficulty data)")
    p_gen.add_argument("--structure-only", action="store_true",
                       help="carry the signal only in graph structure")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("-o", "--output", required=True)
    p_gen.set_defaults(func=cmd_generate)

    def add_hyper_flags(p):
        p.add_argument("--dim", type=int, default=None)
        p.add_argument("--heads", type=int, default=None)
        p.add_argument("--layers", type=int, default=None)
        p.add_argument("--proj-dim", dest="proj_dim", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None, help="key=value overlay file")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--sigma", type=float, default=None)
        p.add_argument("--mode", choices=[m.value for m in Mode], default=None)
        p.add_argument("--ties", action="store_true", default=None,
                       help="include tie pairs (label 0.5) in training")
        p.add_argument("--step-per-pair", dest="step_per_pair",
                       action="store_true", default=None)

    p_train = sub.add_parser("train", help="train a model on a labeled dataset")
    p_train.add_argument("-d", "--dataset", required=True)
    p_train.add_argument("-o", "--output", required=True)
    p_train.add_argument("--log", default=None, help="also write the loss CSV here")
    add_hyper_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="compute ranking metrics")
    p_eval.add_argument("-d", "--dataset", required=True)
    p_eval.add_argument("-m", "--model", default=None)
    p_eval.add_argument("-o", "--output", default=None, help="write the JSON report here")
    p_eval.add_argument("--cv", type=int, default=None,
                        help="k-fold cross-validation (trains per fold, ignores -m)")
    p_eval.add_argument("--chronological", action="store_true")
    p_eval.add_argument("--classification", action="store_true",
                        help="include precision/recall/F1 at k in {1,2,3}")
    p_eval.add_argument("--mfr-all", dest="mfr_all", action="store_true",
                        help="average the positions of all truth lines, not the first")
    add_hyper_flags(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_rank = sub.add_parser("rank", help="rank each commit's deleted lines")
    p_rank.add_argument("-d", "--dataset", required=True)
    p_rank.add_argument("-m", "--model", required=True)
    p_rank.add_argument("-o", "--output", default=None)
    p_rank.add_argument("--show-truth", dest="show_truth", action="store_true")
    p_rank.set_defaults(func=cmd_rank)

    p_check = sub.add_parser("gradcheck", help="verify gradients on a small random instance")
    p_check.add_argument("--dim", type=int, default=8)
    p_check.add_argument("--heads", type=int, default=2)
    p_check.add_argument("--layers", type=int, default=1)
    p_check.add_argument("--proj-dim", dest="proj_dim", type=int, default=4)
    p_check.add_argument("--seed", type=int, default=42)
    p_check.add_argument("--tolerance", type=float, default=1e-5)
    p_check.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, DatasetFormatError, CheckpointError, TrainingError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
