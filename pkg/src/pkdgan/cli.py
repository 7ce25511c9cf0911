"""Command-line entry points tying the toolkit into reproducible runs.

Exit statuses: 0 success, 2 config error, 3 training divergence, 4 I/O error,
5 incompatible checkpoint.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

from . import distill, evaluation, model
from .checkpoint import Checkpoint, CheckpointError, IncompatibleCheckpointError
from .config import ConfigError, load_split, parse_config
from .distill import DivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4
EXIT_INCOMPATIBLE = 5

def _write_losses_csv(path, records):
    cols = ["step", "s_con", "s_enc", "s_adv", "l_g", "l_d", "k1", "kx", "k2",
            "k_l"]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(cols)
        for rec in records:
            writer.writerow([rec.get(c, "") for c in cols])


def _write_auc_csv(path, curves):
    """curves: dict role -> list of per-epoch AUC values."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "auc", "role"])
        for role, values in curves.items():
            for epoch, value in enumerate(values):
                writer.writerow([epoch, "%.6f" % value, role])


def _interval_saver(out_dir, overwrite):
    """Checkpoint sink writing interval snapshots as epoch_NNNN directories."""
    def save(epoch, ckpt):
        ckpt.save(os.path.join(out_dir, "epoch_%04d" % (epoch + 1)),
                  overwrite=overwrite)
    return save


def _prepare_out(out_dir, overwrite):
    if os.path.exists(out_dir) and os.listdir(out_dir) and not overwrite:
        raise FileExistsError(
            "output directory %s is not empty (use --overwrite)" % out_dir)
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def _load_config(args):
    cfg = parse_config(args.config)
    if args.out:
        cfg.output_dir = args.out
    if args.seed is not None:
        cfg = _override_seed(cfg, args.seed)
    return cfg


def _override_seed(cfg, seed):
    cfg.train = replace(cfg.train, seed=seed)
    if cfg.train_step2 is not None:
        cfg.train_step2 = replace(cfg.train_step2, seed=seed)
    return cfg


def cmd_train_teacher(args):
    cfg = _load_config(args)
    out = _prepare_out(os.path.join(cfg.output_dir, "teacher"), args.overwrite)
    split = load_split(cfg)
    spec = replace_channels(cfg.teacher_spec, split)
    records = []
    ckpt = distill.train_teacher(
        split, spec, cfg.train, cfg.loss_weights, record_sink=records,
        on_checkpoint=_interval_saver(out, args.overwrite))
    ckpt.save(os.path.join(out, "final"), overwrite=args.overwrite)
    _write_losses_csv(os.path.join(out, "losses.csv"), records)
    _write_auc_csv(os.path.join(out, "auc_curve.csv"),
                   {"teacher": ckpt.history.get("auc", [])})
    curve = ckpt.history.get("auc", [])
    print("teacher AUC (final epoch): %s"
          % ("%.6f" % curve[-1] if curve else "n/a"))
    return EXIT_OK


def replace_channels(spec, split):
    """Align a spec's input channel count with the loaded split."""
    if spec.input_channels != split.channels:
        return replace(spec, input_channels=split.channels)
    return spec


def cmd_distill(args):
    cfg = _load_config(args)
    structure = args.structure or cfg.structure
    if not cfg.teacher_checkpoint:
        raise ConfigError("distill.teacher_checkpoint: required for distill")
    teacher_ckpt = Checkpoint.load(cfg.teacher_checkpoint)
    split = load_split(cfg)
    student_spec = replace_channels(cfg.student_spec or model.ArchSpec(
        input_channels=teacher_ckpt.spec.input_channels, channels=(2, 4, 8)),
        split)
    out = _prepare_out(cfg.output_dir, args.overwrite)
    pair = distill.run_kdgan(
        structure, teacher_ckpt, student_spec, split, cfg.train,
        cfg.loss_weights, cfg.distill_weights,
        on_checkpoint=_interval_saver(os.path.join(out, "student"),
                                      args.overwrite))
    _save_pair(pair, out, cfg.train, structure, args.overwrite)
    curve = pair.histories["student_auc"]
    print("student AUC (final epoch): %s"
          % ("%.6f" % curve[-1] if curve else "n/a"))
    return EXIT_OK


def _save_pair(pair, out, train_cfg, structure, overwrite, source=""):
    student = pair.student_checkpoint(train_cfg, structure)
    teacher = pair.teacher_checkpoint(train_cfg, structure)
    student.source = source
    teacher.source = source
    student.save(os.path.join(out, "student", "final"), overwrite=overwrite)
    teacher.save(os.path.join(out, "teacher", "final"), overwrite=overwrite)
    _write_losses_csv(os.path.join(out, "losses.csv"),
                      pair.histories.get("losses", []))
    _write_auc_csv(os.path.join(out, "auc_curve.csv"),
                   {"student": pair.histories.get("student_auc", []),
                    "teacher": pair.histories.get("teacher_auc", [])})


def cmd_progressive(args):
    cfg = _load_config(args)
    variant = args.variant or cfg.variant
    if not cfg.teacher_checkpoint:
        raise ConfigError("distill.teacher_checkpoint: required for progressive")
    teacher_ckpt = Checkpoint.load(cfg.teacher_checkpoint)
    split = load_split(cfg)
    student_spec = replace_channels(cfg.student_spec or model.ArchSpec(
        input_channels=teacher_ckpt.spec.input_channels, channels=(2, 4, 8)),
        split)
    out = _prepare_out(cfg.output_dir, args.overwrite)
    cfg2 = cfg.train_step2 or cfg.train
    step1, step2 = distill.run_progressive(variant, teacher_ckpt, student_spec,
                                           split, cfg.train, cfg2,
                                           cfg.loss_weights, cfg.distill_weights)
    step1_dir = os.path.join(out, "step1")
    step2_dir = os.path.join(out, "step2")
    _save_pair(step1, step1_dir, cfg.train, 2, args.overwrite)
    _save_pair(step2, step2_dir, cfg2, distill.PROGRESSIVE_VARIANTS[variant],
               args.overwrite, source=step1_dir)
    for label, pair in (("step1", step1), ("step2", step2)):
        curve = pair.histories["student_auc"]
        print("%s student AUC: %s"
              % (label, "%.6f" % curve[-1] if curve else "n/a"))
    return EXIT_OK


def cmd_eval(args):
    cfg = _load_config(args)
    ckpt = Checkpoint.load(args.checkpoint)
    split = load_split(cfg)
    generator, _ = ckpt.build_networks()
    auc_value, stats = evaluation.evaluate_model(generator, split)
    report = {
        "auc": auc_value,
        "score_stats": stats,
        "checkpoint": args.checkpoint,
        "dataset": cfg.dataset_name,
        "normal_class": cfg.normal_class,
        "structure": ckpt.structure,
    }
    out_dir = args.out or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report, f, indent=2)
    print("AUC: %.6f" % auc_value)
    return EXIT_OK


def _parse_channels(text):
    parts = tuple(int(p) for p in text.split(","))
    if len(parts) != 3:
        raise ConfigError("--channels expects three comma-separated values")
    return parts


def cmd_count(args):
    if args.config:
        cfg = parse_config(args.config)
        teacher = cfg.teacher_spec
        student = cfg.student_spec
    else:
        teacher = model.ArchSpec(
            input_channels=args.input_channels,
            channels=_parse_channels(args.channels),
            latent_dim=args.latent_dim)
        student = None
        if args.student_channels:
            student = replace(teacher,
                              channels=_parse_channels(args.student_channels))
    t_cost = model.cost_report(teacher)
    print("teacher params: %d (%.2fM)  flops: %d (%.2fM)"
          % (t_cost.param_count, t_cost.param_count / 1e6,
             t_cost.flop_count, t_cost.flop_count / 1e6))
    if student is not None:
        s_cost = model.cost_report(student)
        print("student params: %d (%.3fM)  flops: %d (%.3fM)"
              % (s_cost.param_count, s_cost.param_count / 1e6,
                 s_cost.flop_count, s_cost.flop_count / 1e6))
        print("compression ratios: params %.2fx  flops %.2fx"
              % (t_cost.param_count / s_cost.param_count,
                 t_cost.flop_count / s_cost.flop_count))
    return EXIT_OK


def cmd_suite(args):
    cfg = _load_config(args)
    out = _prepare_out(cfg.output_dir, args.overwrite)
    split_cache = {}

    def cell(normal_class, seed):
        if normal_class not in split_cache:
            cell_cfg = cfg
            cell_cfg.normal_class = normal_class
            split_cache[normal_class] = load_split(cell_cfg)
        split = split_cache[normal_class]
        train_cfg = replace(cfg.train, seed=seed)
        spec = replace_channels(cfg.teacher_spec, split)
        teacher_ckpt = distill.train_teacher(split, spec, train_cfg,
                                             cfg.loss_weights)
        if args.method == "teacher":
            return teacher_ckpt.history["auc"][-1]
        student_spec = replace_channels(
            cfg.student_spec or model.ArchSpec(input_channels=spec.input_channels,
                                               channels=(2, 4, 8)), split)
        if args.method == "kdgan":
            pair = distill.run_kdgan(cfg.structure, teacher_ckpt, student_spec,
                                     split, train_cfg, cfg.loss_weights,
                                     cfg.distill_weights)
            return pair.histories["student_auc"][-1]
        cfg2 = replace(cfg.train_step2 or cfg.train, seed=seed)
        _, step2 = distill.run_progressive(cfg.variant, teacher_ckpt,
                                           student_spec, split, train_cfg, cfg2,
                                           cfg.loss_weights, cfg.distill_weights)
        return step2.histories["student_auc"][-1]

    classes = list(cfg.suite_classes) or list(range(10))
    report = evaluation.run_suite(
        cell, classes, cfg.repeats, dataset=cfg.dataset_name,
        seeds=[cfg.train.seed + i for i in range(cfg.repeats)],
        cost=model.cost_report(cfg.teacher_spec),
        metadata={"method": args.method, "epochs": cfg.train.epochs})

    with open(os.path.join(out, "report.json"), "w") as f:
        json.dump(report.to_dict(), f, indent=2)
    with open(os.path.join(out, "report.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "mean_auc", "std_auc", "error"])
        for row in report.rows:
            writer.writerow([row["class"],
                             "" if row["mean_auc"] is None else "%.6f" % row["mean_auc"],
                             "" if row["std_auc"] is None else "%.6f" % row["std_auc"],
                             row["error"] or ""])
        writer.writerow(["mean", "%.6f" % report.mean_auc, "", ""])
    print("suite mean AUC: %.6f" % report.mean_auc)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pkdgan",
        description="One-class novelty detection GANs with progressive "
                    "knowledge distillation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="TOML experiment config")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--overwrite", action="store_true",
                       help="allow clobbering existing outputs")

    p = sub.add_parser("train-teacher", help="pre-train a teacher GAN")
    common(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="train a student under one KDGAN structure")
    common(p)
    p.add_argument("--structure", type=int, choices=(1, 2, 3, 4))
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("progressive", help="two-step progressive distillation")
    common(p)
    p.add_argument("--variant", choices=("23", "24"))
    p.set_defaults(func=cmd_progressive)

    p = sub.add_parser("eval", help="score a checkpoint on the configured split")
    common(p)
    p.add_argument("checkpoint", help="checkpoint directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("count", help="parameter and FLOP accounting")
    common(p, config_required=False)
    p.add_argument("--input-channels", type=int, default=3)
    p.add_argument("--channels", default="64,128,256",
                   help="comma-separated channel triple")
    p.add_argument("--latent-dim", type=int, default=256)
    p.add_argument("--student-channels",
                   help="student channel triple for compression ratios")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("suite", help="per-class experiment grid")
    common(p)
    p.add_argument("--method", choices=("teacher", "kdgan", "progressive"),
                   default="teacher")
    p.set_defaults(func=cmd_suite)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print("training diverged: %s" % exc, file=sys.stderr)
        for rec in exc.records[-5:]:
            print("  %s" % rec, file=sys.stderr)
        return EXIT_DIVERGED
    except IncompatibleCheckpointError as exc:
        print("incompatible checkpoint: %s" % exc, file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except CheckpointError as exc:
        print("checkpoint error: %s" % exc, file=sys.stderr)
        return EXIT_IO
    except (OSError, FileExistsError) as exc:
        print("I/O error: %s" % exc, file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
