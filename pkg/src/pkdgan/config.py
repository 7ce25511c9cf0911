"""Experiment configuration: TOML parsing, validation, and serialization."""

import os
from dataclasses import dataclass, field, replace

import tomli
import tomlkit

from .data import RawDataset, load_dataset, make_one_class_split
from .distill import TrainConfig
from .losses import DistillWeights, LossWeights
from .model import ArchSpec

DATA_ROOT_ENV = "KDGAN_DATA_ROOT"
DATASETS_NEEDING_ROOT = ("mnist", "fmnist", "cifar10")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset_name: str = "digits"
    dataset_root: str = ""
    normal_class: int = 1
    max_train_images: int = 0  # 0 = no cap
    teacher_spec: ArchSpec = field(default_factory=ArchSpec)
    student_spec: ArchSpec = None
    loss_weights: LossWeights = field(default_factory=LossWeights)
    distill_weights: DistillWeights = field(default_factory=DistillWeights)
    structure: int = 2
    variant: str = "23"
    teacher_checkpoint: str = ""
    train: TrainConfig = field(default_factory=TrainConfig)
    train_step2: TrainConfig = None
    output_dir: str = "out"
    repeats: int = 1
    suite_classes: tuple = ()

    def resolved_root(self):
        """Dataset root: config field wins over the environment variable."""
        return self.dataset_root or os.environ.get(DATA_ROOT_ENV, "")


def _section(doc, name, path):
    value = doc.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError("%s: [%s] must be a table" % (path, name))
    return value


def _spec_from_table(table, default_channels, input_channels, latent_dim):
    return ArchSpec(
        input_channels=int(table.get("input_channels", input_channels)),
        channels=tuple(table.get("channels", default_channels)),
        latent_dim=int(table.get("latent_dim", latent_dim)))


def _train_from_table(table, base=None):
    base = base or TrainConfig(epochs=15, batch_size=16, seed=0)
    return replace(base,
                   epochs=int(table.get("epochs", base.epochs)),
                   batch_size=int(table.get("batch_size", base.batch_size)),
                   learning_rate=float(table.get("learning_rate", base.learning_rate)),
                   beta1=float(table.get("beta1", base.beta1)),
                   beta2=float(table.get("beta2", base.beta2)),
                   seed=int(table.get("seed", base.seed)),
                   log_every=int(table.get("log_every", base.log_every)),
                   checkpoint_every=int(table.get("checkpoint_every",
                                                  base.checkpoint_every)))


def parse_config(path):
    """Parse and validate a TOML experiment config file."""
    try:
        with open(path, "rb") as f:
            doc = tomli.load(f)
    except FileNotFoundError:
        raise ConfigError("config file not found: %s" % path)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("%s: %s" % (path, exc))

    ds = _section(doc, "dataset", path)
    name = str(ds.get("name", "digits")).lower()
    root = str(ds.get("root", ""))

    teacher_table = _section(doc, "teacher", path)
    input_channels = 3 if name == "cifar10" else 1
    try:
        teacher = _spec_from_table(teacher_table, (64, 128, 256),
                                   input_channels, 256)
        student_table = _section(doc, "student", path)
        student = None
        if student_table:
            student = _spec_from_table(student_table, (2, 4, 8),
                                       teacher.input_channels,
                                       teacher.latent_dim)
    except (ValueError, TypeError) as exc:
        raise ConfigError("%s: bad arch spec: %s" % (path, exc))

    lw = _section(doc, "loss_weights", path)
    dw = _section(doc, "distill_weights", path)
    dist = _section(doc, "distill", path)
    train_table = _section(doc, "train", path)
    step2_table = train_table.get("step2")
    out = _section(doc, "output", path)
    suite = _section(doc, "suite", path)

    train = _train_from_table(train_table)
    cfg = ExperimentConfig(
        dataset_name=name,
        dataset_root=root,
        normal_class=int(ds.get("normal_class", 1)),
        max_train_images=int(ds.get("max_train_images", 0)),
        teacher_spec=teacher,
        student_spec=student,
        loss_weights=LossWeights(w_con=float(lw.get("w_con", 10.0)),
                                 w_enc=float(lw.get("w_enc", 1.0)),
                                 w_adv=float(lw.get("w_adv", 1.0))),
        distill_weights=DistillWeights(w1=float(dw.get("w1", 1.0)),
                                       wx=float(dw.get("wx", 1.0)),
                                       w2=float(dw.get("w2", 1.0))),
        structure=int(dist.get("structure", 2)),
        variant=str(dist.get("variant", "23")),
        teacher_checkpoint=str(dist.get("teacher_checkpoint", "")),
        train=train,
        train_step2=_train_from_table(step2_table, train) if step2_table else None,
        output_dir=str(out.get("dir", "out")),
        repeats=int(out.get("repeats", 1)),
        suite_classes=tuple(int(c) for c in suite.get("classes", ())),
    )
    _validate(cfg, path)
    return cfg


def _validate(cfg, path):
    if cfg.dataset_name not in DATASETS_NEEDING_ROOT + ("digits",):
        raise ConfigError("%s: dataset.name: unknown dataset %r"
                          % (path, cfg.dataset_name))
    if cfg.dataset_name in DATASETS_NEEDING_ROOT:
        root = cfg.resolved_root()
        if not root:
            raise ConfigError("%s: dataset.root: required for %s (or set $%s)"
                              % (path, cfg.dataset_name, DATA_ROOT_ENV))
        if not os.path.isdir(root):
            raise ConfigError("%s: dataset.root: no such directory %r"
                              % (path, root))
    if cfg.teacher_checkpoint and not os.path.isdir(cfg.teacher_checkpoint):
        raise ConfigError("%s: distill.teacher_checkpoint: no such directory %r"
                          % (path, cfg.teacher_checkpoint))
    if not 0 <= cfg.normal_class <= 9:
        raise ConfigError("%s: dataset.normal_class: must be 0-9" % path)
    if cfg.structure not in (1, 2, 3, 4):
        raise ConfigError("%s: distill.structure: must be 1-4" % path)
    if cfg.variant not in ("23", "24"):
        raise ConfigError("%s: distill.variant: must be '23' or '24'" % path)


def serialize_config(cfg):
    """Emit a TOML document equivalent to ``cfg`` (parse round-trips)."""
    doc = tomlkit.document()

    ds = tomlkit.table()
    ds["name"] = cfg.dataset_name
    if cfg.dataset_root:
        ds["root"] = cfg.dataset_root
    ds["normal_class"] = cfg.normal_class
    ds["max_train_images"] = cfg.max_train_images
    doc["dataset"] = ds

    def spec_table(spec):
        t = tomlkit.table()
        t["input_channels"] = spec.input_channels
        t["channels"] = list(spec.channels)
        t["latent_dim"] = spec.latent_dim
        return t

    doc["teacher"] = spec_table(cfg.teacher_spec)
    if cfg.student_spec is not None:
        doc["student"] = spec_table(cfg.student_spec)

    lw = tomlkit.table()
    lw["w_con"], lw["w_enc"], lw["w_adv"] = (cfg.loss_weights.w_con,
                                             cfg.loss_weights.w_enc,
                                             cfg.loss_weights.w_adv)
    doc["loss_weights"] = lw

    dw = tomlkit.table()
    dw["w1"], dw["wx"], dw["w2"] = (cfg.distill_weights.w1,
                                    cfg.distill_weights.wx,
                                    cfg.distill_weights.w2)
    doc["distill_weights"] = dw

    dist = tomlkit.table()
    dist["structure"] = cfg.structure
    dist["variant"] = cfg.variant
    if cfg.teacher_checkpoint:
        dist["teacher_checkpoint"] = cfg.teacher_checkpoint
    doc["distill"] = dist

    def train_table(tc):
        t = tomlkit.table()
        t["epochs"] = tc.epochs
        t["batch_size"] = tc.batch_size
        t["learning_rate"] = tc.learning_rate
        t["beta1"] = tc.beta1
        t["beta2"] = tc.beta2
        t["seed"] = tc.seed
        t["log_every"] = tc.log_every
        t["checkpoint_every"] = tc.checkpoint_every
        return t

    doc["train"] = train_table(cfg.train)
    if cfg.train_step2 is not None:
        doc["train"]["step2"] = train_table(cfg.train_step2)

    out = tomlkit.table()
    out["dir"] = cfg.output_dir
    out["repeats"] = cfg.repeats
    doc["output"] = out

    if cfg.suite_classes:
        suite = tomlkit.table()
        suite["classes"] = list(cfg.suite_classes)
        doc["suite"] = suite

    return tomlkit.dumps(doc)


def load_split(cfg):
    """Load the configured dataset and build its one-class split."""
    root = cfg.resolved_root() or None
    train, test = load_dataset(cfg.dataset_name, root)
    split = make_one_class_split(train, test, cfg.normal_class)
    if cfg.max_train_images and len(split.train_images) > cfg.max_train_images:
        split.train_images = split.train_images[:cfg.max_train_images]
    return split
