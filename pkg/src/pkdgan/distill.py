"""Training loops: teacher pre-training, the four KDGAN structures, and the
two-step progressive schedule.

Determinism: all randomness flows from the single config seed through named
streams (parameter init, batch shuffling), so identical configs reproduce
bit-identical parameters. Distillation targets are always computed under
no_grad with the teacher in evaluation mode, so the distillation loss never
routes gradients (or BatchNorm statistic updates) into the teacher.
"""

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch.optim import Adam

from . import losses as L
from .checkpoint import Checkpoint, IncompatibleCheckpointError
from .evaluation import evaluate_model
from .model import build_discriminator, build_generator


class DivergenceError(RuntimeError):
    """A loss went non-finite; carries the most recent loss records."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


@dataclass(frozen=True)
class StructureFlags:
    """Which of the five objectives are active, plus teacher freezing."""

    alpha: int = 0   # teacher generator loss
    beta: int = 0    # teacher discriminator loss
    mu: int = 1      # student generator loss
    nu: int = 1      # student discriminator loss
    lam: int = 1     # distillation loss
    teacher_frozen: bool = True

    def __post_init__(self):
        for name in ("alpha", "beta", "mu", "nu", "lam"):
            if getattr(self, name) not in (0, 1):
                raise ValueError("%s must be 0 or 1" % name)
        if self.teacher_frozen and (self.alpha or self.beta):
            raise ValueError("a frozen teacher cannot have active teacher losses")


STRUCTURES = {
    1: StructureFlags(0, 0, 0, 0, 1, teacher_frozen=True),
    2: StructureFlags(0, 0, 1, 1, 1, teacher_frozen=True),
    3: StructureFlags(1, 1, 0, 0, 1, teacher_frozen=False),
    4: StructureFlags(1, 1, 1, 1, 1, teacher_frozen=False),
}


def structure_name(structure):
    return "KDGAN-%d" % structure


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 1
    learning_rate: float = 0.002
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.checkpoint_every < 0:
            raise ValueError("invalid epochs/batch_size/checkpoint_every")


@dataclass
class TrainedPair:
    """Teacher and student networks plus per-epoch histories."""

    teacher_generator: object
    teacher_discriminator: object
    teacher_spec: object
    student_generator: object
    student_discriminator: object
    student_spec: object
    histories: dict = field(default_factory=dict)

    def student_checkpoint(self, cfg, structure):
        return Checkpoint.from_networks(
            self.student_generator, self.student_discriminator,
            self.student_spec, seed=cfg.seed, epoch=cfg.epochs,
            structure=structure_name(structure),
            loss_summary=_loss_summary(self.histories.get("losses", [])),
            history=_auc_history(self.histories))

    def teacher_checkpoint(self, cfg, structure):
        return Checkpoint.from_networks(
            self.teacher_generator, self.teacher_discriminator,
            self.teacher_spec, seed=cfg.seed, epoch=cfg.epochs,
            structure=structure_name(structure),
            history=_auc_history(self.histories))


def stream_seed(seed, name):
    """Derive an independent 63-bit seed for a named random stream."""
    digest = hashlib.sha256(("%d:%s" % (seed, name)).encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def _torch_gen(seed, name):
    g = torch.Generator()
    g.manual_seed(stream_seed(seed, name))
    return g


def iter_batches(images, batch_size, rng):
    """Shuffled minibatches over a (N, C, 32, 32) float32 array."""
    order = rng.permutation(len(images))
    for i in range(0, len(order), batch_size):
        yield torch.from_numpy(images[order[i:i + batch_size]])


def _adam(params, cfg):
    return Adam(params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))


def _disc_step(gen, disc, opt_d, x):
    with torch.no_grad():
        _, x_hat, _ = gen(x)
    p_real, _ = disc(x)
    p_fake, _ = disc(x_hat)
    l_d = L.discriminator_loss(p_real, p_fake)
    opt_d.zero_grad(set_to_none=True)
    l_d.backward()
    opt_d.step()
    return float(l_d.detach())


def _gen_step(gen, opt_g, x, *, disc=None, weights=None, mu=0,
              distill_targets=None, distill_weights=None, lam=0):
    """One generator update minimizing mu * L_g + lam * K_l.

    ``distill_targets`` are the teacher's (z1, x_hat, z2), already detached.
    """
    z1, x_hat, z2 = gen(x)
    total = x.new_zeros(())
    rec = {}
    if mu:
        con = L.s_con(x, x_hat)
        enc = L.s_enc(z1, z2)
        _, feat_real = disc(x)
        _, feat_fake = disc(x_hat)
        adv = L.s_adv(feat_real.detach(), feat_fake)
        l_g = L.generator_loss(weights, con, enc, adv)
        total = total + mu * l_g
        rec.update(s_con=float(con.detach()), s_enc=float(enc.detach()),
                   s_adv=float(adv.detach()), l_g=float(l_g.detach()))
    if lam:
        z1_t, xhat_t, z2_t = distill_targets
        v1 = L.k1(z1_t, z1)
        vx = L.kx(xhat_t, x_hat)
        v2 = L.k2(z2_t, z2)
        kl = L.k_l(distill_weights, v1, vx, v2)
        total = total + lam * kl
        rec.update(k1=float(v1.detach()), kx=float(vx.detach()),
                   k2=float(v2.detach()), k_l=float(kl.detach()))
    opt_g.zero_grad(set_to_none=True)
    total.backward()
    opt_g.step()
    return rec


def _check_finite(record, history):
    for key, value in record.items():
        if isinstance(value, float) and not math.isfinite(value):
            raise DivergenceError("non-finite %s at step %s"
                                  % (key, record.get("step")), history[-100:])


def _loss_summary(records):
    if not records:
        return {}
    last = records[-1]
    return {k: v for k, v in last.items() if isinstance(v, (int, float))}


def _auc_history(histories):
    out = {}
    for key in ("auc", "student_auc", "teacher_auc"):
        if key in histories:
            out[key] = [float(v) for v in histories[key]]
    return out


def _interval_checkpoint(cfg, epoch, on_checkpoint, make):
    """Invoke ``on_checkpoint`` at the configured epoch interval (the final
    epoch is always checkpointed separately by the caller)."""
    if (on_checkpoint and cfg.checkpoint_every
            and (epoch + 1) % cfg.checkpoint_every == 0
            and epoch + 1 != cfg.epochs):
        on_checkpoint(epoch, make())


def train_teacher(split, spec, cfg, loss_weights=None, on_epoch=None,
                  record_sink=None, on_checkpoint=None):
    """Pre-train a GAN on the split's normal-class images.

    Alternates one discriminator step and one generator step per batch;
    returns the final-epoch checkpoint (no early stopping). If
    ``record_sink`` is a list, per-step loss records are appended to it.
    ``on_checkpoint(epoch, ckpt)`` fires every ``cfg.checkpoint_every``
    epochs (the returned final checkpoint is always produced).
    """
    loss_weights = loss_weights or L.LossWeights()
    gen = build_generator(spec, _torch_gen(cfg.seed, "init-generator"))
    disc = build_discriminator(spec, _torch_gen(cfg.seed, "init-discriminator"))
    opt_g, opt_d = _adam(gen.parameters(), cfg), _adam(disc.parameters(), cfg)
    shuffle_rng = np.random.default_rng(stream_seed(cfg.seed, "shuffle"))

    records = record_sink if record_sink is not None else []
    auc_curve = []
    step = 0
    gen.train(), disc.train()
    for epoch in range(cfg.epochs):
        for x in iter_batches(split.train_images, cfg.batch_size, shuffle_rng):
            rec = {"step": step, "epoch": epoch}
            rec["l_d"] = _disc_step(gen, disc, opt_d, x)
            rec.update(_gen_step(gen, opt_g, x, disc=disc,
                                 weights=loss_weights, mu=1.0))
            records.append(rec)
            _check_finite(rec, records)
            step += 1
        auc_value, _ = evaluate_model(gen, split)
        gen.train()
        auc_curve.append(auc_value)
        if on_epoch:
            on_epoch(epoch, auc_value)
        _interval_checkpoint(cfg, epoch, on_checkpoint, lambda: Checkpoint.from_networks(
            gen, disc, spec, seed=cfg.seed, epoch=epoch + 1,
            structure="teacher", loss_summary=_loss_summary(records),
            history={"auc": list(auc_curve)}))

    return Checkpoint.from_networks(
        gen, disc, spec, seed=cfg.seed, epoch=cfg.epochs, structure="teacher",
        loss_summary=_loss_summary(records),
        history={"auc": auc_curve, "records": len(records)})


def _distill_targets(teacher_gen, x):
    was_training = teacher_gen.training
    teacher_gen.eval()  # keep teacher BatchNorm statistics untouched
    with torch.no_grad():
        targets = teacher_gen(x)
    if was_training:
        teacher_gen.train()
    return targets


def distill_step(flags, teacher_gen, teacher_disc, student_gen, student_disc,
                 optimizers, x, loss_weights, distill_weights):
    """One combined update. Order: student D, student G, teacher D, teacher G."""
    rec = {}
    targets = _distill_targets(teacher_gen, x) if flags.lam else None
    if flags.nu:
        rec["l_d"] = _disc_step(student_gen, student_disc,
                                optimizers["student_d"], x)
    if flags.mu or flags.lam:
        rec.update(_gen_step(student_gen, optimizers["student_g"], x,
                             disc=student_disc, weights=loss_weights,
                             mu=float(flags.mu), distill_targets=targets,
                             distill_weights=distill_weights,
                             lam=float(flags.lam)))
    if flags.beta:
        rec["l_d_teacher"] = _disc_step(teacher_gen, teacher_disc,
                                        optimizers["teacher_d"], x)
    if flags.alpha:
        teacher_rec = _gen_step(teacher_gen, optimizers["teacher_g"], x,
                                disc=teacher_disc, weights=loss_weights, mu=1.0)
        rec.update({k + "_teacher": v for k, v in teacher_rec.items()})
    return rec


def run_kdgan(structure, teacher_ckpt, student_spec, split, cfg,
              loss_weights=None, distill_weights=None, student_init=None,
              on_epoch=None, on_checkpoint=None):
    """Distill a student from a teacher checkpoint under one KDGAN structure.

    ``student_init`` optionally warm-starts the student from a checkpoint
    (used by the progressive second step); otherwise the student is randomly
    initialized.
    """
    flags = STRUCTURES[structure] if isinstance(structure, int) else structure
    loss_weights = loss_weights or L.LossWeights()
    distill_weights = distill_weights or L.DistillWeights()
    if teacher_ckpt.spec.latent_dim != student_spec.latent_dim:
        raise IncompatibleCheckpointError(
            "teacher latent dim %d != student latent dim %d"
            % (teacher_ckpt.spec.latent_dim, student_spec.latent_dim))
    if teacher_ckpt.spec.input_channels != student_spec.input_channels:
        raise IncompatibleCheckpointError("teacher/student channel counts differ")

    teacher_gen, teacher_disc = teacher_ckpt.build_networks()
    if student_init is not None:
        student_gen, student_disc = student_init.build_networks()
    else:
        student_gen = build_generator(student_spec,
                                      _torch_gen(cfg.seed, "init-generator"))
        student_disc = build_discriminator(
            student_spec, _torch_gen(cfg.seed, "init-discriminator"))

    if flags.teacher_frozen:
        teacher_gen.eval(), teacher_disc.eval()
        for p in list(teacher_gen.parameters()) + list(teacher_disc.parameters()):
            p.requires_grad_(False)
    else:
        teacher_gen.train(), teacher_disc.train()
    student_gen.train(), student_disc.train()

    optimizers = {
        "student_g": _adam(student_gen.parameters(), cfg),
        "student_d": _adam(student_disc.parameters(), cfg),
    }
    if flags.alpha:
        optimizers["teacher_g"] = _adam(teacher_gen.parameters(), cfg)
    if flags.beta:
        optimizers["teacher_d"] = _adam(teacher_disc.parameters(), cfg)

    shuffle_rng = np.random.default_rng(stream_seed(cfg.seed, "shuffle"))
    records, student_auc, teacher_auc = [], [], []
    step = 0
    for epoch in range(cfg.epochs):
        for x in iter_batches(split.train_images, cfg.batch_size, shuffle_rng):
            rec = {"step": step, "epoch": epoch}
            rec.update(distill_step(flags, teacher_gen, teacher_disc,
                                    student_gen, student_disc, optimizers, x,
                                    loss_weights, distill_weights))
            records.append(rec)
            _check_finite(rec, records)
            step += 1
        s_auc, _ = evaluate_model(student_gen, split)
        t_auc, _ = evaluate_model(teacher_gen, split)
        student_gen.train()
        if not flags.teacher_frozen:
            teacher_gen.train()
        student_auc.append(s_auc)
        teacher_auc.append(t_auc)
        if on_epoch:
            on_epoch(epoch, s_auc, t_auc)
        _interval_checkpoint(cfg, epoch, on_checkpoint, lambda: Checkpoint.from_networks(
            student_gen, student_disc, student_spec, seed=cfg.seed,
            epoch=epoch + 1, structure=structure_name(
                structure if isinstance(structure, int) else 0),
            history={"student_auc": list(student_auc),
                     "teacher_auc": list(teacher_auc)}))

    return TrainedPair(
        teacher_generator=teacher_gen, teacher_discriminator=teacher_disc,
        teacher_spec=teacher_ckpt.spec,
        student_generator=student_gen, student_discriminator=student_disc,
        student_spec=student_spec,
        histories={"losses": records, "student_auc": student_auc,
                   "teacher_auc": teacher_auc})


PROGRESSIVE_VARIANTS = {"23": 3, "24": 4}


def run_progressive(variant, teacher_ckpt, student_spec, split, cfg_step1,
                    cfg_step2, loss_weights=None, distill_weights=None,
                    on_epoch=None):
    """Two-step schedule: structure 2 against the frozen teacher, then joint
    fine-training with structure 3 or 4 starting from both step-1 networks.

    Returns (step1_pair, step2_pair); optimizer state is fresh at step 2.
    """
    if variant not in PROGRESSIVE_VARIANTS:
        raise ValueError("variant must be one of %s" % sorted(PROGRESSIVE_VARIANTS))
    step1 = run_kdgan(2, teacher_ckpt, student_spec, split, cfg_step1,
                      loss_weights, distill_weights, on_epoch=on_epoch)
    if cfg_step2.epochs == 0:
        return step1, step1
    step2 = run_kdgan(PROGRESSIVE_VARIANTS[variant],
                      step1.teacher_checkpoint(cfg_step1, 2),
                      student_spec, split, cfg_step2,
                      loss_weights, distill_weights,
                      student_init=step1.student_checkpoint(cfg_step1, 2),
                      on_epoch=on_epoch)
    return step1, step2
