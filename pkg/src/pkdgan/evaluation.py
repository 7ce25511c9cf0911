"""Novelty scoring, ROC-AUC, and per-class experiment suites."""

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.stats import rankdata


@dataclass
class ScoreRecord:
    sample_index: int
    score: float
    label: int


@dataclass
class SuiteReport:
    """Per-class AUC table plus model cost and run metadata."""

    dataset: str
    rows: list = field(default_factory=list)  # dicts: class, mean_auc, std_auc, aucs, error
    param_count: int = 0
    flop_count: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def mean_auc(self):
        ok = [r["mean_auc"] for r in self.rows if r.get("error") is None]
        return float(np.mean(ok)) if ok else float("nan")

    def to_dict(self):
        return {
            "dataset": self.dataset,
            "rows": self.rows,
            "mean_auc": self.mean_auc,
            "param_count": self.param_count,
            "flop_count": self.flop_count,
            "metadata": self.metadata,
        }


def novelty_score(generator, images, batch_size=64):
    """Per-sample mean squared z1-z2 distance, computed in evaluation mode.

    ``images`` is a float32 array or tensor of shape (N, C, 32, 32).
    """
    was_training = generator.training
    generator.eval()
    scores = []
    with torch.no_grad():
        x = torch.as_tensor(images)
        for i in range(0, len(x), batch_size):
            z1, _, z2 = generator(x[i:i + batch_size])
            scores.append((z1 - z2).square().mean(dim=1))
    if was_training:
        generator.train()
    return torch.cat(scores).numpy()


def auc(scores, labels=None):
    """ROC-AUC via the Mann-Whitney statistic with half credit for ties.

    Accepts either a list of ScoreRecord or (scores, labels) arrays; labels
    are 0 = normal, 1 = novel, and higher scores mean more novel.
    """
    if labels is None:
        records = list(scores)
        labels = np.array([r.label for r in records])
        scores = np.array([r.score for r in records])
    else:
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels)
    n_novel = int((labels == 1).sum())
    n_normal = int((labels == 0).sum())
    if n_novel == 0 or n_normal == 0:
        raise ValueError("AUC requires both normal and novel samples")
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_novel * (n_novel + 1) / 2.0
    return float(u / (n_novel * n_normal))


def evaluate_model(generator, split):
    """Score a split's test partition; returns (auc, per-label score stats)."""
    scores = novelty_score(generator, split.test_images)
    labels = split.test_labels
    stats = {}
    for label, name in ((0, "normal"), (1, "novel")):
        sel = scores[labels == label]
        stats[name] = {"mean": float(sel.mean()), "std": float(sel.std()),
                       "count": int(len(sel))}
    return auc(scores, labels), stats


def run_suite(train_fn, classes, repeats, dataset="", seeds=None, cost=None,
              metadata=None):
    """Run ``train_fn(normal_class, seed) -> auc`` over classes x repeats.

    Failures are recorded per cell without aborting the remaining cells.
    """
    if seeds is None:
        seeds = list(range(repeats))
    report = SuiteReport(dataset=dataset, metadata=dict(metadata or {}))
    if cost is not None:
        report.param_count = cost.param_count
        report.flop_count = cost.flop_count
    report.metadata.setdefault("seeds", list(seeds))
    for cls in classes:
        aucs, error = [], None
        for seed in seeds:
            try:
                aucs.append(float(train_fn(cls, seed)))
            except Exception as exc:  # noqa: BLE001 - cell isolation by design
                error = "%s: %s" % (type(exc).__name__, exc)
                break
        if error is None and aucs:
            row = {"class": int(cls), "mean_auc": float(np.mean(aucs)),
                   "std_auc": float(np.std(aucs)), "aucs": aucs, "error": None}
        else:
            row = {"class": int(cls), "mean_auc": None, "std_auc": None,
                   "aucs": aucs, "error": error or "no runs"}
        report.rows.append(row)
    return report
