"""scikit-learn style estimator wrapping the GAN novelty-detection pipeline."""

import numpy as np
import torch
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.exceptions import NotFittedError

from . import distill
from .data import OneClassSplit, TARGET_SIZE, normalize, resize_bilinear
from .evaluation import novelty_score
from .losses import DistillWeights, LossWeights
from .model import ArchSpec


class GanNoveltyDetector(BaseEstimator, OutlierMixin):
    """One-class novelty detector with an encoder-decoder-encoder GAN.

    Fits a GAN on normal samples only; the novelty score of a test sample is
    the squared distance between its two latent encodings. With
    ``student_channels`` set, a compact student GAN is distilled from the
    fitted network and used for scoring instead.

    Follows the usual outlier-detector conventions: ``decision_function`` is
    positive for inliers, ``predict`` returns +1 (normal) / -1 (novel).
    """

    def __init__(self, channels=(64, 128, 256), latent_dim=256, epochs=15,
                 batch_size=16, learning_rate=0.002, seed=0,
                 w_con=10.0, w_enc=1.0, w_adv=1.0,
                 student_channels=None, structure=2, progressive=None,
                 contamination=0.1):
        self.channels = channels
        self.latent_dim = latent_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.w_con = w_con
        self.w_enc = w_enc
        self.w_adv = w_adv
        self.student_channels = student_channels
        self.structure = structure
        self.progressive = progressive
        self.contamination = contamination

    def _as_batch(self, X):
        X = np.asarray(X)
        if X.ndim != 4:
            raise ValueError("expected (N, H, W, C) uint8 or (N, C, 32, 32) "
                             "float images, got shape %s" % (X.shape,))
        if X.dtype == np.uint8:  # (N, H, W, C) raw images
            out = np.empty((len(X), X.shape[3], TARGET_SIZE, TARGET_SIZE),
                           dtype=np.float32)
            for i, img in enumerate(X):
                out[i] = resize_bilinear(normalize(img)).transpose(2, 0, 1)
            return out
        return np.ascontiguousarray(X, dtype=np.float32)

    def fit(self, X, y=None):
        """Train on normal samples; ``y`` is ignored (one-class setting)."""
        images = self._as_batch(X)
        # dummy two-label test partition: the training loops evaluate AUC per
        # epoch, which needs one sample of each label; the values are unused
        dummy_test = images[:2] if len(images) >= 2 else np.tile(images, (2, 1, 1, 1))
        split = OneClassSplit(normal_class=0, train_images=images,
                              test_images=dummy_test,
                              test_labels=np.array([0, 1], dtype=np.int64))
        spec = ArchSpec(input_channels=images.shape[1],
                        channels=tuple(self.channels),
                        latent_dim=self.latent_dim)
        cfg = distill.TrainConfig(epochs=self.epochs,
                                  batch_size=self.batch_size,
                                  learning_rate=self.learning_rate,
                                  seed=self.seed)
        weights = LossWeights(self.w_con, self.w_enc, self.w_adv)
        ckpt = self._train(split, spec, cfg, weights)
        generator, _ = ckpt.build_networks()

        if self.student_channels is not None:
            student_spec = ArchSpec(input_channels=images.shape[1],
                                    channels=tuple(self.student_channels),
                                    latent_dim=self.latent_dim)
            if self.progressive:
                _, pair = distill.run_progressive(
                    self.progressive, ckpt, student_spec, split, cfg, cfg,
                    weights, DistillWeights())
            else:
                pair = distill.run_kdgan(self.structure, ckpt, student_spec,
                                         split, cfg, weights, DistillWeights())
            generator = pair.student_generator

        self.generator_ = generator
        train_scores = novelty_score(generator, images)
        self.offset_ = float(np.quantile(train_scores,
                                         1.0 - self.contamination))
        return self

    def _train(self, split, spec, cfg, weights):
        return distill.train_teacher(split, spec, cfg, weights)

    def _check_fitted(self):
        if not hasattr(self, "generator_"):
            raise NotFittedError("call fit before scoring")

    def score_samples(self, X):
        """Negated novelty score (higher = more normal), sklearn-style."""
        self._check_fitted()
        return -novelty_score(self.generator_, self._as_batch(X))

    def decision_function(self, X):
        return self.score_samples(X) + self.offset_

    def predict(self, X):
        """+1 for predicted normal samples, -1 for predicted novelties."""
        return np.where(self.decision_function(X) >= 0, 1, -1)
