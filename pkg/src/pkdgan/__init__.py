"""One-class novelty detection with encoder-decoder-encoder GANs and
progressive knowledge distillation."""

from .checkpoint import Checkpoint, CheckpointError, IncompatibleCheckpointError
from .data import (OneClassSplit, RawDataset, load_cifar10, load_dataset,
                   load_digits_corpus, load_idx, make_one_class_split,
                   normalize, resize_bilinear)
from .detector import GanNoveltyDetector
from .distill import (STRUCTURES, DivergenceError, StructureFlags, TrainConfig,
                      TrainedPair, distill_step, run_kdgan, run_progressive,
                      train_teacher)
from .evaluation import ScoreRecord, SuiteReport, auc, evaluate_model, novelty_score, run_suite
from .losses import DistillWeights, LossWeights
from .model import (ArchSpec, CostReport, Discriminator, Encoder, Decoder,
                    Generator, build_decoder, build_discriminator,
                    build_encoder, build_generator, cost_report, count_flops,
                    count_params, student_spec, teacher_spec)

__version__ = "0.1.0"
