"""Training, gradient checking and perplexity evaluation."""

from retnet_lab.train.config import EvalConfig, TrainConfig
from retnet_lab.train.data import Batch, Corpus, lead_with_bos, SyntheticTask, task_accuracy
from retnet_lab.train.evaluate import eval_perplexity, PerplexityRow
from retnet_lab.train.gradcheck import gradcheck, GradcheckReport
from retnet_lab.train.loss import cross_entropy, perplexity
from retnet_lab.train.optim import adamw_init, adamw_update, AdamWState, lr_at
from retnet_lab.train.trainer import MetricsRow, train, train_step, TrainResult

__all__ = [
    "AdamWState",
    "Batch",
    "Corpus",
    "EvalConfig",
    "GradcheckReport",
    "MetricsRow",
    "PerplexityRow",
    "SyntheticTask",
    "TrainConfig",
    "TrainResult",
    "adamw_init",
    "adamw_update",
    "cross_entropy",
    "eval_perplexity",
    "gradcheck",
    "lead_with_bos",
    "lr_at",
    "perplexity",
    "task_accuracy",
    "train",
    "train_step",
]
