"""Tests for the data pipeline, the objective, the optimizer, training and evaluation."""

import dataclasses
import math

from pathlib import Path
from typing import Dict

import numpy as np
import pytest

from numpy.typing import NDArray

from retnet_lab.helpers.enums import Architecture, Paradigm, Precision, SyntheticKind
from retnet_lab.helpers.vocabulary import BOS_ID, VOCAB_SIZE
from retnet_lab.io_factory_methods import read_records
from retnet_lab.model import forward, init_params, ModelConfig
from retnet_lab.numerics.tensor import Rng, Tensor
from retnet_lab.train import (
    adamw_init,
    adamw_update,
    AdamWState,
    Batch,
    Corpus,
    cross_entropy,
    EvalConfig,
    eval_perplexity,
    gradcheck,
    lead_with_bos,
    lr_at,
    perplexity,
    SyntheticTask,
    task_accuracy,
    train,
    train_step,
    TrainConfig,
)
from retnet_lab.train.evaluate import validation_loss, window_ends
from retnet_lab.train.optim import clip_by_global_norm, global_norm
from retnet_lab.train.trainer import loss_and_grads


def test_lead_with_bos() -> None:
    """Check that inputs are the targets shifted right behind <bos>."""
    batch = lead_with_bos(np.array([[5, 6, 7], [8, 9, 10]]))

    assert np.array_equal(batch.inputs, [[BOS_ID, 5, 6], [BOS_ID, 8, 9]])
    assert np.array_equal(batch.targets, [[5, 6, 7], [8, 9, 10]])
    assert batch.weights.sum() == 6
    assert batch.token_count == 6


def test_corpus_split_and_windows(corpus_path: Path) -> None:
    """Check the held out tail and the non-overlapping training windows."""
    corpus = Corpus.from_file(corpus_path)

    assert len(corpus) == len(corpus_path.read_bytes())
    assert len(corpus.valid_ids) == int(len(corpus) * 0.1)
    assert len(corpus.train_ids) + len(corpus.valid_ids) == len(corpus)
    windows = corpus.windows(32)
    assert windows.shape == (len(corpus.train_ids) // 32, 32)
    assert np.array_equal(windows[1], corpus.train_ids[32:64])

    batch = corpus.sample(4, 32, Rng(0))
    assert batch.inputs.shape == (4, 32)
    assert np.all(batch.inputs[:, 0] == BOS_ID)
    assert batch.targets.max() < 256


def test_corpus_rejects_bad_input() -> None:
    """Check the empty corpus, the split fraction and windows that cannot fit."""
    with pytest.raises(ValueError, match="empty"):
        Corpus(b"")
    with pytest.raises(ValueError, match="valid_fraction"):
        Corpus(b"abc", valid_fraction=1.0)
    with pytest.raises(ValueError, match="fewer than one window"):
        Corpus(b"abcdefgh", valid_fraction=0.0).windows(9)


def test_copy_task_layout() -> None:
    """Check that the copy task repeats its payload after the marker and scores only that."""
    task = SyntheticTask(kind=SyntheticKind.COPY, length=6, alphabet=10)
    batch = task.sample(3, Rng(1))

    assert batch.inputs.shape == (3, 13)
    payload = batch.targets[:, :6]
    assert np.all(payload < 10)
    assert np.all(batch.targets[:, 6] == task.marker)
    assert np.array_equal(batch.targets[:, 7:], payload)
    assert np.array_equal(batch.weights[:, 7:], np.ones((3, 6)))
    assert batch.weights[:, :7].sum() == 0


def test_induction_task_layout() -> None:
    """Check that the scored answer is the value that followed the key earlier."""
    task = SyntheticTask(kind=SyntheticKind.INDUCTION, length=10, alphabet=8)
    batch = task.sample(5, Rng(2))

    for row in range(5):
        filler = batch.targets[row, :10]
        slot = int(np.flatnonzero(filler == task.marker)[0])
        assert batch.targets[row, -2] == task.marker
        assert batch.targets[row, -1] == filler[slot + 1]
    assert np.array_equal(batch.weights.sum(axis=1), np.ones(5))


def test_synthetic_task_validation() -> None:
    """Check the task size limits."""
    with pytest.raises(ValueError, match="length"):
        SyntheticTask(length=1)
    with pytest.raises(ValueError, match="alphabet"):
        SyntheticTask(alphabet=256)


def test_task_accuracy() -> None:
    """Check that only scored positions count."""
    batch = SyntheticTask(length=4, alphabet=6).sample(2, Rng(3))
    perfect = np.eye(VOCAB_SIZE)[batch.targets]
    wrong_unscored = perfect.copy()
    wrong_unscored[:, 0, :] = np.eye(VOCAB_SIZE)[BOS_ID]

    assert task_accuracy(perfect, batch) == 1.0
    assert task_accuracy(wrong_unscored, batch) == 1.0
    assert task_accuracy(np.zeros_like(perfect), batch) < 1.0


def test_cross_entropy() -> None:
    """Check the uniform loss, weighting and the argument checks."""
    uniform = Tensor(np.zeros((2, 3, VOCAB_SIZE)), Precision.FP64)
    targets = np.array([[1, 2, 3], [4, 5, 6]])

    assert cross_entropy(uniform, targets).item() == pytest.approx(math.log(VOCAB_SIZE))

    values = np.zeros((1, 2, 4))
    values[0, 0, 1] = 10.0
    logits = Tensor(values, Precision.FP64)
    only_first = cross_entropy(logits, [[1, 0]], [[1.0, 0.0]]).item()
    assert only_first == pytest.approx(-math.log(math.exp(10.0) / (math.exp(10.0) + 3.0)))

    with pytest.raises(ValueError, match="line up"):
        cross_entropy(uniform, targets[:, :2])
    with pytest.raises(ValueError, match="must lie in"):
        cross_entropy(uniform, targets + VOCAB_SIZE)
    with pytest.raises(ValueError, match="positive sum"):
        cross_entropy(uniform, targets, np.zeros((2, 3)))


def test_perplexity() -> None:
    """Check exp(loss) and the overflow guard."""
    assert perplexity(0.0) == 1.0
    assert perplexity(math.log(12.0)) == pytest.approx(12.0)
    assert perplexity(1e6) == math.inf


def test_learning_rate_schedule() -> None:
    """Check the linear warmup and the linear decay to zero."""
    cfg = TrainConfig(steps=100, warmup_steps=10, lr=1e-3)

    assert lr_at(0, cfg) == 0.0
    assert lr_at(5, cfg) == pytest.approx(5e-4)
    assert lr_at(10, cfg) == pytest.approx(1e-3)
    assert lr_at(55, cfg) == pytest.approx(5e-4)
    assert lr_at(100, cfg) == 0.0
    assert lr_at(120, cfg) == 0.0


def test_clip_by_global_norm() -> None:
    """Check that all gradients shrink by the same factor."""
    grads = {"a": np.array([3.0]), "b": np.array([[4.0]])}

    clipped, norm = clip_by_global_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    assert global_norm(clipped) == pytest.approx(1.0)
    assert clipped["a"][0] / clipped["b"][0, 0] == pytest.approx(0.75)

    unchanged, _ = clip_by_global_norm(grads, 10.0)
    assert unchanged["a"] is grads["a"]


def test_adamw_first_step() -> None:
    """Check the bias-corrected first step and that vectors are not decayed."""
    cfg = TrainConfig(steps=10, warmup_steps=0, lr=0.1, weight_decay=0.5, eps=0.0)
    params = {"w": np.ones((2, 2)), "b": np.ones(2)}
    grads = {"w": np.full((2, 2), -3.0), "b": np.array([2.0, -0.5])}

    new_params, state, lr = adamw_update(params, grads, adamw_init(params), cfg)

    assert lr == pytest.approx(0.09)
    assert state.step == 1
    assert np.allclose(new_params["w"], 1.0 - 0.09 * 0.5 + 0.09)
    assert np.allclose(new_params["b"], [0.91, 1.09])
    assert np.allclose(state.m["b"], 0.1 * grads["b"])


def test_adamw_state_arrays() -> None:
    """Check that the flattened moments rebuild the same state."""
    state = AdamWState(7, {"w": np.ones(3)}, {"w": np.full(3, 2.0)})

    rebuilt = AdamWState.from_arrays(7, state.to_arrays())

    assert set(state.to_arrays()) == {"m.w", "v.w"}
    assert rebuilt.step == 7
    assert np.array_equal(rebuilt.m["w"], state.m["w"])
    assert np.array_equal(rebuilt.v["w"], state.v["w"])


def test_train_config_validation() -> None:
    """Check the training and evaluation settings checks."""
    with pytest.raises(ValueError, match="not recurrent"):
        TrainConfig(paradigm=Paradigm.RECURRENT)
    with pytest.raises(ValueError, match="warmup_steps"):
        TrainConfig(steps=10, warmup_steps=11)
    with pytest.raises(ValueError, match="betas"):
        TrainConfig(betas=(0.9, 1.0))
    with pytest.raises(ValueError, match="exceeds the shortest context"):
        EvalConfig(context_lengths=(16, 64), score_last=32)


def test_train_step_reduces_the_batch_loss(
    tiny_retnet: ModelConfig, tiny_params: Dict[str, NDArray[np.floating]], corpus_path: Path
) -> None:
    """Check that repeated steps on one batch lower its loss."""
    batch = Corpus.from_file(corpus_path).sample(2, 16, Rng(0))
    cfg = TrainConfig(steps=20, warmup_steps=0, lr=1e-2, seq_len=16, batch_size=2)
    params, state = tiny_params, adamw_init(tiny_params)
    losses = []
    for _ in range(10):
        result = train_step(params, batch, state, cfg, tiny_retnet)
        params, state = result.params, result.opt_state
        losses.append(result.loss)

    assert losses[0] == pytest.approx(math.log(VOCAB_SIZE), abs=0.1)
    assert losses[-1] < losses[0] - 0.5
    assert state.step == 10


@pytest.mark.slow
def test_training_learns_byte_statistics(
    tmp_path: Path, tiny_retnet: ModelConfig, corpus_path: Path
) -> None:
    """Check that a short run on text drops well below the uniform loss and logs every step."""
    corpus = Corpus.from_file(corpus_path)
    cfg = TrainConfig(steps=40, warmup_steps=5, lr=1e-2, seq_len=32, batch_size=4)
    metrics = tmp_path / "train_metrics.csv"

    result = train(
        tiny_retnet,
        cfg,
        lambda rng: corpus.sample(cfg.batch_size, cfg.seq_len, rng),
        metrics_path=metrics,
    )

    assert [row.step for row in result.history] == list(range(1, 41))
    assert np.mean([row.loss for row in result.history[-5:]]) < result.history[0].loss - 0.5
    rows = read_records(metrics).rows
    assert len(rows) == 40
    assert rows[-1]["lr"] == 0.0


def test_resumed_training_matches_an_uninterrupted_run(
    tmp_path: Path, tiny_retnet: ModelConfig, corpus_path: Path
) -> None:
    """Check that resuming from a saved optimizer state replays the same data and updates."""
    corpus = Corpus.from_file(corpus_path)
    cfg = TrainConfig(steps=6, warmup_steps=2, lr=1e-2, seq_len=16, batch_size=2, seed=5)

    def sampler(rng: Rng) -> Batch:
        return corpus.sample(cfg.batch_size, cfg.seq_len, rng)

    full = train(tiny_retnet, cfg, sampler)

    data_rng = Rng(cfg.seed).spawn(0)
    params = init_params(tiny_retnet)
    state = adamw_init(params)
    for _ in range(3):
        result = train_step(params, sampler(data_rng), state, cfg, tiny_retnet)
        params, state = result.params, result.opt_state
    metrics = tmp_path / "train_metrics.csv"
    resumed = train(tiny_retnet, cfg, sampler, params, state, metrics_path=metrics)

    assert [row.step for row in resumed.history] == [4, 5, 6]
    assert len(read_records(metrics).rows) == 3
    for name, value in full.params.items():
        assert np.array_equal(resumed.params[name], value)


@pytest.mark.parametrize("paradigm", [Paradigm.PARALLEL, Paradigm.CHUNKWISE])
def test_gradcheck_retnet(paradigm: Paradigm) -> None:
    """Check reverse-mode gradients of the whole RetNet against central differences."""
    config = ModelConfig(
        n_layers=1, d_model=16, n_heads=2, precision=Precision.FP64, chunk_size=4, seed=1
    )

    report = gradcheck(config, 1e-5, seq_len=8, samples_per_param=3, paradigm=paradigm)

    assert report.passed, report
    assert report.coordinates_checked > 0


def test_gradcheck_transformer(tiny_transformer: ModelConfig) -> None:
    """Check reverse-mode gradients of the baseline against central differences."""
    report = gradcheck(dataclasses.replace(tiny_transformer, n_layers=1), 1e-5, samples_per_param=3)

    assert report.passed, report


def test_gradcheck_needs_float64() -> None:
    """Check that single precision configs are refused."""
    with pytest.raises(ValueError, match="float64"):
        gradcheck(ModelConfig(n_layers=1, d_model=8, n_heads=2, precision=Precision.FP32))


def test_window_ends() -> None:
    """Check the shared end offsets and the insufficient data error."""
    assert window_ends(100, (16, 32), 8) == [32, 40, 48, 56, 64, 72, 80, 88, 96]
    assert window_ends(100, (16, 32), 8, max_windows=2) == [32, 40]
    with pytest.raises(ValueError, match="Insufficient data"):
        window_ends(20, (16, 32), 8)
    with pytest.raises(ValueError, match="shortest context"):
        window_ends(100, (16, 32), 17)


def test_eval_perplexity(
    tiny_retnet: ModelConfig, tiny_params: Dict[str, NDArray[np.floating]], corpus_path: Path
) -> None:
    """Check that every context length scores the same number of tokens."""
    corpus = Corpus.from_file(corpus_path)

    rows = eval_perplexity(tiny_params, tiny_retnet, corpus.valid_ids, (16, 32), 8, max_windows=4)

    assert [row.context_length for row in rows] == [16, 32]
    assert all(row.tokens_scored == 32 for row in rows)
    for row in rows:
        assert row.loss == pytest.approx(math.log(VOCAB_SIZE), abs=0.1)
        assert row.perplexity == pytest.approx(math.exp(row.loss))


def test_eval_perplexity_agrees_across_paradigms(
    tiny_retnet: ModelConfig, tiny_params: Dict[str, NDArray[np.floating]], corpus_path: Path
) -> None:
    """Check that chunkwise scoring reproduces parallel scoring."""
    ids = Corpus.from_file(corpus_path).valid_ids
    chunked = dataclasses.replace(tiny_retnet, chunk_size=8)

    parallel = eval_perplexity(tiny_params, chunked, ids, (32,), 8, 3, Paradigm.PARALLEL)
    chunkwise = eval_perplexity(tiny_params, chunked, ids, (32,), 8, 3, Paradigm.CHUNKWISE)

    assert chunkwise[0].loss == pytest.approx(parallel[0].loss, abs=1e-9)


def test_validation_loss(
    tiny_retnet: ModelConfig, tiny_params: Dict[str, NDArray[np.floating]], corpus_path: Path
) -> None:
    """Check the held out loss of an untrained model and the short data error."""
    ids = Corpus.from_file(corpus_path).valid_ids

    assert validation_loss(tiny_params, tiny_retnet, ids, 32, 4) == pytest.approx(
        math.log(VOCAB_SIZE), abs=0.1
    )
    with pytest.raises(ValueError, match="Insufficient data"):
        validation_loss(tiny_params, tiny_retnet, ids[:10], 32)


def test_chunkwise_and_parallel_gradients_agree(
    tiny_retnet: ModelConfig, tiny_params: Dict[str, NDArray[np.floating]], corpus_path: Path
) -> None:
    """Check that training in either paradigm computes the same gradients."""
    batch = Corpus.from_file(corpus_path).sample(2, 24, Rng(4))
    parallel = dataclasses.replace(tiny_retnet, paradigm=Paradigm.PARALLEL)
    chunkwise = dataclasses.replace(tiny_retnet, paradigm=Paradigm.CHUNKWISE, chunk_size=5)

    loss_p, grads_p = loss_and_grads(tiny_params, batch, parallel)
    loss_c, grads_c = loss_and_grads(tiny_params, batch, chunkwise)

    assert loss_c == pytest.approx(loss_p, abs=1e-10)
    for name, grad in grads_p.items():
        assert np.max(np.abs(grads_c[name] - grad)) <= 1e-8, name


@pytest.mark.slow
@pytest.mark.parametrize("architecture", list(Architecture))
def test_copy_task_is_learned(architecture: Architecture) -> None:
    """Check that a two layer d=64 model copies a 16 token payload within 2000 steps."""
    config = ModelConfig(architecture=architecture, n_layers=2, d_model=64, n_heads=2)
    task = SyntheticTask(kind=SyntheticKind.COPY, length=16)
    cfg = TrainConfig(steps=2000, batch_size=32, lr=2e-3, warmup_steps=100, eval_interval=500)

    result = train(config, cfg, lambda rng: task.sample(cfg.batch_size, rng))

    held_out = task.sample(256, Rng(99))
    accuracy = task_accuracy(forward(held_out.inputs, config, result.params), held_out)
    assert accuracy >= 0.95


@pytest.mark.slow
def test_longer_context_scores_a_memorized_corpus_better(tiny_retnet: ModelConfig) -> None:
    """Check that a long context scores a fitted periodic corpus no worse than a short one."""
    period = Rng(5).integers(0, 4, (29,)) + ord("a")
    corpus = Corpus(np.tile(period, 40).astype(np.uint8).tobytes(), valid_fraction=0.25)
    cfg = TrainConfig(steps=150, warmup_steps=10, lr=1e-2, seq_len=32, batch_size=8)

    result = train(
        tiny_retnet, cfg, lambda rng: corpus.sample(cfg.batch_size, cfg.seq_len, rng)
    )
    rows = eval_perplexity(result.params, tiny_retnet, corpus.valid_ids, (4, 32), 4, 16)

    assert [row.tokens_scored for row in rows] == [64, 64]
    assert rows[1].perplexity <= rows[0].perplexity
    assert rows[1].loss < math.log(VOCAB_SIZE)
