"""Training: batching over mixed corpora, the update loop, dev selection.

Each epoch draws a fresh pool: every labeled instance, plus a random
down-sample of translation-only instances capped at ``mt_data_cap``
times the labeled count. The pool is shuffled uniformly and cut into
batches, so batches mix corpora and languages at random; batch size 1
degenerates to a full random permutation. Targets inside a batch are
padded to the batch maximum and padding steps are masked out of the
loss.

The schedule for epoch e is derived from (seed, e) alone, so a run can
stop after any step and resume bit-exactly: the resumed process
rebuilds the same pool, skips the batches already consumed, and
continues with identical arithmetic.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .config import TrainConfig
from .metrics import bleu_corpus, srl_f1
from .model import (
    ModelConfig,
    ModelParams,
    encode,
    forward_loss,
    greedy_decode,
    save_checkpoint,
)
from .prep import Assembled, Instance, assemble
from .serialize import load_arrays, save_arrays
from .srl_data import delinearize
from .vocab import Vocabulary

log = logging.getLogger(__name__)


class TrainAbort(RuntimeError):
    pass


# -- optimizer -----------------------------------------------------------


class Adam:
    """Adam with bias correction; moments keyed by parameter name."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, tensor in self.params.items():
            g = tensor.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            tensor.data -= update.astype(tensor.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam.step_count": np.array([self.step_count], dtype=np.int64)}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["adam.step_count"][0])
        for name in self.params:
            self.m[name] = arrays[f"adam.m.{name}"].copy()
            self.v[name] = arrays[f"adam.v.{name}"].copy()


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for t in params.values():
        if t.grad is not None:
            total += float(np.sum(t.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for t in params.values():
            if t.grad is not None:
                t.grad *= scale
    return norm


# -- batching --------------------------------------------------------------


@dataclass
class Batch:
    instances: list[Instance]

    def padded_targets(self, vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
        """Bounded target ids padded to the batch maximum, plus the mask."""
        width = max(len(i.target_refs) for i in self.instances)
        ids = np.full((len(self.instances), width), vocab.pad_id, dtype=np.int64)
        mask = np.zeros((len(self.instances), width), dtype=bool)
        for r, inst in enumerate(self.instances):
            for c, ref in enumerate(inst.target_refs):
                ids[r, c] = ref.gen_id if ref.gen_id is not None else vocab.unk_id
                mask[r, c] = True
        return ids, mask


def epoch_pool(train: list[Instance], mt_data_cap: float, rng) -> list[Instance]:
    """Labeled instances plus capped translation instances, shuffled.

    The cap keeps auxiliary translation data from drowning the labeled
    data. A corpus with no labeled instances at all is a plain
    translation run, so the cap does not apply there.
    """
    labeled = [i for i in train if i.kind == "labeled"]
    translation = [i for i in train if i.kind == "translation"]
    if labeled:
        allowed = int(mt_data_cap * len(labeled))
        if len(translation) > allowed:
            chosen = rng.choice(len(translation), size=allowed, replace=False)
            translation = [translation[int(i)] for i in sorted(chosen)]
    pool = labeled + translation
    order = rng.permutation(len(pool))
    return [pool[int(i)] for i in order]


def make_batches(pool: list[Instance], batch_size: int) -> list[Batch]:
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    return [Batch(pool[i:i + batch_size]) for i in range(0, len(pool), batch_size)]


def _epoch_rng(seed: int, epoch: int):
    return np.random.default_rng([seed, 1 + epoch])


# -- evaluation --------------------------------------------------------------


def evaluate_dev(params: ModelParams, dev: list[Instance], max_decode_len: int,
                 f1_mode: str = "dep") -> dict[str, float]:
    """Labeled F1 for same-language dev sets, full-stream BLEU otherwise."""
    if not dev:
        return {}
    gold_pairs = []
    hyps = []
    refs = []
    for inst in dev:
        seq = greedy_decode(inst.source, inst.predicate_index, inst.source_lang,
                            inst.indicator, params, max_len=max_decode_len)
        hyps.append(seq.symbols)
        refs.append(inst.target_symbols)
        if inst.gold is not None:
            got = delinearize(seq, inst.gold.predicate_index,
                              params.vocab.label_symbols)
            gold_pairs.append((got.sentence, inst.gold))
    if gold_pairs:
        report = srl_f1(gold_pairs, mode=f1_mode)
        return {"dev_f1": report.f1, "dev_precision": report.precision,
                "dev_recall": report.recall}
    bleu = bleu_corpus(hyps, refs, view="full",
                       label_symbols=params.vocab.label_symbols)
    return {"dev_bleu": bleu.score}


def dev_metric_value(metrics: dict[str, float]) -> Optional[float]:
    for key in ("dev_f1", "dev_bleu"):
        if key in metrics:
            return metrics[key]
    return None


# -- training state ------------------------------------------------------------


@dataclass
class TrainState:
    epoch: int = 0             # next epoch to run
    batch_in_epoch: int = 0    # batches of that epoch already consumed
    step: int = 0              # global optimizer steps so far
    best_metric: float = -math.inf
    best_epoch: int = -1
    epochs_since_best: int = 0
    stop_reason: str = ""


def save_train_state(path: str, params: ModelParams, opt: Adam,
                     state: TrainState) -> None:
    meta = {
        "kind": "train-state",
        "version": 1,
        "state": {
            "epoch": state.epoch,
            "batch_in_epoch": state.batch_in_epoch,
            "step": state.step,
            "best_metric": state.best_metric,
            "best_epoch": state.best_epoch,
            "epochs_since_best": state.epochs_since_best,
        },
        "config": {
            "model": {k: (list(v) if isinstance(v, tuple) else v)
                      for k, v in params.config.__dict__.items()},
            "words": params.vocab.words,
            "labels": params.vocab.labels,
        },
    }
    arrays = {name: t.data for name, t in params.named_parameters().items()}
    arrays.update(opt.state_arrays())
    save_arrays(path, meta, arrays)


def load_train_state(path: str, params: ModelParams, opt: Adam) -> TrainState:
    meta, arrays = load_arrays(path)
    if meta.get("kind") != "train-state":
        raise TrainAbort(f"{path}: not a training state file")
    saved_words = meta["config"]["words"]
    if saved_words != params.vocab.words:
        raise TrainAbort(f"{path}: vocabulary does not match this configuration")
    for name, tensor in params.named_parameters().items():
        if arrays[name].shape != tensor.data.shape:
            raise TrainAbort(f"{path}: tensor {name!r} shape mismatch")
        tensor.data = arrays[name].copy()
    opt.load_state_arrays(arrays)
    s = meta["state"]
    return TrainState(
        epoch=int(s["epoch"]),
        batch_in_epoch=int(s["batch_in_epoch"]),
        step=int(s["step"]),
        best_metric=float(s["best_metric"]),
        best_epoch=int(s["best_epoch"]),
        epochs_since_best=int(s["epochs_since_best"]),
    )


# -- the loop ----------------------------------------------------------------


@dataclass
class TrainResult:
    best_checkpoint: str
    last_checkpoint: str
    log_path: str
    state: TrainState
    params: ModelParams
    assembled: Assembled
    epochs_run: int = 0
    final_train_acc: float = 0.0


def batch_loss(batch: Batch, params: ModelParams) -> tuple[Tensor, int, int]:
    """Mean instance loss over the batch plus token-accuracy counts."""
    total: Optional[Tensor] = None
    steps = 0
    correct = 0
    for inst in batch.instances:
        enc = encode(inst.source, inst.predicate_index, inst.source_lang, params)
        res = forward_loss(enc, inst.target_refs, inst.indicator, params)
        total = res.loss if total is None else ad.add(total, res.loss)
        steps += res.steps
        correct += res.correct
    assert total is not None
    mean = ad.mul(total, 1.0 / len(batch.instances))
    return mean, steps, correct


def train_loop(config: TrainConfig, assembled: Optional[Assembled] = None,
               resume_from: Optional[str] = None,
               log_handle=None) -> TrainResult:
    config.validate()
    work = assembled if assembled is not None else assemble(config)
    os.makedirs(config.out_dir, exist_ok=True)

    model_config = ModelConfig(
        indicators=work.indicators,
        precision=config.precision,
        **work_model_kwargs(config),
    )
    init_rng = np.random.default_rng([config.seed, 0])
    params = ModelParams.init(model_config, work.vocab, init_rng,
                              pretrained=work.pretrained)
    opt = Adam(params.named_parameters(), lr=config.learning_rate)
    state = TrainState()
    if resume_from:
        state = load_train_state(resume_from, params, opt)
        log.info("resumed from %s at epoch %d, batch %d",
                 resume_from, state.epoch, state.batch_in_epoch)

    best_path = os.path.join(config.out_dir, "best.ckpt")
    last_path = os.path.join(config.out_dir, "last.ckpt")
    state_path = os.path.join(config.out_dir, "train_state.bin")
    log_path = os.path.join(config.out_dir, "metrics.jsonl")

    own_handle = log_handle is None
    if own_handle:
        mode = "a" if resume_from else "w"
        log_handle = open(log_path, mode, encoding="utf-8")

    def emit(record: dict) -> None:
        log_handle.write(json.dumps(record, sort_keys=True) + "\n")

    started = time.monotonic()
    epochs_run = 0
    epoch_acc = 0.0
    try:
        epoch = state.epoch
        while epoch < config.epochs:
            rng = _epoch_rng(config.seed, epoch)
            pool = epoch_pool(work.train, config.mt_data_cap, rng)
            batches = make_batches(pool, config.batch_size)
            start_batch = state.batch_in_epoch if epoch == state.epoch else 0
            epoch_steps = 0
            epoch_correct = 0
            epoch_loss = 0.0
            for b in range(start_batch, len(batches)):
                batch = batches[b]
                try:
                    loss, steps, correct = batch_loss(batch, params)
                    loss.backward()
                except NonFiniteError as err:
                    _dump_failed_batch(config.out_dir, epoch, b, batch, err)
                    raise TrainAbort(
                        f"non-finite loss at epoch {epoch} batch {b}: {err}") from err
                clip_gradients(params.named_parameters(), config.clip_norm)
                opt.step()
                state.step += 1
                epoch_steps += steps
                epoch_correct += correct
                epoch_loss += loss.item() * len(batch.instances)
                emit({"event": "step", "epoch": epoch, "step": state.step,
                      "loss": loss.item()})
                if config.state_every and state.step % config.state_every == 0:
                    state.epoch = epoch
                    state.batch_in_epoch = b + 1
                    save_train_state(state_path, params, opt, state)

            epochs_run += 1
            epoch_acc = epoch_correct / epoch_steps if epoch_steps else 0.0
            record = {
                "event": "epoch", "epoch": epoch,
                "mean_loss": epoch_loss / max(len(pool), 1),
                "token_accuracy": epoch_acc,
            }

            is_eval = (epoch + 1) % config.eval_every == 0 or epoch + 1 == config.epochs
            if is_eval and work.dev:
                metrics = evaluate_dev(params, work.dev, config.max_decode_len,
                                       work.f1_mode)
                record.update(metrics)
                value = dev_metric_value(metrics)
                if value is not None:
                    if value > state.best_metric:
                        state.best_metric = value
                        state.best_epoch = epoch
                        state.epochs_since_best = 0
                        save_checkpoint(params, best_path)
                    else:
                        state.epochs_since_best += 1
            emit(record)

            epoch += 1
            state.epoch = epoch
            state.batch_in_epoch = 0
            save_train_state(state_path, params, opt, state)

            if config.stop_train_acc is not None and epoch_acc >= config.stop_train_acc:
                state.stop_reason = "train_accuracy_target"
                break
            if work.dev and state.epochs_since_best >= config.patience:
                state.stop_reason = "early_stopping"
                break
        else:
            state.stop_reason = "epoch_budget"
    finally:
        if own_handle:
            log_handle.close()

    save_checkpoint(params, last_path)
    if not os.path.exists(best_path):
        save_checkpoint(params, best_path)
    log.info("training done in %.1fs: %s", time.monotonic() - started,
             state.stop_reason)
    return TrainResult(best_checkpoint=best_path, last_checkpoint=last_path,
                       log_path=log_path, state=state, params=params,
                       assembled=work, epochs_run=epochs_run,
                       final_train_acc=epoch_acc)


def work_model_kwargs(config: TrainConfig) -> dict:
    m = config.model
    return {"d_w": m.d_w, "d_p": m.d_p, "d_l": m.d_l, "d_h": m.d_h,
            "d_s": m.d_s, "d_a": m.d_a, "enc_layers": m.enc_layers,
            "enc_style": m.enc_style}


def _dump_failed_batch(out_dir: str, epoch: int, batch_index: int, batch: Batch,
                       err: Exception) -> None:
    path = os.path.join(out_dir, "failed_batch.json")
    payload = {
        "epoch": epoch,
        "batch": batch_index,
        "error": str(err),
        "instances": [
            {"source": inst.source, "target": inst.target_symbols,
             "indicator": inst.indicator, "kind": inst.kind}
            for inst in batch.instances
        ],
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, ensure_ascii=False)
    log.error("non-finite loss; offending batch dumped to %s", path)
