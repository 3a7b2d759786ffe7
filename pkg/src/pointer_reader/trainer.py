"""Mini-batch Adagrad training for the pointer reader."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .model import EncodedInstance, ParConfig, ParParams, instance_loss

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 10
    learning_rate: float = 0.01
    adagrad_epsilon: float = 1e-8
    seed: int = 0
    l2_weight: float = 0.0
    shuffle: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.adagrad_epsilon < 0 or self.l2_weight < 0:
            raise ValueError("adagrad_epsilon and l2_weight must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class AdagradState:
    accumulators: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, arrays: dict) -> "AdagradState":
        return cls({k: np.zeros_like(v) for k, v in arrays.items()})


def adagrad_step(params: dict, grads: dict, state: AdagradState, lr: float, eps: float) -> None:
    """In place: ``G += g**2; theta -= lr * g / (sqrt(G) + eps)``."""
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        G = state.accumulators.setdefault(name, np.zeros_like(theta))
        G += g * g
        theta -= lr * g / (np.sqrt(G) + eps)


def instance_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, index, 1])


def instance_gradients(params: ParParams, config: ParConfig, enc: EncodedInstance,
                       rng: Optional[np.random.Generator], training: bool = True):
    with T.Tape() as tape:
        loss, _ = instance_loss(params, config, enc, training, rng)
    tape.backward(loss)
    return float(loss.value), {t.name: tape.grad(t) for t in params.tensors()}


@dataclass
class TrainResult:
    params: ParParams
    state: AdagradState
    log: list
    epochs_done: int


def train(
    params: ParParams,
    config: ParConfig,
    instances: Sequence[EncodedInstance],
    train_config: TrainConfig,
    state: Optional[AdagradState] = None,
    start_epoch: int = 0,
    on_epoch_end: Optional[Callable[[int, ParParams, AdagradState, dict], Optional[float]]] = None,
) -> TrainResult:
    """Train ``params`` in place.

    ``instances`` should already be encoded; entries that are ``None`` (failed
    encoding) are skipped. ``on_epoch_end`` may return a dev accuracy, which is
    recorded in the log.
    """
    usable = [(i, enc) for i, enc in enumerate(instances) if enc is not None]
    if not usable:
        raise ValueError("no usable training instances")
    tc = train_config
    named = params.named()
    values = {k: t.value for k, t in named.items()}
    state = state if state is not None else AdagradState.zeros_like(values)
    log = []
    pool = ThreadPoolExecutor(tc.workers) if tc.workers > 1 else None
    try:
        for epoch in range(start_epoch, tc.epochs):
            order = list(range(len(usable)))
            if tc.shuffle:
                order = list(np.random.default_rng([tc.seed, epoch]).permutation(len(usable)))
            batch_losses = []
            for start in range(0, len(order), tc.batch_size):
                batch = [usable[k] for k in order[start:start + tc.batch_size]]
                batch_losses.append(_batch_step(params, config, batch, tc, epoch, values, state, pool))
            record = {"epoch": epoch, "loss": float(np.mean(batch_losses)), "dev_acc": None}
            if on_epoch_end is not None:
                record["dev_acc"] = on_epoch_end(epoch, params, state, record)
            logger.info("epoch %d loss %.6f", epoch, record["loss"])
            log.append(record)
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(params, state, log, max(tc.epochs, start_epoch))


def _batch_step(params, config, batch, tc, epoch, values, state, pool) -> float:
    def work(item):
        index, enc = item
        try:
            return instance_gradients(params, config, enc, instance_rng(tc.seed, epoch, index))
        except ValueError as exc:
            logger.warning("skipping instance %d: %s", index, exc)
            return None

    results = list(pool.map(work, batch)) if pool is not None else [work(b) for b in batch]
    results = [r for r in results if r is not None]
    if not results:
        return 0.0
    n = len(results)
    # fixed summation order keeps results independent of the worker count
    grads = {k: np.zeros_like(v) for k, v in values.items()}
    loss = 0.0
    for l, g in results:
        loss += l
        for k in grads:
            grads[k] += g[k]
    loss /= n
    for k in grads:
        grads[k] /= n
    if tc.l2_weight:
        for k, v in values.items():
            loss += tc.l2_weight * float(np.dot(v.ravel(), v.ravel()))
            grads[k] += 2.0 * tc.l2_weight * v
    adagrad_step(values, grads, state, tc.learning_rate, tc.adagrad_epsilon)
    return loss


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(directory, params: ParParams, state: AdagradState, config: ParConfig,
                    train_config: TrainConfig, epoch: int, vocab_digest: str) -> Path:
    directory = Path(directory)
    arrays = dict(params.arrays())
    arrays.update({f"adagrad/{k}": v for k, v in state.accumulators.items()})
    T.save_arrays(directory, arrays)
    sidecar = {
        "model": config.to_json(),
        # worker count does not affect results, so it stays out of the checkpoint
        "train": {k: v for k, v in train_config.to_json().items() if k != "workers"},
        "epochs_done": epoch,
        "vocab_sha256": vocab_digest,
    }
    (directory / "config.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory, vocab_size: Optional[int] = None):
    """Returns (params, adagrad state, ParConfig, sidecar dict)."""
    directory = Path(directory)
    sidecar = json.loads((directory / "config.json").read_text())
    config = ParConfig(**sidecar["model"])
    arrays, _ = T.load_arrays(directory)
    emb = arrays["embedding"]
    if vocab_size is not None and emb.shape[0] != vocab_size:
        raise ValueError(f"checkpoint vocabulary size {emb.shape[0]} != {vocab_size}")
    params = ParParams.initialize(config, emb.shape[0], [], np.random.default_rng(0))
    params.load_arrays({k: v for k, v in arrays.items() if not k.startswith("adagrad/")})
    state = AdagradState({k[len("adagrad/"):]: v for k, v in arrays.items() if k.startswith("adagrad/")})
    return params, state, config, sidecar
