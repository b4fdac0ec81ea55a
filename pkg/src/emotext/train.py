"""Adam optimizer, the per-emotion training loop, and checkpoint files.

Checkpoint format: two files sharing a stem.

``<stem>.manifest.json``
    UTF-8 JSON with ``version`` (=1), ``emotion``, ``config`` (all
    TrainConfig fields), ``vocab`` (real tokens in index order from 2),
    ``tensors`` (ordered ``{name, shape}`` list), ``history`` (per-epoch
    ``{train_loss, dev_loss, dev_f1}``) and ``embedding_checksum``.

``<stem>.weights.bin``
    All tensors concatenated in manifest order, row-major little-endian
    float32, no framing. The frozen embedding matrix is not stored; its
    checksum in the manifest lets callers validate a rebuilt matrix.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .corpus import BinaryDataset, SplitDataset, Vocabulary
from .embed import EmbeddingMatrix
from .errors import DataError, NumericError
from .evaluate import confusion_from_predictions, f1

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 250
    epochs: int = 20
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    hidden_size: int = 64
    seq_len: int = 35
    dropout: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ValueError("adam betas must lie in (0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.hidden_size < 1 or self.seq_len < 1:
            raise ValueError("hidden_size and seq_len must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: nn.ModelParameters) -> "AdamState":
        tensors = params.tensors()
        return cls(
            m={k: np.zeros_like(a) for k, a in tensors.items()},
            v={k: np.zeros_like(a) for k, a in tensors.items()},
        )


def adam_step(
    params: nn.ModelParameters,
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """Standard Adam update with bias correction, applied in place.

    The embedding matrix is not a parameter tensor and is never touched.
    """
    tensors = params.tensors()
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"gradient overflow at tensor {name}")
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, theta in tensors.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        theta -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)


@dataclass(frozen=True)
class EpochStats:
    train_loss: float
    dev_loss: float
    dev_f1: float


@dataclass
class Checkpoint:
    emotion: str
    config: TrainConfig
    vocab: Vocabulary
    params: nn.ModelParameters
    history: list[EpochStats] = field(default_factory=list)
    embedding_checksum: str = ""

    def predict_proba(self, indices: np.ndarray, emb: EmbeddingMatrix) -> float:
        return nn.predict_proba(indices, emb, self.params)


def _dataset_pass(
    data: BinaryDataset, emb: EmbeddingMatrix, params: nn.ModelParameters
) -> tuple[float, np.ndarray]:
    """Inference loss and probabilities over a dataset."""
    ps = np.empty(len(data))
    loss = 0.0
    for i in range(len(data)):
        p = nn.predict_proba(data.indices[i], emb, params)
        ps[i] = p
        loss += nn.bce_loss(p, int(data.labels[i]))
    return loss / len(data), ps


def train_classifier(
    split: SplitDataset,
    emb: EmbeddingMatrix,
    vocab: Vocabulary,
    config: TrainConfig,
    on_epoch: Callable[[int, EpochStats, float], None] | None = None,
) -> Checkpoint:
    """Train one binary classifier.

    Per epoch: seeded shuffle, mini-batches of at most ``batch_size`` (the
    final partial batch is kept), per-batch mean gradients into Adam, then a
    dev pass at threshold 0.5. The returned checkpoint holds the last-epoch
    parameters and the full history. ``on_epoch`` receives (epoch, stats,
    dev_accuracy) after every epoch.
    """
    if len(split.train) == 0 or len(split.dev) == 0 or len(split.test) == 0:
        raise DataError("empty split")
    if emb.vocab_size != vocab.size:
        raise DataError("embedding matrix does not match vocabulary size")

    rng = np.random.default_rng(config.seed)
    params = nn.init_parameters(emb.dim, config.hidden_size, seed=rng, dtype=np.float32)
    state = AdamState.zeros_like(params)
    train = split.train
    n = len(train)
    history: list[EpochStats] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            batch_grads = nn.zero_gradients(params)
            batch_loss = 0.0
            for i in batch:
                y = int(train.labels[i])
                p, trace = nn.model_forward(
                    train.indices[i], emb, params,
                    dropout_rate=config.dropout, training=True, rng=rng,
                )
                loss = nn.bce_loss(p, y)
                if not np.isfinite(loss):
                    raise NumericError("non-finite training loss")
                batch_loss += loss
                for name, g in nn.backward(trace, y, params).items():
                    batch_grads[name] += g
            scale = 1.0 / len(batch)
            for name in batch_grads:
                batch_grads[name] *= scale
            adam_step(params, batch_grads, state, config)
            epoch_loss += batch_loss

        dev_loss, dev_ps = _dataset_pass(split.dev, emb, params)
        dev_pred = dev_ps >= 0.5
        dev_gold = split.dev.labels.astype(bool)
        dev_acc = float((dev_pred == dev_gold).mean())
        dev_f1 = f1(confusion_from_predictions(dev_pred, dev_gold)).f1
        stats = EpochStats(
            train_loss=epoch_loss / n, dev_loss=dev_loss, dev_f1=dev_f1
        )
        history.append(stats)
        if on_epoch is not None:
            on_epoch(epoch, stats, dev_acc)

    return Checkpoint(
        emotion=split.target,
        config=config,
        vocab=vocab,
        params=params,
        history=history,
        embedding_checksum=emb.checksum(),
    )


def save_checkpoint(checkpoint: Checkpoint, stem: str | Path) -> None:
    stem = Path(stem)
    tensors = checkpoint.params.tensors()
    manifest = {
        "version": CHECKPOINT_VERSION,
        "emotion": checkpoint.emotion,
        "config": asdict(checkpoint.config),
        "vocab": list(checkpoint.vocab.real_tokens),
        "tensors": [{"name": k, "shape": list(a.shape)} for k, a in tensors.items()],
        "history": [asdict(h) for h in checkpoint.history],
        "embedding_checksum": checkpoint.embedding_checksum,
    }
    stem.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{stem}.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    with open(f"{stem}.weights.bin", "wb") as fh:
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(stem: str | Path) -> Checkpoint:
    stem = Path(stem)
    try:
        with open(f"{stem}.manifest.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt manifest: {exc}") from exc
    version = manifest.get("version")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")

    shapes = [(t["name"], tuple(t["shape"])) for t in manifest["tensors"]]
    expected = sum(4 * int(np.prod(shape, dtype=np.int64)) for _, shape in shapes)
    payload = Path(f"{stem}.weights.bin").read_bytes()
    if len(payload) != expected:
        raise DataError(
            f"payload length mismatch: expected {expected} bytes, got {len(payload)}"
        )

    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in shapes:
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.reshape(shape).copy()
        offset += 4 * count
    params = nn.from_tensors(tensors)

    config = TrainConfig(**manifest["config"])
    vocab = Vocabulary.from_real_tokens(manifest["vocab"], cap=max(1, len(manifest["vocab"])))
    history = [EpochStats(**h) for h in manifest["history"]]
    return Checkpoint(
        emotion=manifest["emotion"],
        config=config,
        vocab=vocab,
        params=params,
        history=history,
        embedding_checksum=manifest.get("embedding_checksum", ""),
    )
