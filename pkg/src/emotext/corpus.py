"""Corpus handling: TSV ingestion, tweet curation heuristics, preprocessing,
tokenization, vocabularies, balanced binary datasets and 80/10/10 splits.
"""
from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TypeVar

import numpy as np

from .errors import DataError

EMOTIONS = ("joy", "sadness", "anger", "love", "fear", "thankfulness", "surprise")

PAD_TOKEN = "<pad>"
OOV_TOKEN = "<oov>"
PAD_INDEX = 0
OOV_INDEX = 1

DEFAULT_SEQ_LEN = 35

# High-count emotions get the largest vocabulary budget, the two mid-count
# ones half of that, surprise a quarter.
DEFAULT_VOCAB_CAPS = {
    "joy": 100_000,
    "sadness": 100_000,
    "anger": 100_000,
    "love": 100_000,
    "thankfulness": 50_000,
    "fear": 50_000,
    "surprise": 25_000,
}


@dataclass(frozen=True)
class RawRecord:
    text: str
    label: str


@dataclass(frozen=True)
class Example:
    tokens: tuple[str, ...]
    label: str


def load_tsv(path: str | Path) -> list[RawRecord]:
    """Read `label<TAB>text` records, one per line. Blank lines are skipped."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if "\t" not in line:
                raise DataError(f"{path}: line {lineno}: missing tab separator")
            label, text = line.split("\t", 1)
            if not text.strip():
                raise DataError(f"{path}: line {lineno}: empty text")
            records.append(RawRecord(text=text, label=label))
    return records


def load_hashtag_lexicon(path: str | Path) -> dict[str, str]:
    """Read `#hashtag<TAB>emotion` lines into a lowercase hashtag->emotion map."""
    lexicon: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("//"):
                continue
            if "\t" not in line:
                raise DataError(f"{path}: line {lineno}: missing tab separator")
            tag, emotion = line.split("\t", 1)
            tag = tag.strip().lower()
            emotion = emotion.strip().lower()
            if not tag.startswith("#"):
                raise DataError(f"{path}: line {lineno}: hashtag must start with '#'")
            if emotion not in EMOTIONS:
                raise DataError(f"{path}: line {lineno}: unknown emotion {emotion!r}")
            lexicon[tag] = emotion
    if not lexicon:
        raise DataError(f"{path}: empty hashtag lexicon")
    return lexicon


def wang_curate(text: str, hashtag_lexicon: Mapping[str, str]) -> tuple[str, str] | None:
    """Keep a tweet only if it is quote-free, URL-free, has at least five
    whitespace tokens and ends in a lexicon hashtag.

    Returns (text with the trailing hashtag run removed, emotion) or None.
    """
    if '"' in text:
        return None
    lowered = text.lower()
    if "http://" in lowered or "https://" in lowered or "www." in lowered:
        return None
    tokens = text.split()
    if len(tokens) < 5:
        return None
    emotion = hashtag_lexicon.get(tokens[-1].lower())
    if emotion is None:
        return None
    end = len(tokens)
    while end > 0 and tokens[end - 1].startswith("#"):
        end -= 1
    return " ".join(tokens[:end]), emotion


_REPEAT_RUN = re.compile(r"(.)\1{2,}", re.DOTALL)


def wang_normalize(text: str) -> str:
    """Lowercase, map @mentions to `@user`, collapse >2 repeated characters
    to exactly two, and strip hash symbols from the remaining tokens.
    """
    out = []
    for token in text.lower().split():
        if token.startswith("@"):
            out.append("@user")
            continue
        token = token.replace("#", "")
        token = _REPEAT_RUN.sub(r"\1\1", token)
        if token:
            out.append(token)
    return " ".join(out)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in ("P", "S")


def _separate_punctuation(text: str) -> str:
    # A maximal run of punctuation/symbol characters becomes its own token;
    # runs keep their internal order (`awesome!!` -> `awesome !!`).
    out: list[str] = []
    prev: str | None = None
    for ch in text:
        if ch.isspace():
            out.append(ch)
            prev = None
            continue
        cls = "p" if _is_punct(ch) else "w"
        if prev is not None and prev != cls:
            out.append(" ")
        out.append(ch)
        prev = cls
    return "".join(out)


def _strip_trailing_hashtag_tokens(tokens: list[str]) -> list[str]:
    end = len(tokens)
    while end > 0 and tokens[end - 1].startswith("#"):
        end -= 1
    return tokens[:end]


def preprocess(text: str) -> str:
    """Lowercase, drop the trailing run of hashtag tokens, split punctuation
    runs off adjacent tokens, turn commas/newlines into spaces and collapse
    whitespace. Idempotent.
    """
    tokens = _strip_trailing_hashtag_tokens(text.lower().split())
    t = _separate_punctuation(" ".join(tokens))
    t = t.replace(",", " ").replace("\n", " ").replace("\r", " ")
    # Punctuation separation can expose a bare trailing '#' run; remove it so
    # a second pass is a no-op.
    tokens = _strip_trailing_hashtag_tokens(t.split())
    return " ".join(tokens)


def tokenize(text: str) -> list[str]:
    """Whitespace tokenization of already-preprocessed text."""
    return text.split()


@dataclass(frozen=True)
class Vocabulary:
    """Token->index map with index 0 reserved for padding and 1 for
    out-of-vocabulary tokens; real tokens start at index 2."""

    tokens: tuple[str, ...]
    index_of: dict[str, int] = field(repr=False)
    cap: int = 0

    pad_index = PAD_INDEX
    oov_index = OOV_INDEX

    def __post_init__(self):
        if self.tokens[:2] != (PAD_TOKEN, OOV_TOKEN):
            raise ValueError("vocabulary must reserve indices 0 and 1")
        if len(self.tokens) - 2 > self.cap:
            raise ValueError("vocabulary exceeds its cap")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def real_tokens(self) -> tuple[str, ...]:
        return self.tokens[2:]

    @classmethod
    def from_real_tokens(cls, real: Sequence[str], cap: int) -> "Vocabulary":
        tokens = (PAD_TOKEN, OOV_TOKEN, *real)
        index_of = {tok: i for i, tok in enumerate(tokens)}
        if len(index_of) != len(tokens):
            raise DataError("duplicate token in vocabulary")
        return cls(tokens=tokens, index_of=index_of, cap=cap)


def build_vocabulary(examples: Iterable[Example], cap: int) -> Vocabulary:
    """Pick the `cap` most frequent tokens (ties broken lexicographically)
    and assign indices from 2 in descending frequency order.

    Call this on the training split only.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    counts = Counter(
        tok
        for ex in examples
        for tok in ex.tokens
        if tok not in (PAD_TOKEN, OOV_TOKEN)
    )
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]
    return Vocabulary.from_real_tokens([tok for tok, _ in ranked], cap=cap)


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    """One real token per line, in index order from index 2."""
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.real_tokens:
            fh.write(tok + "\n")


def load_vocabulary(path: str | Path, cap: int | None = None) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        real = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
    return Vocabulary.from_real_tokens(real, cap=cap if cap is not None else len(real))


def encode(tokens: Sequence[str], vocab: Vocabulary, seq_len: int) -> np.ndarray:
    """Map tokens to indices, right-pad with the padding index and truncate
    to the first `seq_len` tokens. Output length is exactly `seq_len`."""
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    idx = [vocab.index_of.get(tok, OOV_INDEX) for tok in tokens[:seq_len]]
    idx.extend([PAD_INDEX] * (seq_len - len(idx)))
    return np.asarray(idx, dtype=np.int32)


@dataclass(frozen=True)
class BinaryDataset:
    """Encoded one-vs-rest dataset for a single target emotion."""

    indices: np.ndarray  # (n, seq_len) int32
    labels: np.ndarray  # (n,) int8, values 0/1
    target: str
    seq_len: int = DEFAULT_SEQ_LEN

    def __post_init__(self):
        if self.indices.ndim != 2 or self.indices.shape[1] != self.seq_len:
            raise ValueError("index matrix width must equal seq_len")
        if self.labels.shape != (self.indices.shape[0],):
            raise ValueError("labels must align with index rows")
        if self.indices.size and self.indices.min() < 0:
            raise ValueError("negative token index")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return self.indices.shape[0]


@dataclass(frozen=True)
class SplitDataset:
    train: BinaryDataset
    dev: BinaryDataset
    test: BinaryDataset

    def __post_init__(self):
        parts = (self.train, self.dev, self.test)
        if len({p.target for p in parts}) != 1 or len({p.seq_len for p in parts}) != 1:
            raise ValueError("splits must share target and seq_len")

    @property
    def target(self) -> str:
        return self.train.target


T = TypeVar("T")

LabeledPair = tuple[T, int]


def build_balanced(
    examples: Sequence[Example], target: str, seed: int
) -> list[tuple[Example, int]]:
    """All target-emotion examples as class 1 plus an equal-size uniform
    sample (without replacement) of the pooled other examples as class 0,
    shuffled by the seeded RNG."""
    positives = [ex for ex in examples if ex.label == target]
    negatives = [ex for ex in examples if ex.label != target]
    if not positives:
        raise DataError(f"no positive examples for {target}")
    if len(negatives) < len(positives):
        raise DataError(f"need {len(positives)} negatives, have {len(negatives)}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(negatives), size=len(positives), replace=False)
    pairs: list[tuple[Example, int]] = [(ex, 1) for ex in positives]
    pairs.extend((negatives[i], 0) for i in chosen)
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]


def split_80_10_10(
    pairs: Sequence[LabeledPair], seed: int
) -> tuple[list[LabeledPair], list[LabeledPair], list[LabeledPair]]:
    """Stratified 80/10/10 split of (item, label) pairs.

    Within each class: seeded shuffle, floor(0.8 n) to train, the remainder
    split evenly between dev and test with any odd leftover going to train.
    """
    if len(pairs) < 10:
        raise DataError("dataset too small to split")
    rng = np.random.default_rng(seed)
    out: tuple[list, list, list] = ([], [], [])
    for label in (1, 0):
        idx = np.asarray([i for i, (_, y) in enumerate(pairs) if y == label])
        if idx.size == 0:
            continue
        rng.shuffle(idx)
        n = idx.size
        n_train = (4 * n) // 5
        rem = n - n_train
        n_dev = rem // 2
        n_test = rem // 2
        n_train += rem - n_dev - n_test
        cuts = (idx[:n_train], idx[n_train : n_train + n_dev], idx[n_train + n_dev :])
        for part, cut in zip(out, cuts):
            part.extend(pairs[i] for i in cut)
    for part in out:
        perm = rng.permutation(len(part))
        part[:] = [part[i] for i in perm]
    return out


def encode_pairs(
    pairs: Sequence[tuple[Example, int]],
    vocab: Vocabulary,
    target: str,
    seq_len: int = DEFAULT_SEQ_LEN,
) -> BinaryDataset:
    if pairs:
        indices = np.stack([encode(ex.tokens, vocab, seq_len) for ex, _ in pairs])
    else:
        indices = np.zeros((0, seq_len), dtype=np.int32)
    labels = np.asarray([y for _, y in pairs], dtype=np.int8)
    return BinaryDataset(indices=indices, labels=labels, target=target, seq_len=seq_len)


def split_dataset(dataset: BinaryDataset, seed: int) -> SplitDataset:
    """80/10/10 split of an already-encoded dataset (row-level wrapper
    around :func:`split_80_10_10`)."""
    pairs = [(i, int(y)) for i, y in enumerate(dataset.labels)]
    parts = split_80_10_10(pairs, seed)
    datasets = []
    for part in parts:
        rows = np.asarray([i for i, _ in part], dtype=np.intp)
        datasets.append(
            BinaryDataset(
                indices=dataset.indices[rows] if rows.size else np.zeros((0, dataset.seq_len), np.int32),
                labels=dataset.labels[rows] if rows.size else np.zeros((0,), np.int8),
                target=dataset.target,
                seq_len=dataset.seq_len,
            )
        )
    return SplitDataset(train=datasets[0], dev=datasets[1], test=datasets[2])


def prepare_examples(
    records: Iterable[RawRecord], apply_wang_normalize: bool = False
) -> tuple[list[Example], int]:
    """Preprocess and tokenize records into examples.

    Records whose text tokenizes to nothing are dropped; the second return
    value counts them. Labels must be one of the seven emotions.
    """
    examples = []
    dropped = 0
    for i, rec in enumerate(records):
        if rec.label not in EMOTIONS:
            raise DataError(f"record {i}: unknown emotion label {rec.label!r}")
        text = wang_normalize(rec.text) if apply_wang_normalize else rec.text
        tokens = tokenize(preprocess(text))
        if not tokens:
            dropped += 1
            continue
        examples.append(Example(tokens=tuple(tokens), label=rec.label))
    return examples, dropped
