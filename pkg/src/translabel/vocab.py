"""Shared symbol inventory and per-instance copy extensions.

The inventory has two id ranges: words (shared across languages, with
control and translation tokens always present) and bracket/label
symbols, which are admitted unconditionally. A word must occur at
least ``min_count`` times across all training streams to enter the
inventory; everything else encodes as UNK unless it can be copied from
the instance's own source tokens.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional

from .srl_data import (
    BOS_TOKEN,
    CONTROL_TOKENS,
    EOS_TOKEN,
    OPEN_BRACKET,
    PAD_TOKEN,
    UNK_ROLE,
    UNK_TOKEN,
    close_bracket,
)

# "appears more than five times" as a minimum-count default
DEFAULT_MIN_COUNT = 6


class VocabError(ValueError):
    pass


class Vocabulary:
    """Immutable word + label inventory with dense contiguous ids.

    Word ids cover [0, N); label ids cover [N, N+M). The four control
    tokens sit at fixed ids 0..3.
    """

    def __init__(self, words: list[str], labels: list[str]):
        if list(words[:4]) != list(CONTROL_TOKENS):
            raise VocabError(f"word list must start with {CONTROL_TOKENS}")
        self.words = list(words)
        self.labels = list(labels)
        self._index: dict[str, int] = {}
        for i, sym in enumerate(self.words + self.labels):
            if sym in self._index:
                raise VocabError(f"duplicate symbol {sym!r}")
            self._index[sym] = i

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    @property
    def size(self) -> int:
        return len(self.words) + len(self.labels)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def bos_id(self) -> int:
        return 2

    @property
    def eos_id(self) -> int:
        return 3

    def id(self, symbol: str) -> Optional[int]:
        return self._index.get(symbol)

    def symbol(self, sym_id: int) -> str:
        if not 0 <= sym_id < self.size:
            raise VocabError(f"symbol id {sym_id} out of range [0, {self.size})")
        if sym_id < self.n_words:
            return self.words[sym_id]
        return self.labels[sym_id - self.n_words]

    def is_label_id(self, sym_id: int) -> bool:
        return self.n_words <= sym_id < self.size

    def word_id_or_unk(self, symbol: str) -> int:
        got = self._index.get(symbol)
        return got if got is not None else self.unk_id

    @property
    def label_symbols(self) -> set[str]:
        return set(self.labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.words == other.words \
            and self.labels == other.labels

    def __repr__(self):
        return f"Vocabulary(N={self.n_words}, M={self.n_labels})"


def build_vocab(token_streams: Iterable[list[str]], role_labels: Iterable[str],
                translation_tokens: Iterable[str],
                min_count: int = DEFAULT_MIN_COUNT) -> Vocabulary:
    """Count words over all streams and assemble the inventory.

    ``token_streams`` usually mixes raw source sentences and bracketed
    target streams; label symbols and translation tokens found in them
    are skipped by the word counter since they are admitted separately.
    Ties and order are deterministic: words sort by falling count, then
    lexicographically.
    """
    if min_count < 1:
        raise VocabError(f"min_count must be >= 1, got {min_count}")
    labels = [OPEN_BRACKET]
    labels += sorted({close_bracket(lab) for lab in role_labels} | {close_bracket(UNK_ROLE)})
    label_set = set(labels)

    trans = sorted(set(translation_tokens))
    reserved = set(CONTROL_TOKENS) | set(trans) | label_set

    counts: Counter[str] = Counter()
    saw_any = False
    for stream in token_streams:
        for token in stream:
            saw_any = True
            if token in reserved:
                continue
            counts[token] += 1
    if not saw_any:
        raise VocabError("no tokens in any training stream")

    kept = sorted((w for w, c in counts.items() if c >= min_count),
                  key=lambda w: (-counts[w], w))
    words = list(CONTROL_TOKENS) + trans + kept
    return Vocabulary(words=words, labels=labels)


# -- per-instance copy extension ----------------------------------------


@dataclass(frozen=True)
class InstanceExtension:
    """The instance's own source tokens, position-addressable for copying."""

    tokens: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def positions_of(self, symbol: str) -> tuple[int, ...]:
        return tuple(i for i, t in enumerate(self.tokens) if t == symbol)


class TargetRef(NamedTuple):
    """How one target symbol is reachable: shared id, copy slots, or both."""

    symbol: str
    gen_id: Optional[int]
    copy_positions: tuple[int, ...]

    @property
    def feed_id(self) -> int:
        """Embedding row used when this symbol is fed back into the decoder."""
        return self.gen_id if self.gen_id is not None else 1  # UNK


def encode_target(symbols: list[str], vocab: Vocabulary,
                  extension: InstanceExtension) -> list[TargetRef]:
    """Map target symbols to inventory ids and/or copy positions.

    A symbol in the shared inventory keeps its id and additionally any
    source positions holding the same surface form; a symbol only
    present in the source is a pure copy reference; anything else
    falls back to UNK.
    """
    refs: list[TargetRef] = []
    for symbol in symbols:
        sym_id = vocab.id(symbol)
        copies = extension.positions_of(symbol)
        if sym_id is not None:
            refs.append(TargetRef(symbol, sym_id, copies))
        elif copies:
            refs.append(TargetRef(symbol, None, copies))
        else:
            refs.append(TargetRef(symbol, vocab.unk_id, ()))
    return refs


def bounded_target(symbols: list[str], vocab: Vocabulary,
                   extension: InstanceExtension) -> list[TargetRef]:
    """encode_target plus begin/end sentinels."""
    bos = TargetRef(BOS_TOKEN, vocab.bos_id, ())
    eos = TargetRef(EOS_TOKEN, vocab.eos_id, ())
    return [bos] + encode_target(symbols, vocab, extension) + [eos]


# -- persistence ---------------------------------------------------------

_HEADER = "translabel-vocab 1"


def save_vocab(vocab: Vocabulary, path: str) -> None:
    """Versioned text dump: header, counts, then symbols in id order."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(_HEADER + "\n")
        handle.write(f"N {vocab.n_words}\n")
        handle.write(f"M {vocab.n_labels}\n")
        handle.write("[words]\n")
        for w in vocab.words:
            handle.write(w + "\n")
        handle.write("[labels]\n")
        for lab in vocab.labels:
            handle.write(lab + "\n")


def load_vocab(path: str) -> Vocabulary:
    with open(path, encoding="utf-8") as handle:
        lines = [line.rstrip("\n") for line in handle]
    if not lines or lines[0] != _HEADER:
        raise VocabError(f"{path}: not a vocabulary file (bad header)")
    try:
        n = int(lines[1].split()[1])
        m = int(lines[2].split()[1])
        if lines[3] != "[words]":
            raise VocabError(f"{path}: expected [words] section")
        words = lines[4:4 + n]
        if lines[4 + n] != "[labels]":
            raise VocabError(f"{path}: expected [labels] section")
        labels = lines[5 + n:5 + n + m]
    except IndexError:
        raise VocabError(f"{path}: truncated vocabulary file") from None
    if len(words) != n or len(labels) != m:
        raise VocabError(f"{path}: truncated vocabulary file")
    return Vocabulary(words=words, labels=labels)
