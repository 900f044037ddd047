"""Core data types: labeled sentences and their bracketed linear form.

A labeled sentence is flattened into a single symbol stream where
``(#`` opens an argument region and a labeled bracket such as ``A0)``
closes it. Regions never nest, the predicate is not marked in the
stream (the encoder sees it as an input flag instead), and deleting
the bracket symbols recovers exactly the original words.

``delinearize`` is the inverse and must accept arbitrary model output,
so instead of failing on malformed streams it repairs them and reports
what it did.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Union

OPEN_BRACKET = "(#"
UNK_ROLE = "UNK-role"

PAD_TOKEN = "<PAD>"
UNK_TOKEN = "<UNK>"
BOS_TOKEN = "<BOS>"
EOS_TOKEN = "<EOS>"
CONTROL_TOKENS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)


class Arg(NamedTuple):
    """One argument region: token span [start, end] and its role label."""

    start: int
    end: int
    label: str


def close_bracket(label: str) -> str:
    return label + ")"


def looks_like_close_bracket(symbol: str) -> bool:
    """Heuristic used when no explicit label inventory is available."""
    return len(symbol) > 1 and symbol.endswith(")") and "(" not in symbol


def is_label_symbol(symbol: str, label_symbols: Optional[set[str]] = None) -> bool:
    if label_symbols is not None:
        return symbol in label_symbols
    return symbol == OPEN_BRACKET or looks_like_close_bracket(symbol)


def translation_token(indicator: str) -> str:
    """Target-selection token placed at the front of the source, e.g. <2DE-SRL>."""
    if not indicator:
        raise ValueError("empty target indicator")
    return f"<2{indicator}>"


def is_translation_token(symbol: str) -> bool:
    return len(symbol) > 3 and symbol.startswith("<2") and symbol.endswith(">")


@dataclass
class SrlSentence:
    """One (sentence, predicate) instance.

    Sentences with several predicates appear as several instances that
    share tokens but differ in predicate_index and arguments. ``sent_id``
    groups instances that came from the same underlying sentence so
    column writers can merge them back into one block.
    """

    tokens: list[str]
    language: str
    predicate_index: int
    predicate_sense: Optional[str] = None
    arguments: list[Arg] = field(default_factory=list)
    sent_id: int = 0

    def validate(self) -> None:
        if not self.tokens:
            raise ValueError("sentence has no tokens")
        n = len(self.tokens)
        if not 0 <= self.predicate_index < n:
            raise ValueError(
                f"predicate index {self.predicate_index} outside sentence of length {n}"
            )
        prev_end = -1
        for arg in sorted(self.arguments, key=lambda a: (a.start, a.end)):
            if not (0 <= arg.start <= arg.end < n):
                raise ValueError(f"argument span {arg} outside sentence of length {n}")
            if arg.start <= prev_end:
                raise ValueError(f"argument span {arg} overlaps a previous span")
            if not arg.label:
                raise ValueError(f"argument span {arg} has an empty label")
            prev_end = arg.end


@dataclass
class LinearizedSeq:
    """Bracketed symbol stream plus the stream it was produced for.

    ``language_tag`` names the output stream (e.g. "DE-SRL" for labeled
    German, "FR" for plain French text). ``truncated`` is set by decoders
    that hit their length budget before emitting an end symbol.
    """

    symbols: list[str]
    language_tag: str
    truncated: bool = False

    @property
    def language(self) -> str:
        return self.language_tag.removesuffix("-SRL")


@dataclass
class DelinearizeResult:
    sentence: SrlSentence
    clean: bool
    notes: list[str] = field(default_factory=list)


def linearize(sentence: SrlSentence) -> LinearizedSeq:
    """Flatten a labeled sentence into its bracketed symbol stream."""
    sentence.validate()
    starts = {a.start: a for a in sentence.arguments}
    ends = {a.end: a for a in sentence.arguments}
    symbols: list[str] = []
    for i, token in enumerate(sentence.tokens):
        if i in starts:
            symbols.append(OPEN_BRACKET)
        symbols.append(token)
        if i in ends:
            symbols.append(close_bracket(ends[i].label))
    return LinearizedSeq(symbols=symbols, language_tag=f"{sentence.language}-SRL")


def delinearize(seq: LinearizedSeq, predicate_index: int,
                label_symbols: Optional[set[str]] = None) -> DelinearizeResult:
    """Recover a labeled sentence from a symbol stream, repairing as needed.

    Repairs (each one noted and flagging the result as not clean):
    an open bracket that never closes is closed at the last word with
    the UNK role; a close bracket with no open region is dropped; an
    empty region is dropped; a second open while a region is pending
    closes the pending one with the UNK role first. A stream with no
    word symbols at all yields a single-UNK-token sentence, and a
    predicate index outside the recovered words is clamped.
    """
    words: list[str] = []
    args: list[Arg] = []
    notes: list[str] = []
    open_start: Optional[int] = None

    def close_pending(label: str) -> None:
        nonlocal open_start
        if open_start is None:
            return
        if len(words) > open_start:
            args.append(Arg(open_start, len(words) - 1, label))
        else:
            notes.append(f"dropped empty region at word {open_start}")
        open_start = None

    for symbol in seq.symbols:
        if symbol == OPEN_BRACKET:
            if open_start is not None:
                notes.append(f"implicit close before new region at word {len(words)}")
                close_pending(UNK_ROLE)
            open_start = len(words)
        elif is_label_symbol(symbol, label_symbols):
            if open_start is None:
                notes.append(f"dropped orphan close bracket {symbol!r}")
            else:
                label = symbol[:-1]
                if open_start is not None and len(words) == open_start:
                    notes.append(f"dropped empty region for {symbol!r}")
                    open_start = None
                else:
                    close_pending(label)
        else:
            words.append(symbol)

    if open_start is not None:
        notes.append("unclosed region at end of stream")
        close_pending(UNK_ROLE)

    if not words:
        notes.append("stream had no word symbols")
        words = [UNK_TOKEN]

    pred = predicate_index
    if not 0 <= pred < len(words):
        notes.append(f"predicate index {predicate_index} clamped")
        pred = min(max(pred, 0), len(words) - 1)

    sentence = SrlSentence(
        tokens=words,
        language=seq.language,
        predicate_index=pred,
        arguments=args,
    )
    return DelinearizeResult(sentence=sentence, clean=not notes, notes=notes)


def strip_label_symbols(symbols: list[str],
                        label_symbols: Optional[set[str]] = None) -> list[str]:
    """Drop bracket/label symbols, keeping the word stream."""
    return [s for s in symbols if not is_label_symbol(s, label_symbols)]


def strip_control_symbols(symbols: list[str]) -> list[str]:
    """Drop sequence-control and translation tokens before scoring."""
    return [
        s for s in symbols
        if s not in (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN) and not is_translation_token(s)
    ]


# -- cross-corpus pair types -------------------------------------------


@dataclass
class ParallelPair:
    """A source sentence paired with a target-language rendering.

    ``target`` is a LinearizedSeq for labeled pairs and a plain token
    list for translation-only pairs. Labeled pairs carry the predicate
    position on the source side, since the bracketed target stream does
    not mark it.
    """

    source_tokens: list[str]
    source_lang: str
    target_lang: str
    pair_kind: str  # "labeled" | "translation"
    target: Union[LinearizedSeq, list[str]]
    source_predicate_index: Optional[int] = None

    @property
    def target_symbols(self) -> list[str]:
        if isinstance(self.target, LinearizedSeq):
            return self.target.symbols
        return self.target

    @property
    def indicator(self) -> str:
        if self.pair_kind == "labeled":
            return f"{self.target_lang}-SRL"
        return self.target_lang

    def validate(self) -> None:
        if self.pair_kind not in ("labeled", "translation"):
            raise ValueError(f"unknown pair kind {self.pair_kind!r}")
        if not self.source_tokens:
            raise ValueError("pair has an empty source side")
        if not self.target_symbols:
            raise ValueError("pair has an empty target side")
        if self.pair_kind == "labeled":
            if self.source_predicate_index is None:
                raise ValueError("labeled pair is missing a source predicate index")
            if not 0 <= self.source_predicate_index < len(self.source_tokens):
                raise ValueError(
                    f"source predicate index {self.source_predicate_index} outside "
                    f"sentence of length {len(self.source_tokens)}"
                )


@dataclass
class GenerationRecord:
    """One generated labeling plus its back-translation check."""

    source_tokens: list[str]
    output: LinearizedSeq
    stripped_words: list[str]
    back_translation: list[str]
    sentence_bleu: float
    kept: bool

    def with_kept(self, kept: bool) -> "GenerationRecord":
        return replace(self, kept=kept)


def prefix_tokens(tokens: list[str], indicator: str) -> list[str]:
    """Prepend the translation token for the requested output stream."""
    if not tokens:
        raise ValueError("cannot prefix an empty token list")
    if is_translation_token(tokens[0]):
        raise ValueError(f"source already starts with translation token {tokens[0]!r}")
    return [translation_token(indicator)] + list(tokens)


def prefix_translation_token(pair: ParallelPair) -> list[str]:
    """Prefixed source side of a pair, stream chosen by the pair's kind."""
    return prefix_tokens(pair.source_tokens, pair.indicator)
