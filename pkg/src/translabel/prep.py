"""Turn corpora into model-ready instances.

Every instance, whatever the training mode, has the same shape: a
prefixed source token list with an optional predicate position, the
encoder-side language, the decoder-side stream indicator, and the
target symbol stream. Column corpora yield same-language instances
whose target is the bracketed form of the sentence itself; parallel
corpora yield labeled or translation-only instances across languages.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Optional

from .config import CorpusSpec, TrainConfig
from .corpus_io import (
    load_embeddings,
    read_conll_dep,
    read_conll_span,
    read_parallel,
)
from .srl_data import (
    OPEN_BRACKET,
    LinearizedSeq,
    ParallelPair,
    SrlSentence,
    linearize,
    looks_like_close_bracket,
    prefix_tokens,
    translation_token,
)
from .vocab import (
    InstanceExtension,
    TargetRef,
    Vocabulary,
    bounded_target,
    build_vocab,
)

log = logging.getLogger(__name__)


@dataclass
class Instance:
    source: list[str]                 # prefixed with the translation token
    source_lang: str
    predicate_index: Optional[int]    # position within the prefixed source
    indicator: str                    # decoder-side stream, e.g. "DE-SRL"
    target_symbols: list[str]         # surface target, no sentinels
    kind: str                         # "labeled" | "translation"
    gold: Optional[SrlSentence] = None
    extension: Optional[InstanceExtension] = None
    target_refs: Optional[list[TargetRef]] = None

    def finalize(self, vocab: Vocabulary) -> None:
        self.extension = InstanceExtension(tuple(self.source))
        self.target_refs = bounded_target(self.target_symbols, vocab, self.extension)


def sentence_to_instance(sentence: SrlSentence) -> Instance:
    """Same-language instance: label the sentence's own words."""
    seq = linearize(sentence)
    indicator = seq.language_tag
    return Instance(
        source=prefix_tokens(sentence.tokens, indicator),
        source_lang=sentence.language,
        predicate_index=sentence.predicate_index + 1,
        indicator=indicator,
        target_symbols=list(seq.symbols),
        kind="labeled",
        gold=sentence,
    )


def pair_to_instance(pair: ParallelPair) -> Instance:
    pair.validate()
    indicator = pair.indicator
    pred = pair.source_predicate_index
    reference = None
    if isinstance(pair.target, LinearizedSeq):
        reference_symbols = pair.target.symbols
    else:
        reference_symbols = pair.target
    return Instance(
        source=prefix_tokens(pair.source_tokens, indicator),
        source_lang=pair.source_lang,
        predicate_index=pred + 1 if pred is not None else None,
        indicator=indicator,
        target_symbols=list(reference_symbols),
        kind="labeled" if pair.pair_kind == "labeled" else "translation",
        gold=None,
    )


def read_corpus(spec: CorpusSpec, base_path: str) -> list[Instance]:
    if spec.format == "conll09":
        return [sentence_to_instance(s)
                for s in read_conll_dep(base_path, language=spec.lang)]
    if spec.format == "conll05":
        return [sentence_to_instance(s)
                for s in read_conll_span(base_path, language=spec.lang)]
    if spec.format == "parallel":
        return [pair_to_instance(p) for p in read_parallel(base_path)]
    raise ValueError(f"unknown corpus format {spec.format!r}")


@dataclass
class Assembled:
    """Everything the training loop needs, built from one config."""

    train: list[Instance]
    dev: list[Instance]
    vocab: Vocabulary
    indicators: tuple[str, ...]
    label_inventory: set[str]
    pretrained: Optional[dict] = None
    f1_mode: str = "dep"
    warnings: list[str] = field(default_factory=list)


def assemble(config: TrainConfig) -> Assembled:
    train: list[Instance] = []
    labels: set[str] = set()
    for spec in config.corpora:
        instances = read_corpus(spec, config.corpus_path(spec))
        if not instances:
            log.warning("%s: no usable instances", spec.path)
        train.extend(instances)
        labels |= _labels_of(instances)
    if not train:
        raise ValueError("no training instances in any corpus")

    dev: list[Instance] = []
    if config.dev is not None:
        dev = read_corpus(config.dev, config.corpus_path(config.dev))

    indicators = _indicators_of(train + dev)
    streams = [inst.source[1:] for inst in train]        # unprefixed source words
    streams += [inst.target_symbols for inst in train]   # labels filtered by build_vocab
    vocab = build_vocab(
        token_streams=streams,
        role_labels=labels | _labels_of(dev),
        translation_tokens=[translation_token(ind) for ind in indicators],
        min_count=config.min_count,
    )

    pretrained = None
    if config.embeddings.path:
        pretrained = load_embeddings(
            os.path.join(config.base_dir, config.embeddings.path),
            config.embeddings.dim)

    for inst in train + dev:
        inst.finalize(vocab)

    f1_mode = "span" if any(s.format == "conll05" for s in config.corpora) else "dep"
    return Assembled(train=train, dev=dev, vocab=vocab, indicators=indicators,
                     label_inventory=labels, pretrained=pretrained, f1_mode=f1_mode)


def _labels_of(instances: list[Instance]) -> set[str]:
    labels: set[str] = set()
    for inst in instances:
        if inst.gold is not None:
            labels |= {a.label for a in inst.gold.arguments}
        elif inst.kind == "labeled":
            # bracketed parallel target: close symbols carry the labels
            for sym in inst.target_symbols:
                if sym != OPEN_BRACKET and looks_like_close_bracket(sym):
                    labels.add(sym[:-1])
    return labels


def _indicators_of(instances: list[Instance]) -> tuple[str, ...]:
    found: set[str] = set()
    for inst in instances:
        found.add(inst.source_lang)
        found.add(inst.indicator)
    return tuple(sorted(found))
