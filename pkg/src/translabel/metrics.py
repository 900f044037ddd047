"""Scoring: n-gram overlap for generated streams, micro-F1 for roles.

BLEU comes in three views of the same stream: the full symbol sequence,
the word view (bracket/label symbols removed), and the label view
(only bracket/label symbols kept). Control and translation tokens are
always stripped first. Corpus scores are the classic clipped 4-gram
geometric mean with brevity penalty and no smoothing (any order with
zero matches zeroes the score); sentence scores add one to numerator
and denominator of orders 2..4 only, so a single-pair score is usable
as a keep/reject signal.

Role F1 is micro-averaged over pooled region counts. In dependency
mode a region matches on (head position, label); in span mode on
(start, end, label). A predicted region whose surface words disagree
with the reference sentence at those positions counts as wrong even
when positions and label agree, which penalizes copy decoders that
drifted off the source text.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .srl_data import (
    GenerationRecord,
    SrlSentence,
    is_label_symbol,
    strip_control_symbols,
)

log = logging.getLogger(__name__)

MAX_ORDER = 4
VIEWS = ("full", "words", "labels")


def apply_view(symbols: list[str], view: str,
               label_symbols: Optional[set[str]] = None) -> list[str]:
    symbols = strip_control_symbols(symbols)
    if view == "full":
        return symbols
    if view == "words":
        return [s for s in symbols if not is_label_symbol(s, label_symbols)]
    if view == "labels":
        return [s for s in symbols if is_label_symbol(s, label_symbols)]
    raise ValueError(f"unknown view {view!r}, expected one of {VIEWS}")


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class BleuReport:
    score: float
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    view: str

    def as_dict(self) -> dict:
        return {
            "score": self.score,
            "precisions": list(self.precisions),
            "brevity_penalty": self.brevity_penalty,
            "hyp_len": self.hyp_len,
            "ref_len": self.ref_len,
            "view": self.view,
        }


def bleu_corpus(hyps: list[list[str]], refs: list[list[str]], view: str = "full",
                label_symbols: Optional[set[str]] = None) -> BleuReport:
    """Corpus-level clipped 4-gram BLEU with brevity penalty, 0..100."""
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = 0
    ref_len = 0
    skipped = 0
    for hyp, ref in zip(hyps, refs):
        hyp = apply_view(list(hyp), view, label_symbols)
        ref = apply_view(list(ref), view, label_symbols)
        if not ref:
            skipped += 1
            continue
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            hyp_grams = _ngrams(hyp, n)
            if not hyp_grams:
                continue
            ref_grams = _ngrams(ref, n)
            totals[n - 1] += sum(hyp_grams.values())
            matches[n - 1] += sum(min(c, ref_grams[g]) for g, c in hyp_grams.items())
    if skipped:
        log.warning("bleu_corpus: skipped %d pair(s) with an empty reference", skipped)

    precisions = tuple(
        matches[n] / totals[n] if totals[n] else 0.0 for n in range(MAX_ORDER))
    bp = _brevity_penalty(hyp_len, ref_len)
    if hyp_len == 0 or any(m == 0 for m in matches):
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(
            sum(math.log(p) for p in precisions) / MAX_ORDER)
    return BleuReport(score=score, precisions=precisions, brevity_penalty=bp,
                      hyp_len=hyp_len, ref_len=ref_len, view=view)


def bleu_sentence(hyp: list[str], ref: list[str], view: str = "full",
                  label_symbols: Optional[set[str]] = None) -> float:
    """Single-pair BLEU with add-one smoothing on orders 2..4, 0..100."""
    hyp = apply_view(list(hyp), view, label_symbols)
    ref = apply_view(list(ref), view, label_symbols)
    if not ref:
        raise ValueError("sentence BLEU against an empty reference")
    if not hyp:
        return 0.0
    log_sum = 0.0
    for n in range(1, MAX_ORDER + 1):
        hyp_grams = _ngrams(hyp, n)
        ref_grams = _ngrams(ref, n)
        total = sum(hyp_grams.values())
        match = sum(min(c, ref_grams[g]) for g, c in hyp_grams.items())
        if n == 1:
            if match == 0:
                return 0.0
            p = match / total
        else:
            p = (match + 1) / (total + 1)
        log_sum += math.log(p)
    bp = _brevity_penalty(len(hyp), len(ref))
    return 100.0 * bp * math.exp(log_sum / MAX_ORDER)


def _brevity_penalty(hyp_len: int, ref_len: int) -> float:
    if hyp_len == 0:
        return 0.0
    if hyp_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len)


def bleu_all_views(hyps: list[list[str]], refs: list[list[str]],
                   label_symbols: Optional[set[str]] = None) -> dict[str, BleuReport]:
    return {view: bleu_corpus(hyps, refs, view, label_symbols) for view in VIEWS}


# -- generation filtering -------------------------------------------------

DEFAULT_BLEU_THRESHOLD = 10.0


def filter_records(records: list[GenerationRecord],
                   threshold: float = DEFAULT_BLEU_THRESHOLD
                   ) -> tuple[list[GenerationRecord], list[GenerationRecord]]:
    """Partition records by back-translation score.

    A record whose score equals the threshold is kept. Order is
    preserved on both sides, and each returned record's ``kept`` flag
    is consistent with the side it landed on.
    """
    kept: list[GenerationRecord] = []
    rejected: list[GenerationRecord] = []
    for record in records:
        if record.sentence_bleu >= threshold:
            kept.append(record.with_kept(True))
        else:
            rejected.append(record.with_kept(False))
    return kept, rejected


# -- role F1 ---------------------------------------------------------------

F1_MODES = ("dep", "span")


@dataclass
class F1Report:
    mode: str
    tp: int = 0
    fp: int = 0
    fn: int = 0
    word_mismatches: int = 0
    excluded: int = 0
    per_label: dict[str, list[int]] = field(default_factory=dict)  # label -> [tp, fp, fn]

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "word_mismatches": self.word_mismatches,
            "excluded": self.excluded,
            "per_label": {k: list(v) for k, v in sorted(self.per_label.items())},
        }


def _region_key(arg, mode: str):
    if mode == "dep":
        return (arg.start, arg.label)
    return (arg.start, arg.end, arg.label)


def _label_of_key(key) -> str:
    return key[-1]


def srl_f1(pairs: list[tuple[SrlSentence, SrlSentence]], mode: str = "dep") -> F1Report:
    """Micro-averaged F1 over (predicted, gold) instance pairs."""
    if mode not in F1_MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {F1_MODES}")
    report = F1Report(mode=mode)
    for predicted, gold in pairs:
        if predicted.predicate_index != gold.predicate_index:
            log.warning("predicate mismatch (%d vs %d), instance excluded",
                        predicted.predicate_index, gold.predicate_index)
            report.excluded += 1
            continue
        pred_keys: Counter = Counter()
        for arg in predicted.arguments:
            if not _words_match(predicted, gold, arg):
                report.word_mismatches += 1
                report.fp += 1
                _bump(report.per_label, arg.label, 1, 1, 0)
                continue
            pred_keys[_region_key(arg, mode)] += 1
        gold_keys = Counter(_region_key(a, mode) for a in gold.arguments)

        for key, count in pred_keys.items():
            overlap = min(count, gold_keys.get(key, 0))
            report.tp += overlap
            report.fp += count - overlap
            _bump(report.per_label, _label_of_key(key), overlap, count - overlap, 0)
        for key, count in gold_keys.items():
            miss = count - min(count, pred_keys.get(key, 0))
            report.fn += miss
            _bump(report.per_label, _label_of_key(key), 0, 0, miss)
    return report


def _bump(per_label: dict[str, list[int]], label: str, tp: int, fp: int, fn: int) -> None:
    slot = per_label.setdefault(label, [0, 0, 0])
    slot[0] += tp
    slot[1] += fp
    slot[2] += fn


def _words_match(predicted: SrlSentence, gold: SrlSentence, arg) -> bool:
    """Do the predicted words under this region agree with the reference?"""
    if arg.end >= len(gold.tokens):
        return False
    return predicted.tokens[arg.start:arg.end + 1] == gold.tokens[arg.start:arg.end + 1]
