"""Readers and writers for the corpus formats the system consumes.

Dependency-style files follow the usual fourteen-plus-roles column
layout: tab-separated rows, blank line between sentences, a fill
column marking predicate rows with 'Y', a sense column, and one role
column per predicate in order. A sentence with k predicates expands to
k instances sharing tokens. Sentences with zero predicates are dropped.

Span-style files are the word / targets / per-predicate-span layout
with ``(A0*`` ... ``*)`` region markers, one column per predicate and a
``(V*)`` region on the predicate itself.

Parallel corpora are one pair per tab-separated line:
``source_lang  target_lang  source_tokens  target_stream  [pred_index]``
with space-separated tokens. The trailing predicate-index field is
present exactly on labeled pairs, whose bracketed target stream cannot
carry the source predicate position itself.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .srl_data import (
    Arg,
    GenerationRecord,
    LinearizedSeq,
    ParallelPair,
    SrlSentence,
    UNK_ROLE,
)

log = logging.getLogger(__name__)


class CorpusFormatError(ValueError):
    """Malformed corpus content, with the offending location."""

    def __init__(self, message: str, line: Optional[int] = None,
                 sentence: Optional[int] = None):
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif sentence is not None:
            where = f" (sentence {sentence})"
        super().__init__(message + where)
        self.line = line
        self.sentence = sentence


@dataclass(frozen=True)
class ConllColumns:
    """Column positions for dependency-style files (0-based)."""

    word: int = 1
    fillpred: int = 12
    pred: int = 13
    apred_start: int = 14


DEFAULT_COLUMNS = ConllColumns()
EMPTY = "_"


def _sentence_blocks(path: str) -> Iterator[tuple[int, list[tuple[int, str]]]]:
    """Yield (sentence_index, [(line_no, line), ...]) for each block."""
    block: list[tuple[int, str]] = []
    index = 0
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if line.strip():
                block.append((line_no, line))
            elif block:
                yield index, block
                index += 1
                block = []
    if block:
        yield index, block


def read_conll_dep(path: str, columns: ConllColumns = DEFAULT_COLUMNS,
                   language: str = "EN",
                   known_labels: Optional[set[str]] = None,
                   unknown_label: str = "reject") -> list[SrlSentence]:
    """Read a dependency-style file into per-predicate instances.

    ``known_labels`` restricts role labels; an unseen label is either
    rejected (error) or mapped to the UNK role, per ``unknown_label``.
    """
    if unknown_label not in ("reject", "unk"):
        raise ValueError(f"unknown_label must be 'reject' or 'unk', got {unknown_label!r}")
    sentences: list[SrlSentence] = []
    dropped = 0
    for sent_id, block in _sentence_blocks(path):
        rows = []
        for line_no, line in block:
            fields = line.split("\t")
            if len(fields) <= columns.apred_start - 1:
                raise CorpusFormatError(
                    f"row has {len(fields)} columns, need at least {columns.apred_start}",
                    line=line_no)
            rows.append((line_no, fields))

        pred_rows = [i for i, (_, f) in enumerate(rows) if f[columns.fillpred] == "Y"]
        n_preds = len(pred_rows)
        if n_preds == 0:
            dropped += 1
            continue
        for line_no, fields in rows:
            if len(fields) < columns.apred_start + n_preds:
                raise CorpusFormatError(
                    f"row has {len(fields)} columns but sentence has {n_preds} "
                    f"predicates (need {columns.apred_start + n_preds})",
                    line=line_no)

        tokens = [f[columns.word] for _, f in rows]
        for k, pred_row in enumerate(pred_rows):
            args: list[Arg] = []
            for i, (line_no, fields) in enumerate(rows):
                label = fields[columns.apred_start + k]
                if label == EMPTY:
                    continue
                if known_labels is not None and label not in known_labels:
                    if unknown_label == "reject":
                        raise CorpusFormatError(
                            f"unknown role label {label!r}", line=line_no)
                    label = UNK_ROLE
                args.append(Arg(i, i, label))
            sentence = SrlSentence(
                tokens=list(tokens),
                language=language,
                predicate_index=pred_row,
                predicate_sense=rows[pred_row][1][columns.pred],
                arguments=args,
                sent_id=sent_id,
            )
            try:
                sentence.validate()
            except ValueError as err:
                raise CorpusFormatError(str(err), sentence=sent_id) from err
            sentences.append(sentence)
    if dropped:
        log.warning("%s: dropped %d sentence(s) with no predicate", path, dropped)
    return sentences


def write_conll_dep(sentences: list[SrlSentence], path: str,
                    columns: ConllColumns = DEFAULT_COLUMNS) -> None:
    """Write instances back to the dependency layout, regrouped by sent_id."""
    groups: list[list[SrlSentence]] = []
    for sentence in sentences:
        if groups and groups[-1][0].sent_id == sentence.sent_id \
                and groups[-1][0].tokens == sentence.tokens:
            groups[-1].append(sentence)
        else:
            groups.append([sentence])

    width = max(columns.word, columns.fillpred, columns.pred, columns.apred_start - 1)
    with open(path, "w", encoding="utf-8") as handle:
        for group in groups:
            n = len(group[0].tokens)
            pred_rows = {s.predicate_index: s for s in group}
            role: dict[tuple[int, int], str] = {}
            for k, s in enumerate(group):
                for arg in s.arguments:
                    if arg.end != arg.start:
                        raise CorpusFormatError(
                            "the dependency layout holds one argument per "
                            f"token; cannot write span {arg}",
                            sentence=s.sent_id)
                    role[(arg.start, k)] = arg.label
            for i in range(n):
                fields = [EMPTY] * (width + 1)
                fields[0] = str(i + 1)
                fields[columns.word] = group[0].tokens[i]
                if i in pred_rows:
                    fields[columns.fillpred] = "Y"
                    fields[columns.pred] = pred_rows[i].predicate_sense or EMPTY
                fields += [role.get((i, k), EMPTY) for k in range(len(group))]
                handle.write("\t".join(fields) + "\n")
            handle.write("\n")


# -- span layout --------------------------------------------------------


def _parse_span_column(cells: list[str], sent_index: int) -> tuple[int, list[Arg]]:
    """Parse one predicate column of region markers into spans.

    Returns (predicate_index, argument spans). The (V*) region marks
    the predicate and is not returned as an argument.
    """
    spans: list[Arg] = []
    open_label: Optional[str] = None
    open_start = 0
    pred_index: Optional[int] = None
    for i, cell in enumerate(cells):
        rest = cell
        if rest.startswith("("):
            if open_label is not None:
                raise CorpusFormatError(
                    f"nested span bracket {cell!r}", sentence=sent_index)
            body = rest[1:]
            star = body.find("*")
            if star <= 0:
                raise CorpusFormatError(
                    f"malformed span cell {cell!r}", sentence=sent_index)
            open_label = body[:star]
            open_start = i
            rest = body[star:]
        if not rest.startswith("*"):
            raise CorpusFormatError(
                f"malformed span cell {cell!r}", sentence=sent_index)
        rest = rest[1:]
        if rest == ")":
            if open_label is None:
                raise CorpusFormatError(
                    f"unopened span close {cell!r}", sentence=sent_index)
            if open_label == "V":
                pred_index = open_start
            else:
                spans.append(Arg(open_start, i, open_label))
            open_label = None
        elif rest:
            raise CorpusFormatError(
                f"malformed span cell {cell!r}", sentence=sent_index)
    if open_label is not None:
        raise CorpusFormatError(
            f"span {open_label!r} never closes", sentence=sent_index)
    if pred_index is None:
        raise CorpusFormatError(
            "predicate column has no (V*) region", sentence=sent_index)
    return pred_index, spans


def read_conll_span(path: str, language: str = "EN") -> list[SrlSentence]:
    """Read a span-style file into per-predicate instances."""
    sentences: list[SrlSentence] = []
    for sent_id, block in _sentence_blocks(path):
        rows = [line.split() for _, line in block]
        n_cols = len(rows[0])
        for line_no, line in block:
            if len(line.split()) != n_cols:
                raise CorpusFormatError(
                    f"ragged row ({len(line.split())} vs {n_cols} columns)",
                    line=line_no)
        if n_cols < 2:
            first_line = block[0][0]
            raise CorpusFormatError("need word and targets columns", line=first_line)
        tokens = [r[0] for r in rows]
        targets = [r[1] for r in rows]
        n_preds = n_cols - 2
        marked = [i for i, t in enumerate(targets) if t != "-"]
        if len(marked) != n_preds:
            raise CorpusFormatError(
                f"{len(marked)} marked targets but {n_preds} span columns",
                sentence=sent_id)
        for k in range(n_preds):
            cells = [r[2 + k] for r in rows]
            pred_index, args = _parse_span_column(cells, sent_id)
            sentence = SrlSentence(
                tokens=list(tokens),
                language=language,
                predicate_index=pred_index,
                predicate_sense=targets[pred_index],
                arguments=sorted(args, key=lambda a: a.start),
                sent_id=sent_id,
            )
            try:
                sentence.validate()
            except ValueError as err:
                raise CorpusFormatError(str(err), sentence=sent_id) from err
            sentences.append(sentence)
    return sentences


def write_conll_span(sentences: list[SrlSentence], path: str) -> None:
    """Write instances back to the span layout, regrouped by sent_id."""
    groups: list[list[SrlSentence]] = []
    for sentence in sentences:
        if groups and groups[-1][0].sent_id == sentence.sent_id \
                and groups[-1][0].tokens == sentence.tokens:
            groups[-1].append(sentence)
        else:
            groups.append([sentence])

    with open(path, "w", encoding="utf-8") as handle:
        for group in groups:
            n = len(group[0].tokens)
            targets = ["-"] * n
            for s in group:
                targets[s.predicate_index] = s.predicate_sense or group[0].tokens[s.predicate_index]
            columns = []
            for s in group:
                cells = ["*"] * n
                regions = [Arg(s.predicate_index, s.predicate_index, "V")] + list(s.arguments)
                for arg in regions:
                    if arg.start == arg.end:
                        cells[arg.start] = f"({arg.label}*)"
                    else:
                        cells[arg.start] = f"({arg.label}*"
                        cells[arg.end] = "*)"
                columns.append(cells)
            for i in range(n):
                row = [group[0].tokens[i], targets[i]] + [c[i] for c in columns]
                handle.write("\t".join(row) + "\n")
            handle.write("\n")


# -- parallel corpora ----------------------------------------------------


def read_parallel(path: str) -> list[ParallelPair]:
    pairs: list[ParallelPair] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) not in (4, 5):
                raise CorpusFormatError(
                    f"expected 4 or 5 tab-separated fields, got {len(fields)}",
                    line=line_no)
            source_lang, target_lang = fields[0], fields[1]
            source_tokens = fields[2].split()
            target_symbols = fields[3].split()
            pred: Optional[int] = None
            if len(fields) == 5 and fields[4].strip():
                try:
                    pred = int(fields[4])
                except ValueError:
                    raise CorpusFormatError(
                        f"predicate index {fields[4]!r} is not an integer",
                        line=line_no) from None
            if pred is not None:
                kind = "labeled"
                target: LinearizedSeq | list[str] = LinearizedSeq(
                    symbols=target_symbols, language_tag=f"{target_lang}-SRL")
            else:
                kind = "translation"
                target = target_symbols
            pair = ParallelPair(
                source_tokens=source_tokens,
                source_lang=source_lang,
                target_lang=target_lang,
                pair_kind=kind,
                target=target,
                source_predicate_index=pred,
            )
            try:
                pair.validate()
            except ValueError as err:
                raise CorpusFormatError(str(err), line=line_no) from err
            pairs.append(pair)
    return pairs


def write_parallel(pairs: list[ParallelPair], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for pair in pairs:
            fields = [
                pair.source_lang,
                pair.target_lang,
                " ".join(pair.source_tokens),
                " ".join(pair.target_symbols),
            ]
            if pair.pair_kind == "labeled":
                fields.append(str(pair.source_predicate_index))
            handle.write("\t".join(fields) + "\n")


def read_pred_marked(path: str) -> list[SrlSentence]:
    """Read generation input: ``lang  pred_index  space-separated tokens``."""
    sentences: list[SrlSentence] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise CorpusFormatError(
                    f"expected 3 tab-separated fields, got {len(fields)}",
                    line=line_no)
            try:
                pred = int(fields[1])
            except ValueError:
                raise CorpusFormatError(
                    f"predicate index {fields[1]!r} is not an integer",
                    line=line_no) from None
            sentence = SrlSentence(
                tokens=fields[2].split(),
                language=fields[0],
                predicate_index=pred,
                sent_id=len(sentences),
            )
            try:
                sentence.validate()
            except ValueError as err:
                raise CorpusFormatError(str(err), line=line_no) from err
            sentences.append(sentence)
    return sentences


# -- embeddings ----------------------------------------------------------


def load_embeddings(path: str, dim: int) -> dict[str, np.ndarray]:
    """Load text-format embeddings: token then ``dim`` floats per line.

    A repeated token overwrites the earlier vector (with a warning), so
    the last occurrence wins.
    """
    vectors: dict[str, np.ndarray] = {}
    duplicates = 0
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise CorpusFormatError(
                    f"expected token plus {dim} values, got {len(parts) - 1}",
                    line=line_no)
            token = parts[0]
            try:
                vec = np.asarray([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise CorpusFormatError("non-numeric embedding value", line=line_no) from None
            if token in vectors:
                duplicates += 1
            vectors[token] = vec
    if duplicates:
        log.warning("%s: %d duplicate token(s), last occurrence kept", path, duplicates)
    return vectors


# -- generation records ----------------------------------------------------


def write_generation_records(records: list[GenerationRecord], path: str) -> None:
    """One JSON object per line with fixed field names."""
    with open(path, "w", encoding="utf-8") as handle:
        for r in records:
            handle.write(json.dumps({
                "source": r.source_tokens,
                "output": r.output.symbols,
                "stripped": r.stripped_words,
                "backtrans": r.back_translation,
                "bleu": r.sentence_bleu,
                "kept": r.kept,
            }, ensure_ascii=False, sort_keys=True) + "\n")


def read_generation_records(path: str, language_tag: str = "?") -> list[GenerationRecord]:
    records: list[GenerationRecord] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise CorpusFormatError(f"bad JSON: {err}", line=line_no) from None
            try:
                records.append(GenerationRecord(
                    source_tokens=list(obj["source"]),
                    output=LinearizedSeq(symbols=list(obj["output"]),
                                         language_tag=language_tag),
                    stripped_words=list(obj["stripped"]),
                    back_translation=list(obj["backtrans"]),
                    sentence_bleu=float(obj["bleu"]),
                    kept=bool(obj["kept"]),
                ))
            except KeyError as err:
                raise CorpusFormatError(f"missing field {err}", line=line_no) from None
    return records
