"""Command drivers behind the CLI: label, generate, augment, score.

Every run writes a manifest next to its outputs recording the command,
resolved configuration, inputs, outputs, seed, and wall clock, so any
artifact can be traced back to the invocation that produced it.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__
from . import autodiff as ad
from .config import ConfigError, TrainConfig, load_config
from .corpus_io import (
    read_conll_dep,
    read_conll_span,
    read_pred_marked,
    write_conll_dep,
    write_conll_span,
    write_generation_records,
    write_parallel,
)
from .gradcheck import grad_check, primitive_suite
from .metrics import (
    DEFAULT_BLEU_THRESHOLD,
    bleu_all_views,
    bleu_sentence,
    filter_records,
    srl_f1,
)
from .model import (
    ModelConfig,
    ModelParams,
    encode,
    forward_loss,
    greedy_decode,
    load_checkpoint,
)
from .prep import Instance, sentence_to_instance
from .srl_data import (
    Arg,
    GenerationRecord,
    SrlSentence,
    delinearize,
    prefix_tokens,
    strip_label_symbols,
)
from .train import TrainResult, train_loop
from .vocab import Vocabulary, bounded_target, build_vocab, save_vocab

log = logging.getLogger(__name__)


def write_manifest(out_dir: str, command: str, argv: list[str], config: dict,
                   inputs: list[str], outputs: list[str], seed: Optional[int],
                   wall_clock: float) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "manifest.json")
    payload = {
        "tool": "translabel",
        "version": __version__,
        "command": command,
        "argv": argv,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "wall_clock_sec": wall_clock,
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, ensure_ascii=False)
        handle.write("\n")
    return path


# -- train -------------------------------------------------------------------


def cmd_train(config_path: str, seed: Optional[int] = None,
              precision: Optional[int] = None, resume: Optional[str] = None,
              argv: Optional[list[str]] = None) -> TrainResult:
    started = time.monotonic()
    config = load_config(config_path)
    if seed is not None:
        config.seed = seed
    if precision is not None:
        config.precision = precision
    config.validate()
    result = train_loop(config, resume_from=resume)
    save_vocab(result.params.vocab, os.path.join(config.out_dir, "vocab.txt"))
    write_manifest(
        config.out_dir, "train", argv or sys.argv[1:], config.as_dict(),
        inputs=[config.corpus_path(s) for s in config.corpora],
        outputs=[result.best_checkpoint, result.last_checkpoint, result.log_path],
        seed=config.seed, wall_clock=time.monotonic() - started)
    return result


# -- label -------------------------------------------------------------------


@dataclass
class LabelSummary:
    n_instances: int = 0
    n_repaired: int = 0
    n_dropped_args: int = 0
    truncated: int = 0


def label_sentences(params: ModelParams, sentences: list[SrlSentence],
                    indicator: str, max_len: int = 100, threads: int = 1,
                    head_only: bool = False) -> tuple[list[SrlSentence], LabelSummary]:
    """Decode labeled streams for sentences and map them back onto columns.

    The decoder output is delinearized and its argument regions are
    applied to the source tokens positionally. Regions that fall outside
    the source are dropped and counted, as are multi-token regions when
    head_only is set (the dependency layout holds one argument per token).
    """
    summary = LabelSummary(n_instances=len(sentences))

    def run_one(sentence: SrlSentence) -> SrlSentence:
        prefixed = prefix_tokens(sentence.tokens, indicator)
        seq = greedy_decode(prefixed, sentence.predicate_index + 1,
                            sentence.language, indicator, params, max_len=max_len)
        result = delinearize(seq, sentence.predicate_index,
                             params.vocab.label_symbols)
        if seq.truncated:
            summary.truncated += 1
        if not result.clean:
            summary.n_repaired += 1
        args = []
        for arg in result.sentence.arguments:
            if arg.end >= len(sentence.tokens) or (head_only
                                                   and arg.end != arg.start):
                summary.n_dropped_args += 1
            else:
                args.append(arg)
        return SrlSentence(
            tokens=list(sentence.tokens),
            language=sentence.language,
            predicate_index=sentence.predicate_index,
            predicate_sense=sentence.predicate_sense,
            arguments=args,
            sent_id=sentence.sent_id,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            labeled = list(pool.map(run_one, sentences))
    else:
        labeled = [run_one(s) for s in sentences]
    return labeled, summary


def cmd_label(checkpoint: str, input_path: str, output_path: str,
              indicator: str, input_format: str = "conll09",
              max_len: int = 100, threads: int = 1,
              argv: Optional[list[str]] = None) -> LabelSummary:
    started = time.monotonic()
    params = load_checkpoint(checkpoint)
    params.indicator_id(indicator)  # fail fast on unknown indicators
    if input_format == "conll09":
        sentences = read_conll_dep(input_path)
    elif input_format == "conll05":
        sentences = read_conll_span(input_path)
    else:
        raise ConfigError([f"label reads conll09 or conll05, got {input_format!r}"])
    language = indicator.removesuffix("-SRL")
    for s in sentences:
        s.language = language
    if not sentences:
        log.warning("%s: no predicates, writing an empty output", input_path)
    labeled, summary = label_sentences(params, sentences, indicator,
                                       max_len=max_len, threads=threads,
                                       head_only=input_format == "conll09")
    if input_format == "conll09":
        write_conll_dep(labeled, output_path)
    else:
        write_conll_span(labeled, output_path)
    write_manifest(
        os.path.dirname(os.path.abspath(output_path)), "label",
        argv or sys.argv[1:],
        {"checkpoint": checkpoint, "indicator": indicator,
         "format": input_format, "max_len": max_len, "threads": threads},
        inputs=[checkpoint, input_path], outputs=[output_path],
        seed=None, wall_clock=time.monotonic() - started)
    return summary


# -- generate ----------------------------------------------------------------


def generate_records(params: ModelParams, reverse: ModelParams,
                     sources: list[SrlSentence], indicator: str,
                     max_len: int = 100,
                     threads: int = 1) -> list[GenerationRecord]:
    """Label each source in the target stream, then back-translate to score."""
    target_lang = indicator.removesuffix("-SRL")
    label_set = params.vocab.label_symbols
    reverse.indicator_id(target_lang)

    def run_one(sentence: SrlSentence) -> GenerationRecord:
        prefixed = prefix_tokens(sentence.tokens, indicator)
        seq = greedy_decode(prefixed, sentence.predicate_index + 1,
                            sentence.language, indicator, params, max_len=max_len)
        words = strip_label_symbols(seq.symbols, label_set)
        if words:
            back_in = prefix_tokens(words, sentence.language)
            back = greedy_decode(back_in, None, target_lang, sentence.language,
                                 reverse, max_len=max_len)
            back_words = back.symbols
            score = bleu_sentence(back_words, sentence.tokens)
        else:
            back_words = []
            score = 0.0
        return GenerationRecord(
            source_tokens=list(sentence.tokens),
            output=seq,
            stripped_words=words,
            back_translation=back_words,
            sentence_bleu=score,
            kept=False,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run_one, sources))
    return [run_one(s) for s in sources]


def records_to_pairs(records: list[GenerationRecord], sources: list[SrlSentence],
                     indicator: str) -> list:
    from .srl_data import ParallelPair

    target_lang = indicator.removesuffix("-SRL")
    pairs = []
    for record, sentence in zip(records, sources):
        pairs.append(ParallelPair(
            source_tokens=list(sentence.tokens),
            source_lang=sentence.language,
            target_lang=target_lang,
            pair_kind="labeled",
            target=record.output,
            source_predicate_index=sentence.predicate_index,
        ))
    return pairs


def records_to_conll(records: list[GenerationRecord], sources: list[SrlSentence],
                     params: ModelParams, indicator: str, out_path: str) -> int:
    """Delinearize kept outputs into a column file for target-language training.

    The generated stream does not mark its own predicate, so the target
    predicate is guessed positionally: the word at the source predicate's
    index, clamped when the output is shorter.
    """
    target_lang = indicator.removesuffix("-SRL")
    sentences = []
    dropped_spans = 0
    for i, (record, source) in enumerate(zip(records, sources)):
        if not record.kept:
            continue
        result = delinearize(record.output, source.predicate_index,
                             params.vocab.label_symbols)
        sentence = result.sentence
        sentence.language = target_lang
        sentence.sent_id = i
        sentence.predicate_sense = sentence.tokens[sentence.predicate_index]
        # The dependency layout holds one argument per token; a decode can
        # still produce a multi-token region, which has no column to live in.
        head_args = [a for a in sentence.arguments if a.start == a.end]
        dropped_spans += len(sentence.arguments) - len(head_args)
        sentence.arguments = head_args
        sentences.append(sentence)
    if dropped_spans:
        log.warning("dropped %d multi-token argument(s) that the dependency "
                    "layout cannot hold", dropped_spans)
    write_conll_dep(sentences, out_path)
    return len(sentences)


def cmd_generate(checkpoint: str, reverse_checkpoint: str, input_path: str,
                 indicator: str, records_path: str,
                 kept_corpus_path: Optional[str] = None,
                 conll_path: Optional[str] = None,
                 threshold: float = DEFAULT_BLEU_THRESHOLD, max_len: int = 100,
                 threads: int = 1,
                 argv: Optional[list[str]] = None) -> tuple[int, int]:
    started = time.monotonic()
    params = load_checkpoint(checkpoint)
    try:
        reverse = load_checkpoint(reverse_checkpoint)
    except FileNotFoundError:
        raise ConfigError([
            f"no reverse model at {reverse_checkpoint!r}; generation needs a "
            "target-to-source translation checkpoint for back-translation"]) from None
    sources = read_pred_marked(input_path)
    records = generate_records(params, reverse, sources, indicator,
                               max_len=max_len, threads=threads)
    kept, rejected = filter_records(records, threshold)
    ordered = [r.with_kept(r.sentence_bleu >= threshold) for r in records]
    write_generation_records(ordered, records_path)

    outputs = [records_path]
    if kept_corpus_path:
        kept_sources = [s for r, s in zip(ordered, sources) if r.kept]
        pairs = records_to_pairs([r for r in ordered if r.kept], kept_sources,
                                 indicator)
        write_parallel(pairs, kept_corpus_path)
        outputs.append(kept_corpus_path)
    if conll_path:
        records_to_conll(ordered, sources, params, indicator, conll_path)
        outputs.append(conll_path)

    write_manifest(
        os.path.dirname(os.path.abspath(records_path)), "generate",
        argv or sys.argv[1:],
        {"checkpoint": checkpoint, "reverse_checkpoint": reverse_checkpoint,
         "indicator": indicator, "threshold": threshold, "max_len": max_len,
         "threads": threads},
        inputs=[checkpoint, reverse_checkpoint, input_path], outputs=outputs,
        seed=None, wall_clock=time.monotonic() - started)
    return len(kept), len(rejected)


# -- augment -----------------------------------------------------------------


@dataclass
class AugmentRow:
    name: str
    added: int
    train_size: int
    f1: float


def cmd_augment(config_path: str, generated_path: str, portions: list[float],
                out_dir: str, test_path: Optional[str] = None,
                seed: Optional[int] = None,
                argv: Optional[list[str]] = None) -> list[AugmentRow]:
    """Retrain with growing slices of generated data and report F1 per run.

    Rows: the baseline (no generated data), one row per portion, and a
    final row using all of it. The portion-0 row repeats the baseline
    configuration exactly and lands on the same numbers.
    """
    started = time.monotonic()
    for p in portions:
        if not 0.0 <= p <= 1.0:
            raise ConfigError([f"portions must be in [0, 1], got {p}"])
    base_config = load_config(config_path)
    if seed is not None:
        base_config.seed = seed
    os.makedirs(out_dir, exist_ok=True)

    # Generated and test data belong to the language being augmented, which
    # the column format itself does not record.
    lang = base_config.corpora[0].lang if base_config.corpora else "EN"
    generated = read_conll_dep(generated_path, language=lang)
    test_sentences = (read_conll_dep(test_path, language=lang)
                      if test_path else None)

    rows: list[AugmentRow] = []
    plan = [("baseline", None)]
    plan += [(f"portion_{p:g}", p) for p in portions]
    plan += [("all", 1.0)]

    for name, portion in plan:
        added = 0 if portion is None else int(round(portion * len(generated)))
        extra = generated[:added]
        run_dir = os.path.join(out_dir, name)
        row = _augment_run(base_config, extra, run_dir, test_sentences)
        rows.append(AugmentRow(name=name, added=added, train_size=row[0], f1=row[1]))

    report_path = os.path.join(out_dir, "report.jsonl")
    with open(report_path, "w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(dataclasses.asdict(row), sort_keys=True) + "\n")
    table_path = os.path.join(out_dir, "report.txt")
    with open(table_path, "w", encoding="utf-8") as handle:
        handle.write(format_augment_table(rows))

    write_manifest(
        out_dir, "augment", argv or sys.argv[1:],
        {"config": config_path, "generated": generated_path,
         "portions": portions, "test": test_path, "seed": base_config.seed},
        inputs=[config_path, generated_path] + ([test_path] if test_path else []),
        outputs=[report_path, table_path],
        seed=base_config.seed, wall_clock=time.monotonic() - started)
    return rows


def _augment_run(base_config: TrainConfig, extra: list[SrlSentence], run_dir: str,
                 test_sentences: Optional[list[SrlSentence]]) -> tuple[int, float]:
    from .prep import assemble

    config = dataclasses.replace(base_config, out_dir=run_dir)
    assembled = assemble(config)
    extra_instances = [sentence_to_instance(s) for s in extra]

    # Rebuild the vocabulary over base plus generated text so added words count.
    if extra_instances:
        streams = [inst.source[1:] for inst in assembled.train + extra_instances]
        streams += [inst.target_symbols for inst in assembled.train + extra_instances]
        labels = {a.label for s in extra for a in s.arguments} | assembled.label_inventory
        from .srl_data import translation_token

        assembled.vocab = build_vocab(
            streams, labels,
            [translation_token(ind) for ind in assembled.indicators],
            min_count=config.min_count)
        assembled.train = assembled.train + extra_instances
        for inst in assembled.train + assembled.dev:
            inst.finalize(assembled.vocab)

    result = train_loop(config, assembled=assembled)
    eval_set = test_sentences
    if eval_set is None:
        eval_set = [inst.gold for inst in assembled.train if inst.gold is not None]
    labeled, _ = label_sentences(result.params, eval_set,
                                 indicator=eval_set[0].language + "-SRL",
                                 max_len=config.max_decode_len)
    report = srl_f1(list(zip(labeled, eval_set)), mode=assembled.f1_mode)
    return len(assembled.train), report.f1


def format_augment_table(rows: list[AugmentRow]) -> str:
    lines = [f"{'run':<14} {'added':>7} {'train':>7} {'f1':>8}"]
    for row in rows:
        lines.append(f"{row.name:<14} {row.added:>7} {row.train_size:>7} {row.f1:>8.4f}")
    return "\n".join(lines) + "\n"


# -- score -------------------------------------------------------------------


def cmd_score_bleu(hyp_path: str, ref_path: str,
                   out_path: Optional[str] = None) -> dict:
    with open(hyp_path, encoding="utf-8") as handle:
        hyps = [line.split() for line in handle if line.strip()]
    with open(ref_path, encoding="utf-8") as handle:
        refs = [line.split() for line in handle if line.strip()]
    if len(hyps) != len(refs):
        raise ConfigError([
            f"hypothesis file has {len(hyps)} lines, reference has {len(refs)}"])
    reports = bleu_all_views(hyps, refs)
    payload = {view: r.as_dict() for view, r in reports.items()}
    if out_path:
        with open(out_path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")
    return payload


def cmd_score_f1(pred_path: str, gold_path: str, mode: str = "dep",
                 out_path: Optional[str] = None) -> dict:
    reader = read_conll_dep if mode == "dep" else read_conll_span
    predicted = reader(pred_path)
    gold = reader(gold_path)
    if len(predicted) != len(gold):
        raise ConfigError([
            f"predicted file has {len(predicted)} instances, gold has {len(gold)}"])
    report = srl_f1(list(zip(predicted, gold)), mode=mode)
    payload = report.as_dict()
    if out_path:
        with open(out_path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")
    return payload


def format_bleu_table(payload: dict) -> str:
    lines = [f"{'view':<8} {'bleu':>8} {'bp':>6} {'p1':>6} {'p2':>6} {'p3':>6} {'p4':>6}"]
    for view in ("full", "words", "labels"):
        r = payload[view]
        p = r["precisions"]
        lines.append(
            f"{view:<8} {r['score']:>8.2f} {r['brevity_penalty']:>6.3f} "
            f"{p[0]:>6.3f} {p[1]:>6.3f} {p[2]:>6.3f} {p[3]:>6.3f}")
    return "\n".join(lines) + "\n"


# -- vocab -------------------------------------------------------------------


def cmd_vocab(config_path: str, out_path: str) -> Vocabulary:
    from .prep import assemble

    config = load_config(config_path)
    assembled = assemble(config)
    save_vocab(assembled.vocab, out_path)
    return assembled.vocab


# -- gradcheck ---------------------------------------------------------------


def full_model_check(seed: int = 11, step: float = 1e-5,
                     tolerance: float = 1e-3):
    """Finite-difference check of one whole training step's loss.

    Runs at reduced dimensions so the parameter sweep stays fast; the
    loss path is the full one: encode, attend, copy scores, joint
    softmax, gold-mass aggregation.
    """
    rng = np.random.default_rng(seed)
    vocab = build_vocab(
        token_streams=[["the", "cat", "sat", "the", "dog", "ran"] * 6],
        role_labels=["A0", "A1"],
        translation_tokens=["<2EN-SRL>"],
        min_count=1)
    config = ModelConfig(d_w=6, d_p=3, d_l=3, d_h=8, d_s=10, d_a=7,
                         enc_layers=1, enc_style="bidi",
                         indicators=("EN", "EN-SRL"), precision=64)
    params = ModelParams.init(config, vocab, rng)

    tokens = ["<2EN-SRL>", "the", "zyx", "sat"]  # one copy-only token
    target = ["(#", "the", "A0)", "zyx", "sat"]
    extension_source = tokens
    from .vocab import InstanceExtension

    refs = bounded_target(target, vocab, InstanceExtension(tuple(extension_source)))

    def fn():
        enc = encode(tokens, 3, "EN", params)
        return forward_loss(enc, refs, "EN-SRL", params,
                            track_accuracy=False).loss

    return grad_check(fn, params.named_parameters(), step=step,
                      tolerance=tolerance)


def cmd_gradcheck(precision: int = 64) -> tuple[bool, list[str]]:
    """Primitive-by-primitive checks plus the full model loss."""
    if precision != 64:
        log.warning("gradient checks are only meaningful at precision 64")
    lines: list[str] = []
    ok = True
    reports = primitive_suite()
    for name, report in sorted(reports.items()):
        passed = report.passed
        ok = ok and passed
        lines.append(f"{'PASS' if passed else 'FAIL'} primitive {name:<16} "
                     f"max_rel_err={report.max_rel_err:.3e} tol={report.tolerance:g}")
    full = full_model_check()
    ok = ok and full.passed
    lines.append(f"{'PASS' if full.passed else 'FAIL'} full-model loss      "
                 f"max_rel_err={full.max_rel_err:.3e} tol={full.tolerance:g}")
    return ok, lines
