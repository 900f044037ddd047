"""Synthetic corpora used across the tests.

The grammar is tiny on purpose: det noun verb det noun, with an optional
trailing adverb. The verb is always the predicate. Roles are A0 for the
first noun phrase, A1 for the second, AM-TMP for the adverb. A second
language is built from a token bijection with one deterministic word
order change (the adverb moves to the front), so token alignment and
role positions are known exactly and translation is learnable by a small
model. A third language with a disjoint token and role inventory exists
to test that the language indicator controls what the decoder emits.
"""

from __future__ import annotations

import numpy as np

from translabel.srl_data import (
    Arg,
    LinearizedSeq,
    ParallelPair,
    SrlSentence,
    linearize,
)

DETS = ["the", "a"]
NOUNS = ["cat", "dog", "bird", "fox", "cow", "owl"]
VERBS = ["chased", "saw", "found", "bit"]
ADVS = ["yesterday", "today", "quietly"]

_XX_MAP = {
    "the": "le", "a": "un",
    "cat": "gato", "dog": "perro", "bird": "ave", "fox": "zorro",
    "cow": "vaca", "owl": "buho",
    "chased": "persiguio", "saw": "vio", "found": "hallo", "bit": "mordio",
    "yesterday": "ayer", "today": "hoy", "quietly": "sereno",
}

YY_NOUNS = ["mizu", "tori", "yama", "kawa", "hoshi", "tsuki"]
YY_VERBS = ["miru", "toru", "kiku", "yomu"]
YY_DETS = ["kono", "sono"]
YY_ADVS = ["kinou", "kyou", "shizuka"]
YY_ROLES = {"A0": "R0", "A1": "R1", "AM-TMP": "R-TMP"}


def make_sentence(rng: np.random.Generator, lang: str = "EN",
                  sent_id: int = 0, spans: bool = False) -> SrlSentence:
    """One det-noun-verb-det-noun[-adv] sentence with gold roles.

    By default arguments are single head tokens (the nouns, the adverb),
    matching the dependency column layout. With spans=True the noun
    phrases carry their determiners, for the span column layout.
    """
    dets, nouns, verbs, advs = DETS, NOUNS, VERBS, ADVS
    roles = {"A0": "A0", "A1": "A1", "AM-TMP": "AM-TMP"}
    if lang == "YY":
        dets, nouns, verbs, advs = YY_DETS, YY_NOUNS, YY_VERBS, YY_ADVS
        roles = YY_ROLES
    tokens = [
        dets[rng.integers(len(dets))],
        nouns[rng.integers(len(nouns))],
        verbs[rng.integers(len(verbs))],
        dets[rng.integers(len(dets))],
        nouns[rng.integers(len(nouns))],
    ]
    if spans:
        args = [Arg(0, 1, roles["A0"]), Arg(3, 4, roles["A1"])]
    else:
        args = [Arg(1, 1, roles["A0"]), Arg(4, 4, roles["A1"])]
    if rng.random() < 0.5:
        tokens.append(advs[rng.integers(len(advs))])
        args.append(Arg(5, 5, roles["AM-TMP"]))
    return SrlSentence(tokens=tokens, language=lang, predicate_index=2,
                       predicate_sense=tokens[2] + ".01", arguments=args,
                       sent_id=sent_id)


def make_corpus(n: int, seed: int, lang: str = "EN",
                spans: bool = False) -> list[SrlSentence]:
    rng = np.random.default_rng(seed)
    return [make_sentence(rng, lang, sent_id=i, spans=spans) for i in range(n)]


def translate_tokens(tokens: list[str]) -> list[str]:
    """EN to XX: map every token, then front the adverb if present."""
    mapped = [_XX_MAP[t] for t in tokens]
    if len(mapped) == 6:
        return [mapped[5]] + mapped[:5]
    return mapped


def translate_sentence(sentence: SrlSentence, sent_id: int = 0,
                       spans: bool = False) -> SrlSentence:
    """The XX side of an EN sentence, with roles moved to their new slots."""
    tokens = translate_tokens(sentence.tokens)
    if len(tokens) == 6:
        pred = 3
        if spans:
            args = [Arg(0, 0, "AM-TMP"), Arg(1, 2, "A0"), Arg(4, 5, "A1")]
        else:
            args = [Arg(0, 0, "AM-TMP"), Arg(2, 2, "A0"), Arg(5, 5, "A1")]
    else:
        pred = 2
        if spans:
            args = [Arg(0, 1, "A0"), Arg(3, 4, "A1")]
        else:
            args = [Arg(1, 1, "A0"), Arg(4, 4, "A1")]
    return SrlSentence(tokens=tokens, language="XX", predicate_index=pred,
                       predicate_sense=tokens[pred] + ".01", arguments=args,
                       sent_id=sent_id)


def labeled_pair(sentence: SrlSentence, target: SrlSentence) -> ParallelPair:
    """Source sentence paired with the labeled stream of its translation."""
    return ParallelPair(
        source_tokens=list(sentence.tokens),
        source_lang=sentence.language,
        target_lang=target.language,
        pair_kind="labeled",
        target=linearize(target),
        source_predicate_index=sentence.predicate_index,
    )


def translation_pair(sentence: SrlSentence, reverse: bool = False) -> ParallelPair:
    xx = translate_tokens(sentence.tokens)
    if reverse:
        return ParallelPair(source_tokens=xx, source_lang="XX",
                            target_lang="EN", pair_kind="translation",
                            target=list(sentence.tokens))
    return ParallelPair(source_tokens=list(sentence.tokens), source_lang="EN",
                        target_lang="XX", pair_kind="translation", target=xx)


def crosslingual_pairs(n: int, seed: int) -> list[ParallelPair]:
    """EN source to labeled XX target, the translate-and-label training set."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        en = make_sentence(rng, "EN", sent_id=i)
        xx = translate_sentence(en, sent_id=i)
        pairs.append(labeled_pair(en, xx))
    return pairs


def translation_pairs(n: int, seed: int, reverse: bool = False) -> list[ParallelPair]:
    rng = np.random.default_rng(seed)
    return [translation_pair(make_sentence(rng, "EN", sent_id=i), reverse)
            for i in range(n)]


def brute_force_f1(pairs, mode):
    """Independent pooled count, written against the scoring definition."""
    from collections import Counter

    tp = fp = fn = 0
    for predicted, gold in pairs:
        if predicted.predicate_index != gold.predicate_index:
            continue

        def keys(sentence):
            return [(a.start, a.label) if mode == "dep"
                    else (a.start, a.end, a.label)
                    for a in sentence.arguments]

        pred_keys = []
        mismatched = 0
        for a in predicted.arguments:
            ok = (a.end < len(gold.tokens)
                  and predicted.tokens[a.start:a.end + 1]
                  == gold.tokens[a.start:a.end + 1])
            if ok:
                pred_keys.append((a.start, a.label) if mode == "dep"
                                 else (a.start, a.end, a.label))
            else:
                mismatched += 1
        gold_keys = keys(gold)
        overlap = sum((Counter(pred_keys) & Counter(gold_keys)).values())
        tp += overlap
        fp += len(pred_keys) - overlap + mismatched
        fn += len(gold_keys) - overlap
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return precision, recall, f1


def random_f1_pairs(seed: int, count: int) -> list[tuple[SrlSentence, SrlSentence]]:
    """Prediction/gold pairs with deliberate argument and predicate noise."""
    rng = np.random.default_rng(seed)
    labels = ["A0", "A1", "A2", "AM-TMP"]
    pairs = []
    for _ in range(count):
        n = int(rng.integers(2, 9))
        tokens = [f"w{rng.integers(0, 4)}" for _ in range(n)]
        pred = int(rng.integers(0, n))

        def random_args():
            args, pos = [], 0
            while pos < n:
                if rng.random() < 0.4:
                    end = min(n - 1, pos + int(rng.integers(0, 2)))
                    args.append(Arg(pos, end, str(rng.choice(labels))))
                    pos = end + 1
                else:
                    pos += 1
            return args

        gold = SrlSentence(tokens=list(tokens), language="EN",
                           predicate_index=pred, arguments=random_args())
        ptoks = [t if rng.random() > 0.1 else "zz" for t in tokens]
        ppred = pred if rng.random() > 0.1 else max(0, pred - 1)
        predicted = SrlSentence(tokens=ptoks, language="EN",
                                predicate_index=ppred,
                                arguments=random_args())
        pairs.append((predicted, gold))
    return pairs


def write_yaml(path, payload: dict) -> None:
    import yaml

    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(payload, handle, sort_keys=True)


def small_model_section(d: int = 4) -> dict:
    """Dimensions small enough that unit tests stay quick."""
    return {"d_w": 4 * d, "d_p": d, "d_l": d, "d_h": 4 * d, "d_s": 6 * d,
            "d_a": 4 * d, "enc_layers": 1, "enc_style": "bidi"}


def write_mono_setup(root, n_train=20, seed=11, d=4, **overrides):
    """A ready-to-train monolingual config file plus its corpora."""
    from translabel.corpus_io import write_conll_dep

    train = make_corpus(n_train, seed=seed)
    write_conll_dep(train, str(root / "train.conll"))
    write_conll_dep(train[:4], str(root / "dev.conll"))
    payload = {
        "mode": "monolingual",
        "corpora": [{"path": "train.conll", "format": "conll09", "lang": "EN"}],
        "dev": {"path": "dev.conll", "format": "conll09", "lang": "EN"},
        "out_dir": "run",
        "seed": 9,
        "batch_size": 8,
        "epochs": 60,
        "learning_rate": 3e-3,
        "min_count": 1,
        "eval_every": 50,
        "stop_train_acc": 0.98,
        "model": small_model_section(d),
    }
    payload.update(overrides)
    config_path = str(root / "config.yaml")
    write_yaml(config_path, payload)
    return config_path, train
