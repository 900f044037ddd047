"""Recurrent encoder-decoder with copy scores and language indicators.

Encoder input at each position is [word; predicate-flag; language]
embeddings, run through stacked recurrent layers. The decoder state
advances on [previous output; language; attention context], and each
step scores every shared symbol (project [state; context] through the
output matrix) together with every source position (bilinear between
the position's encoding and the state, through tanh). One softmax over
the concatenated scores yields the joint distribution; the probability
of a surface symbol is its generate mass plus the copy mass of every
source position holding that symbol.

One model serves all training modes: the source always starts with a
translation token naming the requested output stream, and language
indicator embeddings are fed at every encoder and decoder step.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import LstmWeights, Tensor
from .serialize import load_arrays, save_arrays
from .srl_data import EOS_TOKEN, LinearizedSeq
from .vocab import InstanceExtension, TargetRef, Vocabulary, bounded_target

log = logging.getLogger(__name__)


class CheckpointError(ValueError):
    pass


class UnknownIndicatorError(ValueError):
    def __init__(self, indicator: str, known):
        super().__init__(
            f"language indicator {indicator!r} unknown to this model "
            f"(knows {sorted(known)})")


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and wiring. Defaults are the desk-scale layout."""

    d_w: int = 64   # word/label embedding
    d_p: int = 8    # predicate-flag embedding
    d_l: int = 8    # language-indicator embedding
    d_h: int = 64   # encoder state per position
    d_s: int = 128  # decoder state
    d_a: int = 64   # attention hidden
    enc_layers: int = 2
    enc_style: str = "bidi"  # "bidi" | "alternating"
    indicators: tuple[str, ...] = ()
    precision: int = 32

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    def validate(self) -> list[str]:
        problems = []
        for name in ("d_w", "d_p", "d_l", "d_h", "d_s", "d_a", "enc_layers"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if self.enc_style not in ("bidi", "alternating"):
            problems.append(f"enc_style must be 'bidi' or 'alternating', got {self.enc_style!r}")
        if self.enc_style == "bidi" and self.d_h % 2 != 0:
            problems.append("d_h must be even for a bidirectional encoder")
        if not self.indicators:
            problems.append("at least one language indicator is required")
        if len(set(self.indicators)) != len(self.indicators):
            problems.append("duplicate language indicators")
        if self.precision not in (32, 64):
            problems.append(f"precision must be 32 or 64, got {self.precision}")
        return problems


@dataclass
class EncLayer:
    fwd: Optional[LstmWeights]  # None only for odd alternating layers
    bwd: Optional[LstmWeights]

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for tag, w in (("fwd", self.fwd), ("bwd", self.bwd)):
            if w is not None:
                for k, t in w.tensors().items():
                    out[f"{prefix}.{tag}.{k}"] = t
        return out


class ModelParams:
    """All learned tensors plus the inventory and config they belong to."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        problems = config.validate()
        if problems:
            raise ValueError("bad model config: " + "; ".join(problems))
        self.config = config
        self.vocab = vocab
        self.emb_word: Tensor = None  # type: ignore[assignment]
        self.emb_pred: Tensor = None  # type: ignore[assignment]
        self.emb_lang: Tensor = None  # type: ignore[assignment]
        self.enc: list[EncLayer] = []
        self.bridge_w: Tensor = None  # type: ignore[assignment]
        self.bridge_b: Tensor = None  # type: ignore[assignment]
        self.dec: LstmWeights = None  # type: ignore[assignment]
        self.att_w_s: Tensor = None  # type: ignore[assignment]
        self.att_u_h: Tensor = None  # type: ignore[assignment]
        self.att_b: Tensor = None  # type: ignore[assignment]
        self.att_v: Tensor = None  # type: ignore[assignment]
        self.w_out: Tensor = None  # type: ignore[assignment]
        self.w_copy: Tensor = None  # type: ignore[assignment]

    # -- construction ---------------------------------------------------

    @classmethod
    def init(cls, config: ModelConfig, vocab: Vocabulary, rng,
             pretrained: Optional[dict[str, np.ndarray]] = None) -> "ModelParams":
        p = cls(config, vocab)
        dt = config.dtype
        c = config

        p.emb_word = Tensor(ad.uniform_init(rng, (vocab.size, c.d_w), c.d_w, dt))
        p.emb_pred = Tensor(ad.uniform_init(rng, (2, c.d_p), c.d_p, dt))
        p.emb_lang = Tensor(ad.uniform_init(rng, (len(c.indicators), c.d_l), c.d_l, dt))

        d_in = c.d_w + c.d_p + c.d_l
        for layer in range(c.enc_layers):
            if c.enc_style == "bidi":
                half = c.d_h // 2
                p.enc.append(EncLayer(
                    fwd=ad.init_lstm(rng, d_in, half, dt),
                    bwd=ad.init_lstm(rng, d_in, half, dt)))
            else:
                direction = ad.init_lstm(rng, d_in, c.d_h, dt)
                if layer % 2 == 0:
                    p.enc.append(EncLayer(fwd=direction, bwd=None))
                else:
                    p.enc.append(EncLayer(fwd=None, bwd=direction))
            d_in = c.d_h

        p.bridge_w = Tensor(ad.uniform_init(rng, (c.d_h, c.d_s), c.d_h, dt))
        p.bridge_b = Tensor(np.zeros(c.d_s, dtype=dt))
        p.dec = ad.init_lstm(rng, c.d_w + c.d_l + c.d_h, c.d_s, dt)
        p.att_w_s = Tensor(ad.uniform_init(rng, (c.d_s, c.d_a), c.d_s, dt))
        p.att_u_h = Tensor(ad.uniform_init(rng, (c.d_h, c.d_a), c.d_h, dt))
        p.att_b = Tensor(np.zeros(c.d_a, dtype=dt))
        p.att_v = Tensor(ad.uniform_init(rng, (c.d_a,), c.d_a, dt))
        p.w_out = Tensor(ad.uniform_init(rng, (c.d_s + c.d_h, vocab.size),
                                         c.d_s + c.d_h, dt))
        p.w_copy = Tensor(ad.uniform_init(rng, (c.d_h, c.d_s), c.d_h, dt))

        if pretrained:
            hits = 0
            for word, vec in pretrained.items():
                row = vocab.id(word)
                if row is None or vocab.is_label_id(row):
                    continue
                if vec.shape != (c.d_w,):
                    raise ValueError(
                        f"pretrained vector for {word!r} has shape {vec.shape}, "
                        f"expected ({c.d_w},)")
                p.emb_word.data[row] = vec.astype(dt)
                hits += 1
            log.info("initialized %d/%d word rows from pretrained vectors",
                     hits, vocab.n_words)
        return p

    # -- bookkeeping ------------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        out = {
            "emb_word": self.emb_word,
            "emb_pred": self.emb_pred,
            "emb_lang": self.emb_lang,
        }
        for i, layer in enumerate(self.enc):
            out.update(layer.tensors(f"enc{i}"))
        out.update({
            "bridge_w": self.bridge_w,
            "bridge_b": self.bridge_b,
        })
        for k, t in self.dec.tensors().items():
            out[f"dec.{k}"] = t
        out.update({
            "att_w_s": self.att_w_s,
            "att_u_h": self.att_u_h,
            "att_b": self.att_b,
            "att_v": self.att_v,
            "w_out": self.w_out,
            "w_copy": self.w_copy,
        })
        return out

    def indicator_id(self, indicator: str) -> int:
        try:
            return self.config.indicators.index(indicator)
        except ValueError:
            raise UnknownIndicatorError(indicator, self.config.indicators) from None


# -- encoding ------------------------------------------------------------


@dataclass
class EncodedSource:
    """Per-position encodings plus what the decoder needs to copy from them."""

    states: list[Tensor]            # one d_h vector per source position
    final: Tensor                   # d_h summary used to seed the decoder
    extension: InstanceExtension    # surface tokens, position-addressable
    source_lang: str


def encode(tokens: list[str], predicate_index: Optional[int], source_lang: str,
           params: ModelParams) -> EncodedSource:
    """Run the encoder stack over an already-prefixed source sentence."""
    if not tokens:
        raise ValueError("cannot encode an empty sentence")
    if predicate_index is not None and not 0 <= predicate_index < len(tokens):
        raise IndexError(
            f"predicate index {predicate_index} outside sentence of length {len(tokens)}")
    c = params.config
    dt = c.dtype
    lang_vec = ad.take_row(params.emb_lang, params.indicator_id(source_lang))

    xs: list[Tensor] = []
    for i, token in enumerate(tokens):
        word = ad.take_row(params.emb_word, params.vocab.word_id_or_unk(token))
        flag = ad.take_row(params.emb_pred, 1 if i == predicate_index else 0)
        xs.append(ad.concat([word, flag, lang_vec]))

    final_parts: list[Tensor] = []
    for layer in params.enc:
        if layer.fwd is not None and layer.bwd is not None:
            f_states, f_last = _run_direction(xs, layer.fwd, reverse=False, dtype=dt)
            b_states, b_last = _run_direction(xs, layer.bwd, reverse=True, dtype=dt)
            xs = [ad.concat([f, b]) for f, b in zip(f_states, b_states)]
            final_parts = [f_last, b_last]
        elif layer.fwd is not None:
            xs, last = _run_direction(xs, layer.fwd, reverse=False, dtype=dt)
            final_parts = [last]
        else:
            xs, last = _run_direction(xs, layer.bwd, reverse=True, dtype=dt)
            final_parts = [last]

    final = final_parts[0] if len(final_parts) == 1 else ad.concat(final_parts)
    return EncodedSource(
        states=xs,
        final=final,
        extension=InstanceExtension(tuple(tokens)),
        source_lang=source_lang,
    )


def _run_direction(xs: list[Tensor], w: LstmWeights, reverse: bool,
                   dtype) -> tuple[list[Tensor], Tensor]:
    h = ad.zeros(w.d, dtype)
    cell = ad.zeros(w.d, dtype)
    order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    states: list[Optional[Tensor]] = [None] * len(xs)
    for i in order:
        h, cell = ad.lstm_step(xs[i], (h, cell), w)
        states[i] = h
    return states, h  # type: ignore[return-value]


# -- decoding ------------------------------------------------------------


@dataclass
class DecodeState:
    """Decoder position: recurrent state, last context, last output."""

    s: Tensor
    cell: Tensor
    context: Optional[Tensor]
    y_prev_id: int
    indicator: str
    terminal: bool = False

    def feed(self, y_id: int, terminal: bool = False) -> "DecodeState":
        return DecodeState(s=self.s, cell=self.cell, context=self.context,
                           y_prev_id=y_id, indicator=self.indicator,
                           terminal=terminal)


class _DecodeCache:
    """Projections of the encoder states reused by every step of one run."""

    def __init__(self, enc: EncodedSource, params: ModelParams):
        self.h_mat = ad.stack(enc.states)                      # (T, d_h)
        self.h_att = ad.matmul(self.h_mat, params.att_u_h)     # (T, d_a)
        self.h_copy = ad.tanh(ad.matmul(self.h_mat, params.w_copy))  # (T, d_s)


def init_decode_state(enc: EncodedSource, target_indicator: str,
                      params: ModelParams) -> DecodeState:
    s0 = ad.add(ad.matmul(enc.final, params.bridge_w), params.bridge_b)
    cell0 = ad.zeros(params.config.d_s, params.config.dtype)
    params.indicator_id(target_indicator)  # validate early
    return DecodeState(s=s0, cell=cell0, context=None,
                       y_prev_id=params.vocab.bos_id,
                       indicator=target_indicator)


def attend(enc: EncodedSource, s: Tensor, params: ModelParams,
           _cache: Optional[_DecodeCache] = None) -> tuple[Tensor, Tensor]:
    """Additive attention over encoder states; returns (context, weights)."""
    cache = _cache or _DecodeCache(enc, params)
    query = ad.add(ad.matmul(s, params.att_w_s), params.att_b)   # (d_a,)
    scores = ad.matmul(ad.tanh(ad.add(cache.h_att, query)), params.att_v)  # (T,)
    weights = ad.softmax(scores)
    context = ad.matmul(weights, cache.h_mat)                    # (d_h,)
    return context, weights


@dataclass
class StepOutput:
    """Joint distribution over shared ids then source positions."""

    joint: Tensor                 # (N + M + T,), sums to 1
    attention: Tensor             # (T,)
    extension: InstanceExtension
    vocab: Vocabulary

    def gold_mass(self, ref: TargetRef) -> Tensor:
        """Differentiable total mass of one surface symbol (generate + copy)."""
        base = self.vocab.size
        indices = [base + j for j in ref.copy_positions]
        if ref.gen_id is not None:
            indices = [ref.gen_id] + indices
        if not indices:
            raise ValueError(f"target symbol {ref.symbol!r} is unreachable")
        return ad.take(self.joint, indices).sum()

    def aggregated(self) -> tuple[np.ndarray, list[str]]:
        """Collapse the joint over surface symbols.

        Returns masses for the N+M shared symbols followed by source-only
        tokens in first-occurrence order, plus those tokens' surfaces.
        """
        joint = self.joint.data
        base = self.vocab.size
        masses = joint[:base].copy()
        extra_syms: list[str] = []
        extra_mass: list[float] = []
        extra_slot: dict[str, int] = {}
        for j, token in enumerate(self.extension.tokens):
            sym_id = self.vocab.id(token)
            if sym_id is not None:
                masses[sym_id] += joint[base + j]
            elif token in extra_slot:
                extra_mass[extra_slot[token]] += joint[base + j]
            else:
                extra_slot[token] = len(extra_syms)
                extra_syms.append(token)
                extra_mass.append(joint[base + j])
        if extra_syms:
            masses = np.concatenate([masses, np.asarray(extra_mass, dtype=joint.dtype)])
        return masses, extra_syms

    def prob(self, symbol: str) -> float:
        """Aggregated probability of a surface symbol; 0.0 if unreachable."""
        joint = self.joint.data
        base = self.vocab.size
        total = 0.0
        sym_id = self.vocab.id(symbol)
        if sym_id is not None:
            total += float(joint[sym_id])
        for j in self.extension.positions_of(symbol):
            total += float(joint[base + j])
        return total

    def argmax_symbol(self) -> str:
        """Highest-mass surface symbol; ties go to the lowest symbol id."""
        masses, extra = self.aggregated()
        best = int(np.argmax(masses))
        if best < self.vocab.size:
            return self.vocab.symbol(best)
        return extra[best - self.vocab.size]


def decode_step(state: DecodeState, enc: EncodedSource, params: ModelParams,
                _cache: Optional[_DecodeCache] = None) -> tuple[StepOutput, DecodeState]:
    """Advance the decoder one position and score every next symbol."""
    if state.terminal:
        raise ValueError("decode_step on a terminal state (end symbol already emitted)")
    cache = _cache or _DecodeCache(enc, params)
    context, weights = attend(enc, state.s, params, cache)
    y_emb = ad.take_row(params.emb_word, state.y_prev_id)
    lang = ad.take_row(params.emb_lang, params.indicator_id(state.indicator))
    x = ad.concat([y_emb, lang, context])
    s_new, cell_new = ad.lstm_step(x, (state.s, state.cell), params.dec)

    gen_scores = ad.matmul(ad.concat([s_new, context]), params.w_out)  # (N+M,)
    copy_scores = ad.matmul(cache.h_copy, s_new)                       # (T,)
    joint = ad.softmax(ad.concat([gen_scores, copy_scores]))

    out = StepOutput(joint=joint, attention=weights,
                     extension=enc.extension, vocab=params.vocab)
    new_state = DecodeState(s=s_new, cell=cell_new, context=context,
                            y_prev_id=state.y_prev_id,
                            indicator=state.indicator)
    return out, new_state


@dataclass
class ForwardResult:
    loss: Tensor
    steps: int
    correct: int

    @property
    def token_accuracy(self) -> float:
        return self.correct / self.steps if self.steps else 0.0


def forward_loss(enc: EncodedSource, target_refs: list[TargetRef],
                 target_indicator: str, params: ModelParams,
                 track_accuracy: bool = True) -> ForwardResult:
    """Teacher-forced negative log likelihood over one bounded target."""
    if len(target_refs) < 2:
        raise ValueError("bounded target needs at least begin and end sentinels")
    if target_refs[0].gen_id != params.vocab.bos_id:
        raise ValueError("target does not start with the begin symbol")
    if target_refs[-1].gen_id != params.vocab.eos_id:
        raise ValueError("target does not end with the end symbol")

    cache = _DecodeCache(enc, params)
    state = init_decode_state(enc, target_indicator, params)
    total: Optional[Tensor] = None
    steps = 0
    correct = 0
    for t in range(1, len(target_refs)):
        ref = target_refs[t]
        if ref.gen_id == params.vocab.pad_id:
            continue  # padding is masked out of the loss
        out, state = decode_step(state, enc, params, cache)
        mass = out.gold_mass(ref)
        step_loss = ad.nll(mass)
        total = step_loss if total is None else ad.add(total, step_loss)
        steps += 1
        if track_accuracy and out.argmax_symbol() == ref.symbol:
            correct += 1
        state = state.feed(ref.feed_id)
    assert total is not None
    return ForwardResult(loss=total, steps=steps, correct=correct)


def greedy_decode(tokens: list[str], predicate_index: Optional[int],
                  source_lang: str, target_indicator: str, params: ModelParams,
                  max_len: int = 100) -> LinearizedSeq:
    """Argmax decoding of one prefixed source sentence."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    with ad.no_grad():
        enc = encode(tokens, predicate_index, source_lang, params)
        cache = _DecodeCache(enc, params)
        state = init_decode_state(enc, target_indicator, params)
        symbols: list[str] = []
        truncated = True
        for _ in range(max_len):
            out, state = decode_step(state, enc, params, cache)
            symbol = out.argmax_symbol()
            if symbol == EOS_TOKEN:
                truncated = False
                break
            symbols.append(symbol)
            state = state.feed(params.vocab.word_id_or_unk(symbol))
    return LinearizedSeq(symbols=symbols, language_tag=target_indicator,
                         truncated=truncated)


def sequence_score(enc: EncodedSource, target_indicator: str, symbols: list[str],
                   params: ModelParams) -> float:
    """Length-normalized log probability of emitting symbols then EOS."""
    refs = bounded_target(list(symbols), params.vocab, enc.extension)
    with ad.no_grad():
        cache = _DecodeCache(enc, params)
        state = init_decode_state(enc, target_indicator, params)
        total = 0.0
        for t in range(1, len(refs)):
            out, state = decode_step(state, enc, params, cache)
            total += float(np.log(max(out.prob(refs[t].symbol), 1e-300)))
            state = state.feed(refs[t].feed_id)
    return total / (len(refs) - 1)


@dataclass
class _Hyp:
    symbols: list[str]
    state: DecodeState
    logprob: float
    order: int  # insertion order for deterministic ties

    @property
    def normalized(self) -> float:
        return self.logprob / max(len(self.symbols) + 1, 1)


def beam_decode(tokens: list[str], predicate_index: Optional[int],
                source_lang: str, target_indicator: str, params: ModelParams,
                beam_width: int = 4,
                max_len: int = 100) -> tuple[LinearizedSeq, float]:
    """Beam search with length-normalized scores.

    Returns the best finished hypothesis (or best unfinished one, marked
    truncated, if none finishes). Width 1 reproduces greedy decoding,
    including its lowest-id tie policy.
    """
    if beam_width < 1:
        raise ValueError(f"beam_width must be >= 1, got {beam_width}")
    with ad.no_grad():
        enc = encode(tokens, predicate_index, source_lang, params)
        cache = _DecodeCache(enc, params)
        start = init_decode_state(enc, target_indicator, params)
        live = [_Hyp(symbols=[], state=start, logprob=0.0, order=0)]
        done: list[tuple[float, int, _Hyp]] = []
        counter = 1
        for _ in range(max_len):
            candidates: list[tuple[float, int, int, _Hyp, str, float]] = []
            for hyp in live:
                out, new_state = decode_step(hyp.state, enc, params, cache)
                masses, extra = out.aggregated()
                hyp.state = new_state
                k = min(beam_width, len(masses))
                top = np.argsort(-masses, kind="stable")[:k]
                for rank, idx in enumerate(top):
                    idx = int(idx)
                    symbol = (params.vocab.symbol(idx) if idx < params.vocab.size
                              else extra[idx - params.vocab.size])
                    lp = hyp.logprob + float(np.log(max(masses[idx], 1e-300)))
                    candidates.append((-lp, hyp.order, idx, hyp, symbol, lp))
            candidates.sort(key=lambda c: (c[0], c[1], c[2]))
            next_live: list[_Hyp] = []
            for _, _, _, hyp, symbol, lp in candidates:
                if len(next_live) >= beam_width:
                    break
                if symbol == EOS_TOKEN:
                    finished = _Hyp(symbols=list(hyp.symbols), state=hyp.state,
                                    logprob=lp, order=counter)
                    done.append((finished.normalized, counter, finished))
                    counter += 1
                    continue
                child = _Hyp(
                    symbols=hyp.symbols + [symbol],
                    state=hyp.state.feed(params.vocab.word_id_or_unk(symbol)),
                    logprob=lp, order=counter)
                counter += 1
                next_live.append(child)
            live = next_live
            if not live:
                break

    if done:
        done.sort(key=lambda d: (-d[0], d[1]))
        best = done[0][2]
        seq = LinearizedSeq(symbols=best.symbols, language_tag=target_indicator)
        return seq, best.normalized
    best = max(live, key=lambda h: (h.normalized, -h.order))
    seq = LinearizedSeq(symbols=best.symbols, language_tag=target_indicator,
                        truncated=True)
    return seq, best.normalized


# -- persistence -----------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(params: ModelParams, path: str) -> None:
    meta = {
        "kind": "model-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "words": params.vocab.words,
        "labels": params.vocab.labels,
    }
    arrays = {name: t.data for name, t in params.named_parameters().items()}
    save_arrays(path, meta, arrays)


def load_checkpoint(path: str) -> ModelParams:
    meta, arrays = load_arrays(path)
    if meta.get("kind") != "model-checkpoint":
        raise CheckpointError(f"{path}: not a model checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    cfg_dict = dict(meta["config"])
    cfg_dict["indicators"] = tuple(cfg_dict["indicators"])
    config = ModelConfig(**cfg_dict)
    vocab = Vocabulary(words=list(meta["words"]), labels=list(meta["labels"]))

    rng = np.random.default_rng(0)
    params = ModelParams.init(config, vocab, rng)
    expected = params.named_parameters()
    if set(expected) != set(arrays):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise CheckpointError(
            f"{path}: parameter names do not match (missing {missing}, extra {extra})")
    for name, tensor in expected.items():
        if arrays[name].shape != tensor.data.shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {arrays[name].shape}, "
                f"config implies {tensor.data.shape}")
        tensor.data = arrays[name].astype(config.dtype, copy=True)
    return params
