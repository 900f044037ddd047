"""Sequence-to-sequence semantic role labeling.

A small, self-contained system that trains recurrent encoder-decoder
models to emit bracket-labeled word sequences. Supports monolingual
labeling, shared multilingual models selected by language indicator
tokens, and translate-and-label models that read one language and emit
labeled text in another. Includes BLEU / role-F1 scoring, generation
with back-translation filtering, and a data-augmentation driver.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, no_grad  # noqa: F401
from .srl_data import (  # noqa: F401
    Arg,
    LinearizedSeq,
    SrlSentence,
    delinearize,
    linearize,
)
from .vocab import Vocabulary, build_vocab  # noqa: F401
