"""Target-unit inventories: text-induced BPE and phonetic-induced PASM."""

from .vocab import (BLANK, SPACE, UNK, EncodedText, Lexicon, Vocabulary,
                    build_vocab, decode_units, load_lexicon, normalize_text)
from .bpe import BpeModel, encode_bpe, load_bpe, save_bpe, train_bpe
from .aligner import AlignmentTable, align_lexicon, viterbi_align
from .pasm import (PasmModel, encode_pasm, extract_pasm, load_pasm, save_pasm,
                   segment_pasm, train_pasm)

# both bpe and pasm define a module-level segment_word(model, word); import
# the submodule to reach a specific one
__all__ = [
    "BLANK", "SPACE", "UNK", "EncodedText", "Lexicon", "Vocabulary",
    "build_vocab", "decode_units", "load_lexicon", "normalize_text",
    "BpeModel", "encode_bpe", "load_bpe", "save_bpe", "train_bpe",
    "AlignmentTable", "align_lexicon", "viterbi_align",
    "PasmModel", "encode_pasm", "extract_pasm", "load_pasm", "save_pasm",
    "segment_pasm", "train_pasm",
]
