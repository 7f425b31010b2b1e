"""Greedy decoding for the CTC heads and the transducer branch."""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .model import ConformerTransducer


def greedy_decode_ctc(emissions: np.ndarray, blank_id: int = 0) -> list[int]:
    """Frame-wise argmax, collapse adjacent repeats, delete blanks."""
    path = np.asarray(emissions).argmax(axis=-1)
    out: list[int] = []
    prev = -1
    for k in path:
        k = int(k)
        if k != prev and k != blank_id:
            out.append(k)
        prev = k
    return out


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class _LabelState:
    """Incremental label-encoder evaluation on raw arrays (no tape); the
    arithmetic mirrors nn.lstm_step's [input, forget, cell, output] layout."""

    def __init__(self, params, blank_id: int = 0):
        self.embed = params.get("lab/embed").value
        self.wx = params.get("lab/lstm/wx").value
        self.wh = params.get("lab/lstm/wh").value
        self.b = params.get("lab/lstm/b").value
        dim = self.embed.shape[1]
        self.h = np.zeros(dim)
        self.c = np.zeros(dim)
        self.out = self.consume(blank_id)

    def consume(self, token: int) -> np.ndarray:
        x = self.embed[token]
        z = x @ self.wx + self.h @ self.wh + self.b
        d = self.h.shape[0]
        i = _sigmoid(z[:d])
        f = _sigmoid(z[d:2 * d])
        g = np.tanh(z[2 * d:3 * d])
        o = _sigmoid(z[3 * d:])
        self.c = f * self.c + i * g
        self.h = o * np.tanh(self.c)
        self.out = self.h
        return self.out


def _joint_single(params, h_t: np.ndarray, h_u: np.ndarray) -> np.ndarray:
    z = np.tanh(h_t @ params.get("joint/wt").value
                + h_u @ params.get("joint/wu").value
                + params.get("joint/b").value)
    logits = z @ params.get("joint/out_w").value + params.get("joint/out_b").value
    return logits - np.log(np.exp(logits - logits.max()).sum()) - logits.max()


def greedy_decode_transducer(model: ConformerTransducer, x,
                             max_symbols_per_frame: int = 5,
                             blank_id: int = 0) -> list[int]:
    """Frame-synchronous greedy search: emit argmax symbols at (t, u) until
    blank wins or the per-frame cap is hit, then advance t."""
    if max_symbols_per_frame < 1:
        raise InputError(f"max_symbols_per_frame must be >= 1, "
                         f"got {max_symbols_per_frame}")
    h_t_all = model.encode(x).h_n3.value
    state = _LabelState(model.params, blank_id)
    out: list[int] = []
    for t in range(h_t_all.shape[0]):
        for _ in range(max_symbols_per_frame):
            logp = _joint_single(model.params, h_t_all[t], state.out)
            k = int(logp.argmax())
            if k == blank_id:
                break
            out.append(k)
            state.consume(k)
    return out


def decode_dataset(model: ConformerTransducer, utts, vocab,
                   max_symbols_per_frame: int = 5) -> dict[str, str]:
    """id -> detokenized greedy-transducer hypothesis."""
    from .tokenizers import decode_units
    hyps = {}
    for u in utts:
        ids = greedy_decode_transducer(model, u.features, max_symbols_per_frame)
        hyps[u.id] = decode_units(vocab, ids)
    return hyps
