"""Optimization loop: schedule, Adam, clipping, checkpoints, experiments.

Everything a run does is a pure function of (config, seed): parameter
init is keyed by path, dropout by (seed, step, site), batch sampling by
(seed, step).  The persisted run log carries no wall-clock data, so two
runs of the same config are byte-identical; timing goes to stdout only.
"""

from __future__ import annotations

import json
import math
import os
import struct
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore
from .config import DataConfig, Experiment, TrainConfig, load_config
from .data import Utterance, load_manifest
from .decode import decode_dataset
from .errors import FormatError, InputError, TrainingError
from .metrics import wer_corpus
from .model import (ConformerTransducer, LossBundle, ModelConfig, PMUConfig,
                    configs_from_dict, head_names)
from .tokenizers import encode_bpe, encode_pasm, load_bpe, load_pasm

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.98
ADAM_EPS = 1e-9

CKPT_MAGIC = b"PMU1"


# ---------------------------------------------------------------------------
# schedule / optimizer

def lr_at(step: int, cfg: TrainConfig) -> float:
    """Inverse-square-root schedule with linear warmup; the two rules meet
    exactly at step == warmup_steps."""
    if step < 1:
        raise InputError(f"lr_at: step must be >= 1, got {step}")
    return cfg.base_lr * min(step ** -0.5, step * cfg.warmup_steps ** -1.5)


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, ps: ParamStore) -> "AdamState":
        state = cls()
        for path, node in ps.items():
            state.m[path] = np.zeros_like(node.value)
            state.v[path] = np.zeros_like(node.value)
        return state


def clip_gradients(ps: ParamStore, max_norm: float) -> float:
    """Scale all gradients so the global norm is at most max_norm; returns
    the pre-clip norm."""
    total = 0.0
    for _, node in ps.items():
        total += float((node.grad * node.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for _, node in ps.items():
            node.grad *= factor
    return norm


def adam_update(ps: ParamStore, state: AdamState, lr: float):
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for path, node in ps.items():
        g = node.grad
        m = state.m[path]
        v = state.v[path]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        node.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


# ---------------------------------------------------------------------------
# samples and steps

@dataclass
class Sample:
    id: str
    features: np.ndarray
    y_trans: list
    y_pasm: list | None = None
    y_bpe: list | None = None
    y_bpe_small: list | None = None


def train_step(model: ConformerTransducer, batch: list[Sample],
               cfg: TrainConfig, opt: AdamState, step: int) -> tuple[LossBundle, dict]:
    """One optimizer update over a batch; per-utterance graphs are built
    independently and gradients accumulate by summation, scaled to a mean."""
    model.params.zero_grad()
    bundles = []
    skipped = 0
    for s in batch:
        b = model.loss(s.features, s.y_trans, y_ctc_pasm=s.y_pasm,
                       y_ctc_bpe=s.y_bpe, y_ctc_bpe_small=s.y_bpe_small,
                       train=True, step=step,
                       label_smoothing=cfg.label_smoothing)
        if b.skipped_samples:
            skipped += 1
            continue
        if not math.isfinite(b.l_total):
            raise TrainingError(
                f"non-finite loss at utterance {s.id!r} (step {step}): "
                f"l_trans={b.l_trans}, components={b.l_ctc_components}")
        bundles.append(b)

    lr = lr_at(step, cfg)
    if not bundles:
        agg = LossBundle(skipped_samples=skipped, status="all_skipped")
        return agg, {"lr": lr, "grad_norm": 0.0, "updated": False}

    n = len(bundles)
    for b in bundles:
        ad.backward(ad.scale(b.node, 1.0 / n))
    norm = clip_gradients(model.params, cfg.grad_clip_norm)
    adam_update(model.params, opt, lr)

    comps: dict[str, float] = {}
    for name in bundles[0].l_ctc_components:
        comps[name] = sum(b.l_ctc_components[name] for b in bundles) / n
    agg = LossBundle(
        l_trans=sum(b.l_trans for b in bundles) / n,
        l_ctc_components=comps,
        l_total=sum(b.l_total for b in bundles) / n,
        skipped_samples=skipped)
    return agg, {"lr": lr, "grad_norm": norm, "updated": True}


def sample_batch(n: int, batch_size: int, seed: int, step: int) -> list[int]:
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 7, step])
    replace = n < batch_size
    return [int(i) for i in rng.choice(n, size=batch_size, replace=replace)]


# ---------------------------------------------------------------------------
# run log

class RunLog:
    """Append-only event list; one JSON object per line when persisted."""

    def __init__(self):
        self.entries: list[dict] = []
        self._last_step = 0

    def add_step(self, step: int, lr: float, bundle: LossBundle, grad_norm: float):
        if step <= self._last_step:
            raise InputError(f"run log steps must increase, got {step} "
                             f"after {self._last_step}")
        self._last_step = step
        self.entries.append({
            "kind": "step", "step": step, "lr": float(lr),
            "l_total": float(bundle.l_total), "l_trans": float(bundle.l_trans),
            "l_ctc": {k: float(v) for k, v in sorted(bundle.l_ctc_components.items())},
            "skipped": int(bundle.skipped_samples),
            "grad_norm": float(grad_norm)})

    def add_eval(self, step: int, report):
        self.entries.append({
            "kind": "eval", "step": step, "wer": float(report.wer),
            "S": report.substitutions, "I": report.insertions,
            "D": report.deletions, "N": report.ref_words})

    def dumps(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n"
                       for e in self.entries)

    def write(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())


# ---------------------------------------------------------------------------
# checkpoints

def _pack_record(fh, path: str, arr: np.ndarray):
    raw = path.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(arr.astype("<f8").tobytes(order="C"))


def save_checkpoint(path: str, model: ConformerTransducer, opt: AdamState,
                    next_step: int, meta: dict | None = None):
    header = dict(model.config_dict())
    header["opt_t"] = opt.t
    header["next_step"] = next_step
    header["seed"] = model.seed
    if meta:
        header["meta"] = meta
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    records = []
    for p, node in model.params.items():
        records.append((p, node.value))
    for p in sorted(opt.m):
        records.append((f"opt/m/{p}", opt.m[p]))
    for p in sorted(opt.v):
        records.append((f"opt/v/{p}", opt.v[p]))

    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(records)))
        for p, arr in records:
            _pack_record(fh, p, np.asarray(arr))


def _read_exact(fh, n: int, path: str, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated while reading {what} "
                          f"(wanted {n} bytes, got {len(data)})")
    return data


def load_checkpoint(path: str):
    """Returns (header dict, {record path: float64 array})."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, path, "magic") != CKPT_MAGIC:
            raise FormatError(f"{path}: bad checkpoint magic")
        (blen,) = struct.unpack("<I", _read_exact(fh, 4, path, "header length"))
        header = json.loads(_read_exact(fh, blen, path, "header").decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, path, "record count"))
        records: dict[str, np.ndarray] = {}
        for _ in range(count):
            (plen,) = struct.unpack("<H", _read_exact(fh, 2, path, "path length"))
            rpath = _read_exact(fh, plen, path, "path").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, path, "ndim"))
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4, path, "dim"))[0]
                          for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(fh, 8 * n, path, f"data of {rpath}"),
                                 dtype="<f8").reshape(shape)
            records[rpath] = data.copy()
    return header, records


def restore_model(path: str) -> tuple[ConformerTransducer, AdamState, dict]:
    """Rebuild a model + optimizer from a checkpoint, validating every
    parameter shape against the stored config."""
    header, records = load_checkpoint(path)
    cfg, pmu = configs_from_dict(header)
    model = ConformerTransducer(cfg, pmu, seed=header.get("seed", 0))
    opt = AdamState.for_params(model.params)
    opt.t = int(header.get("opt_t", 0))
    for p, node in model.params.items():
        if p not in records:
            raise FormatError(f"{path}: missing parameter record {p!r}")
        if records[p].shape != node.value.shape:
            raise FormatError(f"{path}: parameter {p!r} has shape "
                              f"{records[p].shape}, config implies "
                              f"{node.value.shape}")
        node.value[...] = records[p]
        mkey, vkey = f"opt/m/{p}", f"opt/v/{p}"
        if mkey in records:
            opt.m[p][...] = records[mkey]
        if vkey in records:
            opt.v[p][...] = records[vkey]
    known = {p for p, _ in model.params.items()}
    for rpath in records:
        base = rpath.split("/", 2)[-1] if rpath.startswith("opt/") else rpath
        if base not in known:
            raise FormatError(f"{path}: unexpected record {rpath!r}")
    return model, opt, header


# ---------------------------------------------------------------------------
# full experiment

def _needed_targets(pmu: PMUConfig) -> set[str]:
    names = set(head_names(pmu))
    targets = set()
    if names & {"pasm", "pasm_n1"}:
        targets.add("pasm")
    if names & {"bpe", "bpe_n3"}:
        targets.add("bpe")
    if "bpe_n2" in names:
        targets.add("bpe_small")
    targets.add(pmu.trans_units)
    return targets


def build_samples(utts: list[Utterance], pmu: PMUConfig, tokenizers: dict) -> list[Sample]:
    need = _needed_targets(pmu)
    samples = []
    for u in utts:
        enc = {}
        if "bpe" in need:
            enc["bpe"] = encode_bpe(tokenizers["bpe"], u.transcript).ids
        if "pasm" in need:
            enc["pasm"] = encode_pasm(tokenizers["pasm"], u.transcript).ids
        if "bpe_small" in need:
            enc["bpe_small"] = encode_bpe(tokenizers["bpe_small"], u.transcript).ids
        y_trans = enc["bpe"] if pmu.trans_units == "bpe" else enc["pasm"]
        samples.append(Sample(id=u.id, features=u.features, y_trans=y_trans,
                              y_pasm=enc.get("pasm"), y_bpe=enc.get("bpe"),
                              y_bpe_small=enc.get("bpe_small")))
    return samples


def load_tokenizers(dcfg: DataConfig, pmu: PMUConfig) -> dict:
    need = _needed_targets(pmu)
    errors = []
    toks = {}
    wanted = {"bpe": dcfg.bpe_model, "pasm": dcfg.pasm_model,
              "bpe_small": dcfg.bpe_small_model}
    for kind in sorted(need):
        path = wanted[kind]
        if not path:
            errors.append(f"[data] {kind}_model is required for variant "
                          f"settings but not configured")
            continue
        if not os.path.exists(path):
            errors.append(f"[data] {kind} model file not found: {path}")
            continue
        toks[kind] = load_pasm(path) if kind == "pasm" else load_bpe(path)
    if errors:
        raise InputError("; ".join(errors))
    return toks


def run_experiment(exp: Experiment, resume: str | None = None,
                   quiet: bool = False) -> dict:
    """Tokenize, train, periodically evaluate, and checkpoint the best-WER
    model.  All config problems are raised before any training compute."""
    tcfg, pmu, mcfg, dcfg = exp.train, exp.pmu, exp.model, exp.data
    tcfg.validate()
    toks = load_tokenizers(dcfg, pmu)

    errors = []
    if not dcfg.train_manifest:
        errors.append("[data] train_manifest is required")
    if not dcfg.dev_manifest:
        errors.append("[data] dev_manifest is required")
    if errors:
        raise InputError("; ".join(errors))
    train_utts = load_manifest(dcfg.train_manifest)
    dev_utts = load_manifest(dcfg.dev_manifest)
    for u in train_utts + dev_utts:
        if u.features.shape[1] != mcfg.input_dim:
            errors.append(f"utterance {u.id!r} has feature dim "
                          f"{u.features.shape[1]}, [model] input_dim is "
                          f"{mcfg.input_dim}")
            break
    if errors:
        raise InputError("; ".join(errors))

    if "pasm" in toks:
        mcfg.vocab_pasm = len(toks["pasm"].vocab)
    if "bpe" in toks:
        mcfg.vocab_bpe = len(toks["bpe"].vocab)
    if "bpe_small" in toks:
        mcfg.vocab_bpe_small = len(toks["bpe_small"].vocab)
    trans_tok = toks["bpe"] if pmu.trans_units == "bpe" else toks["pasm"]
    mcfg.vocab_trans = len(trans_tok.vocab)

    if resume:
        model, opt, header = restore_model(resume)
        want = ConformerTransducer(mcfg, pmu, seed=tcfg.seed).config_dict()
        if model.config_dict() != want or model.seed != tcfg.seed:
            raise InputError(f"{resume}: checkpoint config does not match "
                             f"the experiment config")
        start_step = int(header.get("next_step", 1))
    else:
        model = ConformerTransducer(mcfg, pmu, seed=tcfg.seed)
        opt = AdamState.for_params(model.params)
        start_step = 1

    samples = build_samples(train_utts, pmu, toks)
    os.makedirs(tcfg.out_dir, exist_ok=True)
    log = RunLog()
    best_wer = math.inf
    best_path = os.path.join(tcfg.out_dir, "best.ckpt")
    final_path = os.path.join(tcfg.out_dir, "final.ckpt")
    vocab_meta = {"trans_vocab": list(trans_tok.vocab.units),
                  "word_end_marker": trans_tok.vocab.word_end_marker}
    t_start = time.time()

    for step in range(start_step, tcfg.max_steps + 1):
        idx = sample_batch(len(samples), tcfg.batch_size, tcfg.seed, step)
        batch = [samples[i] for i in idx]
        bundle, info = train_step(model, batch, tcfg, opt, step)
        log.add_step(step, info["lr"], bundle, info["grad_norm"])
        if not quiet:
            rec = dict(log.entries[-1])
            rec["wall_ms"] = round(1000 * (time.time() - t_start), 1)
            print(json.dumps(rec, sort_keys=True, separators=(",", ":")),
                  file=sys.stdout)
        if step % tcfg.eval_every == 0 or step == tcfg.max_steps:
            hyps = decode_dataset(model, dev_utts, trans_tok.vocab,
                                  tcfg.max_symbols_per_frame)
            report = wer_corpus([(u.transcript, hyps[u.id]) for u in dev_utts])
            log.add_eval(step, report)
            if not quiet:
                print(json.dumps(log.entries[-1], sort_keys=True,
                                 separators=(",", ":")), file=sys.stdout)
            if report.wer < best_wer:
                best_wer = report.wer
                save_checkpoint(best_path, model, opt, step + 1,
                                meta={**vocab_meta, "best_wer": report.wer,
                                      "eval_step": step})

    save_checkpoint(final_path, model, opt, tcfg.max_steps + 1, meta=vocab_meta)
    log_path = os.path.join(tcfg.out_dir, "runlog.jsonl")
    log.write(log_path)
    return {"log": log, "log_path": log_path, "final_ckpt": final_path,
            "best_ckpt": best_path if math.isfinite(best_wer) else None,
            "best_wer": best_wer, "model": model,
            "wall_s": time.time() - t_start}


def run_experiment_file(config_path: str, resume: str | None = None,
                        quiet: bool = False) -> dict:
    return run_experiment(load_config(config_path), resume=resume, quiet=quiet)
