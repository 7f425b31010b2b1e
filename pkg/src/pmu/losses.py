"""Exact CTC and transducer losses in the log semiring.

Both losses consume *normalized* log-probabilities and return the negative
log posterior together with its analytic gradient w.r.t. those log-probs.
`ctc_brute_force` and `transducer_brute_force` are deliberately naive
enumeration oracles for small instances; they share no code with the
dynamic-programming paths they check.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ContractViolation, InputError

# Floor for log-probabilities: keeps the log-semiring free of -inf while
# leaving anything down to log(1e-30) untouched.
LOG_FLOOR = -1.0e30

BRUTE_FORCE_LIMIT = 10 ** 6


@dataclass
class LossResult:
    value: float
    grad: np.ndarray
    status: str = "ok"


def _clamp(logprobs: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(logprobs, dtype=np.float64), LOG_FLOOR)


def _logaddexp(a, b):
    return np.logaddexp(a, b)


# ---------------------------------------------------------------------------
# CTC

def ctc_loss(emissions: np.ndarray, labels) -> LossResult:
    """Forward-backward CTC loss over a (T, V) matrix of log-probs.

    Blank id is 0.  Unreachable targets (T too short for the label string)
    give value +inf, zero gradient, and status "unreachable" so callers can
    skip the sample instead of aborting.
    """
    lp = _clamp(emissions)
    T, V = lp.shape
    y = [int(i) for i in labels]
    if any(i == 0 for i in y):
        raise ContractViolation("ctc_loss: labels must not contain blank id 0")
    if any(not (0 < i < V) for i in y):
        raise ContractViolation(f"ctc_loss: label id out of range for V={V}")
    U = len(y)
    repeats = sum(1 for a, b in zip(y, y[1:]) if a == b)
    if T < U + repeats:
        return LossResult(math.inf, np.zeros_like(lp), "unreachable")

    ext = [0]
    for i in y:
        ext.extend([i, 0])
    S = len(ext)
    ext = np.asarray(ext)
    # skip[s]: path may jump from s-2 to s (distinct non-blank labels only)
    skip = np.zeros(S, dtype=bool)
    for s in range(2, S):
        skip[s] = ext[s] != 0 and ext[s] != ext[s - 2]

    NEG = -np.inf
    alpha = np.full((T, S), NEG)
    alpha[0, 0] = lp[0, 0]
    if S > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, T):
        stay = alpha[t - 1]
        move = np.full(S, NEG)
        move[1:] = alpha[t - 1, :-1]
        jump = np.full(S, NEG)
        jump[2:] = alpha[t - 1, :-2]
        jump[~skip] = NEG
        alpha[t] = np.logaddexp(np.logaddexp(stay, move), jump) + lp[t, ext]

    logz = alpha[T - 1, S - 1] if S == 1 else _logaddexp(alpha[T - 1, S - 1],
                                                         alpha[T - 1, S - 2])
    if not np.isfinite(logz):
        return LossResult(math.inf, np.zeros_like(lp), "unreachable")

    # beta[t, s]: log prob of completing from state s at time t, not counting
    # the emission at time t (it already sits inside alpha).
    beta = np.full((T, S), NEG)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + lp[t + 1, ext]
        stay = nxt
        move = np.full(S, NEG)
        move[:-1] = nxt[1:]
        jump = np.full(S, NEG)
        jump[:-2] = np.where(skip[2:], nxt[2:], NEG)
        beta[t] = np.logaddexp(np.logaddexp(stay, move), jump)

    grad = np.zeros_like(lp)
    post = alpha + beta - logz  # (T, S) state posteriors
    with np.errstate(under="ignore"):
        post = np.exp(post)
    for s in range(S):
        grad[:, ext[s]] -= post[:, s]
    return LossResult(float(-logz), grad, "ok")


def _collapse(path, blank: int = 0) -> tuple:
    out = []
    prev = None
    for symbol in path:
        if symbol != prev and symbol != blank:
            out.append(symbol)
        prev = symbol
    return tuple(out)


def ctc_brute_force(emissions: np.ndarray, labels) -> float:
    """-log sum of path probabilities over every length-T string that
    collapses to `labels`.  Enumerates V**T strings; refuses big instances."""
    lp = np.asarray(emissions, dtype=np.float64)
    T, V = lp.shape
    if V ** T > BRUTE_FORCE_LIMIT:
        raise InputError(f"ctc_brute_force: V**T = {V}**{T} exceeds {BRUTE_FORCE_LIMIT}")
    target = tuple(int(i) for i in labels)
    total = 0.0
    for path in itertools.product(range(V), repeat=T):
        if _collapse(path) != target:
            continue
        p = 1.0
        for t, s in enumerate(path):
            p *= math.exp(lp[t, s])
        total += p
    return math.inf if total == 0.0 else -math.log(total)


# ---------------------------------------------------------------------------
# transducer

def transducer_loss(lattice: np.ndarray, labels) -> LossResult:
    """Negative log posterior over all monotonic emit/blank alignments.

    `lattice` is (T, U+1, V) normalized log-probs; blank id 0.  Every target
    is reachable (emitting does not consume a frame), so status is always ok.
    """
    lp = _clamp(lattice)
    if lp.ndim != 3:
        raise ContractViolation(f"transducer_loss: lattice must be 3-D, got {lp.shape}")
    T, U1, V = lp.shape
    y = [int(i) for i in labels]
    U = len(y)
    if T < 1:
        raise InputError("transducer_loss: empty lattice (T < 1)")
    if U1 != U + 1:
        raise InputError(
            f"transducer_loss: lattice label axis {U1} != U+1 = {U + 1}")
    if any(i == 0 for i in y):
        raise ContractViolation("transducer_loss: labels must not contain blank id 0")
    if any(not (0 < i < V) for i in y):
        raise ContractViolation(f"transducer_loss: label id out of range for V={V}")

    NEG = -np.inf
    emit = np.full((T, U), NEG) if U else np.zeros((T, 0))
    for u, lab in enumerate(y):
        emit[:, u] = lp[:, u, lab]
    blank = lp[:, :, 0]

    alpha = np.full((T, U + 1), NEG)
    alpha[0, 0] = 0.0
    for u in range(1, U + 1):
        alpha[0, u] = alpha[0, u - 1] + emit[0, u - 1]
    for t in range(1, T):
        alpha[t, 0] = alpha[t - 1, 0] + blank[t - 1, 0]
        for u in range(1, U + 1):
            alpha[t, u] = _logaddexp(alpha[t - 1, u] + blank[t - 1, u],
                                     alpha[t, u - 1] + emit[t, u - 1])
    logz = alpha[T - 1, U] + blank[T - 1, U]

    beta = np.full((T, U + 1), NEG)
    beta[T - 1, U] = blank[T - 1, U]
    for u in range(U - 1, -1, -1):
        beta[T - 1, u] = emit[T - 1, u] + beta[T - 1, u + 1]
    for t in range(T - 2, -1, -1):
        beta[t, U] = blank[t, U] + beta[t + 1, U]
        for u in range(U - 1, -1, -1):
            beta[t, u] = _logaddexp(blank[t, u] + beta[t + 1, u],
                                    emit[t, u] + beta[t, u + 1])

    grad = np.zeros_like(lp)
    with np.errstate(under="ignore"):
        # blank transitions: next state is (t+1, u); the final blank ends.
        nxt = np.full((T, U + 1), NEG)
        nxt[:-1] = beta[1:]
        nxt[T - 1, U] = 0.0
        grad[:, :, 0] = -np.exp(alpha + blank + nxt - logz)
        for u, lab in enumerate(y):
            grad[:, u, lab] -= np.exp(alpha[:, u] + emit[:, u] + beta[:, u + 1] - logz)
    return LossResult(float(-logz), grad, "ok")


def transducer_brute_force(lattice: np.ndarray, labels) -> float:
    """Enumerate every monotonic path (orderings of U emits among T-1 frame
    advances, closed by the final blank) and sum their probabilities."""
    lp = np.asarray(lattice, dtype=np.float64)
    T, U1, _ = lp.shape
    y = [int(i) for i in labels]
    U = len(y)
    if U1 != U + 1:
        raise InputError("transducer_brute_force: lattice/label mismatch")
    if math.comb(T - 1 + U, U) > BRUTE_FORCE_LIMIT:
        raise InputError(
            f"transducer_brute_force: C({T - 1 + U},{U}) exceeds {BRUTE_FORCE_LIMIT}")
    total = 0.0
    moves = T - 1 + U
    for emit_slots in itertools.combinations(range(moves), U):
        t = u = 0
        p = 1.0
        for m in range(moves):
            if m in emit_slots:
                p *= math.exp(lp[t, u, y[u]])
                u += 1
            else:
                p *= math.exp(lp[t, u, 0])
                t += 1
        p *= math.exp(lp[T - 1, U, 0])
        total += p
    return math.inf if total == 0.0 else -math.log(total)


# ---------------------------------------------------------------------------
# regularizers

def label_smoothed_nll(logprobs: np.ndarray, target_id: int, weight: float) -> float:
    """(1-w) * NLL(target) + w * mean over the vocabulary of NLL."""
    if not (0.0 <= weight < 1.0):
        raise ContractViolation(f"label_smoothed_nll: weight {weight} not in [0,1)")
    lp = np.asarray(logprobs, dtype=np.float64)
    return float((1.0 - weight) * -lp[target_id] + weight * np.mean(-lp))


def uniform_kl(logprobs_node: Node, axis: int = -1) -> Node:
    """Mean over positions of KL(uniform || p); zero when p is uniform.

    Used as the label-smoothing regularizer on head outputs.
    """
    V = logprobs_node.value.shape[axis]
    ce = ad.mean(ad.neg(logprobs_node))  # mean over positions and vocab
    return ad.add(ce, Node(np.asarray(-math.log(V))))


# ---------------------------------------------------------------------------
# tape integration

def ctc_loss_node(emissions: Node, labels) -> tuple[Node, str]:
    """CTC loss as a tape node; returns (scalar node, status)."""
    res = ctc_loss(emissions.value, labels)
    if res.status != "ok":
        return Node(np.asarray(res.value)), res.status
    out = Node(np.asarray(res.value), (emissions,), "ctc_loss")
    out._backward = lambda g: ad._acc(emissions, float(g) * res.grad)
    return out, "ok"


def transducer_loss_node(lattice: Node, labels) -> Node:
    res = transducer_loss(lattice.value, labels)
    out = Node(np.asarray(res.value), (lattice,), "transducer_loss")
    out._backward = lambda g: ad._acc(lattice, float(g) * res.grad)
    return out


# ---------------------------------------------------------------------------
# self-check suites (backing the loss-check CLI and the acceptance tests)

def random_logprob_matrix(rng: np.random.Generator, *shape: int) -> np.ndarray:
    z = rng.normal(size=shape)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def oracle_equivalence_suite(instances: int = 200, seed: int = 0) -> dict:
    """Compare both DP losses against their enumeration oracles on random
    small instances; returns max absolute deviations in nats."""
    rng = np.random.default_rng(seed)
    max_ctc = 0.0
    max_trans = 0.0
    for _ in range(instances):
        V = int(rng.integers(2, 5))
        T = int(rng.integers(1, 5))
        U = int(rng.integers(0, 4))
        emissions = random_logprob_matrix(rng, T, V)
        labels = [int(rng.integers(1, V)) for _ in range(U)]
        exact = ctc_loss(emissions, labels)
        brute = ctc_brute_force(emissions, labels)
        if math.isinf(brute) or math.isinf(exact.value):
            if math.isinf(brute) != math.isinf(exact.value):
                max_ctc = math.inf
        else:
            max_ctc = max(max_ctc, abs(exact.value - brute))
        lattice = random_logprob_matrix(rng, T, U + 1, V)
        exact_t = transducer_loss(lattice, labels)
        brute_t = transducer_brute_force(lattice, labels)
        max_trans = max(max_trans, abs(exact_t.value - brute_t))
    return {"ctc_max_dev": max_ctc, "transducer_max_dev": max_trans,
            "instances": instances}


def gradient_suite(seeds: int = 20, eps: float = 1e-4) -> dict:
    """Finite-difference check of both loss gradients; returns max relative
    errors (scaled by max(1, |analytic|, |numeric|) per entry)."""
    worst_ctc = 0.0
    worst_trans = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(1000 + seed)
        V = int(rng.integers(2, 5))
        T = int(rng.integers(2, 5))
        U = int(rng.integers(0, 3))
        labels = [int(rng.integers(1, V)) for _ in range(U)]

        emissions = random_logprob_matrix(rng, T, V)
        if ctc_loss(emissions, labels).status == "ok":
            analytic = ctc_loss(emissions, labels).grad
            fd = ad.finite_diff_grad(lambda: ctc_loss(emissions, labels).value,
                                     [emissions], eps)[0]
            worst_ctc = max(worst_ctc, relative_error(analytic, fd))

        lattice = random_logprob_matrix(rng, T, U + 1, V)
        analytic = transducer_loss(lattice, labels).grad
        fd = ad.finite_diff_grad(lambda: transducer_loss(lattice, labels).value,
                                 [lattice], eps)[0]
        worst_trans = max(worst_trans, relative_error(analytic, fd))
    return {"ctc_max_rel_err": worst_ctc, "transducer_max_rel_err": worst_trans,
            "seeds": seeds}


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0
