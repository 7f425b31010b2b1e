"""Conformer-Transducer with multi-target CTC heads.

The encoder is a stack of pre-norm conformer blocks over 4x-subsampled
features.  Depending on the configured variant, CTC heads tap the encoder
at the top (baseline / basic_pmu / para_ctc) or between block groups
(pca_ctc), optionally feeding each intermediate posterior back into the
trunk through a zero-initialized linear projection (self-conditioning).
Head and projection sharing is expressed as parameter-path aliasing, so
"shared" literally means identical parameter nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import losses, nn
from .autodiff import Node, ParamStore
from .errors import ContractViolation, InputError

VARIANTS = ("baseline", "basic_pmu", "para_ctc", "pca_ctc")
UNIT_CHOICES = ("pasm", "bpe")


# ---------------------------------------------------------------------------
# configuration

@dataclass
class EncoderConfig:
    num_layers: int = 6
    attention_dim: int = 64
    ff_dim: int = 128
    heads: int = 2
    conv_kernel: int = 7
    subsample_factor: int = 4
    dropout: float = 0.1

    def validate(self):
        if self.num_layers < 1:
            raise InputError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.attention_dim % self.heads != 0:
            raise InputError(f"attention_dim {self.attention_dim} not divisible "
                             f"by heads {self.heads}")
        if self.conv_kernel % 2 != 1 or self.conv_kernel < 1:
            raise InputError(f"conv_kernel must be odd and positive, "
                             f"got {self.conv_kernel}")
        if self.subsample_factor not in (1, 2, 4):
            raise InputError(f"subsample_factor must be 1, 2 or 4, "
                             f"got {self.subsample_factor}")
        if not (0.0 <= self.dropout < 1.0):
            raise InputError(f"dropout must be in [0,1), got {self.dropout}")


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    input_dim: int = 16
    lstm_dim: int = 64
    joint_dim: int = 64
    subsample_channels: int = 16
    vocab_trans: int = 0
    vocab_pasm: int = 0
    vocab_bpe: int = 0
    vocab_bpe_small: int = 0

    def validate(self):
        self.encoder.validate()
        for name in ("input_dim", "lstm_dim", "joint_dim", "subsample_channels"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if self.vocab_trans < 2:
            raise InputError("vocab_trans must be >= 2 (blank plus one unit)")


@dataclass
class PMUConfig:
    variant: str = "baseline"
    lambda_trans: float = 0.5
    lambda_ctc: float = 0.5
    alpha: float = 0.7
    beta: float = 0.5
    n1: int = 0
    n2: int = 0
    n3: int = 0
    sc_enabled: bool = False
    heads_shared: bool = False
    ctc_units: str = "bpe"
    trans_units: str = "bpe"

    def validate(self, cfg: ModelConfig | None = None):
        errors = []
        if self.variant not in VARIANTS:
            errors.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (0.0 <= self.lambda_trans <= 1.0):
            errors.append(f"lambda_trans {self.lambda_trans} not in [0,1]")
        if not (0.0 <= self.lambda_ctc <= 1.0):
            errors.append(f"lambda_ctc {self.lambda_ctc} not in [0,1]")
        if not (0.0 < self.alpha < 1.0):
            errors.append(f"alpha {self.alpha} not in (0,1)")
        if not (0.0 < self.beta < 1.0):
            errors.append(f"beta {self.beta} not in (0,1)")
        if self.ctc_units not in UNIT_CHOICES:
            errors.append(f"ctc_units must be one of {UNIT_CHOICES}")
        if self.trans_units not in UNIT_CHOICES:
            errors.append(f"trans_units must be one of {UNIT_CHOICES}")
        if self.variant == "pca_ctc":
            if min(self.n1, self.n2, self.n3) < 0 or self.n1 < 1 or self.n3 < 1:
                errors.append(f"pca_ctc needs n1 >= 1, n2 >= 0, n3 >= 1, "
                              f"got ({self.n1},{self.n2},{self.n3})")
            if cfg is not None and self.n1 + self.n2 + self.n3 != cfg.encoder.num_layers:
                errors.append(f"n1+n2+n3 = {self.n1 + self.n2 + self.n3} != "
                              f"num_layers = {cfg.encoder.num_layers}")
        else:
            if self.sc_enabled:
                errors.append("sc_enabled requires variant pca_ctc")
            if self.heads_shared:
                errors.append("heads_shared requires variant pca_ctc")
        if self.variant == "baseline" and self.ctc_units != self.trans_units:
            errors.append("baseline uses one unit type for both branches; "
                          f"got ctc_units={self.ctc_units}, trans_units={self.trans_units}")
        if self.variant == "basic_pmu" and self.ctc_units != "pasm":
            errors.append("basic_pmu requires ctc_units = pasm")
        if self.heads_shared:
            if not self.sc_enabled:
                errors.append("heads_shared requires sc_enabled (the shared "
                              "projections are the SC layers)")
            if self.n2 == 0:
                errors.append("heads_shared requires n2 > 0 (two taps to share)")
            if cfg is not None and cfg.vocab_pasm != cfg.vocab_bpe_small:
                errors.append(f"heads_shared requires equal head sizes, got "
                              f"vocab_pasm={cfg.vocab_pasm} vs "
                              f"vocab_bpe_small={cfg.vocab_bpe_small}")
        if errors:
            raise InputError("; ".join(errors))


def validate_configs(cfg: ModelConfig, pmu: PMUConfig):
    """Enumerates every config problem in one error instead of stopping at
    the first one."""
    cfg.validate()
    pmu.validate(cfg)
    errors = []
    for name in head_names(pmu):
        v = head_vocab_size(cfg, name)
        if v < 2:
            errors.append(f"head {name!r} needs a vocabulary of >= 2 "
                          f"(blank plus one unit), got {v}")
    want = cfg.vocab_bpe if pmu.trans_units == "bpe" else cfg.vocab_pasm
    if want and want != cfg.vocab_trans:
        errors.append(f"vocab_trans = {cfg.vocab_trans} does not match the "
                      f"{pmu.trans_units} vocabulary size {want}")
    if errors:
        raise InputError("; ".join(errors))


def head_names(pmu: PMUConfig) -> list[str]:
    """Active CTC head names for the variant, in forward order."""
    if pmu.variant == "baseline":
        return [pmu.ctc_units]
    if pmu.variant == "basic_pmu":
        return ["pasm"]
    if pmu.variant == "para_ctc":
        return ["pasm", "bpe"]
    names = ["pasm_n1"]
    if pmu.n2 > 0:
        names.append("bpe_n2")
    names.append("bpe_n3")
    return names


def head_vocab_size(cfg: ModelConfig, name: str) -> int:
    if name in ("pasm", "pasm_n1"):
        return cfg.vocab_pasm
    if name == "bpe_n2":
        return cfg.vocab_bpe_small
    return cfg.vocab_bpe


def subsampled_length(T: int, factor: int) -> int:
    """Frame count after the subsampling convolutions: ceil(T / factor)."""
    return -(-T // factor)


# ---------------------------------------------------------------------------
# parameter construction

def build_params(cfg: ModelConfig, pmu: PMUConfig, seed: int = 0) -> ParamStore:
    """Create every parameter the configured variant needs.

    Initial values depend only on (seed, path), so two configs that differ
    in one component still agree on all common parameters.
    """
    validate_configs(cfg, pmu)
    e = cfg.encoder
    d = e.attention_dim
    ps = ParamStore(seed)

    # subsampling convolutions + projection to the attention dimension
    C = cfg.subsample_channels
    freq = cfg.input_dim
    if e.subsample_factor >= 2:
        ps.create("sub/conv1/w", (3, 3, 1, C), fan_in=9)
        ps.create("sub/conv1/b", (C,), init="zeros")
        freq = (freq + 1) // 2
    if e.subsample_factor == 4:
        ps.create("sub/conv2/w", (3, 3, C, C), fan_in=9 * C)
        ps.create("sub/conv2/b", (C,), init="zeros")
        freq = (freq + 1) // 2
    proj_in = cfg.input_dim if e.subsample_factor == 1 else freq * C
    ps.create("sub/proj/w", (proj_in, d))
    ps.create("sub/proj/b", (d,), init="zeros")

    for i in range(e.num_layers):
        p = f"enc/l{i:02d}"
        for ff in ("ff1", "ff2"):
            ps.create(f"{p}/{ff}/ln_g", (d,), init="ones")
            ps.create(f"{p}/{ff}/ln_b", (d,), init="zeros")
            ps.create(f"{p}/{ff}/w1", (d, e.ff_dim))
            ps.create(f"{p}/{ff}/b1", (e.ff_dim,), init="zeros")
            ps.create(f"{p}/{ff}/w2", (e.ff_dim, d))
            ps.create(f"{p}/{ff}/b2", (d,), init="zeros")
        ps.create(f"{p}/mhsa/ln_g", (d,), init="ones")
        ps.create(f"{p}/mhsa/ln_b", (d,), init="zeros")
        for w in ("wq", "wk", "wv", "wo"):
            ps.create(f"{p}/mhsa/{w}", (d, d))
        for b in ("bq", "bk", "bv", "bo"):
            ps.create(f"{p}/mhsa/{b}", (d,), init="zeros")
        ps.create(f"{p}/conv/ln_g", (d,), init="ones")
        ps.create(f"{p}/conv/ln_b", (d,), init="zeros")
        ps.create(f"{p}/conv/pw1_w", (d, 2 * d))
        ps.create(f"{p}/conv/pw1_b", (2 * d,), init="zeros")
        ps.create(f"{p}/conv/dw_k", (e.conv_kernel, d), fan_in=e.conv_kernel)
        ps.create(f"{p}/conv/ln2_g", (d,), init="ones")
        ps.create(f"{p}/conv/ln2_b", (d,), init="zeros")
        ps.create(f"{p}/conv/pw2_w", (d, d))
        ps.create(f"{p}/conv/pw2_b", (d,), init="zeros")
        ps.create(f"{p}/fin_g", (d,), init="ones")
        ps.create(f"{p}/fin_b", (d,), init="zeros")

    shared_pairs = []
    if pmu.heads_shared:
        shared_pairs = [("tap/bpe_n2", "tap/pasm_n1"), ("sc/n2", "sc/n1")]

    for name in head_names(pmu):
        path = f"tap/{name}"
        if any(path == alias for alias, _ in shared_pairs):
            continue
        V = head_vocab_size(cfg, name)
        ps.create(f"{path}/w", (d, V))
        ps.create(f"{path}/b", (V,), init="zeros")

    if pmu.sc_enabled:
        # zero init makes self-conditioning an exact no-op at step 0
        ps.create("sc/n1/w", (cfg.vocab_pasm, d), init="zeros")
        ps.create("sc/n1/b", (d,), init="zeros")
        if pmu.n2 > 0 and not pmu.heads_shared:
            ps.create("sc/n2/w", (cfg.vocab_bpe_small, d), init="zeros")
            ps.create("sc/n2/b", (d,), init="zeros")

    for alias, target in shared_pairs:
        for leaf in ("w", "b"):
            ps.alias(f"{alias}/{leaf}", f"{target}/{leaf}")

    ps.create("lab/embed", (cfg.vocab_trans, cfg.lstm_dim))
    ps.create("lab/lstm/wx", (cfg.lstm_dim, 4 * cfg.lstm_dim))
    ps.create("lab/lstm/wh", (cfg.lstm_dim, 4 * cfg.lstm_dim))
    ps.create("lab/lstm/b", (4 * cfg.lstm_dim,), init="zeros")

    ps.create("joint/wt", (d, cfg.joint_dim))
    ps.create("joint/wu", (cfg.lstm_dim, cfg.joint_dim))
    ps.create("joint/b", (cfg.joint_dim,), init="zeros")
    ps.create("joint/out_w", (cfg.joint_dim, cfg.vocab_trans))
    ps.create("joint/out_b", (cfg.vocab_trans,), init="zeros")
    return ps


# ---------------------------------------------------------------------------
# forward pieces

@dataclass
class RunCtx:
    """Per-forward switches: dropout only fires when train is set, and its
    masks are a pure function of (seed, step, site)."""
    train: bool = False
    seed: int = 0
    step: int = 0

    def drop(self, x, p: float, site: str):
        return nn.dropout(x, p, self.seed, self.step, site, self.train)


def _ff(h, ps, p, cfg: EncoderConfig, ctx: RunCtx):
    y = nn.layer_norm(h, ps.get(f"{p}/ln_g"), ps.get(f"{p}/ln_b"))
    y = ad.swish(nn.linear(y, ps.get(f"{p}/w1"), ps.get(f"{p}/b1")))
    y = ctx.drop(y, cfg.dropout, f"{p}/d1")
    y = nn.linear(y, ps.get(f"{p}/w2"), ps.get(f"{p}/b2"))
    return ctx.drop(y, cfg.dropout, f"{p}/d2")


def conformer_block(h, ps: ParamStore, p: str, cfg: EncoderConfig, ctx: RunCtx):
    """Pre-norm conformer block: half-FF, self-attention, convolution
    module, half-FF, closing layer norm."""
    h = ad.add(h, ad.scale(_ff(h, ps, f"{p}/ff1", cfg, ctx), 0.5))

    y = nn.layer_norm(h, ps.get(f"{p}/mhsa/ln_g"), ps.get(f"{p}/mhsa/ln_b"))
    q = nn.linear(y, ps.get(f"{p}/mhsa/wq"), ps.get(f"{p}/mhsa/bq"))
    k = nn.linear(y, ps.get(f"{p}/mhsa/wk"), ps.get(f"{p}/mhsa/bk"))
    v = nn.linear(y, ps.get(f"{p}/mhsa/wv"), ps.get(f"{p}/mhsa/bv"))
    y = nn.multi_head_attention(q, k, v, cfg.heads)
    y = nn.linear(y, ps.get(f"{p}/mhsa/wo"), ps.get(f"{p}/mhsa/bo"))
    h = ad.add(h, ctx.drop(y, cfg.dropout, f"{p}/mhsa/d"))

    y = nn.layer_norm(h, ps.get(f"{p}/conv/ln_g"), ps.get(f"{p}/conv/ln_b"))
    y = nn.glu(nn.linear(y, ps.get(f"{p}/conv/pw1_w"), ps.get(f"{p}/conv/pw1_b")))
    y = nn.depthwise_conv1d(y, ps.get(f"{p}/conv/dw_k"))
    y = nn.layer_norm(y, ps.get(f"{p}/conv/ln2_g"), ps.get(f"{p}/conv/ln2_b"))
    y = nn.linear(ad.swish(y), ps.get(f"{p}/conv/pw2_w"), ps.get(f"{p}/conv/pw2_b"))
    h = ad.add(h, ctx.drop(y, cfg.dropout, f"{p}/conv/d"))

    h = ad.add(h, ad.scale(_ff(h, ps, f"{p}/ff2", cfg, ctx), 0.5))
    return nn.layer_norm(h, ps.get(f"{p}/fin_g"), ps.get(f"{p}/fin_b"))


def _subsample(x, cfg: ModelConfig, ps: ParamStore, ctx: RunCtx):
    e = cfg.encoder
    d = e.attention_dim
    x = ad.as_node(x)
    T = x.value.shape[0]
    if x.value.ndim != 2 or x.value.shape[1] != cfg.input_dim:
        raise ContractViolation(f"expected features (T, {cfg.input_dim}), "
                                f"got {x.value.shape}")
    if e.subsample_factor == 1:
        h = nn.linear(x, ps.get("sub/proj/w"), ps.get("sub/proj/b"))
    else:
        y = ad.reshape(x, (T, cfg.input_dim, 1))
        y = ad.swish(nn.conv2d(y, ps.get("sub/conv1/w"), ps.get("sub/conv1/b"),
                               stride=2, pad=1))
        if e.subsample_factor == 4:
            y = ad.swish(nn.conv2d(y, ps.get("sub/conv2/w"), ps.get("sub/conv2/b"),
                                   stride=2, pad=1))
        Tp, f, C = y.value.shape
        y = ad.reshape(y, (Tp, f * C))
        h = nn.linear(y, ps.get("sub/proj/w"), ps.get("sub/proj/b"))
    Tp = h.value.shape[0]
    pe = nn.sinusoid_positions(Tp, d)
    h = ad.add(ad.scale(h, math.sqrt(d)), Node(pe))
    return ctx.drop(h, e.dropout, "sub/d")


def ctc_head(h, ps: ParamStore, name: str):
    """Returns (logprobs, posterior) of the tap's emission head; both views
    share the same logits node."""
    logits = nn.linear(h, ps.get(f"tap/{name}/w"), ps.get(f"tap/{name}/b"))
    return ad.log_softmax(logits, axis=-1), ad.softmax(logits, axis=-1)


def self_condition(h, ctc_posterior, w, b):
    """h' = h + posterior @ w + b, frame-wise; the conditioning signal is
    the tap's softmax posterior projected back to the trunk dimension."""
    h, post = ad.as_node(h), ad.as_node(ctc_posterior)
    V, d = ad.as_node(w).value.shape
    if post.value.shape[-1] != V or h.value.shape[-1] != d:
        raise ContractViolation(
            f"self_condition: posterior {post.value.shape} and projection "
            f"({V},{d}) incompatible with trunk {h.value.shape}")
    sums = post.value.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-6):
        raise ContractViolation("self_condition: posterior rows must be "
                                "normalized distributions")
    return ad.add(h, nn.linear(post, w, b))


@dataclass
class ForwardOutputs:
    h_n1: Node | None = None
    h_n2: Node | None = None
    h_n3: Node | None = None
    ctc_heads: dict = field(default_factory=dict)
    lattice: Node | None = None
    h_u: Node | None = None


def aencoder_forward(x, cfg: ModelConfig, pmu: PMUConfig, ps: ParamStore,
                     ctx: RunCtx | None = None) -> ForwardOutputs:
    """Subsampling, conformer block groups, and the variant's CTC taps."""
    ctx = ctx or RunCtx()
    e = cfg.encoder
    h = _subsample(x, cfg, ps, ctx)
    out = ForwardOutputs()

    if pmu.variant != "pca_ctc":
        for i in range(e.num_layers):
            h = conformer_block(h, ps, f"enc/l{i:02d}", e, ctx)
        out.h_n3 = h
        for name in head_names(pmu):
            out.ctc_heads[name], _ = ctc_head(h, ps, name)
        return out

    layer = 0
    for _ in range(pmu.n1):
        h = conformer_block(h, ps, f"enc/l{layer:02d}", e, ctx)
        layer += 1
    out.h_n1 = h
    logp, post = ctc_head(h, ps, "pasm_n1")
    out.ctc_heads["pasm_n1"] = logp
    if pmu.sc_enabled:
        h = self_condition(h, post, ps.get("sc/n1/w"), ps.get("sc/n1/b"))

    if pmu.n2 > 0:
        for _ in range(pmu.n2):
            h = conformer_block(h, ps, f"enc/l{layer:02d}", e, ctx)
            layer += 1
        out.h_n2 = h
        logp, post = ctc_head(h, ps, "bpe_n2")
        out.ctc_heads["bpe_n2"] = logp
        if pmu.sc_enabled:
            h = self_condition(h, post, ps.get("sc/n2/w"), ps.get("sc/n2/b"))

    for _ in range(pmu.n3):
        h = conformer_block(h, ps, f"enc/l{layer:02d}", e, ctx)
        layer += 1
    out.h_n3 = h
    out.ctc_heads["bpe_n3"], _ = ctc_head(h, ps, "bpe_n3")
    return out


def label_encoder_forward(y_prefix, ps: ParamStore, blank_id: int = 0) -> Node:
    """LSTM over the label prefix; row u is the state after consuming the
    first u labels, with the blank embedding as the start symbol."""
    embed = ps.get("lab/embed")
    V, dim = embed.value.shape
    ids = [blank_id] + [int(t) for t in y_prefix]
    for t in ids:
        if not (0 <= t < V):
            raise ContractViolation(f"label id {t} outside vocabulary of {V}")
    wx, wh, b = ps.get("lab/lstm/wx"), ps.get("lab/lstm/wh"), ps.get("lab/lstm/b")
    state = (Node(np.zeros((1, dim))), Node(np.zeros((1, dim))))
    rows = []
    for t in ids:
        x = ad.gather_rows(embed, [t])
        out, state = nn.lstm_step(x, state, wx, wh, b)
        rows.append(out)
    return ad.concat(rows, axis=0)


def joint(h_t_all, h_u_all, ps: ParamStore) -> Node:
    """log_softmax(W_out tanh(W_t h_t + W_u h_u + b)) on every (t, u) pair."""
    h_t_all, h_u_all = ad.as_node(h_t_all), ad.as_node(h_u_all)
    T = h_t_all.value.shape[0]
    U1 = h_u_all.value.shape[0]
    J = ps.get("joint/b").value.shape[0]
    at = ad.reshape(nn.linear(h_t_all, ps.get("joint/wt")), (T, 1, J))
    au = ad.reshape(nn.linear(h_u_all, ps.get("joint/wu"), ps.get("joint/b")),
                    (1, U1, J))
    z = ad.tanh(ad.add(at, au))
    logits = ad.add(ad.matmul(z, ps.get("joint/out_w")), ps.get("joint/out_b"))
    return ad.log_softmax(logits, axis=-1)


# ---------------------------------------------------------------------------
# objective

@dataclass
class LossBundle:
    l_trans: float = math.inf
    l_ctc_components: dict = field(default_factory=dict)
    l_total: float = math.inf
    node: Node | None = None
    skipped_samples: int = 0
    status: str = "ok"


def _ctc_term_value(pmu: PMUConfig, comps: dict) -> float:
    if pmu.variant == "baseline":
        return comps[pmu.ctc_units]
    if pmu.variant == "basic_pmu":
        return comps["pasm"]
    if pmu.variant == "para_ctc":
        return pmu.alpha * comps["pasm"] + (1.0 - pmu.alpha) * comps["bpe"]
    if pmu.n2 == 0:
        return pmu.beta * comps["pasm_n1"] + (1.0 - pmu.beta) * comps["bpe_n3"]
    return ((comps["pasm_n1"] + comps["bpe_n2"]) * (pmu.beta / 2.0)
            + comps["bpe_n3"] * (1.0 - pmu.beta))


def _ctc_term_node(pmu: PMUConfig, nodes: dict) -> Node:
    if pmu.variant == "baseline":
        return nodes[pmu.ctc_units]
    if pmu.variant == "basic_pmu":
        return nodes["pasm"]
    if pmu.variant == "para_ctc":
        return ad.add(ad.scale(nodes["pasm"], pmu.alpha),
                      ad.scale(nodes["bpe"], 1.0 - pmu.alpha))
    if pmu.n2 == 0:
        return ad.add(ad.scale(nodes["pasm_n1"], pmu.beta),
                      ad.scale(nodes["bpe_n3"], 1.0 - pmu.beta))
    return ad.add(ad.scale(ad.add(nodes["pasm_n1"], nodes["bpe_n2"]), pmu.beta / 2.0),
                  ad.scale(nodes["bpe_n3"], 1.0 - pmu.beta))


def combine_losses(pmu: PMUConfig, l_trans: float, comps: dict) -> float:
    """The variant's weighting formula on plain floats; the emitted total
    must match this recomputation exactly."""
    return pmu.lambda_trans * l_trans + pmu.lambda_ctc * _ctc_term_value(pmu, comps)


def _head_target(name: str, y_ctc_pasm, y_ctc_bpe, y_ctc_bpe_small):
    if name in ("pasm", "pasm_n1"):
        return y_ctc_pasm
    if name == "bpe_n2":
        return y_ctc_bpe_small
    return y_ctc_bpe


def assemble_objective(outputs: ForwardOutputs, y_ctc_pasm, y_ctc_bpe, y_trans,
                       pmu: PMUConfig, label_smoothing: float = 0.0,
                       y_ctc_bpe_small=None) -> LossBundle:
    """Weighted multi-task objective over the active heads.

    An unreachable CTC target marks the sample as skipped (infinite total,
    no gradient node) rather than aborting.  With label_smoothing > 0 each
    component carries a uniform-KL regularizer before weighting, so the
    logged components still recombine exactly into the total.
    """
    comp_nodes: dict[str, Node] = {}
    comps: dict[str, float] = {}
    for name in head_names(pmu):
        head = outputs.ctc_heads.get(name)
        if head is None:
            raise InputError(f"forward outputs carry no CTC head {name!r}")
        target = _head_target(name, y_ctc_pasm, y_ctc_bpe, y_ctc_bpe_small)
        if target is None:
            raise InputError(f"missing target for active head {name!r}")
        node, status = losses.ctc_loss_node(head, target)
        if status != "ok":
            return LossBundle(l_ctc_components={name: math.inf},
                              skipped_samples=1, status=f"{status}:{name}")
        if label_smoothing > 0.0:
            node = ad.add(node, ad.scale(losses.uniform_kl(head), label_smoothing))
        comp_nodes[name] = node
        comps[name] = float(node.value)

    if outputs.lattice is None:
        raise InputError("forward outputs carry no transducer lattice")
    if y_trans is None:
        raise InputError("missing transducer target")
    trans_node = losses.transducer_loss_node(outputs.lattice, y_trans)
    if label_smoothing > 0.0:
        trans_node = ad.add(trans_node,
                            ad.scale(losses.uniform_kl(outputs.lattice),
                                     label_smoothing))
    l_trans = float(trans_node.value)
    if not math.isfinite(l_trans):
        return LossBundle(l_trans=l_trans, l_ctc_components=comps,
                          skipped_samples=1, status="nonfinite:trans")

    total = ad.add(ad.scale(trans_node, pmu.lambda_trans),
                   ad.scale(_ctc_term_node(pmu, comp_nodes), pmu.lambda_ctc))
    return LossBundle(l_trans=l_trans, l_ctc_components=comps,
                      l_total=float(total.value), node=total)


# ---------------------------------------------------------------------------
# the assembled model

class ConformerTransducer:
    """Parameter store plus the forward graph for one configured variant."""

    def __init__(self, cfg: ModelConfig, pmu: PMUConfig, seed: int = 0):
        validate_configs(cfg, pmu)
        self.cfg = cfg
        self.pmu = pmu
        self.seed = seed
        self.params = build_params(cfg, pmu, seed)

    def encode(self, x, train: bool = False, step: int = 0) -> ForwardOutputs:
        ctx = RunCtx(train=train, seed=self.seed, step=step)
        return aencoder_forward(x, self.cfg, self.pmu, self.params, ctx)

    def forward(self, x, y_trans, train: bool = False, step: int = 0) -> ForwardOutputs:
        out = self.encode(x, train=train, step=step)
        out.h_u = label_encoder_forward(y_trans, self.params)
        out.lattice = joint(out.h_n3, out.h_u, self.params)
        return out

    def loss(self, x, y_trans, y_ctc_pasm=None, y_ctc_bpe=None,
             y_ctc_bpe_small=None, train: bool = False, step: int = 0,
             label_smoothing: float = 0.0) -> LossBundle:
        out = self.forward(x, y_trans, train=train, step=step)
        return assemble_objective(out, y_ctc_pasm, y_ctc_bpe, y_trans, self.pmu,
                                  label_smoothing=label_smoothing,
                                  y_ctc_bpe_small=y_ctc_bpe_small)

    def config_dict(self) -> dict:
        d = asdict(self.cfg)
        d["encoder"] = asdict(self.cfg.encoder)
        return {"model": d, "pmu": asdict(self.pmu)}


def configs_from_dict(d: dict) -> tuple[ModelConfig, PMUConfig]:
    """Inverse of ConformerTransducer.config_dict."""
    enc = EncoderConfig(**d["model"]["encoder"])
    rest = {k: v for k, v in d["model"].items() if k != "encoder"}
    return ModelConfig(encoder=enc, **rest), PMUConfig(**d["pmu"])
