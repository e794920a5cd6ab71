"""Neural encoder: embeddings, BiLSTM, attention, and the emission decoder.

The model is small and static, so gradients are explicit per-layer
backward functions rather than an autodiff tape; every backward pass is
checked against central finite differences in the test suite. All math is
float64 numpy. Inference is deterministic; dropout only runs when a
training flag and generator are supplied.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import crf
from .errors import ConfigError, DataFormatError, NumericsError
from .numcore import NEG_INF, require_finite

ATTENTION_VARIANTS = ("dot", "multiply", "add", "none")
SCORE_INPUTS = ("embeddings", "hidden")

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1


@dataclass
class Vocabulary:
    """Lowercased surface-to-index map with reserved <pad>=0 and <unk>=1."""

    index_to_token: list[str]
    token_to_index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if self.index_to_token[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary must start with <pad>, <unk>")
        if not self.token_to_index:
            self.token_to_index = {t: i for i, t in enumerate(self.index_to_token)}

    def __len__(self) -> int:
        return len(self.index_to_token)

    def index(self, surface: str) -> int:
        return self.token_to_index.get(surface.lower(), UNK_INDEX)

    @classmethod
    def from_surfaces(cls, surfaces, min_count: int = 1) -> "Vocabulary":
        """Build from an iterable of token surfaces, in first-seen order."""
        counts: dict[str, int] = {}
        order: list[str] = []
        for s in surfaces:
            key = s.lower()
            if key not in counts:
                order.append(key)
            counts[key] = counts.get(key, 0) + 1
        kept = [t for t in order if counts[t] >= min_count and t not in (PAD_TOKEN, UNK_TOKEN)]
        return cls(index_to_token=[PAD_TOKEN, UNK_TOKEN] + kept)


@dataclass
class LSTMBlock:
    """One LSTM direction. Gate rows are stacked input, forget, candidate, output."""

    w_in: np.ndarray  # [4*d_h, d_in]
    w_rec: np.ndarray  # [4*d_h, d_h]
    bias: np.ndarray  # [4*d_h]

    @property
    def d_h(self) -> int:
        return self.w_rec.shape[1]


@dataclass
class ModelParams:
    """Every trainable array of the tagger, transitions included.

    Attention arrays are present only for the variant they belong to:
    `attn_bilinear` for multiply, the w1/b1/w2/b2/v block for add, and
    the output projection for every variant except none.
    """

    embeddings: np.ndarray  # [V, d_e]
    fwd: LSTMBlock
    bwd: LSTMBlock
    attn_out_w: np.ndarray | None  # [d_z, 4*d_h]
    attn_out_b: np.ndarray | None  # [d_z]
    dec_hidden_w: np.ndarray  # [d_m, d_z]
    dec_hidden_b: np.ndarray  # [d_m]
    dec_out_w: np.ndarray  # [K, d_m]
    dec_out_b: np.ndarray  # [K]
    transitions: np.ndarray  # [(K+2) x (K+2)], START/STOP rows per crf module
    attn_bilinear: np.ndarray | None = None  # [d_s, d_s]
    attn_w1: np.ndarray | None = None  # [d_a, 2*d_s]
    attn_b1: np.ndarray | None = None  # [d_a]
    attn_w2: np.ndarray | None = None  # [d_a, d_a]
    attn_b2: np.ndarray | None = None  # [d_a]
    attn_v: np.ndarray | None = None  # [d_a]

    @property
    def d_e(self) -> int:
        return self.embeddings.shape[1]

    @property
    def d_h(self) -> int:
        return self.fwd.d_h

    @property
    def n_tags(self) -> int:
        return self.dec_out_w.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        """Present arrays in a fixed serialization/update order."""
        named = [
            ("embeddings", self.embeddings),
            ("fwd_w_in", self.fwd.w_in),
            ("fwd_w_rec", self.fwd.w_rec),
            ("fwd_bias", self.fwd.bias),
            ("bwd_w_in", self.bwd.w_in),
            ("bwd_w_rec", self.bwd.w_rec),
            ("bwd_bias", self.bwd.bias),
            ("attn_bilinear", self.attn_bilinear),
            ("attn_w1", self.attn_w1),
            ("attn_b1", self.attn_b1),
            ("attn_w2", self.attn_w2),
            ("attn_b2", self.attn_b2),
            ("attn_v", self.attn_v),
            ("attn_out_w", self.attn_out_w),
            ("attn_out_b", self.attn_out_b),
            ("dec_hidden_w", self.dec_hidden_w),
            ("dec_hidden_b", self.dec_hidden_b),
            ("dec_out_w", self.dec_out_w),
            ("dec_out_b", self.dec_out_b),
            ("transitions", self.transitions),
        ]
        return {name: arr for name, arr in named if arr is not None}

    def set_array(self, name: str, value: np.ndarray) -> None:
        mapping = {
            "fwd_w_in": ("fwd", "w_in"),
            "fwd_w_rec": ("fwd", "w_rec"),
            "fwd_bias": ("fwd", "bias"),
            "bwd_w_in": ("bwd", "w_in"),
            "bwd_w_rec": ("bwd", "w_rec"),
            "bwd_bias": ("bwd", "bias"),
        }
        if name in mapping:
            block, attr = mapping[name]
            setattr(getattr(self, block), attr, value)
        elif hasattr(self, name):
            setattr(self, name, value)
        else:
            raise KeyError(name)

    def copy(self) -> "ModelParams":
        out = ModelParams(
            embeddings=self.embeddings.copy(),
            fwd=LSTMBlock(self.fwd.w_in.copy(), self.fwd.w_rec.copy(), self.fwd.bias.copy()),
            bwd=LSTMBlock(self.bwd.w_in.copy(), self.bwd.w_rec.copy(), self.bwd.bias.copy()),
            attn_out_w=None if self.attn_out_w is None else self.attn_out_w.copy(),
            attn_out_b=None if self.attn_out_b is None else self.attn_out_b.copy(),
            dec_hidden_w=self.dec_hidden_w.copy(),
            dec_hidden_b=self.dec_hidden_b.copy(),
            dec_out_w=self.dec_out_w.copy(),
            dec_out_b=self.dec_out_b.copy(),
            transitions=self.transitions.copy(),
        )
        for name in ("attn_bilinear", "attn_w1", "attn_b1", "attn_w2", "attn_b2", "attn_v"):
            arr = getattr(self, name)
            if arr is not None:
                setattr(out, name, arr.copy())
        return out


@dataclass
class EmbeddedSequence:
    """Word vectors [n, d_e] plus a real-vs-pad mask; pad rows are zero."""

    vectors: np.ndarray
    mask: np.ndarray  # bool [n]


@dataclass
class ContextEncoding:
    """BiLSTM output H [n, 2*d_h]; row i = [forward state ; backward state]."""

    hidden: np.ndarray


@dataclass
class AttentionOutput:
    """Attention weights A [n, n], context vectors C, and layer output Z."""

    weights: np.ndarray
    contexts: np.ndarray
    outputs: np.ndarray


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (1, shape[0])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _init_lstm_block(rng: np.random.Generator, d_in: int, d_h: int) -> LSTMBlock:
    bias = np.zeros(4 * d_h)
    bias[d_h : 2 * d_h] = 1.0  # forget-gate bias starts open
    return LSTMBlock(
        w_in=_glorot(rng, (4 * d_h, d_in)),
        w_rec=_glorot(rng, (4 * d_h, d_h)),
        bias=bias,
    )


def init_params(
    vocab_size: int,
    n_tags: int,
    *,
    d_e: int = 100,
    d_h: int = 128,
    d_a: int = 64,
    d_z: int = 256,
    d_m: int = 256,
    variant: str = "multiply",
    score_inputs: str = "embeddings",
    rng: np.random.Generator,
) -> ModelParams:
    """Fresh Glorot-uniform parameters for the configured architecture.

    Biases start at zero except the forget gate (1.0); the <pad> embedding
    row is zero and stays zero through training.
    """
    if variant not in ATTENTION_VARIANTS:
        raise ConfigError(f"unknown attention variant {variant!r}")
    if score_inputs not in SCORE_INPUTS:
        raise ConfigError(f"unknown score_inputs {score_inputs!r}")
    if variant == "none" and d_z != 2 * d_h:
        raise ConfigError("variant 'none' feeds H to the decoder, so d_z must equal 2*d_h")
    emb = _glorot(rng, (vocab_size, d_e))
    emb[PAD_INDEX] = 0.0
    params = ModelParams(
        embeddings=emb,
        fwd=_init_lstm_block(rng, d_e, d_h),
        bwd=_init_lstm_block(rng, d_e, d_h),
        attn_out_w=None if variant == "none" else _glorot(rng, (d_z, 4 * d_h)),
        attn_out_b=None if variant == "none" else np.zeros(d_z),
        dec_hidden_w=_glorot(rng, (d_m, d_z)),
        dec_hidden_b=np.zeros(d_m),
        dec_out_w=_glorot(rng, (n_tags, d_m)),
        dec_out_b=np.zeros(n_tags),
        transitions=crf.init_transitions(n_tags, rng),
    )
    d_s = d_e if score_inputs == "embeddings" else 2 * d_h
    if variant == "multiply":
        params.attn_bilinear = _glorot(rng, (d_s, d_s))
    elif variant == "add":
        params.attn_w1 = _glorot(rng, (d_a, 2 * d_s))
        params.attn_b1 = np.zeros(d_a)
        params.attn_w2 = _glorot(rng, (d_a, d_a))
        params.attn_b2 = np.zeros(d_a)
        params.attn_v = _glorot(rng, (d_a,))
    return params


# --- embedding ------------------------------------------------------------


def embed(tokens, vocab: Vocabulary, embeddings: np.ndarray) -> EmbeddedSequence:
    """Look up embedding rows for tokens; OOV surfaces map to the <unk> row."""
    if not tokens:
        raise ValueError("cannot embed an empty token sequence")
    ids = np.array([vocab.index(t.surface) for t in tokens], dtype=np.intp)
    return EmbeddedSequence(vectors=embeddings[ids], mask=np.ones(len(ids), dtype=bool))


# --- LSTM -----------------------------------------------------------------


def _cell_forward(block: LSTMBlock, x_t, h_prev, c_prev):
    d_h = block.d_h
    pre = block.w_in @ x_t + block.w_rec @ h_prev + block.bias
    i = _sigmoid(pre[:d_h])
    f = _sigmoid(pre[d_h : 2 * d_h])
    g = np.tanh(pre[2 * d_h : 3 * d_h])
    o = _sigmoid(pre[3 * d_h :])
    c_t = f * c_prev + i * g
    tanh_c = np.tanh(c_t)
    h_t = o * tanh_c
    return h_t, c_t, (i, f, g, o, tanh_c)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_cell_step(x_t, h_prev, c_prev, block: LSTMBlock):
    """One LSTM step: gate activations, cell update, hidden output."""
    h_t, c_t, _ = _cell_forward(block, np.asarray(x_t, float), np.asarray(h_prev, float), np.asarray(c_prev, float))
    require_finite("lstm_cell_step output", h_t)
    require_finite("lstm_cell_step cell", c_t)
    return h_t, c_t


def lstm_cell_backward(block: LSTMBlock, cache: dict, dh, dc):
    """Gradients of one cell step w.r.t. inputs and the parameter block.

    cache holds x, h_prev, c_prev and the gate values from _cell_forward.
    Returns (dx, dh_prev, dc_prev, dw_in, dw_rec, dbias).
    """
    i, f, g, o, tanh_c = cache["gates"]
    dh = np.asarray(dh, float)
    dc_total = np.asarray(dc, float) + dh * o * (1.0 - tanh_c**2)
    d_o = dh * tanh_c
    d_i = dc_total * g
    d_f = dc_total * cache["c_prev"]
    d_g = dc_total * i
    dpre = np.concatenate(
        [
            d_i * i * (1.0 - i),
            d_f * f * (1.0 - f),
            d_g * (1.0 - g**2),
            d_o * o * (1.0 - o),
        ]
    )
    dw_in = np.outer(dpre, cache["x"])
    dw_rec = np.outer(dpre, cache["h_prev"])
    dx = block.w_in.T @ dpre
    dh_prev = block.w_rec.T @ dpre
    dc_prev = dc_total * f
    return dx, dh_prev, dc_prev, dw_in, dw_rec, dpre


def _lstm_scan(block: LSTMBlock, X: np.ndarray, mask: np.ndarray, reverse: bool):
    """Scan one direction over the sequence; padded steps output zero rows
    and leave the state untouched. Returns (H_dir [n, d_h], step caches)."""
    n = X.shape[0]
    d_h = block.d_h
    H = np.zeros((n, d_h))
    h = np.zeros(d_h)
    c = np.zeros(d_h)
    order = range(n - 1, -1, -1) if reverse else range(n)
    steps = []
    # One gemm for all input projections instead of a matvec per step.
    XW = X @ block.w_in.T
    for t in order:
        if not mask[t]:
            continue
        pre = XW[t] + block.w_rec @ h + block.bias
        i = _sigmoid(pre[:d_h])
        f = _sigmoid(pre[d_h : 2 * d_h])
        g = np.tanh(pre[2 * d_h : 3 * d_h])
        o = _sigmoid(pre[3 * d_h :])
        c_t = f * c + i * g
        tanh_c = np.tanh(c_t)
        h_t = o * tanh_c
        steps.append({"t": t, "x": X[t], "h_prev": h, "c_prev": c, "gates": (i, f, g, o, tanh_c)})
        h, c = h_t, c_t
        H[t] = h_t
    if not np.all(np.isfinite(H)):
        raise NumericsError("non-finite LSTM state (exploding values)")
    return H, steps


def _lstm_scan_backward(block: LSTMBlock, steps, dH_dir: np.ndarray, d_in: int):
    """BPTT through one direction. Returns (dX contribution, block grads)."""
    d_h = block.d_h
    dX = np.zeros((dH_dir.shape[0], d_in))
    dw_in = np.zeros_like(block.w_in)
    dw_rec = np.zeros_like(block.w_rec)
    dbias = np.zeros_like(block.bias)
    dh_carry = np.zeros(d_h)
    dc_carry = np.zeros(d_h)
    for step in reversed(steps):
        t = step["t"]
        dx, dh_carry, dc_carry, dwi, dwr, dpre = lstm_cell_backward(
            block, step, dH_dir[t] + dh_carry, dc_carry
        )
        dX[t] += dx
        dw_in += dwi
        dw_rec += dwr
        dbias += dpre
    return dX, dw_in, dw_rec, dbias


def bilstm_forward(X: EmbeddedSequence, params: ModelParams) -> ContextEncoding:
    """Both direction scans from zero states, concatenated per position."""
    H_f, _ = _lstm_scan(params.fwd, X.vectors, X.mask, reverse=False)
    H_b, _ = _lstm_scan(params.bwd, X.vectors, X.mask, reverse=True)
    return ContextEncoding(hidden=np.concatenate([H_f, H_b], axis=1))


# --- attention ------------------------------------------------------------


def attention_scores(
    rep, variant: str, params: ModelParams, mask: np.ndarray | None = None
) -> np.ndarray:
    """Raw pairwise alignment scores over the word representations.

    dot: r_i . r_j; multiply: r_i^T W r_j; add: v . tanh(W2 tanh(W1 [r_i;r_j]
    + b1) + b2). Masked columns are set to a -inf surrogate so the softmax
    assigns them exactly zero mass.
    """
    R = rep.vectors if isinstance(rep, EmbeddedSequence) else np.asarray(rep, float)
    if mask is None and isinstance(rep, EmbeddedSequence):
        mask = rep.mask
    if variant == "dot":
        S = R @ R.T
    elif variant == "multiply":
        if params.attn_bilinear is None:
            raise ConfigError("multiply attention requires the bilinear parameter")
        S = R @ params.attn_bilinear @ R.T
    elif variant == "add":
        if params.attn_w1 is None:
            raise ConfigError("add attention requires the MLP parameter block")
        S, _, _ = _add_scores(R, params)
    else:
        raise ConfigError(f"variant {variant!r} has no alignment function")
    if mask is not None:
        S = np.where(np.asarray(mask, bool)[None, :], S, NEG_INF)
    return S


def _add_scores(R: np.ndarray, params: ModelParams):
    # W1 [x_i; x_j] splits into a query half and a key half; broadcasting
    # the two [n, d_a] projections avoids building [n, n, 2*d_s].
    d_s = R.shape[1]
    left = R @ params.attn_w1[:, :d_s].T  # [n, d_a]
    right = R @ params.attn_w1[:, d_s:].T  # [n, d_a]
    t1 = np.tanh(left[:, None, :] + right[None, :, :] + params.attn_b1)
    t2 = np.tanh(t1 @ params.attn_w2.T + params.attn_b2)
    return t2 @ params.attn_v, t1, t2


def _masked_row_softmax(S: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if not np.any(mask):
        raise ValueError("attention over a fully masked sequence")
    shifted = np.exp(S - S.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def attention_layer(H, raw_scores: np.ndarray, mask: np.ndarray, params: ModelParams) -> AttentionOutput:
    """Normalize scores, mix BiLSTM outputs, and project through tanh.

    A = row softmax over unmasked columns; c_i = sum_j A[i,j] h_j;
    z_i = tanh(W [c_i ; h_i] + b). Rows at padded positions are zeroed.
    """
    Hm = H.hidden if isinstance(H, ContextEncoding) else np.asarray(H, float)
    mask = np.asarray(mask, bool)
    S = np.where(mask[None, :], raw_scores, NEG_INF)
    A = _masked_row_softmax(S, mask)
    C = A @ Hm
    CH = np.concatenate([C, Hm], axis=1)
    Z = np.tanh(CH @ params.attn_out_w.T + params.attn_out_b)
    A = A * mask[:, None]
    C = C * mask[:, None]
    Z = Z * mask[:, None]
    return AttentionOutput(weights=A, contexts=C, outputs=Z)


# --- decoder --------------------------------------------------------------


def emissions(z, params: ModelParams) -> np.ndarray:
    """Tag scores P [n, K]: linear output over a tanh hidden layer, no softmax."""
    Z = z.outputs if isinstance(z, AttentionOutput) else np.asarray(z, float)
    M = np.tanh(Z @ params.dec_hidden_w.T + params.dec_hidden_b)
    return require_finite("emission scores", M @ params.dec_out_w.T + params.dec_out_b)


# --- full forward / backward ----------------------------------------------


@dataclass
class ForwardCache:
    """Activations saved by forward_pass for the explicit backward pass."""

    params: ModelParams
    variant: str
    score_inputs: str
    token_ids: np.ndarray
    mask: np.ndarray
    X: np.ndarray  # post-dropout embeddings, the network input
    emb_drop: np.ndarray | None
    fwd_steps: list
    bwd_steps: list
    H: np.ndarray
    A: np.ndarray | None
    C: np.ndarray | None
    CH: np.ndarray | None
    add_t1: np.ndarray | None
    add_t2: np.ndarray | None
    Z: np.ndarray  # decoder input, post-dropout
    z_drop: np.ndarray | None
    Z_pre_drop: np.ndarray
    M: np.ndarray
    P: np.ndarray


def forward_pass(
    params: ModelParams,
    token_ids: np.ndarray,
    mask: np.ndarray | None,
    variant: str,
    *,
    score_inputs: str = "embeddings",
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the whole encoder on one (possibly padded) sequence.

    Returns the emission matrix P [n, K] (padded rows are meaningless and
    must be sliced off before CRF scoring) plus the cache for
    network_backward. Dropout fires only when train=True, dropout > 0 and
    an rng is given.
    """
    token_ids = np.asarray(token_ids, dtype=np.intp)
    mask = np.ones(len(token_ids), bool) if mask is None else np.asarray(mask, bool)
    if variant not in ATTENTION_VARIANTS:
        raise ConfigError(f"unknown attention variant {variant!r}")
    use_dropout = train and dropout > 0.0
    if use_dropout and rng is None:
        raise ConfigError("training-mode dropout needs a random generator")

    X = params.embeddings[token_ids] * mask[:, None]
    emb_drop = None
    if use_dropout:
        emb_drop = (rng.random(X.shape) >= dropout) / (1.0 - dropout)
        X = X * emb_drop

    H_f, fwd_steps = _lstm_scan(params.fwd, X, mask, reverse=False)
    H_b, bwd_steps = _lstm_scan(params.bwd, X, mask, reverse=True)
    H = np.concatenate([H_f, H_b], axis=1)

    A = C = CH = add_t1 = add_t2 = None
    if variant == "none":
        Z_pre = H
    else:
        R = X if score_inputs == "embeddings" else H
        if variant == "dot":
            S = R @ R.T
        elif variant == "multiply":
            S = R @ params.attn_bilinear @ R.T
        else:
            S, add_t1, add_t2 = _add_scores(R, params)
        S = np.where(mask[None, :], S, NEG_INF)
        A = _masked_row_softmax(S, mask)
        C = A @ H
        CH = np.concatenate([C, H], axis=1)
        Z_pre = np.tanh(CH @ params.attn_out_w.T + params.attn_out_b) * mask[:, None]

    Z = Z_pre
    z_drop = None
    if use_dropout:
        z_drop = (rng.random(Z.shape) >= dropout) / (1.0 - dropout)
        Z = Z * z_drop

    M = np.tanh(Z @ params.dec_hidden_w.T + params.dec_hidden_b)
    P = M @ params.dec_out_w.T + params.dec_out_b
    require_finite("emission scores", P[mask])

    cache = ForwardCache(
        params=params,
        variant=variant,
        score_inputs=score_inputs,
        token_ids=token_ids,
        mask=mask,
        X=X,
        emb_drop=emb_drop,
        fwd_steps=fwd_steps,
        bwd_steps=bwd_steps,
        H=H,
        A=A,
        C=C,
        CH=CH,
        add_t1=add_t1,
        add_t2=add_t2,
        Z=Z,
        z_drop=z_drop,
        Z_pre_drop=Z_pre,
        M=M,
        P=P,
    )
    return P, cache


def _attention_scores_backward(cache: ForwardCache, dS: np.ndarray, R: np.ndarray):
    """Backprop raw-score gradients into R and the variant parameters."""
    params = cache.params
    grads: dict[str, np.ndarray] = {}
    if cache.variant == "dot":
        dR = dS @ R + dS.T @ R
    elif cache.variant == "multiply":
        W = params.attn_bilinear
        grads["attn_bilinear"] = R.T @ dS @ R
        dR = dS @ R @ W.T + dS.T @ R @ W
    else:
        t1, t2 = cache.add_t1, cache.add_t2
        d_s = R.shape[1]
        dt2 = dS[:, :, None] * params.attn_v
        dpre2 = dt2 * (1.0 - t2**2)
        grads["attn_v"] = np.einsum("ij,ija->a", dS, t2)
        grads["attn_w2"] = np.einsum("ija,ijb->ab", dpre2, t1)
        grads["attn_b2"] = dpre2.sum(axis=(0, 1))
        dt1 = dpre2 @ params.attn_w2
        dpre1 = dt1 * (1.0 - t1**2)
        grads["attn_w1"] = np.concatenate(
            [np.einsum("ija,ib->ab", dpre1, R), np.einsum("ija,jb->ab", dpre1, R)], axis=1
        )
        grads["attn_b1"] = dpre1.sum(axis=(0, 1))
        w1_left = params.attn_w1[:, :d_s]
        w1_right = params.attn_w1[:, d_s:]
        dR = np.einsum("ija,ab->ib", dpre1, w1_left) + np.einsum("ija,ab->jb", dpre1, w1_right)
    return dR, grads


def network_backward(cache: ForwardCache, dP: np.ndarray) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients for every parameter array except transitions.

    dP must have the forward pass's full (padded) shape with zero rows at
    padded positions. The returned dict is keyed like ModelParams.arrays();
    the embedding gradient keeps its <pad> row at zero.
    """
    params = cache.params
    mask = cache.mask
    dP = np.asarray(dP, float)
    if dP.shape != cache.P.shape:
        raise ValueError(f"dP shape {dP.shape} does not match emissions {cache.P.shape}")
    grads: dict[str, np.ndarray] = {}

    # Decoder.
    dM = dP @ params.dec_out_w
    grads["dec_out_w"] = dP.T @ cache.M
    grads["dec_out_b"] = dP.sum(axis=0)
    dpre_m = dM * (1.0 - cache.M**2)
    grads["dec_hidden_w"] = dpre_m.T @ cache.Z
    grads["dec_hidden_b"] = dpre_m.sum(axis=0)
    dZ = dpre_m @ params.dec_hidden_w
    if cache.z_drop is not None:
        dZ = dZ * cache.z_drop

    dX = np.zeros_like(cache.X)
    if cache.variant == "none":
        dH = dZ
    else:
        dZ = dZ * mask[:, None]
        dpre_z = dZ * (1.0 - cache.Z_pre_drop**2)
        grads["attn_out_w"] = dpre_z.T @ cache.CH
        grads["attn_out_b"] = dpre_z.sum(axis=0)
        dCH = dpre_z @ params.attn_out_w
        two_dh = cache.H.shape[1]
        dC = dCH[:, :two_dh] * mask[:, None]
        dH = dCH[:, two_dh:]
        dA = dC @ cache.H.T
        dH = dH + cache.A.T @ dC
        # Softmax backward per row; A is zero on masked columns, so dS is too.
        dS = cache.A * (dA - np.sum(dA * cache.A, axis=1, keepdims=True))
        R = cache.X if cache.score_inputs == "embeddings" else cache.H
        dR, attn_grads = _attention_scores_backward(cache, dS, R)
        grads.update(attn_grads)
        if cache.score_inputs == "embeddings":
            dX += dR
        else:
            dH = dH + dR

    # BiLSTM (both halves read dH on their own columns).
    d_h = params.d_h
    dX_f, dwi_f, dwr_f, db_f = _lstm_scan_backward(params.fwd, cache.fwd_steps, dH[:, :d_h], params.d_e)
    dX_b, dwi_b, dwr_b, db_b = _lstm_scan_backward(params.bwd, cache.bwd_steps, dH[:, d_h:], params.d_e)
    grads["fwd_w_in"], grads["fwd_w_rec"], grads["fwd_bias"] = dwi_f, dwr_f, db_f
    grads["bwd_w_in"], grads["bwd_w_rec"], grads["bwd_bias"] = dwi_b, dwr_b, db_b
    dX += dX_f + dX_b

    if cache.emb_drop is not None:
        dX = dX * cache.emb_drop
    dX = dX * mask[:, None]
    dE = np.zeros_like(params.embeddings)
    np.add.at(dE, cache.token_ids, dX)
    dE[PAD_INDEX] = 0.0
    grads["embeddings"] = dE

    for name, g in grads.items():
        require_finite(f"gradient of {name}", g)
    return grads


# --- pre-trained vectors ----------------------------------------------------


def load_word_vectors(path) -> tuple[list[str], np.ndarray]:
    """Read the common text vector format: header "V d", then token + floats."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataFormatError("expected header 'count dimension'", path=str(path), line=1)
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise DataFormatError("non-integer header fields", path=str(path), line=1) from exc
        tokens: list[str] = []
        rows = np.zeros((count, dim))
        for lineno, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            parts = raw.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise DataFormatError(
                    f"expected a token and {dim} values, got {len(parts)} fields",
                    path=str(path),
                    line=lineno,
                )
            if len(tokens) >= count:
                raise DataFormatError("more vectors than the header promised", path=str(path), line=lineno)
            tokens.append(parts[0])
            rows[len(tokens) - 1] = [float(v) for v in parts[1:]]
        if len(tokens) != count:
            raise DataFormatError(f"header promised {count} vectors, found {len(tokens)}", path=str(path))
    return tokens, rows


def apply_pretrained_vectors(params: ModelParams, vocab: Vocabulary, path) -> int:
    """Overwrite embedding rows for vocabulary tokens found in the vector file.

    Returns the number of rows initialized. Dimensions must match d_e;
    <pad> stays zero even if the file carries a vector for it.
    """
    tokens, rows = load_word_vectors(path)
    if rows.shape[1] != params.d_e:
        raise ConfigError(f"vector dimension {rows.shape[1]} does not match d_e={params.d_e}")
    hit = 0
    for token, row in zip(tokens, rows):
        idx = vocab.token_to_index.get(token.lower())
        if idx is not None and idx != PAD_INDEX:
            params.embeddings[idx] = row
            hit += 1
    return hit
