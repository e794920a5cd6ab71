"""Mini-batch training loop, evaluation, and checkpoint serialization.

Determinism contract: a (config, data, seed) triple reproduces the run
bit for bit on one platform. All randomness flows from numpy PCG64
generators derived from the config seed (parameter init and dropout) or
from (seed, epoch) for batch shuffling; batch members are processed in a
fixed order.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import crf, network
from .corpus import TagSet, TaggedSequence
from .errors import ConfigError, DataFormatError, NumericsError
from .network import ModelParams, Vocabulary

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "trialparse-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    """Model and optimizer settings; defaults follow the tagger's reference
    setup (LSTM 128, attention 64, decoder 256, dropout 0.2, batch 64,
    10 epochs)."""

    d_e: int = 100
    d_h: int = 128
    d_a: int = 64
    d_z: int = 256
    d_m: int = 256
    dropout: float = 0.2
    batch_size: int = 64
    epochs: int = 10
    attention_variant: str = "multiply"
    learning_rate: float = 1e-3
    seed: int = 0
    freeze_embeddings: bool = False
    max_len: int = 256
    score_inputs: str = "embeddings"
    grad_clip: float = 5.0
    min_token_count: int = 1
    vectors_path: str | None = None

    def validate(self) -> "TrainConfig":
        for name in ("d_e", "d_h", "d_a", "d_z", "d_m", "batch_size", "epochs", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.attention_variant not in network.ATTENTION_VARIANTS:
            raise ConfigError(f"unknown attention variant {self.attention_variant!r}")
        if self.score_inputs not in network.SCORE_INPUTS:
            raise ConfigError(f"unknown score_inputs {self.score_inputs!r}")
        if self.attention_variant == "none" and self.d_z != 2 * self.d_h:
            raise ConfigError("attention_variant 'none' requires d_z == 2*d_h")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data).validate()


@dataclass
class Batch:
    """Index-encoded sequences padded to the batch max length."""

    token_ids: np.ndarray  # [B, L]
    tag_ids: np.ndarray  # [B, L]; padded positions hold 0 and are masked
    mask: np.ndarray  # [B, L] bool
    lengths: np.ndarray  # [B]
    sequences: list[TaggedSequence] = field(default_factory=list)


def make_batches(
    dataset,
    batch_size: int,
    vocab: Vocabulary,
    tag_set: TagSet,
    *,
    seed: int = 0,
    epoch: int = 0,
    shuffle: bool = False,
    max_len: int = 256,
) -> list[Batch]:
    """Chunk the dataset into padded batches with real-token masks.

    Shuffling permutes the dataset as a pure function of (seed, epoch);
    with shuffle=False batches follow input order. Sequences longer than
    max_len are truncated with a warning.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("cannot batch an empty dataset")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(dataset))
    if shuffle:
        np.random.default_rng([seed, epoch]).shuffle(order)
    batches: list[Batch] = []
    for lo in range(0, len(order), batch_size):
        chunk = [dataset[i] for i in order[lo : lo + batch_size]]
        lengths = []
        for seq in chunk:
            n = len(seq.criterion.tokens)
            if n > max_len:
                logger.warning(
                    "criterion %s truncated from %d to %d tokens",
                    seq.criterion.ref,
                    n,
                    max_len,
                )
                n = max_len
            lengths.append(n)
        width = max(lengths)
        token_ids = np.full((len(chunk), width), network.PAD_INDEX, dtype=np.intp)
        tag_ids = np.zeros((len(chunk), width), dtype=np.intp)
        mask = np.zeros((len(chunk), width), dtype=bool)
        for row, (seq, n) in enumerate(zip(chunk, lengths)):
            token_ids[row, :n] = [vocab.index(t.surface) for t in seq.criterion.tokens[:n]]
            tag_ids[row, :n] = [tag_set.tag_index(tag) for tag in seq.tags[:n]]
            mask[row, :n] = True
        batches.append(
            Batch(
                token_ids=token_ids,
                tag_ids=tag_ids,
                mask=mask,
                lengths=np.array(lengths),
                sequences=chunk,
            )
        )
    return batches


class Adam:
    """Adaptive-moment optimizer over the named parameter arrays."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        arrays = params.arrays()
        for name, g in grads.items():
            arr = arrays[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(arr)
                self.v[name] = np.zeros_like(arr)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / (1.0 - self.beta1**self.t)
            v_hat = self.v[name] / (1.0 - self.beta2**self.t)
            arr -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place when the global norm exceeds max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def _tag_types_in(dataset) -> set[str]:
    types: set[str] = set()
    for seq in dataset:
        for tag in seq.tags:
            if tag != "O":
                types.add(tag[2:])
    return types


def _example_loss_and_grads(params, config, ids, mask, tag_ids, rng, train):
    n = int(mask.sum())
    P, cache = network.forward_pass(
        params,
        ids,
        mask,
        config.attention_variant,
        score_inputs=config.score_inputs,
        dropout=config.dropout,
        rng=rng,
        train=train,
    )
    loss, d_p, d_t = crf.nll_loss(P[:n], params.transitions, tag_ids[:n])
    d_p_full = np.zeros_like(P)
    d_p_full[:n] = d_p
    grads = network.network_backward(cache, d_p_full)
    grads["transitions"] = d_t
    return loss, n, grads


def _accumulate(total: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if name in total:
            total[name] += g
        else:
            total[name] = g.copy()


def _evaluate(params: ModelParams, config: TrainConfig, vocab, tag_set, dataset) -> tuple[float, float]:
    correct = 0
    total_tokens = 0
    total_loss = 0.0
    unknown = _tag_types_in(dataset) - set(tag_set.entity_types)
    if unknown:
        raise ValueError(f"dataset uses entity types outside the model tag set: {sorted(unknown)}")
    for batch in make_batches(dataset, config.batch_size, vocab, tag_set, max_len=config.max_len):
        for row in range(batch.token_ids.shape[0]):
            n = int(batch.lengths[row])
            P, _ = network.forward_pass(
                params,
                batch.token_ids[row],
                batch.mask[row],
                config.attention_variant,
                score_inputs=config.score_inputs,
                train=False,
            )
            gold = batch.tag_ids[row, :n]
            loss, _, _ = crf.nll_loss(P[:n], params.transitions, gold)
            path, _ = crf.viterbi_decode(P[:n], params.transitions)
            correct += int(np.sum(np.asarray(path) == gold))
            total_tokens += n
            total_loss += loss
    return correct / total_tokens, total_loss / total_tokens


@dataclass
class Checkpoint:
    """Everything needed to reload and run a trained model."""

    config: TrainConfig
    vocab: Vocabulary
    tag_set: TagSet
    params: ModelParams
    version: int = CHECKPOINT_VERSION


def train(
    config: TrainConfig,
    train_set,
    dev_set,
    tag_set: TagSet | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Train the tagger; returns the best-dev-accuracy checkpoint and history.

    The tag inventory defaults to the sorted entity types observed across
    both splits; an explicitly passed tag_set must cover every observed
    type. History holds one record per epoch: mean per-token training
    loss, dev token accuracy, dev mean per-token loss.
    """
    config = config.validate()
    train_set = list(train_set)
    dev_set = list(dev_set)
    if not train_set or not dev_set:
        raise ValueError("train and dev sets must be non-empty")
    if tag_set is None:
        tag_set = TagSet(sorted(_tag_types_in(train_set) | _tag_types_in(dev_set)))
    for split_name, split in (("train", train_set), ("dev", dev_set)):
        unknown = _tag_types_in(split) - set(tag_set.entity_types)
        if unknown:
            raise ValueError(f"{split_name} split uses types outside the tag set: {sorted(unknown)}")

    init_seed, dropout_seed = np.random.SeedSequence(config.seed).spawn(2)
    vocab = Vocabulary.from_surfaces(
        (t.surface for seq in train_set for t in seq.criterion.tokens),
        min_count=config.min_token_count,
    )
    params = network.init_params(
        len(vocab),
        len(tag_set),
        d_e=config.d_e,
        d_h=config.d_h,
        d_a=config.d_a,
        d_z=config.d_z,
        d_m=config.d_m,
        variant=config.attention_variant,
        score_inputs=config.score_inputs,
        rng=np.random.default_rng(init_seed),
    )
    if config.vectors_path:
        hit = network.apply_pretrained_vectors(params, vocab, config.vectors_path)
        logger.info("initialized %d embedding rows from %s", hit, config.vectors_path)

    dropout_rng = np.random.default_rng(dropout_seed)
    optimizer = Adam(lr=config.learning_rate)
    history: list[dict] = []
    best_accuracy = -1.0
    best_params = params.copy()
    best_epoch = 0

    for epoch in range(1, config.epochs + 1):
        batches = make_batches(
            train_set,
            config.batch_size,
            vocab,
            tag_set,
            seed=config.seed,
            epoch=epoch,
            shuffle=True,
            max_len=config.max_len,
        )
        epoch_loss = 0.0
        epoch_tokens = 0
        for batch_index, batch in enumerate(batches):
            total_grads: dict[str, np.ndarray] = {}
            batch_loss = 0.0
            batch_tokens = 0
            for row in range(batch.token_ids.shape[0]):
                loss, n, grads = _example_loss_and_grads(
                    params,
                    config,
                    batch.token_ids[row],
                    batch.mask[row],
                    batch.tag_ids[row],
                    dropout_rng,
                    train=True,
                )
                if not np.isfinite(loss):
                    raise NumericsError(
                        f"non-finite loss at epoch {epoch}, batch {batch_index}"
                    )
                batch_loss += loss
                batch_tokens += n
                _accumulate(total_grads, grads)
            for g in total_grads.values():
                g /= batch_tokens
            if config.freeze_embeddings:
                total_grads.pop("embeddings", None)
            clip_gradients(total_grads, config.grad_clip)
            optimizer.step(params, total_grads)
            epoch_loss += batch_loss
            epoch_tokens += batch_tokens
        dev_accuracy, dev_loss = _evaluate(params, config, vocab, tag_set, dev_set)
        history.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / epoch_tokens,
                "dev_accuracy": dev_accuracy,
                "dev_loss": dev_loss,
            }
        )
        logger.info(
            "epoch %d: train_loss=%.4f dev_accuracy=%.4f dev_loss=%.4f",
            epoch,
            history[-1]["train_loss"],
            dev_accuracy,
            dev_loss,
        )
        if dev_accuracy > best_accuracy:
            best_accuracy = dev_accuracy
            best_params = params.copy()
            best_epoch = epoch

    logger.info("best epoch %d with dev accuracy %.4f", best_epoch, best_accuracy)
    checkpoint = Checkpoint(config=config, vocab=vocab, tag_set=tag_set, params=best_params)
    return checkpoint, history


def evaluate_model(checkpoint: Checkpoint, dataset) -> tuple[float, float]:
    """Token accuracy (Viterbi tags vs gold) and mean per-token NLL.

    Accuracy is token-level over real (unmasked) tokens; dropout is off.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    return _evaluate(checkpoint.params, checkpoint.config, checkpoint.vocab, checkpoint.tag_set, dataset)


# --- checkpoint file format -------------------------------------------------


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    """Write a single file: one JSON header line, then raw little-endian
    float64 array sections in manifest order."""
    arrays = checkpoint.params.arrays()
    manifest = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": checkpoint.version,
        "config": asdict(checkpoint.config),
        "vocabulary": checkpoint.vocab.index_to_token,
        "entity_types": checkpoint.tag_set.entity_types,
        "arrays": manifest,
    }
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header, ensure_ascii=False, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint; arrays come back bit-identical to what was saved."""
    path = Path(path)
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise DataFormatError("no header line found", path=str(path))
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"unreadable header ({exc})", path=str(path)) from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise DataFormatError("not a checkpoint file", path=str(path))
    if header.get("version") != CHECKPOINT_VERSION:
        raise DataFormatError(
            f"unsupported checkpoint version {header.get('version')!r} "
            f"(expected {CHECKPOINT_VERSION})",
            path=str(path),
        )
    config = TrainConfig.from_dict(header["config"])
    vocab = Vocabulary(index_to_token=list(header["vocabulary"]))
    tag_set = TagSet(header["entity_types"])
    binary = raw[newline + 1 :]
    loaded: dict[str, np.ndarray] = {}
    end = 0
    for entry in header["arrays"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(binary):
            raise DataFormatError(
                f"truncated in array section {name!r} at byte offset {offset}",
                path=str(path),
            )
        loaded[name] = (
            np.frombuffer(binary, dtype="<f8", count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        end = max(end, offset + nbytes)
    if end != len(binary):
        raise DataFormatError(
            f"{len(binary) - end} trailing bytes beyond the array manifest", path=str(path)
        )

    def take(name: str) -> np.ndarray:
        if name not in loaded:
            raise DataFormatError(f"missing array section {name!r}", path=str(path))
        return loaded.pop(name)

    params = ModelParams(
        embeddings=take("embeddings"),
        fwd=network.LSTMBlock(take("fwd_w_in"), take("fwd_w_rec"), take("fwd_bias")),
        bwd=network.LSTMBlock(take("bwd_w_in"), take("bwd_w_rec"), take("bwd_bias")),
        attn_out_w=loaded.pop("attn_out_w", None),
        attn_out_b=loaded.pop("attn_out_b", None),
        dec_hidden_w=take("dec_hidden_w"),
        dec_hidden_b=take("dec_hidden_b"),
        dec_out_w=take("dec_out_w"),
        dec_out_b=take("dec_out_b"),
        transitions=take("transitions"),
        attn_bilinear=loaded.pop("attn_bilinear", None),
        attn_w1=loaded.pop("attn_w1", None),
        attn_b1=loaded.pop("attn_b1", None),
        attn_w2=loaded.pop("attn_w2", None),
        attn_b2=loaded.pop("attn_b2", None),
        attn_v=loaded.pop("attn_v", None),
    )
    if loaded:
        raise DataFormatError(f"unexpected array sections: {sorted(loaded)}", path=str(path))
    if len(vocab) != params.embeddings.shape[0]:
        raise DataFormatError("vocabulary size does not match the embedding matrix", path=str(path))
    if len(tag_set) != params.n_tags:
        raise DataFormatError("tag set size does not match the decoder output", path=str(path))
    return Checkpoint(config=config, vocab=vocab, tag_set=tag_set, params=params)
