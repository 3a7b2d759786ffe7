"""Pointer Attentive Reader network: encoders, pointer attention and losses."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .clozegen import ClozeInstance
from .corpus import TokenKind, Vocabulary
from .exceptions import ContractViolation, InstanceSkip
from .tensor import GruCellParams, Tensor

KL_DIRECTIONS = ("target_pred", "pred_target")
# smoothing of the target distribution for the reverse KL direction
REVERSE_KL_SMOOTHING = 1e-6


@dataclass(frozen=True)
class ParConfig:
    embedding_dim: int = 32
    hidden_dim: int = 32
    attention_dim: Optional[int] = None
    num_hops: int = 1
    dropout_rate: float = 0.2
    kl_weight: float = 1.0
    kl_direction: str = "target_pred"

    def __post_init__(self):
        for name in ("embedding_dim", "hidden_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.attention_dim is not None and self.attention_dim < 1:
            raise ValueError("attention_dim must be >= 1")
        if self.num_hops not in (1, 2):
            raise ValueError("num_hops must be 1 or 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be non-negative")
        if self.kl_direction not in KL_DIRECTIONS:
            raise ValueError(f"kl_direction must be one of {KL_DIRECTIONS}")

    @property
    def attn_dim(self) -> int:
        return self.attention_dim if self.attention_dim is not None else 2 * self.hidden_dim

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class ParParams:
    """All learnable tensors, addressable by name."""

    embedding: Tensor
    doc_fwd: GruCellParams
    doc_bwd: GruCellParams
    query_fwd: GruCellParams
    query_bwd: GruCellParams
    attn_W: Tensor
    attn_v: Tensor
    hop_W: Optional[Tensor] = None
    hop_v: Optional[Tensor] = None

    @classmethod
    def initialize(cls, config: ParConfig, vocab_size: int, placeholder_ids: Sequence[int],
                   rng: np.random.Generator) -> "ParParams":
        e, h, a = config.embedding_dim, config.hidden_dim, config.attn_dim
        emb = rng.uniform(-0.1, 0.1, (vocab_size, e))
        emb[list(placeholder_ids)] = 0.0

        def attn(prefix):
            bound_W = 1.0 / math.sqrt(4 * h)
            W = Tensor(rng.uniform(-bound_W, bound_W, (a, 4 * h)), f"{prefix}.W")
            v = Tensor(rng.uniform(-1.0 / math.sqrt(a), 1.0 / math.sqrt(a), a), f"{prefix}.v")
            return W, v

        doc_fwd = GruCellParams.random(e, h, rng, "doc_fwd.")
        doc_bwd = GruCellParams.random(e, h, rng, "doc_bwd.")
        query_fwd = GruCellParams.random(e, h, rng, "query_fwd.")
        query_bwd = GruCellParams.random(e, h, rng, "query_bwd.")
        attn_W, attn_v = attn("attn")
        hop_W = hop_v = None
        if config.num_hops == 2:
            hop_W, hop_v = attn("hop")
        return cls(Tensor(emb, "embedding"), doc_fwd, doc_bwd, query_fwd, query_bwd,
                   attn_W, attn_v, hop_W, hop_v)

    def tensors(self) -> list[Tensor]:
        out = [self.embedding]
        for cell in (self.doc_fwd, self.doc_bwd, self.query_fwd, self.query_bwd):
            out.extend(cell.tensors())
        out += [self.attn_W, self.attn_v]
        if self.hop_W is not None:
            out += [self.hop_W, self.hop_v]
        return out

    def named(self) -> dict:
        return {t.name: t for t in self.tensors()}

    def arrays(self) -> dict:
        return {t.name: t.value for t in self.tensors()}

    def load_arrays(self, arrays: dict) -> None:
        named = self.named()
        missing = set(named) - set(arrays)
        if missing:
            raise ContractViolation(f"checkpoint lacks parameters: {sorted(missing)}")
        for name, t in named.items():
            if arrays[name].shape != t.shape:
                raise ContractViolation(f"parameter {name}: shape {arrays[name].shape} != {t.shape}")
            t.value = np.array(arrays[name], dtype=np.float64)

    def copy(self) -> "ParParams":
        import copy
        return copy.deepcopy(self)


@dataclass(frozen=True)
class EncodedInstance:
    """Vocabulary-indexed view of a ClozeInstance."""

    doc_ids: np.ndarray
    query_ids: np.ndarray
    candidates: np.ndarray  # doc positions of candidates, ascending
    answers: np.ndarray  # boolean over candidates
    supervision: Optional[np.ndarray]  # boolean over candidates, or None


def encode_instance(inst: ClozeInstance, vocab: Vocabulary) -> EncodedInstance:
    """Index an instance and check the model's preconditions."""
    if not inst.doc_tokens:
        raise InstanceSkip("empty document")
    candidates = np.array([i for i, t in enumerate(inst.doc_tokens) if t.kind is TokenKind.ARGUMENT], dtype=np.intp)
    if candidates.size == 0:
        raise InstanceSkip("document has no argument tokens")
    n_target = sum(t.kind is TokenKind.TARGET for t in inst.query_tokens)
    if n_target != 1:
        raise ContractViolation(f"query must hold exactly one target placeholder, found {n_target}")
    slot = {int(p): k for k, p in enumerate(candidates)}
    if not inst.answer_positions:
        raise ContractViolation("instance has no answer positions")
    answers = np.zeros(candidates.size, dtype=bool)
    for p in inst.answer_positions:
        if p not in slot:
            raise ContractViolation(f"answer position {p} is not a candidate")
        answers[slot[p]] = True
    supervision = None
    if inst.supervision:
        supervision = np.zeros(candidates.size, dtype=bool)
        for p in inst.supervision:
            if p not in slot:
                raise ContractViolation(f"supervision position {p} is not a candidate")
            supervision[slot[p]] = True
    return EncodedInstance(
        doc_ids=np.array(vocab.lookup(t.surface for t in inst.doc_tokens), dtype=np.intp),
        query_ids=np.array(vocab.lookup(t.surface for t in inst.query_tokens), dtype=np.intp),
        candidates=candidates,
        answers=answers,
        supervision=supervision,
    )


@dataclass
class AttentionTrace:
    """Per-hop attention over the document, aligned to doc positions."""

    doc_length: int
    candidates: np.ndarray
    hops: list = field(default_factory=list)  # [(scores over candidates, probs over candidates)]
    query: Optional[np.ndarray] = None
    hop_query: Optional[np.ndarray] = None
    pointer: Optional[int] = None

    def attention(self, hop: int = -1) -> np.ndarray:
        """Probability vector of one hop over all doc positions (0 off candidates)."""
        full = np.zeros(self.doc_length)
        full[self.candidates] = self.hops[hop][1]
        return full

    def scores(self, hop: int = -1) -> np.ndarray:
        full = np.full(self.doc_length, np.nan)
        full[self.candidates] = self.hops[hop][0]
        return full


# --------------------------------------------------------------------------
# network pieces


def embed(params: ParParams, config: ParConfig, ids, training=False, rng=None) -> Tensor:
    x = T.gather_rows(params.embedding, ids)
    return T.dropout(x, config.dropout_rate, training, rng)


def _bigru(fwd: GruCellParams, bwd: GruCellParams, xs: Tensor):
    return T.gru_sequence(fwd, xs), T.gru_sequence(bwd, xs, reverse=True)


def encode_document(params: ParParams, config: ParConfig, doc_ids, candidates,
                    training=False, rng=None) -> Tensor:
    """Context vectors ``d_t`` (rows) for the candidate positions.

    Every token passes through both GRUs; only argument positions come back.
    """
    candidates = np.asarray(candidates)
    if candidates.size == 0:
        raise InstanceSkip("document has no argument tokens")
    xs = embed(params, config, doc_ids, training, rng)
    fwd, bwd = _bigru(params.doc_fwd, params.doc_bwd, xs)
    return T.stack([T.concat([fwd[t], bwd[t]]) for t in candidates])


def encode_query(params: ParParams, config: ParConfig, query_ids, training=False, rng=None) -> Tensor:
    """``[last forward state; backward state at the first token]``."""
    xs = embed(params, config, query_ids, training, rng)
    fwd, bwd = _bigru(params.query_fwd, params.query_bwd, xs)
    return T.concat([fwd[-1], bwd[0]])


def attend(d: Tensor, q: Tensor, W: Tensor, v: Tensor):
    """Additive pointer attention ``s_t = v . tanh(W [d_t; q])``."""
    n = d.shape[0]
    pre = T.linear(W, T.concat([d, T.tile_rows(q, n)], axis=1))
    s = T.matmul(T.tanh(pre), v)
    return s, T.masked_softmax(s)


def hop_update(d: Tensor, q: Tensor, W: Tensor, v: Tensor):
    """First hop: returns ``(q + sum_t a'_t d_t, s', a')``."""
    s, a = attend(d, q, W, v)
    o = T.matmul(a, d)
    return T.add(o, q), s, a


def answer_index(a: np.ndarray, answer_mask) -> int:
    """Answer slot with the largest attention; lowest index on ties."""
    answer_mask = np.asarray(answer_mask, dtype=bool)
    if not answer_mask.any():
        raise ContractViolation("answer mask selects no candidate")
    masked = np.where(answer_mask, a, -np.inf)
    return int(np.argmax(masked))


def loss_max_correct(a: Tensor, answer_mask) -> Tensor:
    """``-log max(a * m)``; the gradient flows through the chosen entry only."""
    i = answer_index(a.value, answer_mask)
    return T.scale(T.log(T.pick(a, i)), -1.0)


def loss_extra_supervision(a: Tensor, supervision_mask, direction: str = "target_pred") -> Tensor:
    """KL divergence between the uniform target over supervised slots and ``a``."""
    sup = np.asarray(supervision_mask, dtype=bool)
    k = int(sup.sum())
    if k == 0:
        raise ContractViolation("supervision mask selects no candidate")
    if direction == "target_pred":
        idx = np.flatnonzero(sup)
        log_a = T.log(T.gather_rows(a, idx))
        # sum_i (1/k) (log(1/k) - log a_i)
        return T.add(Tensor(math.log(1.0 / k)), T.scale(T.total(log_a), -1.0 / k))
    if direction == "pred_target":
        n = sup.size
        eps = REVERSE_KL_SMOOTHING if k < n else 0.0
        p = np.where(sup, (1.0 - eps) / k, eps / max(n - k, 1))
        log_a = T.log(a)
        return T.total(T.mul(a, T.add(log_a, Tensor(-np.log(p)))))
    raise ValueError(f"unknown KL direction {direction!r}")


def l2_penalty(params: ParParams, weight: float) -> Tensor:
    terms = [T.sum_squares(t) for t in params.tensors()]
    acc = terms[0]
    for t in terms[1:]:
        acc = T.add(acc, t)
    return T.scale(acc, weight)


# --------------------------------------------------------------------------
# forward passes


def forward(params: ParParams, config: ParConfig, enc: EncodedInstance, training=False, rng=None):
    """Run the network; returns (final attention tensor, first-hop tensor or None, trace)."""
    d = encode_document(params, config, enc.doc_ids, enc.candidates, training, rng)
    q = encode_query(params, config, enc.query_ids, training, rng)
    trace = AttentionTrace(len(enc.doc_ids), enc.candidates, query=q.value.copy())
    first = None
    q_final = q
    if config.num_hops == 2:
        if params.hop_W is None:
            raise ContractViolation("2-hop config but parameters lack the first-hop attention")
        q_final, s1, first = hop_update(d, q, params.hop_W, params.hop_v)
        trace.hops.append((s1.value.copy(), first.value.copy()))
        trace.hop_query = q_final.value.copy()
    s, a = attend(d, q_final, params.attn_W, params.attn_v)
    trace.hops.append((s.value.copy(), a.value.copy()))
    return a, first, trace


def instance_loss(params: ParParams, config: ParConfig, enc: EncodedInstance, training=False, rng=None):
    """Pointer loss plus the weighted KL term when it applies; returns (loss, trace)."""
    a, first, trace = forward(params, config, enc, training, rng)
    loss = loss_max_correct(a, enc.answers)
    if first is not None and enc.supervision is not None and config.kl_weight > 0:
        kl = loss_extra_supervision(first, enc.supervision, config.kl_direction)
        loss = T.add(loss, T.scale(kl, config.kl_weight))
    return loss, trace


def total_loss(params: ParParams, config: ParConfig, enc: EncodedInstance, l2_weight: float = 0.0,
               training=False, rng=None) -> Tensor:
    loss, _ = instance_loss(params, config, enc, training, rng)
    if l2_weight:
        loss = T.add(loss, l2_penalty(params, l2_weight))
    return loss


def predict(params: ParParams, config: ParConfig, enc: EncodedInstance):
    """Pointer (a doc position) and the attention trace, with dropout off."""
    _, _, trace = forward(params, config, enc, training=False)
    slot = int(np.argmax(trace.hops[-1][1]))
    trace.pointer = int(enc.candidates[slot])
    return trace.pointer, trace
