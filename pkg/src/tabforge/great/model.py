"""Tiny decoder-only transformer over serialized rows.

Pre-norm blocks (x + attn(ln(x)), x + mlp(ln(x))), learned positional
embeddings, causal masking, and an output projection tied to the token
embedding.  Sized for desk-scale corpora; the training objective is plain
next-token cross entropy with PAD positions masked out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from tabforge.data import Table
from tabforge.great.bpe import BOS, EOS, PAD, Vocab
from tabforge.nn import tensor as T
from tabforge.nn.optim import Adam
from tabforge.nn.tensor import Tensor
from tabforge.textrow import ParseFailure, parse_row_text


class GreatError(Exception):
    pass


@dataclass
class GreatConfig:
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 4
    ctx: int = 256
    vocab_size: int = 2048
    lr: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.999)
    batch: int = 32
    temperature: float = 0.7
    max_retries: int = 8

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise GreatError("d_model must be divisible by n_heads")


@dataclass
class GreatModel:
    config: GreatConfig
    vocab: Vocab
    params: dict[str, Tensor]
    _mask_cache: dict[int, np.ndarray] = field(init=False, default_factory=dict)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def segments(self) -> dict:
        return {}

    def head_names(self) -> set[str]:
        return set()  # the whole model transfers: no table-specific widths

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k in state and state[k].shape == p.data.shape:
                p.data = np.asarray(state[k], dtype=p.data.dtype).copy()

    def optimizer(self) -> Adam:
        return Adam(self.parameters(), lr=self.config.lr, betas=self.config.betas)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- forward ------------------------------------------------------------

    def _mask(self, t: int) -> np.ndarray:
        if t not in self._mask_cache:
            m = np.triu(np.full((t, t), -1e9, dtype=np.float32), k=1)
            self._mask_cache[t] = m[None, None, :, :]
        return self._mask_cache[t]

    def _layernorm(self, x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered * ((var + 1e-5) ** -0.5) * gamma + beta

    def forward(self, ids: np.ndarray) -> Tensor:
        """Token ids (B, T) -> logits (B, T, vocab)."""
        cfg = self.config
        ids = np.asarray(ids)
        b, t = ids.shape
        if t > cfg.ctx:
            raise GreatError(f"sequence length {t} exceeds context {cfg.ctx}")
        p = self.params
        x = T.take_rows(p["tok_emb"], ids) + p["pos_emb"][:t]
        h = cfg.d_model // cfg.n_heads
        for l in range(cfg.n_layers):
            ln1 = self._layernorm(x, p[f"b{l}.ln1.g"], p[f"b{l}.ln1.b"])
            qkv = T.matmul(ln1, p[f"b{l}.attn.wqkv"]) + p[f"b{l}.attn.bqkv"]
            q = T.swapaxes(T.reshape(qkv[:, :, : cfg.d_model], (b, t, cfg.n_heads, h)), 1, 2)
            k = T.swapaxes(
                T.reshape(qkv[:, :, cfg.d_model : 2 * cfg.d_model], (b, t, cfg.n_heads, h)), 1, 2
            )
            v = T.swapaxes(
                T.reshape(qkv[:, :, 2 * cfg.d_model :], (b, t, cfg.n_heads, h)), 1, 2
            )
            scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(h)) + Tensor(self._mask(t))
            probs = T.softmax(scores, axis=-1)
            att = T.reshape(T.swapaxes(T.matmul(probs, v), 1, 2), (b, t, cfg.d_model))
            x = x + (T.matmul(att, p[f"b{l}.attn.wproj"]) + p[f"b{l}.attn.bproj"])
            ln2 = self._layernorm(x, p[f"b{l}.ln2.g"], p[f"b{l}.ln2.b"])
            mid = T.gelu(T.matmul(ln2, p[f"b{l}.mlp.w1"]) + p[f"b{l}.mlp.b1"])
            x = x + (T.matmul(mid, p[f"b{l}.mlp.w2"]) + p[f"b{l}.mlp.b2"])
        x = self._layernorm(x, p["lnf.g"], p["lnf.b"])
        return T.matmul(x, T.transpose(p["tok_emb"]))  # tied output projection


def build_great(config: GreatConfig, vocab: Vocab, seed: int) -> GreatModel:
    if vocab.size > config.vocab_size:
        raise GreatError(f"vocab size {vocab.size} exceeds configured {config.vocab_size}")
    rng = np.random.default_rng(seed)
    d = config.d_model

    def normal(*shape):
        return Tensor(rng.normal(0.0, 0.02, shape).astype(np.float32), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape, dtype=np.float32), requires_grad=True)

    params: dict[str, Tensor] = {
        # Sized to the fitted vocab; config.vocab_size is the training budget.
        "tok_emb": normal(vocab.size, d),
        "pos_emb": normal(config.ctx, d),
        "lnf.g": ones(d),
        "lnf.b": zeros(d),
    }
    for l in range(config.n_layers):
        params[f"b{l}.ln1.g"] = ones(d)
        params[f"b{l}.ln1.b"] = zeros(d)
        params[f"b{l}.attn.wqkv"] = normal(d, 3 * d)
        params[f"b{l}.attn.bqkv"] = zeros(3 * d)
        params[f"b{l}.attn.wproj"] = normal(d, d)
        params[f"b{l}.attn.bproj"] = zeros(d)
        params[f"b{l}.ln2.g"] = ones(d)
        params[f"b{l}.ln2.b"] = zeros(d)
        params[f"b{l}.mlp.w1"] = normal(d, 4 * d)
        params[f"b{l}.mlp.b1"] = zeros(4 * d)
        params[f"b{l}.mlp.w2"] = normal(4 * d, d)
        params[f"b{l}.mlp.b2"] = zeros(d)
    return GreatModel(config, vocab, params)


def write_sentence_cache(path, sentences: list[str]) -> None:
    """Serialized-corpus cache: one sentence per line, UTF-8."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in sentences:
            fh.write(s.replace("\n", " ") + "\n")


def read_sentence_cache(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def pad_batch(sequences: list[list[int]], ctx: int) -> np.ndarray:
    """BOS/EOS-framed sequences padded to a common length (<= ctx + 1)."""
    longest = max(len(s) for s in sequences)
    if longest - 1 > ctx:
        raise GreatError(f"sequence of length {longest} exceeds context {ctx}")
    out = np.full((len(sequences), longest), PAD, dtype=np.int64)
    for i, s in enumerate(sequences):
        out[i, : len(s)] = s
    return out


def great_train_step(model: GreatModel, token_batch: np.ndarray, opt: Adam) -> float:
    """Mean next-token cross entropy under the causal mask; PAD masked out."""
    ids = np.asarray(token_batch)
    inputs, targets = ids[:, :-1], ids[:, 1:]
    logits = model.forward(inputs)
    b, t, v = logits.data.shape
    flat = T.reshape(logits, (b * t, v))
    logp = T.log_softmax(flat, axis=-1)
    tgt = targets.reshape(-1)
    keep = tgt != PAD
    rows = np.flatnonzero(keep)
    picked = T.take_pairs(logp, rows, tgt[rows])
    loss = -T.mean(picked)
    model.zero_grad()
    loss.backward()
    opt.step()
    return float(loss.data)


def sequence_nll(model: GreatModel, token_batch: np.ndarray) -> float:
    """Evaluation-only mean token NLL (no update)."""
    ids = np.asarray(token_batch)
    inputs, targets = ids[:, :-1], ids[:, 1:]
    with T.no_grad():
        logits = model.forward(inputs)
    b, t, v = logits.data.shape
    flat = logits.data.reshape(b * t, v)
    shifted = flat - flat.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    tgt = targets.reshape(-1)
    keep = tgt != PAD
    return float(-logp[np.flatnonzero(keep), tgt[keep]].mean())


def great_generate(
    model: GreatModel,
    schema,
    n: int,
    rng: np.random.Generator,
    temperature: float | None = None,
    max_retries: int | None = None,
):
    """Sample rows token by token; parse back; retry failures.

    Returns (Table, validity_rate).  Rows that keep failing after the retry
    budget are skipped and counted against the validity rate.
    """
    cfg = model.config
    temperature = cfg.temperature if temperature is None else temperature
    max_retries = cfg.max_retries if max_retries is None else max_retries
    rows = []
    attempted = 0
    parsed = 0
    for _ in range(n):
        row = None
        for _ in range(max_retries + 1):
            attempted += 1
            sentence = _sample_sentence(model, rng, temperature)
            out = parse_row_text(schema, sentence)
            if not isinstance(out, ParseFailure):
                row = out
                parsed += 1
                break
        if row is not None:
            rows.append(row)
    metas = [m for m in schema]
    table = Table("synthetic", metas, rows)
    validity = parsed / attempted if attempted else 1.0
    return table, validity


def _sample_sentence(model: GreatModel, rng: np.random.Generator, temperature: float) -> str:
    ids = [BOS]
    cfg = model.config
    while len(ids) < cfg.ctx:
        with T.no_grad():
            logits = model.forward(np.asarray([ids]))
        last = logits.data[0, -1].astype(np.float64)
        if temperature <= 1e-6:
            nxt = int(last.argmax())
        else:
            scaled = last / temperature
            scaled -= scaled.max()
            probs = np.exp(scaled)
            probs /= probs.sum()
            nxt = int((rng.random() > np.cumsum(probs)).sum())
            nxt = min(nxt, len(probs) - 1)
        if nxt == EOS:
            break
        ids.append(nxt)
    return model.vocab.decode(ids[1:])
