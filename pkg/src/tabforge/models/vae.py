"""The variational autoencoder family over encoded rows.

Three variants share one architecture (ReLU MLP encoder to (mu, log
variance), ReLU MLP decoder to per-column heads: tanh alpha, softmax mode
indicator, softmax categorical):

* tvae   - numeric reconstruction is a Gaussian NLL with one learnable std
           (delta) per numeric column, clamped >= 1e-3;
* stvae  - drops delta, numeric reconstruction is plain squared error,
           which is what makes the decoder body shareable across tables;
* stvaem - stvae plus per-column signature embeddings concatenated to every
           input row (constant within a table).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tabforge.data import Table
from tabforge.nn import tensor as T
from tabforge.nn.functional import cross_entropy_logits, kl_std_normal
from tabforge.nn.layers import Dense, Net, ReLU, Softmax, Tanh
from tabforge.nn.optim import Adam
from tabforge.nn.tensor import Tensor
from tabforge.split import name_embedding
from tabforge.transform import ColumnTransformer, decode_matrix

from tabforge.models.ctgan import ModelError

VARIANTS = ("tvae", "stvae", "stvaem")
DELTA_FLOOR = 1e-3


@dataclass
class VaeConfig:
    variant: str = "stvae"
    latent: int = 64
    hidden: tuple[int, int] = (128, 128)
    sig_dim: int = 16  # stvaem only; 0 reduces stvaem to stvae
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    batch: int = 500
    # Reconstruction weight against the KL term.  The original TVAE formula
    # effectively upweights numeric reconstruction by 1/(2 sigma^2) through
    # its learnable column stds; with plain MSE that pressure must come from
    # an explicit factor (1.0 recovers the textbook ELBO).
    recon_weight: float = 2.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown VAE variant {self.variant!r}")
        if self.recon_weight <= 0:
            raise ModelError("recon_weight must be positive")


@dataclass
class VaeModel:
    transformer: ColumnTransformer
    encoder: Net
    decoder: Net
    config: VaeConfig
    delta: Tensor | None = None  # tvae only: per-numeric-column std
    signatures: np.ndarray | None = None  # stvaem only: (sig_width,) constant
    _head_names: set[str] = field(init=False, default_factory=set)

    def __post_init__(self):
        if (self.delta is not None) != (self.config.variant == "tvae"):
            raise ModelError("delta present iff variant is tvae")
        if (self.signatures is not None) != (self.config.variant == "stvaem"):
            raise ModelError("signatures present iff variant is stvaem")

    @property
    def row_width(self) -> int:
        return self.transformer.total_width

    @property
    def input_width(self) -> int:
        sig = len(self.signatures) if self.signatures is not None else 0
        return self.row_width + sig

    def parameters(self):
        params = [(f"enc.{n}", p) for n, p in self.encoder.parameters()]
        params += [(f"dec.{n}", p) for n, p in self.decoder.parameters()]
        if self.delta is not None:
            params.append(("delta", self.delta))
        return params

    def state(self) -> dict[str, np.ndarray]:
        out = {f"enc.{k}": v for k, v in self.encoder.state_dict().items()}
        out.update({f"dec.{k}": v for k, v in self.decoder.state_dict().items()})
        if self.delta is not None:
            out["delta"] = self.delta.data.copy()
        return out

    def segments(self) -> dict[str, tuple[tuple[str, int], ...]]:
        out = {f"enc.{k}": v for k, v in self.encoder.param_segments.items()}
        out.update({f"dec.{k}": v for k, v in self.decoder.param_segments.items()})
        return out

    def head_names(self) -> set[str]:
        return set(self._head_names)

    def nets(self) -> dict[str, Net]:
        return {"enc": self.encoder, "dec": self.decoder}

    def optimizer(self) -> Adam:
        return Adam(self.parameters(), lr=self.config.lr, betas=self.config.betas)

    def clamp_delta(self) -> None:
        if self.delta is not None:
            np.maximum(self.delta.data, DELTA_FLOOR, out=self.delta.data)


def stvaem_signatures(
    transformer: ColumnTransformer,
    dim: int,
    embeddings: dict[str, np.ndarray] | None = None,
) -> np.ndarray:
    """Concatenated per-column name embeddings, in encoded span order.

    Identical for every row of a table.  External embeddings override the
    hashing fallback; a missing entry is an error.
    """
    parts = []
    for span in transformer.spans:
        name = transformer.schema[span.column].name
        if embeddings is not None:
            if name not in embeddings:
                raise ModelError(f"no signature embedding for column {name!r}")
            vec = np.asarray(embeddings[name], dtype=np.float64)
            if vec.shape != (dim,):
                raise ModelError(f"embedding for {name!r} has shape {vec.shape}, want ({dim},)")
        else:
            vec = name_embedding(name, max(dim, 8))[:dim]
        parts.append(vec.astype(np.float32))
    if not parts or dim == 0:
        return np.zeros(0, dtype=np.float32)
    return np.concatenate(parts)


def build_vae(
    transformer: ColumnTransformer,
    config: VaeConfig,
    seed: int,
    dtype=np.float32,
    embeddings: dict[str, np.ndarray] | None = None,
) -> VaeModel:
    row_w = transformer.total_width
    sig = None
    sig_w = 0
    if config.variant == "stvaem":
        sig = stvaem_signatures(transformer, config.sig_dim, embeddings)
        sig_w = len(sig)
    in_w = row_w + sig_w
    h1, h2 = config.hidden
    latent = config.latent

    enc_layers = [
        Dense(in_w, h1, segments=(("row", row_w), ("sig", sig_w))),
        ReLU(),
        Dense(h1, h2),
        ReLU(),
        Dense(h2, 2 * latent),  # mu | log variance
    ]
    dec_layers = [
        Dense(latent, h1),
        ReLU(),
        Dense(h1, h2),
        ReLU(),
        Dense(h2, row_w),
    ]
    for span in transformer.spans:
        if span.kind == "numeric":
            dec_layers.append(Tanh(span=(span.start, 1)))
            dec_layers.append(Softmax(span=(span.start + 1, span.width - 1)))
        else:
            dec_layers.append(Softmax(span=(span.start, span.width)))

    rng = np.random.default_rng(seed)
    encoder = Net(enc_layers, rng, dtype=dtype)
    decoder = Net(dec_layers, rng, dtype=dtype)
    delta = None
    if config.variant == "tvae":
        n_numeric = sum(1 for s in transformer.spans if s.kind == "numeric")
        delta = Tensor(np.full(n_numeric, 0.1, dtype=dtype), requires_grad=True)

    model = VaeModel(transformer, encoder, decoder, config, delta, sig)
    model._head_names = {"enc.0.W", "enc.0.b", "dec.4.W", "dec.4.b", "delta"}
    return model


def vae_forward(model: VaeModel, batch: np.ndarray, rng: np.random.Generator):
    """Encode, reparameterize, decode.  Returns (mu, sigma, heads, z)."""
    dtype = model.encoder.dtype
    batch = np.asarray(batch, dtype=dtype)
    if batch.ndim != 2 or batch.shape[1] != model.row_width:
        raise ModelError(f"batch width {batch.shape} != row width {model.row_width}")
    if model.signatures is not None and len(model.signatures):
        sig = np.broadcast_to(model.signatures.astype(dtype), (batch.shape[0], len(model.signatures)))
        enc_in = np.concatenate([batch, sig], axis=1)
    else:
        enc_in = batch
    enc_out = model.encoder.forward(enc_in, mode="train")
    latent = model.config.latent
    mu = enc_out[:, :latent]
    sigma = T.exp(enc_out[:, latent:] * 0.5)
    eps = rng.standard_normal(mu.data.shape).astype(dtype)
    z = mu + sigma * Tensor(eps)
    heads = model.decoder.forward(z, mode="train")
    return mu, sigma, heads, z


def elbo_loss(model: VaeModel, heads: Tensor, target: np.ndarray, mu: Tensor, sigma: Tensor) -> Tensor:
    """Reconstruction + KL, averaged over the batch.

    Numeric term: Gaussian NLL under N(alpha_hat, delta_i) for tvae, squared
    error for stvae/stvaem.  Mode indicators and categorical blocks use
    cross entropy against the target one-hots (computed from the decoder's
    cached pre-softmax logits for stability).
    """
    variant = model.config.variant
    if variant == "tvae" and model.delta is None:
        raise ModelError("tvae needs delta")
    target = np.asarray(target, dtype=heads.data.dtype)
    batch = target.shape[0]
    recon_terms: list[Tensor] = []
    numeric_pos = 0
    for span in model.transformer.spans:
        if span.kind == "numeric":
            alpha_t = target[:, span.start]
            alpha_hat = heads[:, span.start]
            diff = alpha_hat - Tensor(alpha_t)
            if variant == "tvae":
                d = T.maximum_const(model.delta[numeric_pos : numeric_pos + 1], DELTA_FLOOR)
                nll = T.log(d) + float(0.5 * np.log(2.0 * np.pi)) + (diff * diff) * (T.pow_(d, -2.0) * 0.5)
                recon_terms.append(T.sum_(nll))
                numeric_pos += 1
            else:
                recon_terms.append(T.sum_(diff * diff))
            beta_t = target[:, span.start + 1 : span.start + span.width].argmax(axis=1)
            beta_logits = model.decoder.span_logits[span.start + 1]
            recon_terms.append(T.sum_(cross_entropy_logits(beta_logits, beta_t)))
        else:
            d_t = target[:, span.start : span.start + span.width].argmax(axis=1)
            d_logits = model.decoder.span_logits[span.start]
            recon_terms.append(T.sum_(cross_entropy_logits(d_logits, d_t)))
    recon = recon_terms[0]
    for t in recon_terms[1:]:
        recon = recon + t
    kl = T.sum_(kl_std_normal(mu, sigma))
    return (recon * model.config.recon_weight + kl) * (1.0 / batch)


def vae_train_batch(model: VaeModel, batch: np.ndarray, rng: np.random.Generator, opt: Adam) -> float:
    mu, sigma, heads, _ = vae_forward(model, batch, rng)
    loss = elbo_loss(model, heads, batch, mu, sigma)
    opt.zero_grad()
    loss.backward()
    opt.step()
    model.clamp_delta()
    return float(loss.data)


def vae_val_loss(model: VaeModel, batch: np.ndarray, rng: np.random.Generator) -> float:
    mu, sigma, heads, _ = vae_forward(model, batch, rng)
    return float(elbo_loss(model, heads, batch, mu, sigma).data)


def vae_sample(model: VaeModel, n: int, rng: np.random.Generator) -> Table:
    """z ~ N(0, I) through the decoder; blocks decode by argmax."""
    chunks = []
    remaining = n
    while remaining > 0:
        take = min(remaining, model.config.batch)
        z = rng.standard_normal((take, model.config.latent)).astype(np.float32)
        with T.no_grad():
            heads = model.decoder.forward(z, mode="eval")
        chunks.append(heads.data)
        remaining -= take
    matrix = (
        np.concatenate(chunks, axis=0)
        if chunks
        else np.zeros((0, model.row_width), dtype=np.float32)
    )
    table = decode_matrix(matrix, model.transformer)
    table.name = "synthetic"
    return table
