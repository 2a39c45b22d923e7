"""Conditional GAN for encoded table rows.

Batch step, per the training-by-sampling procedure: draw a categorical
column uniformly and a category from its log-frequency PMF, build the
conditional vector, generate packed fake rows, sample matching real rows,
and optimize the critic (Wasserstein difference + gradient penalty on
per-pack interpolates) and then the generator (negated critic score + cross
entropy between the generated one-hot and the conditioning mask).

The critic consumes `pac` rows jointly; the generator grows its hidden
state by concatenation (h ⊕ ReLU(BN(FC(h)))) and emits per-column heads:
tanh for each alpha, gumbel-softmax (tau 0.2) for each mode indicator and
categorical block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tabforge.data import Table
from tabforge.nn import tensor as T
from tabforge.nn.layers import (
    BatchNorm,
    ConcatSkip,
    Dense,
    Dropout,
    GumbelSoftmax,
    LeakyReLU,
    Net,
    ReLU,
    Tanh,
)
from tabforge.nn.optim import Adam
from tabforge.nn.tensor import Tensor
from tabforge.transform import ColumnTransformer, decode_matrix


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class CondLayout:
    """Offsets of each categorical column's one-hot block within cond."""

    columns: tuple[int, ...]  # schema indices, in encoded (categorical) order
    widths: tuple[int, ...]

    @property
    def offsets(self) -> tuple[int, ...]:
        out = []
        pos = 0
        for w in self.widths:
            out.append(pos)
            pos += w
        return tuple(out)

    @property
    def total_width(self) -> int:
        return sum(self.widths)

    @property
    def n_columns(self) -> int:
        return len(self.columns)


def build_cond_vector(layout: CondLayout, i_star: int, k_star: int) -> np.ndarray:
    """All-zero vector with a single 1 at offset(i*) + k*."""
    if not 0 <= i_star < layout.n_columns:
        raise ModelError(f"categorical column index {i_star} out of range")
    if not 0 <= k_star < layout.widths[i_star]:
        raise ModelError(f"category index {k_star} out of range for column {i_star}")
    vec = np.zeros(layout.total_width, dtype=np.float32)
    vec[layout.offsets[i_star] + k_star] = 1.0
    return vec


@dataclass
class CtganConfig:
    z_dim: int = 128
    pac: int = 10
    batch: int = 500
    lambda_gp: float = 10.0
    tau: float = 0.2
    hidden: tuple[int, int] = (256, 256)
    dropout: float = 0.5
    lr: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.9)
    weight_decay: float = 0.0


@dataclass
class CtganModel:
    transformer: ColumnTransformer
    layout: CondLayout
    generator: Net
    critic: Net
    log_pmfs: list[np.ndarray]  # per categorical column, sums to 1
    config: CtganConfig
    row_width: int = field(init=False)
    _head_names: set[str] = field(init=False, default_factory=set)

    def __post_init__(self):
        self.row_width = self.transformer.total_width
        gen_out = self.generator.out_width
        if gen_out != self.row_width:
            raise ModelError(f"generator output {gen_out} != encoded row width {self.row_width}")
        expect = self.config.pac * (self.row_width + self.layout.total_width)
        if self.critic.in_width != expect:
            raise ModelError(f"critic input {self.critic.in_width} != pac*(row+cond) = {expect}")

    # -- state surface used by training/checkpointing ------------------------

    def state(self) -> dict[str, np.ndarray]:
        out = {f"gen.{k}": v for k, v in self.generator.state_dict().items()}
        out.update({f"critic.{k}": v for k, v in self.critic.state_dict().items()})
        return out

    def segments(self) -> dict[str, tuple[tuple[str, int], ...]]:
        out = {f"gen.{k}": v for k, v in self.generator.param_segments.items()}
        out.update({f"critic.{k}": v for k, v in self.critic.param_segments.items()})
        return out

    def head_names(self) -> set[str]:
        return set(self._head_names)

    def nets(self) -> dict[str, Net]:
        return {"gen": self.generator, "critic": self.critic}

    def optimizers(self) -> tuple[Adam, Adam]:
        c = self.config
        gen = Adam(
            [(f"gen.{n}", p) for n, p in self.generator.parameters()],
            lr=c.lr,
            betas=c.betas,
            weight_decay=c.weight_decay,
        )
        critic = Adam(
            [(f"critic.{n}", p) for n, p in self.critic.parameters()],
            lr=c.lr,
            betas=c.betas,
        )
        return critic, gen


def build_ctgan(
    table: Table,
    transformer: ColumnTransformer,
    config: CtganConfig,
    seed: int,
    dtype=np.float32,
) -> CtganModel:
    layout = cond_layout_of(transformer)
    counts = _category_counts(table, layout)
    return make_ctgan(transformer, config, counts_to_log_pmfs(counts), seed, dtype)


def cond_layout_of(transformer: ColumnTransformer) -> CondLayout:
    cat_spans = [s for s in transformer.spans if s.kind == "categorical"]
    return CondLayout(
        columns=tuple(s.column for s in cat_spans),
        widths=tuple(s.width for s in cat_spans),
    )


def counts_to_log_pmfs(counts: list[np.ndarray]) -> list[np.ndarray]:
    pmfs = []
    for c in counts:
        logs = np.log1p(np.asarray(c, dtype=np.float64))
        total = logs.sum()
        pmfs.append(logs / total if total > 0 else np.full(len(c), 1.0 / len(c)))
    return pmfs


def make_ctgan(
    transformer: ColumnTransformer,
    config: CtganConfig,
    log_pmfs: list[np.ndarray],
    seed: int,
    dtype=np.float32,
) -> CtganModel:
    layout = cond_layout_of(transformer)
    row_w = transformer.total_width
    cond_w = layout.total_width
    z = config.z_dim
    h1, h2 = config.hidden

    in0 = z + cond_w
    gen_layers = [
        ConcatSkip(
            (
                Dense(in0, h1, segments=(("z", z), ("cond", cond_w))),
                BatchNorm(h1),
                ReLU(),
            )
        ),
        ConcatSkip(
            (
                Dense(in0 + h1, h2, segments=(("z", z), ("cond", cond_w), ("block0", h1))),
                BatchNorm(h2),
                ReLU(),
            )
        ),
        Dense(in0 + h1 + h2, row_w),
    ]
    for span in transformer.spans:
        if span.kind == "numeric":
            gen_layers.append(Tanh(span=(span.start, 1)))
            gen_layers.append(GumbelSoftmax(span=(span.start + 1, span.width - 1), tau=config.tau))
        else:
            gen_layers.append(GumbelSoftmax(span=(span.start, span.width), tau=config.tau))

    critic_in = config.pac * (row_w + cond_w)
    critic_layers = [
        Dense(
            critic_in,
            h1,
            segments=(("rows", config.pac * row_w), ("conds", config.pac * cond_w)),
        ),
        LeakyReLU(0.2),
        Dropout(config.dropout),
        Dense(h1, h2),
        LeakyReLU(0.2),
        Dropout(config.dropout),
        Dense(h2, 1),
    ]

    rng = np.random.default_rng(seed)
    generator = Net(gen_layers, rng, dtype=dtype)
    critic = Net(critic_layers, rng, dtype=dtype)

    model = CtganModel(transformer, layout, generator, critic, list(log_pmfs), config)
    model._head_names = {"gen.2.W", "gen.2.b", "critic.0.W", "critic.0.b"}
    return model


def _category_counts(table: Table, layout: CondLayout) -> list[np.ndarray]:
    counts = []
    for col_idx, width in zip(layout.columns, layout.widths):
        order = table.columns[col_idx].categories
        index = {cat: k for k, cat in enumerate(order)}
        c = np.zeros(width, dtype=np.int64)
        for v in table.column_values(col_idx):
            if v is not None:
                c[index[v]] += 1
        counts.append(c)
    return counts


# -- training-by-sampling -----------------------------------------------------


def sample_condition(model: CtganModel, rng: np.random.Generator):
    """(i*, k*): column uniform, category from the log-frequency PMF.

    Returns None for condition-free tables (no categorical columns).
    """
    if model.layout.n_columns == 0:
        return None
    i_star = int(rng.integers(model.layout.n_columns))
    pmf = model.log_pmfs[i_star]
    u = rng.random()
    k_star = int((u > np.cumsum(pmf)).sum())
    return i_star, min(k_star, len(pmf) - 1)


def _sample_condition_batch(model: CtganModel, n: int, rng: np.random.Generator):
    """Vectorized draw of n (i*, k*) pairs plus the cond matrix."""
    layout = model.layout
    if layout.n_columns == 0:
        return None, None, np.zeros((n, 0), dtype=np.float32)
    i_stars = rng.integers(layout.n_columns, size=n)
    k_stars = np.zeros(n, dtype=np.int64)
    for c in range(layout.n_columns):
        mask = i_stars == c
        if not mask.any():
            continue
        cum = np.cumsum(model.log_pmfs[c])
        u = rng.random(int(mask.sum()))
        k_stars[mask] = np.minimum((u[:, None] > cum[None, :]).sum(axis=1), len(cum) - 1)
    cond = np.zeros((n, layout.total_width), dtype=np.float32)
    offsets = np.asarray(layout.offsets)
    cond[np.arange(n), offsets[i_stars] + k_stars] = 1.0
    return i_stars, k_stars, cond


def build_row_index(model: CtganModel, matrix: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    """Row indices per (categorical position, category) in an encoded matrix."""
    index: dict[tuple[int, int], np.ndarray] = {}
    for pos, col_idx in enumerate(model.layout.columns):
        span = model.transformer.span_for(col_idx)
        for k in range(span.width):
            index[(pos, k)] = np.flatnonzero(matrix[:, span.start + k] == 1.0)
    return index


def refresh_log_pmfs(model: CtganModel, matrix: np.ndarray) -> None:
    """Rebuild the category PMFs from the rows actually being trained on.

    A category whose rows all fell into the validation slice gets zero mass,
    so the condition sampler never asks for a real row that is not there.
    """
    counts = []
    for col_idx in model.layout.columns:
        span = model.transformer.span_for(col_idx)
        counts.append(matrix[:, span.start : span.start + span.width].sum(axis=0))
    model.log_pmfs = counts_to_log_pmfs(counts)


def sample_real_conditioned(
    matrix: np.ndarray,
    model: CtganModel,
    i_star: int,
    k_star: int,
    rng: np.random.Generator,
    row_index: dict | None = None,
) -> np.ndarray:
    """Uniform draw among rows whose one-hot for column i* equals k*."""
    if row_index is not None:
        candidates = row_index[(i_star, k_star)]
    else:
        span = model.transformer.span_for(model.layout.columns[i_star])
        candidates = np.flatnonzero(matrix[:, span.start + k_star] == 1.0)
    if len(candidates) == 0:
        raise ModelError(f"no real row satisfies condition ({i_star}, {k_star})")
    return matrix[candidates[rng.integers(len(candidates))]]


# -- losses ---------------------------------------------------------------------


def _pack(arr: np.ndarray, pac: int) -> np.ndarray:
    groups = arr.shape[0] // pac
    return arr.reshape(groups, pac * arr.shape[1])


def _pack_tensor(t: Tensor, pac: int) -> Tensor:
    groups = t.data.shape[0] // pac
    return T.reshape(t, (groups, pac * t.data.shape[1]))


def gradient_penalty(
    critic: Net,
    real_pacs: np.ndarray,
    fake_pacs: np.ndarray,
    cond_pacs: np.ndarray,
    lam: float,
    rng: np.random.Generator,
) -> Tensor:
    """lambda * mean((|grad_r Critic(r_interp, cond)|_2 - 1)^2).

    One interpolation weight per pac group; the norm runs over the packed
    row coordinates only (cond passes through unmixed).  The result is a
    graph node: backprop reaches the critic parameters through the input
    gradient itself.
    """
    if real_pacs.shape != fake_pacs.shape:
        raise ModelError(f"pac shapes differ: {real_pacs.shape} vs {fake_pacs.shape}")
    groups, row_block = real_pacs.shape
    rho = rng.random((groups, 1)).astype(np.float32)
    interp = rho * fake_pacs + (1.0 - rho) * real_pacs
    critic.forward(np.concatenate([interp, cond_pacs], axis=1), mode="train", rng=rng)
    grad = critic.input_gradient()
    grad_rows = grad[:, :row_block]
    # The tiny epsilon keeps sqrt differentiable at an exactly-zero gradient
    # without moving the penalty beyond 1e-6 of its analytic value.
    norm = T.sqrt(T.sum_(grad_rows * grad_rows, axis=1) + 1e-16)
    gap = norm - 1.0
    return T.mean(gap * gap) * lam


def _batch_size(model: CtganModel, n_rows: int) -> int:
    cfg = model.config
    batch = (min(cfg.batch, n_rows) // cfg.pac) * cfg.pac
    if batch < cfg.pac:
        batch = cfg.pac  # sample rows with replacement on tiny tables
    return batch


def _generate(model: CtganModel, n: int, rng: np.random.Generator):
    i_s, k_s, cond = _sample_condition_batch(model, n, rng)
    z = rng.standard_normal((n, model.config.z_dim)).astype(np.float32)
    gen_in = np.concatenate([z, cond], axis=1)
    fake = model.generator.forward(gen_in, mode="train", rng=rng)
    return i_s, k_s, cond, fake


def critic_loss_graph(
    model: CtganModel,
    matrix: np.ndarray,
    rng: np.random.Generator,
    row_index: dict | None = None,
):
    """Wasserstein difference + gradient penalty as a graph (no updates)."""
    cfg = model.config
    batch = _batch_size(model, matrix.shape[0])
    i_s, k_s, cond, fake = _generate(model, batch, rng)
    if i_s is None:
        real = matrix[rng.integers(matrix.shape[0], size=batch)]
    else:
        real = np.stack(
            [
                sample_real_conditioned(matrix, model, int(i_s[j]), int(k_s[j]), rng, row_index)
                for j in range(batch)
            ]
        )
    cond_pac = _pack(cond, cfg.pac)
    fake_pac = _pack(fake.data, cfg.pac)  # detached: the critic step never reaches G
    real_pac = _pack(real.astype(fake.data.dtype), cfg.pac)

    fake_scores = model.critic.forward(
        np.concatenate([fake_pac, cond_pac], axis=1), mode="train", rng=rng
    )
    real_scores = model.critic.forward(
        np.concatenate([real_pac, cond_pac], axis=1), mode="train", rng=rng
    )
    w_loss = T.mean(fake_scores) - T.mean(real_scores)
    penalty = gradient_penalty(model.critic, real_pac, fake_pac, cond_pac, cfg.lambda_gp, rng)
    return w_loss, penalty


def generator_loss_graph(model: CtganModel, n_rows: int, rng: np.random.Generator):
    """-mean critic(fake) + mean CE(generated one-hot, conditioning mask)."""
    cfg = model.config
    batch = _batch_size(model, n_rows)
    i_s, k_s, cond, fake = _generate(model, batch, rng)
    cond_pac = _pack(cond, cfg.pac)
    fake_pac = _pack_tensor(fake, cfg.pac)
    scores = model.critic.forward(
        T.concat([fake_pac, Tensor(cond_pac.astype(fake.data.dtype))], axis=1),
        mode="train",
        rng=rng,
    )
    gen_loss = -T.mean(scores)
    ce = None
    if i_s is not None:
        ce_terms = []
        for pos, col_idx in enumerate(model.layout.columns):
            mask = i_s == pos
            if not mask.any():
                continue
            span = model.transformer.span_for(col_idx)
            scaled = model.generator.gumbel_scaled[span.start]
            rows = np.flatnonzero(mask)
            logp = T.log_softmax(scaled, axis=1)
            picked = T.take_pairs(logp, rows, k_s[rows])
            ce_terms.append(-T.sum_(picked))
        if ce_terms:
            total = ce_terms[0]
            for t in ce_terms[1:]:
                total = total + t
            ce = total * (1.0 / batch)
            gen_loss = gen_loss + ce
    return gen_loss, ce


def ctgan_train_batch(
    model: CtganModel,
    matrix: np.ndarray,
    rng: np.random.Generator,
    adam_critic: Adam,
    adam_gen: Adam,
    row_index: dict | None = None,
) -> dict[str, float]:
    """One critic update, then one generator update on a fresh batch."""
    w_loss, penalty = critic_loss_graph(model, matrix, rng, row_index)
    critic_loss = w_loss + penalty
    adam_critic.zero_grad()
    adam_gen.zero_grad()
    critic_loss.backward()
    adam_critic.step()

    gen_loss, ce = generator_loss_graph(model, matrix.shape[0], rng)
    adam_gen.zero_grad()
    adam_critic.zero_grad()
    gen_loss.backward()
    adam_gen.step()

    return {
        "critic_loss": float(w_loss.data),
        "penalty": float(penalty.data),
        "generator_loss": float(gen_loss.data),
        "condition_ce": 0.0 if ce is None else float(ce.data),
    }


def ctgan_sample(
    model: CtganModel,
    n: int,
    rng: np.random.Generator,
    condition: tuple[int, int] | None = None,
) -> Table:
    """Decode n generated rows; `condition` forces (i*, k*) for every row."""
    cfg = model.config
    rows = []
    remaining = n
    while remaining > 0:
        chunk = min(remaining, cfg.batch)
        if condition is not None:
            cond = np.tile(build_cond_vector(model.layout, *condition), (chunk, 1))
        else:
            _, _, cond = _sample_condition_batch(model, chunk, rng)
        z = rng.standard_normal((chunk, cfg.z_dim)).astype(np.float32)
        with T.no_grad():
            out = model.generator.forward(np.concatenate([z, cond], axis=1), mode="eval")
        rows.append(out.data)
        remaining -= chunk
    matrix = np.concatenate(rows, axis=0) if rows else np.zeros((0, model.row_width), dtype=np.float32)
    table = decode_matrix(matrix, model.transformer)
    table.name = "synthetic"
    return table
