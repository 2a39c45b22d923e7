"""Mode-specific normalization and row encoding.

Numeric columns are fitted with a Gaussian mixture (EM, k-means++ init,
low-weight modes pruned).  A value c becomes (alpha, beta): a mode is
sampled proportionally to the per-mode densities, alpha = (c - mean) /
(4 * std) of that mode clipped to [-1, 1], beta the one-hot mode indicator.
Categorical columns are one-hot encoded.  An encoded row is the
concatenation of all numeric (alpha, beta) blocks followed by all
categorical one-hot blocks, in schema order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from tabforge.data import ColumnMeta, Table
from tabforge.rng import substream

EM_MAX_ITER = 300
EM_TOL = 1e-6
WEIGHT_PRUNE = 0.005
DEFAULT_MODES = 10

_LOG_2PI = math.log(2.0 * math.pi)


class TransformError(Exception):
    pass


@dataclass
class GmmParams:
    weights: np.ndarray  # post-pruning: inactive modes carry weight 0
    means: np.ndarray
    stds: np.ndarray
    active: np.ndarray  # bool mask

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.stds = np.asarray(self.stds, dtype=np.float64)
        self.active = np.asarray(self.active, dtype=bool)
        if not self.active.any():
            raise TransformError("at least one mode must be active")
        if abs(self.weights[self.active].sum() - 1.0) > 1e-9:
            raise TransformError("active mode weights must sum to 1")
        if np.any(self.stds <= 0):
            raise TransformError("mode stds must be positive")

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def active_triples(self):
        return self.weights[self.active], self.means[self.active], self.stds[self.active]


def _std_floor(values: np.ndarray) -> float:
    return max(1e-4 * float(values.std()), 1e-6)


def _em_fit(x: np.ndarray, k: int, seed: int, floor: float):
    """One EM run at a fixed component count.  Log-likelihood is asserted
    non-decreasing per step.  Returns (weights, means, stds, loglik)."""
    distinct = np.unique(x)
    rng = np.random.default_rng(seed)

    # k-means++ seeding over the distinct values.
    means = np.empty(k)
    means[0] = distinct[rng.integers(distinct.size)]
    d2 = (distinct - means[0]) ** 2
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            means[j] = distinct[rng.integers(distinct.size)]
        else:
            means[j] = distinct[rng.choice(distinct.size, p=d2 / total)]
        d2 = np.minimum(d2, (distinct - means[j]) ** 2)

    weights = np.full(k, 1.0 / k)
    stds = np.full(k, max(float(x.std()), floor))

    ll = -np.inf
    prev_ll = -np.inf
    for _ in range(EM_MAX_ITER):
        log_comp = (
            np.log(weights)[None, :]
            - 0.5 * _LOG_2PI
            - np.log(stds)[None, :]
            - 0.5 * ((x[:, None] - means[None, :]) / stds[None, :]) ** 2
        )
        row_max = log_comp.max(axis=1, keepdims=True)
        log_norm = row_max[:, 0] + np.log(np.exp(log_comp - row_max).sum(axis=1))
        ll = float(log_norm.sum())
        assert ll >= prev_ll - 1e-8 * max(1.0, abs(prev_ll)), "EM log-likelihood decreased"
        resp = np.exp(log_comp - log_norm[:, None])
        if ll - prev_ll < EM_TOL:
            break
        prev_ll = ll
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        weights = nk / x.size
        means = (resp * x[:, None]).sum(axis=0) / nk
        var = (resp * (x[:, None] - means[None, :]) ** 2).sum(axis=0) / nk
        stds = np.maximum(np.sqrt(var), floor)

    return weights, means, stds, ll


def fit_gmm(values, K: int = DEFAULT_MODES, seed: int = 0) -> GmmParams:
    """Fit a mixture with at most K modes.

    EM alone keeps redundant components alive (two components sharing one
    true cluster both retain large weights), so the mode count is selected
    by BIC across EM runs at k = 1..K; ties go to the smaller k.  Modes with
    weight < 0.005 are then deactivated and the rest renormalized.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise TransformError("cannot fit a GMM on an empty column")
    if K < 1:
        raise TransformError("mode count must be >= 1")
    floor = _std_floor(x)
    distinct = np.unique(x)
    if distinct.size < 2:
        return GmmParams(np.array([1.0]), np.array([x.mean()]), np.array([floor]), np.array([True]))

    k_max = min(K, distinct.size)
    best = None
    best_bic = np.inf
    for k in range(1, k_max + 1):
        weights, means, stds, ll = _em_fit(x, k, seed + k, floor)
        bic = -2.0 * ll + (3 * k - 1) * np.log(x.size)
        if bic < best_bic - 1e-9:
            best_bic = bic
            best = (weights, means, stds)

    weights, means, stds = best
    active = weights >= WEIGHT_PRUNE
    if not active.any():
        active = weights == weights.max()
    weights = np.where(active, weights, 0.0)
    weights[active] /= weights[active].sum()
    return GmmParams(weights, means, stds, active)


def mode_responsibilities(params: GmmParams, c: float) -> np.ndarray:
    """rho_k over the active modes: weight_k * N(c; mean_k, std_k), normalized."""
    return _responsibilities(params, np.asarray([c], dtype=np.float64))[0]


def _responsibilities(params: GmmParams, values: np.ndarray) -> np.ndarray:
    w, mu, sd = params.active_triples()
    log_rho = (
        np.log(w)[None, :]
        - np.log(sd)[None, :]
        - 0.5 * ((values[:, None] - mu[None, :]) / sd[None, :]) ** 2
    )
    row_max = log_rho.max(axis=1, keepdims=True)
    bad = ~np.isfinite(row_max[:, 0])
    if bad.any():
        # Densities underflowed even in log space: fall back to a one-hot at
        # the nearest mean.
        nearest = np.abs(values[:, None] - mu[None, :]).argmin(axis=1)
        rho = np.exp(np.where(np.isfinite(log_rho), log_rho - np.nan_to_num(row_max), -np.inf))
        rho[bad] = 0.0
        rho[bad, nearest[bad]] = 1.0
        rho /= rho.sum(axis=1, keepdims=True)
        return rho
    rho = np.exp(log_rho - row_max)
    rho /= rho.sum(axis=1, keepdims=True)
    return rho


def _sample_modes(rho: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF categorical sampling, one uniform per row."""
    cum = np.cumsum(rho, axis=1)
    u = rng.random(rho.shape[0])
    return (u[:, None] > cum).sum(axis=1).clip(0, rho.shape[1] - 1)


def encode_numeric(params: GmmParams, c: float, rng: np.random.Generator):
    """One value -> (alpha, one-hot beta over active modes)."""
    if not math.isfinite(c):
        raise TransformError("cannot encode a non-finite value")
    alpha, beta = _encode_numeric_batch(params, np.asarray([c], dtype=np.float64), rng)
    return float(alpha[0]), beta[0]


def _encode_numeric_batch(params: GmmParams, values: np.ndarray, rng: np.random.Generator):
    rho = _responsibilities(params, values)
    ks = _sample_modes(rho, rng)
    _, mu, sd = params.active_triples()
    alpha = np.clip((values - mu[ks]) / (4.0 * sd[ks]), -1.0, 1.0)
    beta = np.zeros((values.size, params.n_active), dtype=np.float64)
    beta[np.arange(values.size), ks] = 1.0
    return alpha, beta


def decode_numeric(params: GmmParams, alpha: float, beta) -> float:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (params.n_active,) or np.count_nonzero(beta == 1.0) != 1 or beta.sum() != 1.0:
        raise TransformError("beta must be one-hot over the active modes")
    k = int(beta.argmax())
    _, mu, sd = params.active_triples()
    return float(alpha) * 4.0 * sd[k] + mu[k]


def encode_categorical(order: tuple[str, ...], label: str) -> np.ndarray:
    if not order:
        raise TransformError("empty category order")
    try:
        idx = order.index(label)
    except ValueError as exc:
        raise TransformError(f"unknown label {label!r}") from exc
    vec = np.zeros(len(order), dtype=np.float64)
    vec[idx] = 1.0
    return vec


def decode_categorical(order: tuple[str, ...], vector) -> str:
    vec = np.asarray(vector, dtype=np.float64)
    if not order:
        raise TransformError("empty category order")
    if vec.shape != (len(order),):
        raise TransformError(f"vector length {vec.shape} != |order| {len(order)}")
    return order[int(vec.argmax())]  # argmax ties break to the lowest index


@dataclass
class ColumnSpan:
    column: int  # index into the source schema
    kind: str  # "numeric" | "categorical"
    start: int
    width: int


@dataclass
class ColumnTransformer:
    """Fitted per-column transforms plus the encoded-row span layout
    (numeric columns first, then categorical, each in schema order)."""

    schema: tuple[ColumnMeta, ...]
    gmms: dict[int, GmmParams]
    spans: tuple[ColumnSpan, ...]
    total_width: int

    @classmethod
    def fit(cls, table: Table, modes: int = DEFAULT_MODES, seed: int = 0) -> "ColumnTransformer":
        gmms: dict[int, GmmParams] = {}
        spans: list[ColumnSpan] = []
        start = 0
        for i in table.numeric_indices():
            values = [v for v in table.column_values(i) if v is not None]
            rng = substream(seed, "gmm", table.name, i)
            params = fit_gmm(np.asarray(values, dtype=np.float64), modes, int(rng.integers(2**63)))
            gmms[i] = params
            width = 1 + params.n_active
            spans.append(ColumnSpan(i, "numeric", start, width))
            start += width
        for i in table.categorical_indices():
            width = len(table.columns[i].categories)
            if width == 0:
                raise TransformError(f"categorical column {table.columns[i].name!r} has no categories")
            spans.append(ColumnSpan(i, "categorical", start, width))
            start += width
        return cls(tuple(table.columns), gmms, tuple(spans), start)

    def span_for(self, column: int) -> ColumnSpan:
        for s in self.spans:
            if s.column == column:
                return s
        raise KeyError(column)

    def to_dict(self) -> dict:
        """JSON-safe dump; float64 values survive json round trips exactly."""
        return {
            "schema": [
                {
                    "name": c.name,
                    "kind": c.kind.variant,
                    "reason": c.kind.reason,
                    "categories": list(c.categories),
                }
                for c in self.schema
            ],
            "gmms": {
                str(i): {
                    "weights": g.weights.tolist(),
                    "means": g.means.tolist(),
                    "stds": g.stds.tolist(),
                    "active": g.active.tolist(),
                }
                for i, g in self.gmms.items()
            },
            "spans": [[s.column, s.kind, s.start, s.width] for s in self.spans],
            "total_width": self.total_width,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ColumnTransformer":
        from tabforge.data import ColumnKind, ColumnMeta

        schema = tuple(
            ColumnMeta(
                c["name"],
                ColumnKind(c["kind"], c.get("reason", "")),
                tuple(c["categories"]),
                0.0,
            )
            for c in doc["schema"]
        )
        gmms = {
            int(i): GmmParams(
                np.array(g["weights"]),
                np.array(g["means"]),
                np.array(g["stds"]),
                np.array(g["active"], dtype=bool),
            )
            for i, g in doc["gmms"].items()
        }
        spans = tuple(ColumnSpan(c, k, s, w) for c, k, s, w in doc["spans"])
        return cls(schema, gmms, spans, doc["total_width"])


@dataclass
class TransformedMatrix:
    matrix: np.ndarray  # float32, (n_rows, total_width)
    transformer: ColumnTransformer

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[1] != self.transformer.total_width:
            raise TransformError(
                f"matrix width {self.matrix.shape} != encoded width {self.transformer.total_width}"
            )


def encode_table(table: Table, transformer: ColumnTransformer, rng: np.random.Generator) -> TransformedMatrix:
    """Encode all rows; nulls are a caller bug (clean first)."""
    if tuple(table.columns) != transformer.schema:
        raise TransformError("transformer was fitted on a different schema")
    n = table.n_rows
    out = np.zeros((n, transformer.total_width), dtype=np.float32)
    for span in transformer.spans:
        col = table.column_values(span.column)
        if any(v is None for v in col):
            raise TransformError(f"null cell in column {transformer.schema[span.column].name!r}")
        if span.kind == "numeric":
            values = np.asarray(col, dtype=np.float64)
            alpha, beta = _encode_numeric_batch(transformer.gmms[span.column], values, rng)
            out[:, span.start] = alpha.astype(np.float32)
            out[:, span.start + 1 : span.start + span.width] = beta.astype(np.float32)
        else:
            order = transformer.schema[span.column].categories
            index = {cat: j for j, cat in enumerate(order)}
            for r, v in enumerate(col):
                out[r, span.start + index[v]] = 1.0
    return TransformedMatrix(out, transformer)


def decode_matrix(matrix: np.ndarray, transformer: ColumnTransformer) -> Table:
    """Invert an encoded matrix (hard one-hot blocks) back into a Table."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[1] != transformer.total_width:
        raise TransformError("matrix width does not match the transformer layout")
    n = matrix.shape[0]
    cells: dict[int, list] = {}
    for span in transformer.spans:
        block = matrix[:, span.start : span.start + span.width]
        if span.kind == "numeric":
            params = transformer.gmms[span.column]
            _, mu, sd = params.active_triples()
            ks = block[:, 1:].argmax(axis=1)
            alpha = block[:, 0].astype(np.float64)
            cells[span.column] = list(alpha * 4.0 * sd[ks] + mu[ks])
        else:
            order = transformer.schema[span.column].categories
            ks = block.argmax(axis=1)
            cells[span.column] = [order[k] for k in ks]
    schema = [
        ColumnMeta(c.name, c.kind, c.categories, 0.0) for c in transformer.schema
    ]
    rows = [[cells[i][r] for i in range(len(schema))] for r in range(n)]
    return Table(name="decoded", columns=schema, rows=rows)


def decode_table(tm: TransformedMatrix) -> Table:
    return decode_matrix(tm.matrix, tm.transformer)
