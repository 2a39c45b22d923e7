"""Layer descriptors and the Net executor.

A network is described by an ordered tuple of descriptors (its NetSpec) and
executed by :class:`Net`, which owns the parameters.  Descriptors carrying a
``span`` apply to a slice of the feature vector; a maximal run of span
descriptors must tile the current width exactly (this is how per-column
output heads are expressed: one wide Dense followed by tanh/softmax/gumbel
spans).

``Dense.segments`` optionally names contiguous row blocks of the weight
matrix (e.g. which rows consume the noise vector vs. the conditional
vector).  Training uses this to transfer weights between networks whose
input widths differ.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from tabforge.nn import tensor as T
from tabforge.nn.tensor import Tensor


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int
    segments: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if self.segments and sum(w for _, w in self.segments) != self.in_dim:
            raise ValueError("segment widths must sum to in_dim")


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class LeakyReLU:
    slope: float = 0.2


@dataclass(frozen=True)
class Tanh:
    span: tuple[int, int] | None = None


@dataclass(frozen=True)
class Softmax:
    span: tuple[int, int] | None = None


@dataclass(frozen=True)
class GumbelSoftmax:
    span: tuple[int, int]
    tau: float = 0.2


@dataclass(frozen=True)
class BatchNorm:
    dim: int
    momentum: float = 0.1
    eps: float = 1e-5


@dataclass(frozen=True)
class Dropout:
    p: float


@dataclass(frozen=True)
class ConcatSkip:
    """Output = input ⊕ inner(input); the residual-by-concatenation block."""

    inner: tuple = field(default_factory=tuple)


_SPAN_KINDS = (Tanh, Softmax, GumbelSoftmax)


def _has_span(layer) -> bool:
    return isinstance(layer, _SPAN_KINDS) and layer.span is not None


class Net:
    """Executable network: parameters + compiled layer program."""

    def __init__(self, layers: Sequence, rng: np.random.Generator, dtype=np.float32):
        self.layers = tuple(layers)
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.param_segments: dict[str, tuple[tuple[str, int], ...]] = {}
        self._program = []
        self.in_width: int | None = None
        self.out_width: int | None = None
        self._trace: list | None = None
        self._last_output: Tensor | None = None
        self.span_logits: dict[int, Tensor] = {}
        self.gumbel_scaled: dict[int, Tensor] = {}
        self._compile(rng)

    # -- construction ------------------------------------------------------

    def _add_dense(self, name: str, layer: Dense, rng) -> None:
        k = 1.0 / np.sqrt(layer.in_dim)
        w = rng.uniform(-k, k, size=(layer.in_dim, layer.out_dim)).astype(self.dtype)
        b = rng.uniform(-k, k, size=(layer.out_dim,)).astype(self.dtype)
        self.params[f"{name}.W"] = Tensor(w, requires_grad=True)
        self.params[f"{name}.b"] = Tensor(b, requires_grad=True)
        if layer.segments:
            self.param_segments[f"{name}.W"] = layer.segments

    def _add_batchnorm(self, name: str, layer: BatchNorm) -> None:
        self.params[f"{name}.gamma"] = Tensor(np.ones(layer.dim, dtype=self.dtype), requires_grad=True)
        self.params[f"{name}.beta"] = Tensor(np.zeros(layer.dim, dtype=self.dtype), requires_grad=True)
        self.buffers[f"{name}.running_mean"] = np.zeros(layer.dim, dtype=self.dtype)
        self.buffers[f"{name}.running_var"] = np.ones(layer.dim, dtype=self.dtype)

    def _compile(self, rng, layers=None, prefix="", width=None):
        top_level = layers is None
        layers = self.layers if layers is None else layers
        program = []
        first_in = None
        i = 0
        while i < len(layers):
            layer = layers[i]
            name = f"{prefix}{i}"
            if isinstance(layer, Dense):
                if width is not None and width != layer.in_dim:
                    raise ValueError(f"layer {name}: expected input width {width}, Dense has {layer.in_dim}")
                if width is None:
                    first_in = layer.in_dim
                self._add_dense(name, layer, rng)
                program.append(("dense", name, layer))
                width = layer.out_dim
            elif isinstance(layer, (ReLU, LeakyReLU)):
                program.append(("act", name, layer))
            elif isinstance(layer, BatchNorm):
                if width is not None and width != layer.dim:
                    raise ValueError(f"layer {name}: BatchNorm dim {layer.dim} != width {width}")
                self._add_batchnorm(name, layer)
                program.append(("batchnorm", name, layer))
            elif isinstance(layer, Dropout):
                if not 0.0 <= layer.p < 1.0:
                    raise ValueError("dropout p must be in [0, 1)")
                program.append(("dropout", name, layer))
            elif isinstance(layer, ConcatSkip):
                inner_prog, inner_out, inner_in = self._compile(rng, layer.inner, prefix=f"{name}.", width=width)
                program.append(("concat_skip", name, inner_prog))
                if width is None:
                    width = inner_in
                    first_in = inner_in
                width += inner_out
            elif _has_span(layer):
                group = []
                while i < len(layers) and _has_span(layers[i]):
                    group.append(layers[i])
                    i += 1
                i -= 1
                if width is None:
                    raise ValueError("span activations need a known width")
                self._check_partition(group, width)
                program.append(("span_group", name, tuple(sorted(group, key=lambda l: l.span[0]))))
            elif isinstance(layer, _SPAN_KINDS):  # span=None: full width
                program.append(("full_act", name, layer))
            else:
                raise TypeError(f"unknown layer descriptor {layer!r}")
            i += 1
        if top_level:
            self._program = program
            self.out_width = width
            self.in_width = first_in if first_in is not None else width
            return None
        return program, width, first_in

    @staticmethod
    def _check_partition(group, width: int) -> None:
        spans = sorted(layer.span for layer in group)
        pos = 0
        for start, w in spans:
            if start != pos or w <= 0:
                raise ValueError(f"spans {spans} do not partition width {width}")
            pos = start + w
        if pos != width:
            raise ValueError(f"spans {spans} do not partition width {width}")

    # -- execution -----------------------------------------------------------

    def forward(self, x, mode: str = "train", rng: np.random.Generator | None = None) -> Tensor:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be train or eval, got {mode!r}")
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim != 2 or (self.in_width is not None and x.data.shape[1] != self.in_width):
            raise ValueError(f"expected input shape (batch, {self.in_width}), got {x.data.shape}")
        self._trace = []
        self.span_logits = {}
        self.gumbel_scaled = {}
        out = self._run(self._program, x, mode, rng)
        self._last_output = out
        return out

    def _run(self, program, x: Tensor, mode: str, rng) -> Tensor:
        for kind, name, layer in program:
            if kind == "dense":
                w, b = self.params[f"{name}.W"], self.params[f"{name}.b"]
                self._trace.append(("dense", w))
                x = T.matmul(x, w) + b
            elif kind == "act":
                if isinstance(layer, ReLU):
                    factor = (x.data > 0.0).astype(x.data.dtype)
                    x = T.relu(x)
                else:
                    factor = np.where(x.data > 0.0, 1.0, layer.slope).astype(x.data.dtype)
                    x = T.leaky_relu(x, layer.slope)
                self._trace.append(("scale", factor))
            elif kind == "batchnorm":
                x = self._batchnorm(name, layer, x, mode)
                self._trace.append(("opaque", None))
            elif kind == "dropout":
                if mode == "train" and layer.p > 0.0:
                    if rng is None:
                        raise ValueError("train-mode dropout needs an rng")
                    keep = (rng.random(x.data.shape) >= layer.p).astype(x.data.dtype)
                    scaled = keep / np.asarray(1.0 - layer.p, dtype=x.data.dtype)
                    x = x * Tensor(scaled)
                    self._trace.append(("scale", scaled))
                else:
                    self._trace.append(("scale", None))
            elif kind == "concat_skip":
                inner_out = self._run(layer, x, mode, rng)
                x = T.concat([x, inner_out], axis=1)
                self._trace.append(("opaque", None))
            elif kind == "full_act":
                x = self._full_act(layer, x, mode, rng)
                self._trace.append(("opaque", None))
            elif kind == "span_group":
                x = self._span_group(layer, x, mode, rng)
                self._trace.append(("opaque", None))
        return x

    def _full_act(self, layer, x: Tensor, mode: str, rng) -> Tensor:
        if isinstance(layer, Tanh):
            return T.tanh(x)
        if isinstance(layer, Softmax):
            self.span_logits[0] = x
            return T.softmax(x, axis=1)
        return self._gumbel(layer, x, 0, mode, rng)

    def _span_group(self, group, x: Tensor, mode: str, rng) -> Tensor:
        parts = []
        for layer in group:
            start, width = layer.span
            sl = x[:, start : start + width]
            if isinstance(layer, Tanh):
                parts.append(T.tanh(sl))
            elif isinstance(layer, Softmax):
                self.span_logits[start] = sl
                parts.append(T.softmax(sl, axis=1))
            else:
                parts.append(self._gumbel(layer, sl, start, mode, rng))
        return T.concat(parts, axis=1)

    def _gumbel(self, layer: GumbelSoftmax, logits: Tensor, start: int, mode: str, rng) -> Tensor:
        self.span_logits[start] = logits
        if mode == "eval":
            # Deterministic: hard one-hot at the un-noised argmax.
            idx = logits.data.argmax(axis=1)
            hard = np.zeros_like(logits.data)
            hard[np.arange(hard.shape[0]), idx] = 1.0
            return Tensor(hard)
        if rng is None:
            raise ValueError("train-mode gumbel-softmax needs an rng")
        u = rng.random(logits.data.shape)
        u = np.clip(u, 1e-12, 1.0 - 1e-12)
        noise = -np.log(-np.log(u)).astype(logits.data.dtype)
        scaled = (logits + Tensor(noise)) * (1.0 / layer.tau)
        self.gumbel_scaled[start] = scaled
        return T.softmax(scaled, axis=1)

    def _batchnorm(self, name: str, layer: BatchNorm, x: Tensor, mode: str) -> Tensor:
        gamma, beta = self.params[f"{name}.gamma"], self.params[f"{name}.beta"]
        if mode == "train":
            mu = x.mean(axis=0)
            centered = x - mu
            var = (centered * centered).mean(axis=0)
            norm = centered * ((var + layer.eps) ** -0.5)
            m = layer.momentum
            self.buffers[f"{name}.running_mean"] = (
                (1.0 - m) * self.buffers[f"{name}.running_mean"] + m * mu.data
            ).astype(self.dtype)
            self.buffers[f"{name}.running_var"] = (
                (1.0 - m) * self.buffers[f"{name}.running_var"] + m * var.data
            ).astype(self.dtype)
        else:
            rm = self.buffers[f"{name}.running_mean"]
            rv = self.buffers[f"{name}.running_var"]
            norm = (x - Tensor(rm)) * Tensor((rv + layer.eps) ** -0.5)
        return norm * gamma + beta

    # -- gradients -------------------------------------------------------------

    def backward(self, output_grad: np.ndarray) -> dict[str, np.ndarray]:
        """Seed the cached forward output with ``output_grad`` and return
        parameter gradients (also left on ``.grad``)."""
        if self._last_output is None:
            raise RuntimeError("backward called before forward")
        self._last_output.backward(np.asarray(output_grad, dtype=self.dtype))
        return {n: p.grad for n, p in self.params.items() if p.grad is not None}

    def input_gradient(self) -> Tensor:
        """Gradient of the summed scalar output w.r.t. the last forward's
        input, built as a differentiable graph over the parameters.

        Only defined for plain stacks of Dense / (Leaky)ReLU / Dropout with a
        scalar output: exactly the WGAN critic shape.  The activation and
        dropout factors enter as constants, which is their a.e. derivative.
        """
        if self._trace is None:
            raise RuntimeError("input_gradient called before forward")
        if self.out_width != 1:
            raise ValueError("input_gradient requires a scalar-output net")
        batch = self._last_output.data.shape[0]
        g: Tensor | None = None
        for kind, payload in reversed(self._trace):
            if kind == "dense":
                w = payload
                if g is None:
                    g = T.matmul(Tensor(np.ones((batch, 1), dtype=self.dtype)), T.transpose(w))
                else:
                    g = T.matmul(g, T.transpose(w))
            elif kind == "scale":
                if payload is not None:
                    if g is None:
                        raise ValueError("net does not end in a Dense layer")
                    g = g * Tensor(payload)
            else:
                raise ValueError("input_gradient only supports Dense/activation/Dropout stacks")
        return g

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- state ---------------------------------------------------------------

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {n: p.data.copy() for n, p in self.params.items()}
        state.update({n: b.copy() for n, b in self.buffers.items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for name in list(self.params) + list(self.buffers):
            if name not in state:
                if strict:
                    raise KeyError(f"missing tensor {name!r}")
                continue
            target = self.params[name].data if name in self.params else self.buffers[name]
            src = np.asarray(state[name], dtype=target.dtype)
            if src.shape != target.shape:
                raise ValueError(f"shape mismatch for {name!r}: {src.shape} vs {target.shape}")
            if name in self.params:
                self.params[name].data = src.copy()
            else:
                self.buffers[name] = src.copy()
