"""Adapter blocks and reparameterized prefixes, injected as per-layer hooks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .errors import LengthError


@dataclass
class AdapterBlock:
    """Residual bottleneck: ``ReLU(LN(h) @ W_db) @ W_bd + h``."""

    W_db: Tensor  # [d, b]
    W_bd: Tensor  # [b, d]
    ln_gamma: Tensor  # [d]
    ln_beta: Tensor  # [d]
    eps: float = 1e-5

    @property
    def d(self) -> int:
        return self.W_db.shape[0]

    @property
    def b(self) -> int:
        return self.W_db.shape[1]

    def tensors(self) -> dict[str, Tensor]:
        return {"down": self.W_db, "up": self.W_bd, "ln.g": self.ln_gamma, "ln.b": self.ln_beta}


@dataclass
class PrefixParams:
    """Small prefix matrix plus the two-layer MLP that expands it to every layer."""

    P_prime: Tensor  # [l, d]
    mlp_W1: Tensor  # [d, m]
    mlp_W2: Tensor  # [m, d * n]

    @property
    def length(self) -> int:
        return self.P_prime.shape[0]

    @property
    def d(self) -> int:
        return self.P_prime.shape[1]

    @property
    def inner(self) -> int:
        return self.mlp_W1.shape[1]

    @property
    def n_layers(self) -> int:
        return self.mlp_W2.shape[1] // self.d

    def tensors(self) -> dict[str, Tensor]:
        return {"p": self.P_prime, "w1": self.mlp_W1, "w2": self.mlp_W2}


@dataclass
class PeftHooks:
    """Per-layer injections for one language.

    Layers are numbered encoder first (``0 .. n_enc-1``) then decoder.
    """

    adapters: dict[int, AdapterBlock] = field(default_factory=dict)
    prefix: PrefixParams | None = None

    def __bool__(self) -> bool:
        return bool(self.adapters) or self.prefix is not None

    def layer_prefixes(self, n_layers: int) -> list[Tensor | None]:
        if self.prefix is None or self.prefix.length == 0:
            return [None] * n_layers
        if self.prefix.n_layers != n_layers:
            raise ShapeError("prefix", self.prefix.mlp_W2.shape, detail=f"expected {n_layers} layers")
        P = reparam_prefix(self.prefix)
        d = self.prefix.d
        return [prefix_slice(P, i, d) for i in range(n_layers)]


def adapter_param_count(d: int, b: int) -> int:
    return 2 * d * b + 2 * d


def prefix_param_count(l: int, d: int, m: int, n: int) -> int:
    return l * d + d * m + m * d * n


def adapter_forward(block: AdapterBlock, h: Tensor) -> Tensor:
    if h.shape[-1] != block.d or block.W_bd.shape != (block.b, block.d):
        raise ShapeError("adapter", h.shape, block.W_db.shape, block.W_bd.shape)
    z = ad.layer_norm(h, block.ln_gamma, block.ln_beta, block.eps)
    z = ad.relu(ad.matmul(z, block.W_db))
    return ad.add(ad.matmul(z, block.W_bd), h)


def reparam_prefix(p: PrefixParams) -> Tensor:
    """Materialize ``P_theta = ReLU(P' @ W1) @ W2`` of shape ``[l, d * n]``."""
    d, m = p.d, p.inner
    if p.mlp_W1.shape[0] != d or p.mlp_W2.shape[0] != m or p.mlp_W2.shape[1] % d:
        raise ShapeError("reparam_prefix", p.P_prime.shape, p.mlp_W1.shape, p.mlp_W2.shape)
    return ad.matmul(ad.relu(ad.matmul(p.P_prime, p.mlp_W1)), p.mlp_W2)


def prefix_slice(P_theta: Tensor, layer: int, d: int) -> Tensor:
    return ad.slice_axis(P_theta, -1, layer * d, (layer + 1) * d)


def prefix_prepend(H_lm: Tensor, prefix: Tensor | None, max_len: int | None = None) -> Tensor:
    """Row-concatenate ``[prefix; H_lm]``; the prefix is shared across any batch dims."""
    l = 0 if prefix is None else prefix.shape[-2]
    t = H_lm.shape[-2]
    if max_len is not None and t + l > max_len:
        raise LengthError(f"sequence length {t} + prefix {l} exceeds max_seq_len {max_len}")
    if l == 0:
        return H_lm
    if prefix.shape[-1] != H_lm.shape[-1]:
        raise ShapeError("prefix_prepend", H_lm.shape, prefix.shape)
    return ad.concat_rows(prefix, H_lm)


def init_adapter_arrays(rng: np.random.Generator, d: int, b: int, dtype=np.float32) -> dict[str, np.ndarray]:
    # up-projection starts at zero so the block is the identity map
    return {
        "down": rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, b)).astype(dtype),
        "up": np.zeros((b, d), dtype=dtype),
        "ln.g": np.ones(d, dtype=dtype),
        "ln.b": np.zeros(d, dtype=dtype),
    }


def init_prefix_arrays(rng: np.random.Generator, l: int, d: int, m: int, n: int,
                       dtype=np.float32) -> dict[str, np.ndarray]:
    return {
        "p": rng.normal(0.0, 1.0, size=(l, d)).astype(dtype),
        "w1": rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, m)).astype(dtype),
        "w2": np.zeros((m, d * n), dtype=dtype),
    }
