"""Adam optimizer and the mutable training state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def clip_grad_norm(named_params, max_norm, skip=()):
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; returns the norm before clipping."""
    grads = [p.grad for k, p in named_params.items() if p.grad is not None and k not in skip]
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class Adam:
    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, frozen=()):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None or name in frozen:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.lr != 0.0:
                p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.zero_grad()

    def state_arrays(self):
        out = {}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays, t):
        self.t = t
        for name in self.params:
            if f"adam.m.{name}" in arrays:
                self.m[name] = np.array(arrays[f"adam.m.{name}"], dtype=np.float64)
                self.v[name] = np.array(arrays[f"adam.v.{name}"], dtype=np.float64)


@dataclass
class TrainState:
    params: object  # EncoderParams
    optimizer: Adam
    rng: np.random.Generator
    step: int = 0
    head: object = None  # HeadParams during fine-tuning
    log: list = field(default_factory=list)

    def named_parameters(self):
        named = dict(self.params.tensors)
        if self.head is not None:
            named.update(self.head.tensors)
        return named
