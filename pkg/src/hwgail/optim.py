"""Gradient steps on :class:`ParameterSet` values.

``torch.optim`` does the arithmetic.  The wrapper keeps one leaf tensor per
parameter name, so a step returns a fresh parameter set and never mutates
its input.
"""

from __future__ import annotations

from typing import Dict, Optional

import torch

from hwgail.networks import ParameterSet


def sgd_step(params: ParameterSet, grads: Dict[str, torch.Tensor], lr: float) -> ParameterSet:
    return ParameterSet(params.spec, ((k, (v - lr * grads[k]).detach()) for k, v in params.items()))


class TorchOptimizer:
    """Functional front end for a ``torch.optim`` optimizer class."""

    def __init__(self, cls, **kwargs):
        self.cls = cls
        self.kwargs = kwargs
        self.leaves: Dict[str, torch.Tensor] = {}
        self.opt: Optional[torch.optim.Optimizer] = None

    @property
    def lr(self) -> float:
        return self.kwargs["lr"]

    def step(self, params: ParameterSet, grads: Dict[str, torch.Tensor]) -> ParameterSet:
        if self.opt is None:
            self.leaves = {k: v.detach().clone() for k, v in params.items()}
            self.opt = self.cls(list(self.leaves.values()), **self.kwargs)
        with torch.no_grad():
            for k, leaf in self.leaves.items():
                leaf.copy_(params[k])
                leaf.grad = grads[k].detach().to(leaf.dtype).clone()
            self.opt.step()
        return ParameterSet(params.spec, ((k, leaf.detach().clone()) for k, leaf in self.leaves.items()))

    def state_dict(self) -> dict:
        return {} if self.opt is None else self.opt.state_dict()


def make_optimizer(kind: str, lr: float, momentum: float = 0.9) -> TorchOptimizer:
    if kind == "sgd":
        return TorchOptimizer(torch.optim.SGD, lr=lr, momentum=momentum)
    if kind == "adam":
        return TorchOptimizer(torch.optim.Adam, lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def apply_step(params: ParameterSet, grads, lr: float, optimizer: Optional[TorchOptimizer] = None) -> ParameterSet:
    if optimizer is None:
        return sgd_step(params, grads, lr)
    return optimizer.step(params, grads)
