"""Reverse-mode differentiation helpers.

Tensors are ``torch.Tensor`` objects; the graph bookkeeping is done by
``torch.autograd``.  This module pins down the contract the rest of the
package relies on: which primitives are available, how gradient maps are
returned, the differentiable gradient norm used by the gradient penalty,
and an independent central-difference checker.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Mapping, Union

import numpy as np
import torch
import torch.nn.functional as F

_DTYPES = {"float64": torch.float64, "float32": torch.float32}
_dtype = torch.float64


def set_precision(name: str) -> None:
    """Select the working float type ("float64" or "float32")."""
    global _dtype
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}, expected one of {sorted(_DTYPES)}")
    _dtype = _DTYPES[name]


def get_dtype() -> torch.dtype:
    return _dtype


def as_tensor(data, requires_grad: bool = False, dtype: torch.dtype | None = None) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(data), dtype=dtype or _dtype).clone()
    if requires_grad:
        t.requires_grad_(True)
    return t


def detach(t: torch.Tensor) -> torch.Tensor:
    return t.detach()


def _l2(x: torch.Tensor) -> torch.Tensor:
    return torch.linalg.vector_norm(x)


# name -> (callable, arity)
OPS: Dict[str, tuple] = {
    "matmul": (torch.matmul, 2),
    "add": (torch.add, 2),
    "subtract": (torch.sub, 2),
    "multiply": (torch.mul, 2),
    "concatenate": (lambda a, b: torch.cat([a, b], dim=-1), 2),
    "slice": (lambda a: a[..., 1:], 1),
    "sigmoid": (torch.sigmoid, 1),
    "tanh": (torch.tanh, 1),
    "relu": (torch.relu, 1),
    "leaky_relu": (lambda a: F.leaky_relu(a, 0.2), 1),
    "square": (torch.square, 1),
    "sqrt": (torch.sqrt, 1),
    "abs": (torch.abs, 1),
    "exp": (torch.exp, 1),
    "log": (torch.log, 1),
    "sum": (torch.sum, 1),
    "mean": (torch.mean, 1),
    "l2_norm": (_l2, 1),
    "softmax": (lambda a: torch.softmax(a, dim=-1), 1),
}

DOUBLE_BACKWARD_OPS = frozenset(
    {"matmul", "add", "concatenate", "relu", "leaky_relu", "sigmoid", "sum", "mean", "l2_norm", "square"}
)


def op_catalog() -> frozenset:
    return frozenset(OPS)


def supports_double_backward(name: str) -> bool:
    if name not in OPS:
        raise KeyError(name)
    return name in DOUBLE_BACKWARD_OPS


Params = Union[Mapping[str, torch.Tensor], Iterable[torch.Tensor]]


def _named(wrt: Params) -> Dict:
    if isinstance(wrt, Mapping):
        return dict(wrt)
    return {i: p for i, p in enumerate(wrt)}


def backward(root: torch.Tensor, wrt: Params, create_graph: bool = False) -> Dict:
    """Return ``{id: d root / d p}`` for every requested parameter.

    Parameters not reachable from ``root`` get zero gradients.  With
    ``create_graph=True`` the returned gradients are themselves part of the
    graph and can be differentiated again.
    """
    if root.numel() != 1:
        raise ValueError("backward requires scalar root")
    named = _named(wrt)
    keys = list(named)
    tensors = [named[k] for k in keys]
    if not root.requires_grad:
        return {k: torch.zeros_like(t) for k, t in zip(keys, tensors)}
    grads = torch.autograd.grad(
        root.reshape(()), tensors, create_graph=create_graph, retain_graph=True, allow_unused=True
    )
    return {k: torch.zeros_like(t) if g is None else g for k, t, g in zip(keys, tensors, grads)}


def grad_norm(root: torch.Tensor, wrt_input: torch.Tensor, per_sample: bool = False) -> torch.Tensor:
    """Differentiable L2 norm of the gradient of ``root`` w.r.t. ``wrt_input``.

    With ``per_sample=True`` the leading axis of ``wrt_input`` indexes
    independent samples; ``root`` may then hold one value per sample and a
    vector of per-sample norms is returned.
    """
    if not root.requires_grad:
        raise ValueError("disconnected gradient")
    if per_sample:
        (g,) = torch.autograd.grad(root.sum(), wrt_input, create_graph=True, allow_unused=True)
    else:
        if root.numel() != 1:
            raise ValueError("backward requires scalar root")
        (g,) = torch.autograd.grad(root.reshape(()), wrt_input, create_graph=True, allow_unused=True)
    if g is None:
        raise ValueError("disconnected gradient")
    if per_sample:
        return torch.linalg.vector_norm(g.reshape(g.shape[0], -1), dim=1)
    return torch.linalg.vector_norm(g)


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    rel_errors: np.ndarray = field(repr=False)
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)


def numeric_gradient(f: Callable[[torch.Tensor], torch.Tensor], point: torch.Tensor, step: float) -> np.ndarray:
    x = point.detach().clone()
    flat = x.view(-1)
    out = np.zeros(flat.numel())
    # f may take gradients internally (double backward), so only the
    # in-place perturbation runs without autograd
    for i in range(flat.numel()):
        orig = flat[i].item()
        with torch.no_grad():
            flat[i] = orig + step
        fp = float(f(x).detach())
        with torch.no_grad():
            flat[i] = orig - step
        fm = float(f(x).detach())
        with torch.no_grad():
            flat[i] = orig
        out[i] = (fp - fm) / (2 * step)
    return out.reshape(tuple(point.shape))


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def check_gradient(
    f: Callable[[torch.Tensor], torch.Tensor],
    point: torch.Tensor,
    step: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare the analytic gradient of scalar ``f`` at ``point`` with central differences."""
    if step <= 0 or tol <= 0:
        raise ValueError("step and tol must be positive")
    x = point.detach().clone().requires_grad_(True)
    y = f(x)
    analytic = backward(y, [x])[0].detach().cpu().numpy()
    numeric = numeric_gradient(f, point, step)
    rel = relative_error(analytic, numeric, floor)
    worst = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(worst <= tol, worst, rel, analytic, numeric)
