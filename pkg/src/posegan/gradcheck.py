"""Finite-difference verification suites for primitives, losses and networks."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np
import torch
import torch.nn.functional as F
from torch.func import functional_call

from . import losses as L
from .autodiff import DOUBLE_BACKWARD_OPS, OPS, check_gradient, grad_norm
from .networks import Discriminator, Generator, QualityNetwork, param_l2
from .skeleton import SkeletonSpec

TINY_SKELETON = SkeletonSpec(4, ((0, 1), (1, 2), (1, 3)), name="tiny4")
DT = torch.float64


@dataclass
class SuiteResult:
    name: str
    checks: int
    max_rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34} checks={self.checks:<5d} max_rel_err={self.max_rel_error:.2e} tol={self.tol:.0e}"


def _rand(rng: np.random.Generator, *shape, low=-1.0, high=1.0) -> torch.Tensor:
    return torch.as_tensor(rng.uniform(low, high, size=shape), dtype=DT)


def _positive(name: str) -> bool:
    return name in ("sqrt", "log")


def _run(name: str, instances: int, tol: float, make: Callable[[int], tuple]) -> SuiteResult:
    worst = 0.0
    for i in range(instances):
        f, x = make(i)
        worst = max(worst, check_gradient(f, x, step=1e-5, tol=tol).max_rel_error)
    return SuiteResult(name, instances, worst, tol)


def primitive_suites(instances: int = 100, seed: int = 0) -> List[SuiteResult]:
    """First derivatives of every primitive, plus second derivatives of the double-backward subset."""
    rng = np.random.default_rng(seed)
    out = []
    for name, (fn, arity) in sorted(OPS.items()):
        def make(i, fn=fn, arity=arity, name=name):
            low = 0.2 if _positive(name) else -1.0
            if name == "matmul":
                a, b = _rand(rng, 3, 2), _rand(rng, 2, 4)
            else:
                a, b = _rand(rng, 3, 4, low=low), _rand(rng, 3, 4, low=low)
            w = None
            probe = fn(a, b) if arity == 2 else fn(a)
            w = _rand(rng, *probe.shape)
            which = i % arity
            if arity == 1:
                return (lambda x: (w * fn(x)).sum()), a
            if which == 0:
                return (lambda x: (w * fn(x, b)).sum()), a
            return (lambda x: (w * fn(a, x)).sum()), b
        out.append(_run(f"primitive/{name}", instances, 1e-4, make))

    for name in sorted(DOUBLE_BACKWARD_OPS):
        fn, arity = OPS[name]

        def make2(i, fn=fn, arity=arity, name=name):
            if name == "matmul":
                a, b = _rand(rng, 3, 2), _rand(rng, 2, 4)
            else:
                a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
            probe = fn(a, b) if arity == 2 else fn(a)
            w = _rand(rng, *probe.shape)
            other = b

            def g(x):
                # squared norm of the input gradient, differentiated again
                xx = x if x.requires_grad else x.clone().requires_grad_(True)
                y = (w * (fn(xx, other) if arity == 2 else fn(xx))).sum()
                return grad_norm(y, xx) ** 2

            if arity == 2 and i % 2 == 1:
                # mixed second derivative: gradient w.r.t. a as a function of b
                def g2(bx):
                    aa = a.clone().requires_grad_(True)
                    y = (w * fn(aa, bx)).sum()
                    return grad_norm(y, aa) ** 2
                return g2, b
            return g, a
        out.append(_run(f"double-backward/{name}", instances, 1e-4, make2))
    return out


def _poses(rng, B, n, J):
    return _rand(rng, B, n, J, 3)


def loss_suites(instances: int = 100, seed: int = 1) -> List[SuiteResult]:
    rng = np.random.default_rng(seed)
    spec = TINY_SKELETON
    w = L.LossWeights(floor_c=1e-3)
    out = []

    def probs(i):
        return _rand(rng, 4, low=0.05, high=0.95)

    def mk_dgan(i):
        pr, pf = probs(i), probs(i)
        return ((lambda x: L.d_gan_loss(x, pf)), pr) if i % 2 == 0 else ((lambda x: L.d_gan_loss(pr, x)), pf)
    out.append(_run("loss/d_gan", instances, 1e-4, mk_dgan))
    out.append(_run("loss/g_gan", instances, 1e-4, lambda i: (L.g_gan_loss, probs(i))))

    def _away_from_zero(*shape):
        # finite differences straddling |x| = 0 are meaningless; keep steps off the kink
        return _rand(rng, *shape, low=0.05, high=0.5) * torch.as_tensor(rng.choice([-1.0, 1.0], size=shape), dtype=DT)

    def mk_cons(i):
        last = _rand(rng, 2, 4, 3)
        pred = last.unsqueeze(1) + torch.cumsum(_away_from_zero(2, 5, 4, 3), dim=1)
        wp = L.LossWeights(p=[2.0, 1.5, 3.0][i % 3], floor_c=1e-3)
        return (lambda x: L.consistency_loss(x, wp, last_prior=last)), pred
    out.append(_run("loss/consistency", instances, 1e-4, mk_cons))

    def mk_div(i):
        a = _poses(rng, 2, 4, 4)
        b = a + _away_from_zero(2, 4, 4, 3)
        wd = L.LossWeights(eta=rng.uniform(0.5, 10))
        return (lambda x: L.diversity_loss(x, b, wd)), a
    out.append(_run("loss/diversity", instances, 1e-4, mk_div))

    def mk_energy(i):
        return (lambda x: L.energy_loss(x, w)), _poses(rng, 2, 5, 4)
    out.append(_run("loss/energy", instances, 1e-4, mk_energy))

    def mk_bone(i):
        ref = _rand(rng, 2, 3, low=0.2, high=1.0)
        return (lambda x: L.bone_loss(x, ref, spec)), _poses(rng, 2, 4, 4)
    out.append(_run("loss/bone", instances, 1e-4, mk_bone))

    def mk_total(i):
        last, ref = _rand(rng, 2, 4, 3), _rand(rng, 3, low=0.2, high=1.0)
        x0 = last.unsqueeze(1) + torch.cumsum(_away_from_zero(2, 4, 4, 3), dim=1)
        b = x0 + _away_from_zero(2, 4, 4, 3)
        p = probs(i)[:2]
        ww = L.LossWeights(alpha_pg=rng.uniform(0, 1), alpha_d=rng.uniform(0, 1), alpha_e=rng.uniform(0, 1),
                           alpha_b=rng.uniform(0, 1), floor_c=1e-3)

        def f(x):
            comps = {"gan": L.g_gan_loss(p * torch.sigmoid(x.mean())),
                     "consistency": L.consistency_loss(x, ww, last_prior=last),
                     "diversity": L.diversity_loss(x, b, ww), "energy": L.energy_loss(x, ww),
                     "bone": L.bone_loss(x, ref, spec)}
            return L.g_total_loss(comps, ww)
        return f, x0
    out.append(_run("loss/g_total", instances, 1e-4, mk_total))

    def mk_q(i):
        pr, pf = probs(i), probs(i)
        if i % 2 == 0:
            return (lambda th: L.q_loss(pr, pf, torch.linalg.vector_norm(th), 0.01)), _rand(rng, 6)
        return (lambda x: L.q_loss(x, pf, torch.tensor(1.0, dtype=DT), 0.01)), pr
    out.append(_run("loss/quality", instances, 1e-4, mk_q))

    def mk_cls(i):
        labels = rng.integers(0, 5, size=3)
        return (lambda s: L.classification_loss(s, labels)), _rand(rng, 3, 5, low=-3, high=3)
    out.append(_run("loss/classification", instances, 1e-4, mk_cls))

    out.append(gradient_penalty_suite(instances, seed + 100))
    return out


def _tiny_disc(seed: int, seq_len: int = 3, J: int = 4) -> Discriminator:
    return Discriminator(seq_len, J, width=6, depth=3, head_width=5, seed=seed, dtype=DT)


def gradient_penalty_suite(instances: int = 100, seed: int = 2) -> SuiteResult:
    """d/dtheta of the gradient penalty against finite differences (needs double backward)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(instances):
        D = _tiny_disc(int(rng.integers(1 << 30)))
        with torch.no_grad():
            # non-zero GAN head so the penalty depends on every layer
            D.gan_head[-1].weight.uniform_(-1, 1, generator=torch.Generator().manual_seed(i))
        prior, real, fake = _rand(rng, 2, 1, 4, 3), _rand(rng, 2, 2, 4, 3), _rand(rng, 2, 2, 4, 3)
        eps = _rand(rng, 2, low=0, high=1)
        names = [n for n, _ in D.named_parameters()]
        name = names[i % len(names)]
        params = dict(D.named_parameters())

        def f(x, name=name):
            Dp = lambda s: functional_call(D, {**params, name: x}, (s,))[0]
            return L.gradient_penalty(Dp, prior, real, fake, eps=eps)
        worst = max(worst, check_gradient(f, params[name].detach(), 1e-5, 1e-3).max_rel_error)
    return SuiteResult("loss/gradient_penalty(theta_d)", instances, worst, 1e-3)


def module_gradient_error(module: torch.nn.Module, forward: Callable, step: float = 1e-5) -> float:
    """Worst relative error over all parameters of ``forward(module_call)``."""
    params = dict(module.named_parameters())
    worst = 0.0
    for name, p in params.items():
        def f(x, name=name):
            call = lambda *args: functional_call(module, {**params, name: x}, args)
            return forward(call)
        worst = max(worst, check_gradient(f, p.detach(), step, 1e-4).max_rel_error)
    return worst


def network_suites(instances: int = 3, seed: int = 3) -> List[SuiteResult]:
    rng = np.random.default_rng(seed)
    J, m, n = 4, 3, 2
    out = []
    worst = {"generator": 0.0, "discriminator": 0.0, "classifier": 0.0, "quality": 0.0}
    for i in range(instances):
        s = int(rng.integers(1 << 30))
        prior, z = _rand(rng, 2, m, J, 3), _rand(rng, 2, 5)
        wout = _rand(rng, 2, n, J, 3)
        G = Generator(J, hidden=6, layers=2, z_dim=5, seed=s, dtype=DT)
        worst["generator"] = max(worst["generator"],
                                 module_gradient_error(G, lambda call: (wout * call(prior, z, n)).sum()))
        D = _tiny_disc(s, m + n, J)
        with torch.no_grad():
            D.gan_head[-1].weight.uniform_(-1, 1, generator=torch.Generator().manual_seed(s))
        seq = _rand(rng, 2, m + n, J, 3)
        worst["discriminator"] = max(worst["discriminator"],
                                     module_gradient_error(D, lambda call: call(seq)[0].sum()))
        D.init_classifier_head(3, seed=s)
        wc = _rand(rng, 2, 3)
        worst["classifier"] = max(worst["classifier"], module_gradient_error(
            _Classify(D), lambda call: (wc * call(seq)).sum()))
        Q = QualityNetwork(J, hidden=6, layers=2, seed=s, dtype=DT)
        with torch.no_grad():
            Q.head.weight.uniform_(-1, 1, generator=torch.Generator().manual_seed(s))
        worst["quality"] = max(worst["quality"], module_gradient_error(Q, lambda call: call(seq).sum()))
    for k, v in worst.items():
        out.append(SuiteResult(f"network/{k}", instances, v, 1e-4))
    return out


class _Classify(torch.nn.Module):
    def __init__(self, d: Discriminator):
        super().__init__()
        self.d = d

    def forward(self, seq):
        return self.d.classify(seq)


def run_all(instances: int = 100, seed: int = 0, networks: bool = True) -> Dict[str, object]:
    t0 = time.time()
    results = primitive_suites(instances, seed) + loss_suites(instances, seed + 1)
    if networks:
        results += network_suites(seed=seed + 3)
    return {"results": results, "passed": all(r.passed for r in results), "seconds": time.time() - t0}
