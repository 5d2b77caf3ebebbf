"""Numerical verification suites.

Each suite returns a list of ``CheckResult``; ``run_suite`` dispatches by
name. Suites run in double precision on small shapes and are deterministic.

    sparsemax   projection oracle, threshold identity, closed-form cases
    gradients   autograd vs central differences for every trained path
    cmi         conditional-MI lower bound on enumerable distributions
    mixer       monotonicity of Q_tot in each agent value
    complexity  MAC growth of one OPT forward when M doubles
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from config import LossConfig, ModelConfig, RunConfig
from mixer import OPTMixer, vdn_mix
from numerics import categorical_kl, finite_difference_check, sparsemax, sparsemax_support
from opt import CMIPosterior, OPTLayer, OPTStack, cd_loss, cmi_loss, count_macs
from opt.layer import LayerOutput

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(name: str, fn: Callable[[], tuple]) -> CheckResult:
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:
        logger.exception(f"Check {name} raised")
        passed, detail = False, f"raised {type(exc).__name__}: {exc}"
    return CheckResult(name=name, passed=bool(passed), detail=detail, seconds=time.perf_counter() - t0)


# ─────────────────────────────────────────────────────────────────────────────
# Sparsemax
# ─────────────────────────────────────────────────────────────────────────────

def project_simplex_oracle(z: np.ndarray) -> np.ndarray:
    """Simplex projection by enumerating every nonempty support."""
    z = np.asarray(z, dtype=np.float64)
    best, best_dist = None, np.inf
    for size in range(1, z.size + 1):
        for support in itertools.combinations(range(z.size), size):
            idx = list(support)
            p = np.zeros_like(z)
            p[idx] = z[idx] - (z[idx].sum() - 1.0) / size
            if np.any(p[idx] < 0):
                continue
            dist = float(np.sum((p - z) ** 2))
            if dist < best_dist:
                best, best_dist = p, dist
    return best


def _sparsemax_oracle(n: int = 1000, seed: int = 0) -> tuple:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        z = rng.normal(scale=rng.uniform(0.1, 3.0), size=int(rng.integers(2, 9)))
        worst = max(worst, float(np.max(np.abs(sparsemax(z) - project_simplex_oracle(z)))))
    return worst <= 1e-9, f"{n} vectors, max |err| = {worst:.2e}"


def _threshold_identity(n: int = 1000, seed: int = 1) -> tuple:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        z = rng.normal(scale=2.0, size=int(rng.integers(1, 9)))
        res = sparsemax_support(z)
        worst = max(worst, abs(float(np.maximum(z - res.threshold, 0.0).sum()) - 1.0))
        if res.support_size != int(res.support_mask.sum()):
            return False, "support size disagrees with support mask"
    return worst <= 1e-9, f"max |sum[z - tau]_+ - 1| = {worst:.2e}"


def _closed_forms() -> tuple:
    cases = [((0.5, 0.0), (0.75, 0.25)), ((3.1, 2.6, 0.1), (0.75, 0.25, 0.0)),
             ((2.0, 0.0), (1.0, 0.0)), ((1.0, 1.0, 1.0), (1 / 3, 1 / 3, 1 / 3))]
    worst = max(float(np.max(np.abs(sparsemax(z) - np.array(p)))) for z, p in cases)
    return worst <= 1e-12, f"{len(cases)} cases, max |err| = {worst:.2e}"


def _shift_and_order(n: int = 500, seed: int = 2) -> tuple:
    rng = np.random.default_rng(seed)
    for _ in range(n):
        z = rng.normal(size=int(rng.integers(2, 9)))
        p = sparsemax(z)
        if np.max(np.abs(sparsemax(z + rng.uniform(-5, 5)) - p)) > 1e-12:
            return False, "shift invariance violated"
        order = np.argsort(z)
        if np.any(np.diff(p[order]) < 0):
            return False, "order preservation violated"
    return True, f"{n} vectors"


def sparsemax_suite() -> List[CheckResult]:
    return [
        _timed("sparsemax.oracle", _sparsemax_oracle),
        _timed("sparsemax.threshold_identity", _threshold_identity),
        _timed("sparsemax.closed_forms", _closed_forms),
        _timed("sparsemax.shift_and_order", _shift_and_order),
    ]


# ─────────────────────────────────────────────────────────────────────────────
# Gradients
# ─────────────────────────────────────────────────────────────────────────────

def _support_signature(modules: Sequence[nn.Module], forward: Callable[[], torch.Tensor]):
    """Callable returning the sparsemax supports hit by ``forward``."""
    layers = [m for mod in modules for m in mod.modules() if isinstance(m, OPTLayer)]

    def signature() -> bytes:
        seen: List[bytes] = []

        def hook(_module, _inputs, output: LayerOutput):
            seen.append((output.prototypes.attention > 0).numpy().tobytes())

        handles = [layer.register_forward_hook(hook) for layer in layers]
        try:
            with torch.no_grad():
                forward()
        finally:
            for h in handles:
                h.remove()
        return b"|".join(seen)

    return signature


def gradcheck_modules(modules: Sequence[nn.Module], loss_fn: Callable[[], torch.Tensor],
                      step: float = 1e-5, rel_tol: float = 1e-4, max_kink_fraction: float = 0.05):
    """Finite-difference check of ``loss_fn`` w.r.t. every parameter of ``modules``.

    Returns ``(passed, report)``.
    """
    params = [p for m in modules for p in m.parameters() if p.requires_grad]
    x0 = parameters_to_vector(params).detach().clone()
    sig = _support_signature(modules, loss_fn)

    grads = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    analytic = torch.cat([
        (g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, params)
    ]).detach().numpy()

    def f(vec: np.ndarray) -> float:
        vector_to_parameters(torch.as_tensor(vec, dtype=x0.dtype), params)
        with torch.no_grad():
            return float(loss_fn())

    def signature(vec: np.ndarray) -> bytes:
        vector_to_parameters(torch.as_tensor(vec, dtype=x0.dtype), params)
        return sig()

    try:
        report = finite_difference_check(f, x0.numpy(), analytic, step=step, rel_tol=rel_tol,
                                         signature=signature)
    finally:
        vector_to_parameters(x0, params)
    return report.passed and report.kink_fraction <= max_kink_fraction, report


def _small_model(**overrides) -> ModelConfig:
    base = dict(n_layers=1, n_prototypes=2, d_x=4, d_h=4, d_ff=8, d_mix=4, hyper_hidden=8)
    base.update(overrides)
    return ModelConfig(**base)


def _entity_batch(gen: torch.Generator, b: int, m: int, d: int):
    x = torch.randn(b, m, d, generator=gen, dtype=torch.float64)
    mask = torch.ones(b, m, dtype=torch.bool)
    mask[0, -1] = False
    x = x * mask.unsqueeze(-1)
    return x, mask


def _grad_cd() -> tuple:
    gen = torch.Generator().manual_seed(10)
    holder = nn.Module()
    holder.values = nn.Parameter(torch.randn(2, 3, 3, 4, generator=gen, dtype=torch.float64))
    mask = torch.tensor([[True, True, False], [True, True, True]])
    ok, rep = gradcheck_modules([holder], lambda: cd_loss(holder.values, mask))
    return ok, rep.summary()


def _grad_cmi() -> tuple:
    gen = torch.Generator().manual_seed(11)
    post = CMIPosterior(d_h=4, d_x=4, n_prototypes=4).double()
    agg = nn.Linear(4, 4).double()
    h_prev = torch.randn(3, 4, generator=gen, dtype=torch.float64)
    pooled = torch.randn(3, 4, generator=gen, dtype=torch.float64)

    def loss():
        return cmi_loss(torch.softmax(agg(pooled), dim=-1), post(h_prev, pooled))

    ok, rep = gradcheck_modules([agg, post], loss)
    return ok, rep.summary()


def _grad_opt_layer() -> tuple:
    torch.manual_seed(12)
    gen = torch.Generator().manual_seed(12)
    layer = OPTLayer(d_x=4, n_prototypes=2, d_ff=8, activation="sparsemax").double()
    x, mask = _entity_batch(gen, 2, 4, 4)
    head = torch.randn(4, generator=gen, dtype=torch.float64)

    def loss():
        out = layer(x, mask)
        return (out.y @ head).sum() + out.cd.mean()

    ok, rep = gradcheck_modules([layer], loss)
    return ok, rep.summary()


def _grad_mixer() -> tuple:
    torch.manual_seed(13)
    gen = torch.Generator().manual_seed(13)
    mixer = OPTMixer(d_e=5, model=_small_model()).double()
    state, mask = _entity_batch(gen, 2, 4, 5)
    qs = torch.randn(2, 3, generator=gen, dtype=torch.float64)

    def loss():
        out = mixer(qs, state, mask)
        return out.q_tot.sum()

    ok, rep = gradcheck_modules([mixer], loss)
    return ok, rep.summary()


def _toy_batch(gen: torch.Generator, d_e: int, n_actions: int):
    from trainer.episode import EpisodeBatch

    b, t, a, m = 1, 2, 2, 3
    obs_mask = torch.ones(b, t + 1, a, m, dtype=torch.bool)
    return EpisodeBatch(
        obs_features=torch.randn(b, t + 1, a, m, d_e, generator=gen, dtype=torch.float64),
        obs_mask=obs_mask,
        self_index=torch.tensor([[[0, 1]] * (t + 1)]),
        avail=torch.ones(b, t + 1, a, n_actions, dtype=torch.bool),
        state_features=torch.randn(b, t + 1, m, d_e, generator=gen, dtype=torch.float64),
        state_mask=torch.ones(b, t + 1, m, dtype=torch.bool),
        actions=torch.randint(0, n_actions, (b, t, a), generator=gen),
        rewards=torch.randn(b, t, generator=gen, dtype=torch.float64),
        terminated=torch.tensor([[False, True]]),
        filled=torch.ones(b, t, dtype=torch.bool),
        agent_mask=torch.ones(b, a, dtype=torch.bool),
    )


def _grad_td() -> tuple:
    from trainer.learner import OPTLearner

    torch.manual_seed(14)
    gen = torch.Generator().manual_seed(14)
    cfg = RunConfig(model=_small_model())
    cfg.train.dtype = "float64"
    learner = OPTLearner(cfg, d_e=5, n_actions=3)
    batch = _toy_batch(gen, 5, 3)
    ok, rep = gradcheck_modules([learner.agent, learner.mixer],
                                lambda: learner.compute_losses(batch).td)
    return ok, rep.summary()


def gradients_suite() -> List[CheckResult]:
    return [
        _timed("gradients.cd_loss", _grad_cd),
        _timed("gradients.cmi_loss", _grad_cmi),
        _timed("gradients.opt_layer", _grad_opt_layer),
        _timed("gradients.mixer", _grad_mixer),
        _timed("gradients.td_loss", _grad_td),
    ]


# ─────────────────────────────────────────────────────────────────────────────
# CMI bound
# ─────────────────────────────────────────────────────────────────────────────

def cmi_bound_terms(joint: np.ndarray, q: np.ndarray) -> Dict[str, float]:
    """Terms of the variational bound for a joint p(w, tau, o) of shape (W, T, O).

    ``q`` has the same shape and holds q(w | tau, o) normalised over axis 0.
    Returns the conditional MI, H(w|o), E[log q] and the expected KL gap.
    """
    p_to = joint.sum(axis=0, keepdims=True)            # p(tau, o)
    p_wo = joint.sum(axis=1, keepdims=True)            # p(w, o)
    p_o = joint.sum(axis=(0, 1), keepdims=True)        # p(o)
    post = joint / p_to                                # p(w | tau, o)
    prior = p_wo / p_o                                 # p(w | o)

    cmi = float(np.sum(joint * np.log(post / prior)))
    h_w_given_o = float(-np.sum(p_wo * np.log(prior)))
    e_log_q = float(np.sum(joint * np.log(q)))
    gap = 0.0
    for t_idx in range(joint.shape[1]):
        for o_idx in range(joint.shape[2]):
            gap += float(p_to[0, t_idx, o_idx]) * categorical_kl(post[:, t_idx, o_idx], q[:, t_idx, o_idx])
    return {"cmi": cmi, "entropy": h_w_given_o, "e_log_q": e_log_q, "gap": gap}


def _cmi_bound(n: int = 100, seed: int = 3) -> tuple:
    rng = np.random.default_rng(seed)
    worst_viol, worst_chain, worst_tight = 0.0, 0.0, 0.0
    for _ in range(n):
        joint = rng.dirichlet(np.ones(3 * 4 * 2)).reshape(3, 4, 2)
        q = rng.dirichlet(np.ones(3), size=(4, 2)).transpose(2, 0, 1)
        terms = cmi_bound_terms(joint, q)
        bound = terms["entropy"] + terms["e_log_q"]
        worst_viol = max(worst_viol, bound - terms["cmi"])
        worst_chain = max(worst_chain, abs(terms["cmi"] - (bound + terms["gap"])))

        exact = joint / joint.sum(axis=0, keepdims=True)
        tight = cmi_bound_terms(joint, exact)
        worst_tight = max(worst_tight, abs(tight["cmi"] - (tight["entropy"] + tight["e_log_q"])))
    passed = worst_viol <= 1e-12 and worst_chain <= 1e-9 and worst_tight <= 1e-9
    return passed, (f"{n} joints: max violation {worst_viol:.2e}, chain err {worst_chain:.2e}, "
                    f"tightness err {worst_tight:.2e}")


def _cmi_loss_values() -> tuple:
    omega = torch.tensor([[1.0, 0.0, 0.0, 0.0]], dtype=torch.float64)
    uniform = torch.full((1, 4), 0.25, dtype=torch.float64)
    one_hot_vs_uniform = float(cmi_loss(omega, uniform))
    same = float(cmi_loss(uniform, uniform))
    ok = abs(one_hot_vs_uniform - math.log(4)) <= 1e-9 and abs(same) <= 1e-15
    return ok, f"KL(onehot||uniform)={one_hot_vs_uniform:.6f}, KL(q||q)={same:.1e}"


def _cmi_posterior_gradient() -> tuple:
    torch.manual_seed(15)
    post = CMIPosterior(d_h=4, d_x=4, n_prototypes=4).double()
    h_prev = torch.randn(2, 4, dtype=torch.float64)
    pooled = torch.randn(2, 4, dtype=torch.float64)
    omega = torch.tensor([[0.7, 0.1, 0.1, 0.1], [0.1, 0.1, 0.1, 0.7]], dtype=torch.float64)
    loss = cmi_loss(omega, post(h_prev, pooled), eps=LossConfig.kl_clamp)
    loss.backward()
    norm = float(sum(p.grad.norm() for p in post.parameters()))
    return norm > 0.0, f"posterior grad norm {norm:.3e}"


def cmi_suite() -> List[CheckResult]:
    return [
        _timed("cmi.variational_bound", _cmi_bound),
        _timed("cmi.loss_values", _cmi_loss_values),
        _timed("cmi.posterior_gradient", _cmi_posterior_gradient),
    ]


# ─────────────────────────────────────────────────────────────────────────────
# Mixer
# ─────────────────────────────────────────────────────────────────────────────

def _monotonicity(n: int = 1000, per_model: int = 20) -> tuple:
    gen = torch.Generator().manual_seed(16)
    worst = np.inf
    mixer = None
    for i in range(n):
        if i % per_model == 0:
            torch.manual_seed(100 + i)
            mixer = OPTMixer(d_e=5, model=_small_model(n_layers=2)).double()
        n_agents = int(torch.randint(1, 4, (1,), generator=gen))
        state, mask = _entity_batch(gen, 1, 4, 5)
        qs = (3.0 * torch.randn(1, n_agents, generator=gen, dtype=torch.float64)).requires_grad_(True)
        q_tot = mixer(qs, state, mask).q_tot.sum()
        (grad,) = torch.autograd.grad(q_tot, qs)
        worst = min(worst, float(grad.min()))
    return worst >= -1e-12, f"{n} draws, min dQ_tot/dQ_a = {worst:.3e}"


def _degenerate_mix() -> tuple:
    mixer = OPTMixer(d_e=5, model=_small_model()).double()
    with torch.no_grad():
        for net in (mixer.hyper_w1, mixer.hyper_w2):
            net[-1].weight.zero_()
            net[-1].bias.zero_()
        mixer.hyper_b1.weight.zero_()
        mixer.hyper_b1.bias.zero_()
        mixer.hyper_b2[-1].weight.zero_()
        mixer.hyper_b2[-1].bias.fill_(1.5)
    gen = torch.Generator().manual_seed(17)
    state, mask = _entity_batch(gen, 2, 4, 5)
    q_tot = mixer(torch.randn(2, 3, generator=gen, dtype=torch.float64), state, mask).q_tot
    err = float((q_tot - 1.5).abs().max())
    return err <= 1e-12, f"max |Q_tot - b| = {err:.1e}"


def _vdn_values() -> tuple:
    got = [float(vdn_mix(torch.tensor(v, dtype=torch.float64))) for v in ([1.0, 2.0, 3.0], [-1.0, 1.0])]
    return got == [6.0, 0.0], f"sums {got}"


def mixer_suite() -> List[CheckResult]:
    return [
        _timed("mixer.monotonicity", _monotonicity),
        _timed("mixer.degenerate_bias", _degenerate_mix),
        _timed("mixer.vdn_sum", _vdn_values),
    ]


# ─────────────────────────────────────────────────────────────────────────────
# Complexity
# ─────────────────────────────────────────────────────────────────────────────

def opt_forward_macs(n_entities: int, d_x: int = 32, n_prototypes: int = 4, n_layers: int = 2,
                     d_e: int = 8, d_ff: int = 64) -> int:
    """Counted multiply-accumulates of one OPT stack forward on a single sample."""
    torch.manual_seed(0)
    stack = OPTStack(d_e, d_x, n_layers, n_prototypes, d_ff)
    raw = torch.randn(1, n_entities, d_e)
    mask = torch.ones(1, n_entities, dtype=torch.bool)
    with torch.no_grad(), count_macs() as counter:
        stack(raw, mask)
    return counter.total


def _mac_scaling() -> tuple:
    ratios = []
    for m in (4, 8, 16, 32):
        ratios.append(opt_forward_macs(2 * m) / opt_forward_macs(m))
    ok = all(2.0 <= r <= 4.0 for r in ratios)
    return ok, "ratios " + ", ".join(f"{r:.3f}" for r in ratios)


def complexity_suite() -> List[CheckResult]:
    return [_timed("complexity.mac_scaling", _mac_scaling)]


SUITES: Dict[str, Callable[[], List[CheckResult]]] = {
    "sparsemax": sparsemax_suite,
    "gradients": gradients_suite,
    "cmi": cmi_suite,
    "mixer": mixer_suite,
    "complexity": complexity_suite,
}


def run_suite(name: str) -> List[CheckResult]:
    if name not in SUITES:
        raise ValueError(f"unknown suite '{name}' (expected one of {sorted(SUITES)})")
    results = SUITES[name]()
    for r in results:
        logger.info(r.line())
    return results
