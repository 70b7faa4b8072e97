"""Adam optimizer and a finite-difference gradient checker.

Each training stage owns one ``AdamState`` covering exactly the parameters
its loss touches, so moment buffers never bleed across stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, zero_grads
from .errors import GradCheckError, TrainingError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # decoupled decay, applied directly to weights each step
    weight_decay: float = 0.0
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState) -> AdamState:
    """Apply one bias-corrected Adam update in place.

    params maps name -> Tensor; grads maps name -> array or None (None is
    treated as a zero gradient, which still decays the moments). A non-finite
    gradient aborts with the offending parameter named.
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        else:
            g = np.asarray(g)
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            if g.shape != p.data.shape:
                raise TrainingError(
                    f"gradient shape {g.shape} does not match parameter {name!r} {p.data.shape}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        p.data = p.data - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay:
            p.data = p.data - state.lr * state.weight_decay * p.data
    return state


def adam_step_from_tape(named_params, state: AdamState) -> AdamState:
    """Adam step reading gradients left on the tensors by backward()."""
    params = dict(named_params)
    grads = {name: p.grad for name, p in params.items()}
    return adam_step(params, grads, state)


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    worst_index: int
    n_coords: int
    per_param: dict

    def __str__(self):
        lines = [f"grad_check: max rel err {self.max_rel_err:.3e} "
                 f"at {self.worst_param}[{self.worst_index}] over {self.n_coords} coords"]
        for name in sorted(self.per_param):
            lines.append(f"  {name}: {self.per_param[name]:.3e}")
        return "\n".join(lines)


def grad_check(function, params, epsilon: float = 1e-5,
               max_coords_per_param: int | None = None,
               rng: np.random.Generator | None = None,
               rel_floor: float = 1e-3) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    ``function`` must rebuild its graph on every call and return a scalar
    Tensor; ``params`` is an iterable of (name, Tensor) in float64. Relative
    error per coordinate uses max(|analytic|, |fd|, rel_floor) as the
    denominator so finite-difference noise on near-zero gradients does not
    dominate the report. ``max_coords_per_param`` subsamples coordinates of
    large parameters (seeded through ``rng``) to bound runtime.
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise GradCheckError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    params = list(params)
    for name, p in params:
        if p.data.dtype != np.float64:
            raise GradCheckError(f"parameter {name!r} must be float64 for checking")
    zero_grads([p for _, p in params])
    out = function()
    if out.data.size != 1:
        raise GradCheckError("function under check must be scalar-valued")
    if not np.isfinite(out.data):
        raise GradCheckError("non-finite function value")
    out.backward()
    analytic = {}
    for name, p in params:
        if p.grad is None:
            analytic[name] = np.zeros_like(p.data)
        else:
            analytic[name] = np.array(p.grad, dtype=np.float64, copy=True)

    worst = (0.0, "", -1)
    per_param = {}
    n_coords = 0
    for name, p in params:
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        size = flat.size
        if max_coords_per_param is not None and size > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = np.sort(rng.choice(size, size=max_coords_per_param, replace=False))
        else:
            idxs = np.arange(size)
        local_worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = float(function().data)
            flat[i] = orig - epsilon
            f_minus = float(function().data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradCheckError(
                    f"non-finite function value while perturbing {name}[{i}]")
            fd = (f_plus - f_minus) / (2.0 * epsilon)
            a = a_flat[i]
            rel = abs(a - fd) / max(abs(a), abs(fd), rel_floor)
            local_worst = max(local_worst, rel)
            if rel > worst[0]:
                worst = (rel, name, int(i))
            n_coords += 1
        per_param[name] = local_worst
    return GradCheckReport(worst[0], worst[1], worst[2], n_coords, per_param)
