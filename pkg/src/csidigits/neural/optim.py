from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonDeterministicModel
from .params import ParamSet, TrainConfig


class Adam:
    """Adam with bias correction; weight decay decoupled by default.

    Decoupled decay shrinks every parameter by ``1 - lr * wd`` before the
    moment update. With ``cfg.decoupled_weight_decay=False`` the decay is
    folded into the gradient as a classic L2 term instead.
    """

    def __init__(self, cfg: TrainConfig = TrainConfig()):
        self.cfg = cfg
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParamSet) -> ParamSet:
        cfg = self.cfg
        params.step += 1
        t = params.step
        bc1 = 1.0 - cfg.adam_beta1 ** t
        bc2 = 1.0 - cfg.adam_beta2 ** t
        lr, wd = cfg.learning_rate, cfg.weight_decay
        for name, theta in params.params.items():
            g = params.grads[name]
            if wd and not cfg.decoupled_weight_decay:
                g = g + wd * theta
            if name not in self.m:
                self.m[name] = np.zeros_like(theta)
                self.v[name] = np.zeros_like(theta)
            m, v = self.m[name], self.v[name]
            m *= cfg.adam_beta1
            m += (1.0 - cfg.adam_beta1) * g
            v *= cfg.adam_beta2
            v += (1.0 - cfg.adam_beta2) * (g * g)
            if wd and cfg.decoupled_weight_decay:
                theta *= 1.0 - lr * wd
            theta -= (lr / bc1) * m / (np.sqrt(v / bc2) + cfg.adam_eps)
        return params


def adam_step(params: ParamSet, cfg: TrainConfig, optimizer: Adam | None = None) -> ParamSet:
    """Apply one Adam update in place; a fresh optimizer state is used when none is given."""
    return (optimizer or Adam(cfg)).step(params)


@dataclass
class GradCheckReport:
    max_relative_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    max_abs_error: float = 0.0
    tolerance: float = 0.0

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance

    def summary(self) -> str:
        worst = max(self.per_param, key=self.per_param.get) if self.per_param else "-"
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max rel err {self.max_relative_error:.3e} (worst {worst}), tol {self.tolerance:g}"


def grad_check(model_fn, params: ParamSet, inputs, tolerance: float, eps: float = 1e-4,
               names=None) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``model_fn(params, inputs)`` must return ``(loss, grads)`` where grads maps
    parameter names to arrays. Analytic gradients are taken at the dtype of
    ``params``; the finite-difference reference is always evaluated in 64-bit.
    The error per parameter tensor is ||a - n|| / (||a|| + ||n||).
    """
    loss1, analytic = model_fn(params, inputs)
    loss2, _ = model_fn(params, inputs)
    if loss1 != loss2:
        raise NonDeterministicModel(f"two identical forward passes gave {loss1!r} and {loss2!r}")
    ref = params.astype(np.float64)
    report = GradCheckReport(0.0, tolerance=tolerance)
    for name in names or ref.names():
        theta = ref.params[name]
        numeric = np.zeros_like(theta)
        flat = theta.reshape(-1)
        nflat = numeric.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            lp, _ = model_fn(ref, inputs)
            flat[k] = orig - eps
            lm, _ = model_fn(ref, inputs)
            flat[k] = orig
            nflat[k] = (lp - lm) / (2 * eps)
        a = np.asarray(analytic[name], dtype=np.float64)
        denom = np.linalg.norm(a) + np.linalg.norm(numeric)
        err = 0.0 if denom == 0 else float(np.linalg.norm(a - numeric) / denom)
        report.per_param[name] = err
        report.max_relative_error = max(report.max_relative_error, err)
        report.max_abs_error = max(report.max_abs_error, float(np.max(np.abs(a - numeric), initial=0.0)))
    return report
