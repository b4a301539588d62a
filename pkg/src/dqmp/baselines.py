"""Comparison fitters: plain Q-learning and damped least squares.

The Q-learning baseline reuses the full greedy fitting loop with the
network-predicted reward term switched off; the least-squares baseline is a
classical Levenberg-Marquardt iteration over the normalized parameter cube
with finite-difference Jacobians.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import datagen, kvfd, nnet
from .datagen import DEFAULT_BOX, ParameterBox
from .errors import DomainError
from .kvfd import Curve, ParameterVector, ProtocolConfig
from .optimizer import (
    DqmpConfig,
    FitResult,
    RewardConfig,
    _r_squared,
    dqmp_fit,
    ql_variant_hook,
)

__all__ = ["LmConfig", "ql_fit", "lm_fit", "lm_minimize"]


def ql_fit(curve: Curve, proto: ProtocolConfig, din,
           cfg: DqmpConfig = None, reward_cfg: RewardConfig = RewardConfig(),
           box: ParameterBox = DEFAULT_BOX,
           init: ParameterVector = None) -> FitResult:
    """Curve-reward-only Q-learning fit (the reward network is never used)."""
    return dqmp_fit(curve, proto, din, None, cfg=cfg,
                    reward_cfg=ql_variant_hook(reward_cfg), box=box, init=init)


@dataclass
class LmConfig:
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    max_iters: int = 200
    gradient_tol: float = 1e-10
    # step-size convergence: once damping pushes the proposed step below
    # this relative size, no float-representable improvement is left
    step_tol: float = 1e-12
    init_mode: str = "random_seeded"  # or "box_midpoint", "din"
    seed: int = 0
    fd_rel_step: float = 1e-5
    record_trajectory: bool = False

    def __post_init__(self):
        if not (self.lambda0 > 0.0 and self.lambda_up > 1.0
                and 0.0 < self.lambda_down < 1.0):
            raise DomainError("need lambda0 > 0, lambda_up > 1, lambda_down in (0,1)")
        if self.max_iters < 0 or not (self.gradient_tol > 0.0):
            raise DomainError("max_iters must be >= 0 and gradient_tol > 0")
        if self.init_mode not in ("box_midpoint", "random_seeded", "din"):
            raise DomainError(f"unknown init_mode {self.init_mode!r}")
        if not (0.0 < self.fd_rel_step <= 1e-2):
            raise DomainError("fd_rel_step must be in (0, 1e-2]")


def _fd_jacobian(residual_fn, u, cfg, lows, highs):
    """Central-difference Jacobian, one column per coordinate."""
    r0 = residual_fn(u)
    cols = []
    for i in range(len(u)):
        h = cfg.fd_rel_step * max(abs(float(u[i])), 1.0)
        up = u.copy()
        dn = u.copy()
        up[i] = u[i] + h
        dn[i] = u[i] - h
        if lows is not None:
            up[i] = min(up[i], highs[i])
            dn[i] = max(dn[i], lows[i])
        span = up[i] - dn[i]
        if span == 0.0:
            cols.append(np.zeros_like(r0))
            continue
        cols.append((residual_fn(up) - residual_fn(dn)) / span)
    return np.column_stack(cols), r0


def lm_minimize(residual_fn, u0, cfg: LmConfig = None,
                lows=None, highs=None, on_accept=None):
    """Levenberg-Marquardt over a residual vector function.

    Returns (u, iterations, terminated_by) where terminated_by is one of
    "converged" (gradient below tolerance), "stalled" (no acceptable step
    exists), or "max_iters".  ``lows``/``highs`` clamp the iterates when
    given; ``on_accept(u, ssr)`` observes every accepted iterate.
    """
    cfg = cfg or LmConfig()
    u = np.asarray(u0, dtype=float).copy()
    if lows is not None:
        u = np.clip(u, lows, highs)
    lam = cfg.lambda0
    ssr = float(np.sum(residual_fn(u) ** 2))
    if on_accept is not None:
        on_accept(u, ssr)
    terminated_by = "max_iters"
    it = 0
    for it in range(1, cfg.max_iters + 1):
        jac, r0 = _fd_jacobian(residual_fn, u, cfg, lows, highs)
        a = jac.T @ jac
        g = jac.T @ r0
        if float(np.max(np.abs(g))) < cfg.gradient_tol:
            terminated_by = "converged"
            break
        accepted = False
        while lam < 1e12:
            try:
                delta = np.linalg.solve(a + lam * np.eye(len(u)), -g)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(delta)):
                break
            if float(np.max(np.abs(delta))) <= cfg.step_tol * (
                    float(np.max(np.abs(u))) + cfg.step_tol):
                return u, it, "converged"
            u_new = u + delta
            if lows is not None:
                u_new = np.clip(u_new, lows, highs)
            ssr_new = float(np.sum(residual_fn(u_new) ** 2))
            if ssr_new < ssr:
                u, ssr = u_new, ssr_new
                lam = max(lam * cfg.lambda_down, 1e-12)
                accepted = True
                if on_accept is not None:
                    on_accept(u, ssr)
                break
            lam *= cfg.lambda_up
        if not accepted:
            terminated_by = "stalled"
            break
    return u, it, terminated_by


def lm_fit(curve: Curve, proto: ProtocolConfig, cfg: LmConfig = None,
           box: ParameterBox = DEFAULT_BOX, din=None,
           init: ParameterVector = None) -> FitResult:
    """Least-squares fit of the parameter triple in normalized coordinates."""
    cfg = cfg or LmConfig()
    y_tilde = curve.values
    times = curve.times
    y_scale = float(np.max(np.abs(y_tilde)))
    if y_scale == 0.0:
        raise DomainError("experimental curve is identically zero")

    if init is not None:
        u0 = datagen.normalize_params(init, box)
    elif cfg.init_mode == "box_midpoint":
        u0 = np.full(box.k, 0.5)
    elif cfg.init_mode == "random_seeded":
        u0 = np.random.default_rng(cfg.seed).random(box.k)
    else:
        if din is None:
            raise DomainError("init_mode 'din' needs a trained initial-guess network")
        u0 = datagen.normalize_params(nnet.din_init(curve, din, box), box)

    def residual(u):
        theta = datagen.denormalize_params(u, box)
        return kvfd.curve_values(theta, proto, times) - y_tilde

    trajectory = []

    def observe(u, ssr):
        theta = datagen.denormalize_params(u, box)
        mae = float(np.mean(np.abs(residual(u)))) / y_scale
        trajectory.append(((theta.e0, theta.alpha, theta.tau), mae))

    u, iters, terminated_by = lm_minimize(
        residual, u0, cfg, lows=np.zeros(box.k), highs=np.ones(box.k),
        on_accept=observe if cfg.record_trajectory else None)
    theta = datagen.denormalize_params(u, box)
    y_hat = kvfd.curve_values(theta, proto, times)
    return FitResult(
        theta_hat=theta,
        r_squared=_r_squared(y_tilde, y_hat),
        mae=float(np.mean(np.abs(y_tilde - y_hat))) / y_scale,
        iterations=iters,
        terminated_by=terminated_by,
        trajectory=trajectory,
    )
