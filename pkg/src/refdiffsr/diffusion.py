"""Dual residual/noise diffusion: forward process, inversion, reverse sampling.

Forward states follow ``I_t = I_0 + abar_t * I_res + bbar_t * eps`` where
``I_res = I_in - I_0`` carries the deterministic degradation and ``eps`` the
stochastic one.  All operations are pure: noise is always injected by the
caller, never drawn internally, so runs replay exactly under a fixed seed.
Intermediate states are deliberately not clamped to the nominal value range;
only the final super-resolved output is.
"""

from __future__ import annotations

import torch

from .planes import (
    ImagePlane,
    ROLE_NOISED,
    ROLE_RESIDUAL,
    ROLE_SR,
    as_tensor,
    check_same_shape,
)
from .schedule import CoeffSchedule, sigma_t


def _check_t(sched: CoeffSchedule, t: int, low: int = 0) -> None:
    if not low <= t <= sched.T:
        raise ValueError(f"timestep {t} outside [{low}, {sched.T}]")


def make_residual(lr_up: ImagePlane, hr: ImagePlane) -> ImagePlane:
    """Degradation residual: the upsampled-LR input minus the clean target."""
    check_same_shape(lr_up, hr)
    return lr_up.with_data(as_tensor(lr_up) - as_tensor(hr), role=ROLE_RESIDUAL)


def forward_diffuse(
    hr: ImagePlane,
    residual: ImagePlane,
    t: int,
    eps: ImagePlane,
    sched: CoeffSchedule,
) -> ImagePlane:
    """Jump directly to the step-t state: I_0 + abar_t*I_res + bbar_t*eps."""
    _check_t(sched, t)
    check_same_shape(hr, residual, eps)
    abar = float(sched.alpha_bars[t])
    bbar = float(sched.beta_bars[t])
    data = as_tensor(hr) + abar * as_tensor(residual) + bbar * as_tensor(eps)
    return hr.with_data(data, role=ROLE_NOISED)


def degrade_terminal(lr_up: ImagePlane, eps: ImagePlane, sched: CoeffSchedule) -> ImagePlane:
    """Terminal state built from the input alone: I_T = I_in + bbar_T * eps."""
    check_same_shape(lr_up, eps)
    bbar_T = float(sched.beta_bars[sched.T])
    return lr_up.with_data(as_tensor(lr_up) + bbar_T * as_tensor(eps), role=ROLE_NOISED)


def reconstruct_x0(
    noised: ImagePlane,
    res_pred: ImagePlane,
    eps_pred: ImagePlane,
    t: int,
    sched: CoeffSchedule,
) -> ImagePlane:
    """Invert the forward jump with predicted components: I_t - abar_t*res - bbar_t*eps."""
    _check_t(sched, t, low=1)
    check_same_shape(noised, res_pred, eps_pred)
    abar = float(sched.alpha_bars[t])
    bbar = float(sched.beta_bars[t])
    data = as_tensor(noised) - abar * as_tensor(res_pred) - bbar * as_tensor(eps_pred)
    return noised.with_data(data, role=ROLE_SR)


def reverse_step(
    noised: ImagePlane,
    res_pred: ImagePlane,
    eps_pred: ImagePlane,
    t: int,
    prev: int,
    eta: float,
    noise: ImagePlane,
    sched: CoeffSchedule,
) -> ImagePlane:
    """One reverse transition from step t to step prev (prev < t).

    I_prev = I_t - (abar_t - abar_prev) * res_pred
                 - (bbar_t - sqrt(bbar_prev^2 - sigma^2)) * eps_pred
                 + sigma * noise
    """
    if not 0 <= prev < t <= sched.T:
        raise ValueError(f"need 0 <= prev < t <= T, got prev={prev}, t={t}")
    check_same_shape(noised, res_pred, eps_pred, noise)
    sigma = 0.0 if prev == 0 else sigma_t(sched, t, prev, eta)
    bb_prev2 = float(sched.beta_bars[prev]) ** 2
    if sigma**2 > bb_prev2 + 1e-12:
        raise ValueError(
            f"sigma^2={sigma**2:.3e} exceeds bbar_prev^2={bb_prev2:.3e}; "
            "schedule and eta are inconsistent"
        )
    abar_t = float(sched.alpha_bars[t])
    abar_p = float(sched.alpha_bars[prev])
    bbar_t = float(sched.beta_bars[t])
    noise_coeff = bbar_t - float(torch.sqrt(torch.as_tensor(max(bb_prev2 - sigma**2, 0.0))))
    data = (
        as_tensor(noised)
        - (abar_t - abar_p) * as_tensor(res_pred)
        - noise_coeff * as_tensor(eps_pred)
    )
    if sigma > 0.0:
        data = data + sigma * as_tensor(noise)
    role = ROLE_SR if prev == 0 else ROLE_NOISED
    return noised.with_data(data, role=role)


def timestep_plan(T: int, T_sample: int) -> list[int]:
    """Descending steps visited during sampling: T, T-s, ... clipped at 1.

    The stride is ``T // (T_sample - 1)``; a trailing 1 is appended when the
    stride does not land on it, so the plan always finishes at step 1 and the
    final reverse transition is (1, 0).
    """
    if T_sample < 2:
        raise ValueError(f"need at least 2 sampling steps, got {T_sample}")
    if T_sample > T:
        raise ValueError(f"sampling steps {T_sample} exceed total steps {T}")
    stride = T // (T_sample - 1)
    steps = list(range(T, 0, -stride))
    if steps[-1] != 1:
        steps.append(1)
    return steps
