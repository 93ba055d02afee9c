"""Dual coefficient schedules for the residual and noise diffusion rates.

A schedule holds per-step residual rates ``alphas`` and noise rates ``betas``
together with their cumulants: ``alpha_bars[t] = sum(alphas[1..t])`` and
``beta_bars[t] = sqrt(sum(betas[1..t]**2))``.  Cumulant arrays are indexed by
timestep directly (index 0 is the clean endpoint, so ``alpha_bars[0] == 0``).
By construction ``alpha_bars[T] == 1`` and ``beta_bars[T]`` equals the
configured terminal noise intensity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ATOL = 1e-6


@dataclass(frozen=True)
class CoeffSchedule:
    """Immutable precomputed schedule; safe to share across workers."""

    T: int
    alphas: np.ndarray       # shape (T,), alphas[i] is the step i+1 rate
    betas: np.ndarray        # shape (T,)
    alpha_bars: np.ndarray   # shape (T+1,), alpha_bars[0] == 0
    beta_bars: np.ndarray    # shape (T+1,), beta_bars[0] == 0
    beta_bar_T_target: float

    def __post_init__(self):
        object.__setattr__(self, "alphas", np.asarray(self.alphas, dtype=np.float64))
        object.__setattr__(self, "betas", np.asarray(self.betas, dtype=np.float64))
        object.__setattr__(self, "alpha_bars", np.asarray(self.alpha_bars, dtype=np.float64))
        object.__setattr__(self, "beta_bars", np.asarray(self.beta_bars, dtype=np.float64))
        for arr in (self.alphas, self.betas, self.alpha_bars, self.beta_bars):
            arr.setflags(write=False)
        self._validate()

    def _validate(self):
        if self.T < 1:
            raise ValueError("schedule needs at least one step")
        if self.alphas.shape != (self.T,) or self.betas.shape != (self.T,):
            raise ValueError("per-step rate arrays must have length T")
        if self.alpha_bars.shape != (self.T + 1,) or self.beta_bars.shape != (self.T + 1,):
            raise ValueError("cumulant arrays must have length T+1")
        if np.any(self.alphas <= 0) or np.any(self.betas <= 0):
            raise ValueError("all per-step rates must be positive")
        if abs(self.alpha_bars[0]) > 0 or abs(self.beta_bars[0]) > 0:
            raise ValueError("cumulants must start at zero")
        if abs(self.alpha_bars[-1] - 1.0) > _ATOL:
            raise ValueError(f"cumulative residual rate ends at {self.alpha_bars[-1]}, expected 1")
        if abs(self.beta_bars[-1] - self.beta_bar_T_target) > _ATOL:
            raise ValueError(
                f"cumulative noise scale ends at {self.beta_bars[-1]}, "
                f"expected {self.beta_bar_T_target}"
            )
        if np.any(np.diff(self.alpha_bars) <= 0) or np.any(np.diff(self.beta_bars) <= 0):
            raise ValueError("cumulants must be strictly increasing")

    def alpha_bar(self, t) -> float | np.ndarray:
        """Cumulative residual rate at step t (vectorized over integer arrays)."""
        return self.alpha_bars[t]

    def beta_bar(self, t) -> float | np.ndarray:
        """Cumulative noise scale at step t (vectorized over integer arrays)."""
        return self.beta_bars[t]


def _uniform_rates(T: int, beta_bar_T: float):
    alphas = np.full(T, 1.0 / T)
    betas = np.full(T, beta_bar_T / np.sqrt(T))
    return alphas, betas


def _linear_rates(T: int, beta_bar_T: float):
    # Rates grow linearly with t while still hitting both terminal constraints.
    t = np.arange(1, T + 1, dtype=np.float64)
    weights = t / t.sum()
    alphas = weights
    betas = beta_bar_T * np.sqrt(weights)
    return alphas, betas


_SHAPES = {
    "uniform": _uniform_rates,
    "linear": _linear_rates,
}


def build_schedule(T: int, beta_bar_T: float, shape: str = "uniform") -> CoeffSchedule:
    """Build an immutable schedule of T steps ending at the target noise scale.

    ``shape`` selects the per-step rate profile; "uniform" gives
    ``alpha_t = 1/T`` and ``beta_t**2 = beta_bar_T**2 / T``.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if beta_bar_T <= 0:
        raise ValueError(f"terminal noise intensity must be positive, got {beta_bar_T}")
    try:
        alphas, betas = _SHAPES[shape](T, float(beta_bar_T))
    except KeyError:
        raise ValueError(f"unknown schedule shape {shape!r}; have {sorted(_SHAPES)}") from None
    alpha_bars = np.concatenate([[0.0], np.cumsum(alphas)])
    # Renormalize the endpoint so accumulated rounding stays inside tolerance.
    alpha_bars[-1] = 1.0
    beta_bars = np.sqrt(np.concatenate([[0.0], np.cumsum(betas**2)]))
    beta_bars[-1] = beta_bar_T
    return CoeffSchedule(
        T=T,
        alphas=alphas,
        betas=betas,
        alpha_bars=alpha_bars,
        beta_bars=beta_bars,
        beta_bar_T_target=float(beta_bar_T),
    )


def sigma_t(sched: CoeffSchedule, t: int, prev: int, eta: float) -> float:
    """Reverse-transition noise scale between steps t and prev.

    For adjacent steps this is ``eta * beta_t^2 * bbar_{t-1}^2 / bbar_t^2``;
    for subsampled steps the squared per-step rate generalizes to
    ``bbar_t^2 - bbar_prev^2`` so the adjacent case is recovered exactly.
    eta = 0 gives a fully deterministic reverse process.
    """
    if not 0 <= prev < t <= sched.T:
        raise ValueError(f"need 0 <= prev < t <= T, got prev={prev}, t={t}")
    if eta < 0:
        raise ValueError("eta must be non-negative")
    if eta == 0.0:
        return 0.0
    bb_t2 = float(sched.beta_bars[t]) ** 2
    bb_p2 = float(sched.beta_bars[prev]) ** 2
    var = eta * (bb_t2 - bb_p2) * bb_p2 / bb_t2
    return float(np.sqrt(max(var, 0.0)))
