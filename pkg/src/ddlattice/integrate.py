"""Classical fixed-step fourth-order Runge-Kutta."""
from __future__ import annotations

from typing import Callable

import numpy as np


def rk4_step(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_fixed(f, y0, t_end: float, dt: float, record_every: int = 1, check=None):
    """Integrate an autonomous system ``y' = f(y)`` from t=0 to ``t_end``.

    The last step is shortened so the endpoint is hit exactly. ``check(y)`` is
    called after every step and may raise to abort. Returns (times, states) at
    every ``record_every``-th step plus the endpoint.
    """
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be positive")
    n_full = int(np.floor(t_end / dt + 1e-9))
    rest = t_end - n_full * dt
    y = np.array(y0, dtype=float)
    times, states = [0.0], [y.copy()]
    t = 0.0
    for i in range(1, n_full + 1):
        y = rk4_step(f, y, dt)
        t = i * dt
        if check is not None:
            check(y)
        if i % record_every == 0:
            times.append(t)
            states.append(y.copy())
    if rest > 1e-12 * dt:
        y = rk4_step(f, y, rest)
        t = t_end
        if check is not None:
            check(y)
    if times[-1] != t:
        times.append(t)
        states.append(y.copy())
    return np.asarray(times), np.asarray(states)
