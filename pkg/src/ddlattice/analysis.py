"""Fits applied to simulator output: correlation profiles, relaxation rates, limit cycles."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal

Q_ZERO = 0.05  # below this the profile is treated as non-oscillating
MIN_PROFILE_POINTS = 8
MIN_SERIES_POINTS = 20


# ---------------------------------------------------------------------------
# correlation profiles


@dataclass
class CorrelationFit:
    lam: float
    q: float
    A: float
    B: float
    phi: float
    residual: float
    ok: bool = True
    message: str = ""

    @classmethod
    def empty(cls, message: str) -> "CorrelationFit":
        nan = float("nan")
        return cls(nan, nan, nan, nan, nan, nan, ok=False, message=message)

    def model(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return np.exp(-self.lam * r) * (self.A + self.B * np.cos(self.q * r + self.phi))

    @property
    def wavelength(self) -> float:
        return 2 * np.pi / self.q if self.q > 0 else float("inf")


def dominant_wavevector(profile: np.ndarray, pad: int = 4096, q_min: float = 0.0) -> float:
    """Peak of |DFT| of the profile, refined by a parabola through the top three bins.

    With ``q_min`` > 0 the highest local maximum above q_min is returned instead.
    """
    n = max(pad, 8 * len(profile))
    spec = np.abs(np.fft.rfft(profile, n))
    if q_min > 0:
        # highest interior local maximum above q_min, so a decaying tail is skipped
        k0 = int(np.ceil(q_min * n / (2 * np.pi)))
        peaks = k0 + signal.argrelmax(spec[k0:])[0]
        k = int(peaks[np.argmax(spec[peaks])]) if len(peaks) else len(spec) - 1
    else:
        k = int(np.argmax(spec))
    if k == 0:
        # |F| is even in frequency, so a peak at the first bin is exactly at q = 0
        return 0.0
    if k == len(spec) - 1:
        return np.pi
    a, b, c = spec[k - 1], spec[k], spec[k + 1]
    den = a - 2 * b + c
    shift = 0.5 * (a - c) / den if den != 0 else 0.0
    return float(np.clip(2 * np.pi * (k + shift) / n, q_min, np.pi))


def _local_extrema(y: np.ndarray) -> np.ndarray:
    ay = np.abs(y)
    idx = signal.argrelextrema(ay, np.greater_equal)[0]
    idx = idx[(idx > 0) & (idx < len(y) - 1)]
    return np.unique(np.concatenate([[int(np.argmax(ay[:2]))], idx]))


def count_extrema(y: np.ndarray, rel_floor: float = 1e-9) -> int:
    """Interior local extrema of y, ignoring points below ``rel_floor`` times the peak."""
    big = np.abs(y) > rel_floor * np.max(np.abs(y))
    if big.sum() < 3:
        return 0
    y = y[: np.nonzero(big)[0][-1] + 1]
    dy = np.diff(y)
    dy = dy[dy != 0]
    return int(np.sum(np.sign(dy[1:]) != np.sign(dy[:-1])))


def _envelope_decay(r: np.ndarray, y: np.ndarray, q: float) -> float:
    if q < Q_ZERO:
        pick = np.arange(len(y))
    else:
        pick = _local_extrema(y)
        if len(pick) < 2:
            pick = np.arange(len(y))
    ay = np.abs(y[pick])
    good = ay > 0
    if good.sum() < 2:
        return 0.0
    slope = np.polyfit(r[pick][good], np.log(ay[good]), 1)[0]
    return max(0.0, -float(slope))


def _linear_part(r, y, lam, q):
    """Best (A, C, S) for exp(-lam r) (A + C cos qr + S sin qr) and the residual vector."""
    env = np.exp(-lam * r)
    if q < Q_ZERO:
        basis = env[:, None]
    else:
        basis = np.stack([env, env * np.cos(q * r), env * np.sin(q * r)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return coef, basis @ coef - y


def _grid_start(r, y, n_lam: int = 41, n_q: int = 64) -> tuple[float, float]:
    """(lam, q) minimizing the oscillating-model residual on a coarse grid.

    Strongly damped oscillations (lam >~ q) merge into the q = 0 lobe of the
    spectrum, so peak picking alone misses them.
    """
    lam_hi = max(2.0, 2 * _envelope_decay(r, y, 0.0))
    lams = np.linspace(0.0, lam_hi, n_lam)
    qs = np.linspace(Q_ZERO, np.pi * (1 - 1e-3), n_q)
    L, Q = np.meshgrid(lams, qs, indexing="ij")
    env = np.exp(-L[..., None] * r)
    basis = np.stack([env, env * np.cos(Q[..., None] * r), env * np.sin(Q[..., None] * r)], axis=-1)
    coef = np.linalg.pinv(basis) @ y
    res = np.einsum("...ij,...j->...i", basis, coef) - y
    i, j = np.unravel_index(np.argmin(np.sum(res**2, axis=-1)), L.shape)
    return float(lams[i]), float(qs[j])


def _fit_fixed_start(r, yn, q, refine, lam=None):
    """(lam, q, coef, residual norm) starting from wavevector q."""
    if lam is None:
        lam = _envelope_decay(r, yn, q)
    coef, res = _linear_part(r, yn, lam, q)
    best = (lam, q, coef, float(np.linalg.norm(res)))
    if not refine:
        return best

    def resid(x):
        return _linear_part(r, yn, x[0], x[1])[1]

    if q >= Q_ZERO:
        width = max(2 * np.pi / len(yn), np.pi / 63)
        lo, hi = [0.0, max(Q_ZERO, q - width)], [np.inf, min(np.pi, q + width)]
    else:
        # non-oscillating: only the decay rate is polished
        lo, hi = [0.0, q - 1e-12], [np.inf, q + 1e-12]
    try:
        sol = optimize.least_squares(resid, [lam, q], bounds=(lo, hi), x_scale=[0.1, 0.1],
                                     xtol=1e-13, ftol=1e-13, gtol=1e-13)
        c2, r2 = _linear_part(r, yn, *sol.x)
        if np.linalg.norm(r2) < best[3]:
            best = (float(sol.x[0]), float(sol.x[1]), c2, float(np.linalg.norm(r2)))
    except (ValueError, np.linalg.LinAlgError):
        pass
    return best


def fit_correlation_profile(profile, r=None, *, r_min: float = 1, refine: bool = True) -> CorrelationFit:
    """Fit eta(R) ~ exp(-lam R) [A + B cos(q R + phi)].

    ``profile[k]`` is taken at distance ``r[k]`` (default k + 1); points closer
    than ``r_min`` are dropped. q comes from the Fourier peak and lam from a
    log-linear fit of the envelope. A Fourier peak is only taken as an
    oscillation when the profile has at least two interior extrema; if the
    global peak then sits below Q_ZERO the strongest peak above it and the best
    point of a coarse (lam, q) grid are tried too, and the best fit kept. A, B and phi follow by linear least squares. With
    ``refine`` lam, and q within one DFT bin of the peak, are polished by
    nonlinear least squares with the amplitudes solved exactly at each trial;
    the polish is kept only if it lowers the residual.
    """
    y = np.asarray(profile, dtype=float)
    r = np.arange(1, len(y) + 1, dtype=float) if r is None else np.asarray(r, dtype=float)
    keep = r >= r_min
    y, r = y[keep], r[keep]
    if len(y) < MIN_PROFILE_POINTS:
        return CorrelationFit.empty(f"need at least {MIN_PROFILE_POINTS} points, got {len(y)}")
    if not np.all(np.isfinite(y)):
        return CorrelationFit.empty("profile has non-finite values")
    scale = np.max(np.abs(y))
    if scale == 0:
        return CorrelationFit.empty("profile is identically zero")
    yn = y / scale
    q = dominant_wavevector(yn)
    candidates = [q]
    if count_extrema(yn) < 2:
        # two or fewer decaying exponentials give at most one extremum: no oscillation
        candidates = [0.0]
    elif q < Q_ZERO:
        # a slowly decaying offset can outweigh the oscillation peak in the spectrum
        candidates.append(dominant_wavevector(yn, q_min=Q_ZERO))
    fits = [_fit_fixed_start(r, yn, qc, refine) for qc in candidates]
    if len(candidates) > 1 and refine:
        lam_g, q_g = _grid_start(r, yn)
        fits.append(_fit_fixed_start(r, yn, q_g, refine, lam=lam_g))
    best = min(fits, key=lambda f: f[3])
    lam, q, coef, rnorm = best
    if q < Q_ZERO:
        A, B, phi = coef[0] * scale, 0.0, 0.0
    else:
        a, c, s = coef * scale
        # C cos + S sin = B cos(qr + phi) with B >= 0
        A, B, phi = a, float(np.hypot(c, s)), float(np.arctan2(-s, c))
    return CorrelationFit(lam, q, float(A), B, phi, rnorm / np.linalg.norm(yn))


# ---------------------------------------------------------------------------
# relaxation


@dataclass
class RelaxationFit:
    kappa: float
    amplitude: float
    asymptote: float
    ok: bool = True
    message: str = ""


def fit_relaxation(t, y, tail_fraction: float = 0.5, *, asymptote: float | None = None,
                   refine: bool = True) -> RelaxationFit:
    """Rate kappa of y(t) ~ c + a exp(-kappa t) over the final ``tail_fraction`` of the series.

    Unless given, the asymptote c starts as the mean of the last tenth of the
    tail. kappa comes from a log-linear fit of |y - c|; with ``refine`` (and no
    fixed asymptote) the three parameters are then polished jointly.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) != len(y):
        raise ValueError("t and y differ in length")
    start = int(np.floor(len(t) * (1 - tail_fraction)))
    t, y = t[start:], y[start:]
    if len(t) < MIN_SERIES_POINTS:
        return RelaxationFit(float("nan"), float("nan"), float("nan"), False,
                             f"need at least {MIN_SERIES_POINTS} samples in the tail")
    fixed = asymptote is not None
    if not fixed:
        asymptote = float(np.mean(y[-max(2, len(y) // 10):]))
    dev = np.abs(y - asymptote)
    floor = 1e-12 * max(1.0, np.max(np.abs(y)))
    if not fixed:
        # the final window is the asymptote estimate; it carries no decay information
        dev[-max(2, len(y) // 10):] = 0.0
    good = dev > floor
    if good.sum() < 3:
        return RelaxationFit(float("nan"), 0.0, asymptote, False, "tail shows no decay")
    slope, icpt = np.polyfit(t[good], np.log(dev[good]), 1)
    kappa, amp = -float(slope), float(np.exp(icpt))
    sign = np.sign(np.median((y - asymptote)[good]))
    if refine and not fixed and kappa > 0:
        def model(tt, c, a, k):
            return c + a * np.exp(-k * (tt - t[0]))

        try:
            p, _ = optimize.curve_fit(model, t, y, p0=[asymptote, sign * amp * np.exp(-kappa * t[0]), kappa],
                                      maxfev=2000)
            if p[2] > 0:
                asymptote, kappa = float(p[0]), float(p[2])
                amp = abs(float(p[1])) * np.exp(kappa * t[0])
        except (RuntimeError, ValueError):
            pass
    if not np.isfinite(kappa) or kappa <= 0:
        return RelaxationFit(kappa, amp, asymptote, False, "tail is not decaying")
    # coefficient of determination of the log-linear fit
    lg = np.log(dev[good])
    pred = -kappa * t[good] + np.log(amp)
    ss = np.sum((lg - lg.mean()) ** 2)
    r2 = 1 - np.sum((lg - pred) ** 2) / ss if ss > 0 else 1.0
    if r2 < 0.9:
        return RelaxationFit(kappa, amp, asymptote, False, f"tail is not exponential (R^2={r2:.2f})")
    return RelaxationFit(kappa, amp, asymptote)


# ---------------------------------------------------------------------------
# limit cycles


@dataclass
class LimitCycleReport:
    period: float
    amplitude: np.ndarray  # per component
    mean: np.ndarray
    is_cycle: bool
    drift: float
    cycles_observed: float = 0.0


AMP_THRESHOLD = 1e-4
DRIFT_THRESHOLD = 0.01


def _acf_period(x: np.ndarray, dt: float) -> float | None:
    n = len(x)
    x = x - x.mean()
    if np.max(np.abs(x)) == 0:
        return None
    m = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, m)
    acf = np.fft.irfft(f * np.conj(f), m)[:n]
    acf /= np.arange(n, 0, -1)  # unbiased estimate
    acf /= acf[0]
    half = n // 2
    neg = np.nonzero(acf[:half] < 0)[0]
    if len(neg) == 0:
        return None
    k0 = neg[0]
    pos = np.nonzero(acf[k0:half] > 0)[0]
    if len(pos) == 0:
        return None
    k1 = k0 + pos[0]
    back = np.nonzero(acf[k1:half] < 0)[0]
    k2 = k1 + back[0] if len(back) else half
    # first peak: the maximum of the first positive lobe after the first negative one
    k = k1 + int(np.argmax(acf[k1:k2]))
    if k <= k1 - 1 or k >= half - 1 or acf[k] < 0.3:
        return None
    a, b, c = acf[k - 1], acf[k], acf[k + 1]
    den = a - 2 * b + c
    shift = 0.5 * (a - c) / den if den != 0 else 0.0
    return (k + shift) * dt


def detect_limit_cycle(t, mu, *, amp_threshold: float = AMP_THRESHOLD,
                       drift_threshold: float = DRIFT_THRESHOLD, min_duration: float = 200.0) -> LimitCycleReport:
    """Period and amplitude of a periodic tail of mu(t) (uniformly sampled, shape (n, 3)).

    The period is the first autocorrelation peak of mu_x; amplitudes are half the
    peak-to-trough range over the last five periods, and the drift is the
    largest cycle-to-cycle change of that range relative to its mean.
    """
    t = np.asarray(t, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 1:
        mu = mu[:, None]
    if len(t) < MIN_SERIES_POINTS or len(t) != len(mu):
        raise ValueError("tail too short for limit-cycle detection")
    dt = np.diff(t)
    if np.max(np.abs(dt - dt.mean())) > 1e-6 * dt.mean():
        raise ValueError("limit-cycle detection needs uniform sampling")
    dt = float(dt.mean())
    duration = t[-1] - t[0]
    mean = mu.mean(axis=0)
    period = _acf_period(mu[:, 0], dt)
    if period is None:
        amp = 0.5 * (mu.max(axis=0) - mu.min(axis=0))
        if duration < min_duration:
            raise ValueError(f"tail of {duration:.3g} is shorter than {min_duration}")
        return LimitCycleReport(float("nan"), amp, mean, False, float("nan"), 0.0)
    n_cycles = duration / period
    if n_cycles < 10 and duration < min_duration:
        raise ValueError(f"tail covers {n_cycles:.1f} periods and {duration:.3g} time units")
    last = t >= t[-1] - 5 * period
    amp = 0.5 * (mu[last].max(axis=0) - mu[last].min(axis=0))
    # per-cycle ranges over the last five periods
    edges = t[-1] - period * np.arange(5, -1, -1)
    ranges = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (t >= lo) & (t <= hi)
        ranges.append(0.5 * (mu[sel].max(axis=0) - mu[sel].min(axis=0)))
    ranges = np.array(ranges)
    main = amp >= 0.1 * amp.max() if amp.max() > 0 else np.zeros_like(amp, dtype=bool)
    if main.any():
        drift = float(np.max(np.abs(np.diff(ranges[:, main], axis=0)) / amp[main]))
    else:
        drift = float("nan")
    is_cycle = bool(amp.max() > amp_threshold and np.isfinite(drift) and drift < drift_threshold)
    return LimitCycleReport(float(period), amp, mean, is_cycle, drift, float(n_cycles))
