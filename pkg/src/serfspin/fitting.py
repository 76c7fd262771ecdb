"""Damped-cosine fits of free-induction-decay signals.

The model is ``f(t) = A exp(-t/T1) + C exp(-Gamma0 t) cos(omega0 t + phi)``,
fit with a Levenberg-Marquardt loop written against the analytic Jacobian.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import hilbert

PARAM_NAMES = ("A", "T1", "C", "Gamma0", "omega0", "phi")


@dataclass
class FitOptions:
    max_iter: int = 500
    ftol: float = 1e-12
    xtol: float = 1e-10
    gtol: float = 1e-10
    min_phase: float = 1.0
    min_samples: int = 50
    mu0: float = 1e-3


@dataclass
class FitResult:
    A: float
    T1: float
    C: float
    Gamma0: float
    omega0: float
    phi: float
    residual_rms: float
    converged: bool
    iterations: int
    degenerate: bool = False
    covariance: np.ndarray | None = field(default=None, repr=False)
    cost_history: list = field(default_factory=list, repr=False)

    def params(self) -> tuple:
        return tuple(getattr(self, n) for n in PARAM_NAMES)

    @property
    def trusted(self) -> bool:
        return self.converged and not self.degenerate


def fid_model(t, A, T1, C, Gamma0, omega0, phi):
    t = np.asarray(t, dtype=float)
    return A * np.exp(-t / T1) + C * np.exp(-Gamma0 * t) * np.cos(omega0 * t + phi)


# Internal parameters: (A, r = 1/T1, C, Gamma0, omega0, phi).

def _model_and_jac(t: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    A, r, C, g, w, phi = q
    e1 = np.exp(-r * t)
    e2 = np.exp(-g * t)
    arg = w * t + phi
    c, s = np.cos(arg), np.sin(arg)
    f = A * e1 + C * e2 * c
    J = np.empty((t.size, 6))
    J[:, 0] = e1
    J[:, 1] = -A * t * e1
    J[:, 2] = e2 * c
    J[:, 3] = -C * t * e2 * c
    J[:, 4] = -C * t * e2 * s
    J[:, 5] = -C * e2 * s
    return f, J


def _spectral_peak(t: np.ndarray, y: np.ndarray) -> float:
    n = y.size
    dt = (t[-1] - t[0]) / (n - 1)
    nfft = 1 << int(math.ceil(math.log2(16 * n)))
    spec = np.abs(np.fft.rfft(y - y.mean(), nfft))
    k = int(np.argmax(spec[1:])) + 1
    if 1 <= k < spec.size - 1:
        a, b, c = np.log(spec[k - 1:k + 2] + 1e-300)
        denom = a - 2 * b + c
        k = k + (0.5 * (a - c) / denom if denom != 0 else 0.0)
    return 2 * math.pi * k / (nfft * dt)


def _log_envelope_rate(t: np.ndarray, y: np.ndarray) -> float:
    env = np.abs(hilbert(y - y.mean()))
    ok = env > 1e-3 * env.max()
    if ok.sum() < 2:
        return 1.0 / (t[-1] - t[0])
    return float(-np.polyfit(t[ok], np.log(env[ok]), 1)[0])


def _linear_amplitudes(t, y, r, g, w):
    """Least-squares (A, C, phi) with the nonlinear parameters held fixed."""
    e2 = np.exp(-g * t)
    basis = np.column_stack([np.exp(-r * t), e2 * np.cos(w * t), -e2 * np.sin(w * t)])
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    A, a, b = coef
    return A, math.hypot(a, b), math.atan2(b, a)


def _projection_residuals(ts, ys, rates, gammas, omegas):
    """Variable-projection residual ``|y|^2 - c.J^T y`` on a (r, Gamma0, omega0) grid.

    The columns ``exp(-r t)``, ``exp(-g t) cos(w t)`` and ``-exp(-g t) sin(w t)``
    factor over the three rates, so every Gram entry is a matrix product.
    Returns an array of shape ``(len(rates), len(gammas), len(omegas))``.
    """
    Er = np.exp(-np.outer(rates, ts))
    Eg = np.exp(-np.outer(gammas, ts))
    Cw, Sw = np.cos(np.outer(omegas, ts)), -np.sin(np.outer(omegas, ts))
    nr, ng, nw = len(rates), len(gammas), len(omegas)

    gram = np.empty((nr, ng, nw, 3, 3))
    gram[..., 0, 0] = (Er * Er).sum(axis=1)[:, None, None]
    Erg = (Er[:, None, :] * Eg[None, :, :]).reshape(nr * ng, -1)
    gram[..., 0, 1] = (Erg @ Cw.T).reshape(nr, ng, nw)
    gram[..., 0, 2] = (Erg @ Sw.T).reshape(nr, ng, nw)
    Egg = Eg * Eg
    gram[..., 1, 1] = (Egg @ (Cw * Cw).T)[None]
    gram[..., 1, 2] = (Egg @ (Cw * Sw).T)[None]
    gram[..., 2, 2] = (Egg @ (Sw * Sw).T)[None]
    for i, j in ((1, 0), (2, 0), (2, 1)):
        gram[..., i, j] = gram[..., j, i]

    rhs = np.empty((nr, ng, nw, 3))
    rhs[..., 0] = (Er @ ys)[:, None, None]
    Egy = Eg * ys
    rhs[..., 1] = (Egy @ Cw.T)[None]
    rhs[..., 2] = (Egy @ Sw.T)[None]

    gram += 1e-14 * np.trace(gram, axis1=-2, axis2=-1)[..., None, None] * np.eye(3)
    coef = np.linalg.solve(gram, rhs[..., None])[..., 0]
    return ys @ ys - np.einsum("...i,...i->...", coef, rhs)


def _projection_scan(t, y, rates, gammas, omegas, max_points=2000):
    """Grid point (r, Gamma0, omega0) with the smallest variable-projection residual."""
    stride = max(1, t.size // max_points)
    resid = _projection_residuals(t[::stride], y[::stride], rates, gammas, omegas)
    ir, ig, iw = np.unravel_index(int(np.argmin(resid)), resid.shape)
    return float(rates[ir]), float(gammas[ig]), float(omegas[iw])


def initial_guess(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Deterministic starting point for the internal parameter vector.

    Spectral-peak frequency and log-envelope rate seed a (Gamma0, omega0)
    grid, scanned jointly with a baseline-rate grid; the grid point with
    the smallest linear-projection residual wins.
    """
    span = t[-1] - t[0]
    dt = span / (t.size - 1)
    w_peak = _spectral_peak(t, y)
    g_env = float(np.clip(_log_envelope_rate(t, y), 0.1 / span, 0.5 / dt))
    gammas = np.concatenate([[g_env], np.geomspace(0.2 / span, 0.5 / dt, 48)])
    omegas = np.concatenate([[0.0, w_peak], np.geomspace(0.5 / span, 0.5 * math.pi / dt, 96)])
    rates = np.concatenate([[1.0 / span], np.geomspace(0.1 / span, 0.2 / dt, 48)])
    r, g, w = _projection_scan(t, y, rates, gammas, omegas)
    A, C, phi = _linear_amplitudes(t, y, r, g, w)
    if A == 0:
        period = 2 * math.pi / w if w > 0 else span
        n_tail = max(2, min(y.size // 2, int(round(period / dt))))
        A = float(np.mean(y[-n_tail:]))
    return np.array([A, r, C, g, w, phi])


def _canonical(q: np.ndarray) -> np.ndarray:
    A, r, C, g, w, phi = q
    if w < 0:
        w, phi = -w, -phi
    if C < 0:
        C, phi = -C, phi + math.pi
    phi = math.atan2(math.sin(phi), math.cos(phi))
    return np.array([A, r, C, g, w, phi])


def levenberg_marquardt(t: np.ndarray, y: np.ndarray, q0: np.ndarray, opts: FitOptions,
                        lower: np.ndarray | None = None, upper: np.ndarray | None = None):
    """Minimize ``0.5 * ||model - y||^2`` subject to ``lower <= q <= upper``.

    Parameters sitting on a bound with the gradient pointing outward are
    frozen for that iteration. Returns (q, converged, iterations, history, J).
    """
    lower = np.full(q0.size, -np.inf) if lower is None else lower
    upper = np.full(q0.size, np.inf) if upper is None else upper

    def frozen(q, g):
        return ((q <= lower) & (g > 0)) | ((q >= upper) & (g < 0))

    q = np.clip(q0.astype(float), lower, upper)
    f, J = _model_and_jac(t, q)
    res = f - y
    cost = 0.5 * float(res @ res)
    history = [cost]
    mu = opts.mu0
    converged = False
    it = 0
    while it < opts.max_iter:
        it += 1
        g = J.T @ res
        free = ~frozen(q, g)
        H = (J.T @ J)[np.ix_(free, free)]
        d = np.diag(H).copy()
        d = np.maximum(d, 1e-12 * max(d.max(), 1e-300))
        accepted = False
        while mu < 1e16:
            step = np.zeros_like(q)
            try:
                step[free] = np.linalg.solve(H + mu * np.diag(d), -g[free])
            except np.linalg.LinAlgError:
                mu *= 4
                continue
            trial = np.clip(q + step, lower, upper)
            f_t, J_t = _model_and_jac(t, trial)
            res_t = f_t - y
            cost_t = 0.5 * float(res_t @ res_t)
            if np.isfinite(cost_t) and cost_t <= cost:
                accepted = True
                break
            mu *= 4
        if not accepted:
            # no descent step even at maximal damping: minimum reached to roundoff
            converged = True
            break
        rel_change = (cost - cost_t) / cost if cost > 0 else 0.0
        step_norm = float(np.linalg.norm((trial - q) / np.maximum(np.abs(q), 1e-12)))
        q, res, J, cost = trial, res_t, J_t, cost_t
        history.append(cost)
        mu = max(mu / 3, 1e-15)
        # residual orthogonal to every free Jacobian column (scale-free first-order test)
        g = J.T @ res
        free = ~frozen(q, g)
        col_norms = np.linalg.norm(J, axis=0)
        ortho = np.abs(g) / np.maximum(col_norms * math.sqrt(2 * cost), 1e-300)
        if rel_change <= opts.ftol or step_norm <= opts.xtol or ortho[free].max() <= opts.gtol:
            converged = True
            break
    return q, converged, it, history, J


def fit_fid(t, y, t0: float = 300e-6, opts: FitOptions | None = None) -> FitResult:
    """Fit the damped-cosine-plus-baseline model to samples with ``t >= t0``.

    Gamma0 and omega0 are identifiable when the window holds at least a
    radian of phase and the oscillation survives a fraction of a cycle
    (omega0 >~ 2 Gamma0); outside that the result is flagged degenerate or
    unconverged rather than trusted.
    """
    opts = opts or FitOptions()
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape:
        raise ValueError("times and values differ in length")
    mask = t >= t0 - 1e-15
    tw, yw = t[mask], y[mask]
    if tw.size < opts.min_samples:
        raise ValueError(f"only {tw.size} samples after t0={t0}; need >= {opts.min_samples}")
    if not np.all(np.isfinite(yw)):
        raise ValueError("signal contains non-finite values")

    # fit in window-relative time so a fast early baseline stays well conditioned
    ts = tw[0]
    tau = tw - ts
    span = tau[-1]
    q0 = initial_guess(tau, yw)
    # a baseline slower than 1e-3/window is indistinguishable from a constant, and one
    # faster than half the sample rate is unresolved
    dt = span / (tau.size - 1)
    lower = np.array([-np.inf, 1e-3 / span, -np.inf, 0.0, -np.inf, -np.inf])
    upper = np.array([np.inf, 0.5 / dt, np.inf, np.inf, np.inf, np.inf])
    q0 = np.clip(q0, lower, upper)
    q_rel, converged, iterations, history, _ = levenberg_marquardt(tau, yw, q0, opts, lower, upper)
    q_rel = _canonical(q_rel)
    A_rel, r, C_rel, g, w, phi_rel = (float(v) for v in q_rel)
    with np.errstate(over="ignore"):
        # back to absolute time; a fast baseline with a late window may overflow to +-inf
        grow_r, grow_g = np.exp(r * ts), np.exp(g * ts)
    q = _canonical(np.array([A_rel * grow_r, r, C_rel * grow_g, g, w, phi_rel - w * ts]))
    A, C, phi = float(q[0]), float(q[2]), float(q[5])
    f, J = _model_and_jac(tau, q_rel)
    res = f - yw
    rms = float(np.sqrt(np.mean(res ** 2)))

    dof = max(tw.size - 6, 1)
    cov = None
    try:
        if not (math.isfinite(grow_r) and math.isfinite(grow_g)):
            raise np.linalg.LinAlgError("absolute-time amplitudes overflow")
        cov_rel = np.linalg.pinv(J.T @ J) * (res @ res) / dof
        # d(absolute params)/d(relative params), with r = 1/T1 mapped to T1
        jac_map = np.eye(6)
        jac_map[0, 0], jac_map[0, 1] = grow_r, A * ts
        jac_map[2, 2], jac_map[2, 3] = grow_g, C * ts
        jac_map[5, 4] = -ts
        jac_map[1, :] = 0.0
        jac_map[1, 1] = -1.0 / r ** 2
        cov = jac_map @ cov_rel @ jac_map.T
    except np.linalg.LinAlgError:
        pass

    # less than one radian of observed phase leaves Gamma0, omega0 and the baseline confounded;
    # amplitudes are compared at the start of the window
    degenerate = C_rel == 0 or C_rel < 1e-3 * abs(A_rel) or w * span < opts.min_phase
    T1 = 1.0 / r
    return FitResult(A, T1, C, g, w, phi, rms, bool(converged), iterations, bool(degenerate), cov, history)


class ThresholdFit(NamedTuple):
    plateau: float
    curvature: float
    exponent: float
    monotone: bool = True


def quadratic_threshold_fit(points, min_points: int = 5) -> ThresholdFit:
    """Fit ``Gamma0(B) = plateau + curvature * B**exponent`` to low-field points.

    ``points`` is a sequence of ``(B, Gamma0)``. A non-monotone input is fit
    anyway and reported through ``monotone=False``.
    """
    pts = np.asarray(sorted(points), dtype=float).reshape(-1, 2)
    if len(pts) < min_points:
        raise ValueError(f"need at least {min_points} points, got {len(pts)}")
    B, g = pts[:, 0], pts[:, 1]
    if np.any(B <= 0):
        raise ValueError("fields must be positive")
    monotone = bool(np.all(np.diff(g) >= 0))
    if not monotone:
        warnings.warn("Gamma0(B) subset is not monotone in B", RuntimeWarning, stacklevel=2)

    scale = B.max()
    x = B / scale

    def resid(q):
        plateau, log_c, p = q
        return plateau + np.exp(log_c) * x ** p - g

    excess = max(g[-1] - g[0], 1e-300)
    q0 = np.array([g[0], np.log(excess), 2.0])
    sol = least_squares(resid, q0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=10000)
    plateau, log_c, p = sol.x
    return ThresholdFit(float(plateau), float(np.exp(log_c) / scale ** p), float(p), monotone)


class ComplexExpFit(NamedTuple):
    amplitude: complex
    lam: complex
    residual_rms: float
    converged: bool

    @property
    def Gamma(self) -> float:
        return -self.lam.real

    @property
    def omega(self) -> float:
        return abs(self.lam.imag)


def fit_complex_exponential(t, z, t_start: float = 0.0, floor: float = 1e-9) -> ComplexExpFit:
    """Fit ``z(t) = amplitude * exp(lam t)`` to a complex series, e.g. one multipole coefficient.

    Unlike the real damped-cosine model this stays well posed for overdamped
    signals, since the phase is read from the imaginary part. Samples after
    ``|z|`` drops below ``floor`` times its window maximum are ignored.
    """
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=complex)
    if t.shape != z.shape:
        raise ValueError("t and z must have equal length")
    sel = t >= t_start
    t, z = t[sel], z[sel]
    mag = np.abs(z)
    if t.size < 3 or mag.max(initial=0.0) == 0:
        raise ValueError("need at least 3 nonzero samples in the window")
    below = np.nonzero(mag < floor * mag.max())[0]
    if below.size:
        t, z, mag = t[:below[0]], z[:below[0]], mag[:below[0]]
    if t.size < 3:
        raise ValueError("signal falls below the floor within 3 samples")

    tau = t - t[0]
    rate = np.polyfit(tau, np.log(mag), 1)[0]
    freq = np.polyfit(tau, np.unwrap(np.angle(z)), 1)[0]
    lam0 = complex(rate, freq)
    c0 = complex(np.vdot(np.exp(lam0 * tau), z) / max(np.sum(np.exp(2 * rate * tau)), 1e-300))
    scale = mag[0]

    def resid(q):
        r = (q[0] + 1j * q[1]) * np.exp((q[2] + 1j * q[3]) * tau) - z / scale
        return np.concatenate([r.real, r.imag])

    q0 = [c0.real / scale, c0.imag / scale, lam0.real, lam0.imag]
    sol = least_squares(resid, q0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    lam = complex(sol.x[2], sol.x[3])
    amp = complex(sol.x[0], sol.x[1]) * scale * np.exp(-lam * t[0])
    rms = float(np.sqrt(np.mean(sol.fun ** 2)) * scale)
    return ComplexExpFit(complex(amp), lam, rms, bool(sol.success))
