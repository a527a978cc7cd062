"""Single-diode rectifier: DC operating point from the exponential moment of the envelope.

The waveform ``y`` is normalised so that ``sqrt(r_source) * |y|`` is the RF
voltage across the diode and ``mean|y|^2`` is the incident power in W. With
``alpha = sqrt(r_source) / (n V_0)`` the DC output ``v`` solves

    exp(v / nV0) (1 + v / (R_L I_0)) / (1 - (I_BV / I_0) exp((2v - V_B) / nV0))
        = mean(exp(alpha |y|))

which is compared in the log domain throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .waveform import _as_samples

__all__ = [
    "DiodeParams",
    "RectifierResult",
    "log_exponential_moment",
    "breakdown_pole",
    "log_lhs",
    "solve_vout",
    "solve_vout_current_balance",
    "rectify",
]

_POLE_GUARD = 1e-6


@dataclass(frozen=True)
class DiodeParams:
    i_sat: float = 3e-6
    i_bv: float = 3e-4
    v_breakdown: float = 3.8
    ideality: float = 1.05
    v_thermal: float = 0.026
    r_load: float = 10e3
    r_source: float = 50.0

    def __post_init__(self):
        for name in ("i_sat", "i_bv", "v_breakdown", "ideality", "v_thermal", "r_load", "r_source"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def nv0(self) -> float:
        return self.ideality * self.v_thermal

    @property
    def alpha(self) -> float:
        return float(np.sqrt(self.r_source) / self.nv0)


@dataclass(frozen=True)
class RectifierResult:
    v_out: float
    p_dc_out: float
    p_rf_in: float
    eta_r: float
    log_phi_plus: float
    saturated: bool = False


def log_exponential_moment(signal, diode: DiodeParams) -> float:
    """``ln(mean(exp(alpha * |y[n]|)))`` via the max-shifted log-sum-exp."""
    r = np.abs(_as_samples(signal)).ravel()
    if r.size == 0:
        raise ValueError("empty signal")
    a = diode.alpha * r
    top = a.max()
    return float(top + np.log(np.mean(np.exp(a - top))))


def breakdown_pole(diode: DiodeParams) -> float:
    """Output voltage at which the breakdown denominator vanishes."""
    return 0.5 * (diode.v_breakdown + diode.nv0 * np.log(diode.i_sat / diode.i_bv))


def log_lhs(v, diode: DiodeParams):
    """Natural log of the left-hand side of the balance equation, ``v < pole``."""
    v = np.asarray(v, dtype=float)
    nv0 = diode.nv0
    brk = (diode.i_bv / diode.i_sat) * np.exp((2 * v - diode.v_breakdown) / nv0)
    return v / nv0 + np.log1p(v / (diode.r_load * diode.i_sat)) - np.log1p(-brk)


def solve_vout(log_phi: float, diode: DiodeParams, xtol: float = 1e-11, rtol: float = 1e-10):
    """Root of ``log_lhs(v) = log_phi`` on ``[0, pole)`` by bisection.

    Stops once the bracket is below ``xtol`` V and the log-domain residual
    below ``rtol``, or at float resolution. Returns ``(v_out, saturated)``;
    ``saturated`` is set when ``log_phi`` exceeds the left-hand side at
    ``pole - 1e-6`` V and ``v_out`` is clamped there.
    """
    if log_phi < 0:
        raise ValueError("log exponential moment must be nonnegative")
    hi = breakdown_pole(diode) - _POLE_GUARD
    if log_phi == 0:
        return 0.0, False
    if log_lhs(hi, diode) <= log_phi:
        return float(hi), True
    lo = 0.0
    # near the pole the log-LHS slope is ~1e6 /V, so a voltage tolerance alone
    # does not bound the residual; keep halving until both are met
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f = log_lhs(mid, diode) - log_phi
        if hi - lo <= xtol and abs(f) <= rtol:
            return float(mid), False
        if f < 0:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda v: abs(log_lhs(v, diode) - log_phi))
    return float(best), False


def solve_vout_current_balance(signal, diode: DiodeParams) -> float:
    """Root of ``v / R_L = mean(i_d(sqrt(R_s)|y| - v))`` with the full diode law.

    Independent of the ``Phi_+ = Phi_-`` reduction: both exponential moments
    are evaluated directly. Used to cross-check :func:`solve_vout`.
    """
    r = np.sqrt(diode.r_source) * np.abs(_as_samples(signal)).ravel()
    nv0 = diode.nv0
    top = r.max() / nv0

    # all currents scaled by exp(-top) to stay finite
    def residual(v):
        vd = r - v
        fwd = diode.i_sat * (np.mean(np.exp(vd / nv0 - top)) - np.exp(-top))
        rev = diode.i_bv * np.mean(np.exp(-(vd + diode.v_breakdown) / nv0 - top))
        return fwd - rev - v / diode.r_load * np.exp(-top)

    hi = breakdown_pole(diode)
    if residual(0.0) <= 0:
        return 0.0
    while residual(hi) > 0:
        hi *= 1.5
    return float(brentq(residual, 0.0, hi, xtol=1e-13, rtol=1e-13))


def rectify(signal, diode: DiodeParams) -> RectifierResult:
    """DC output voltage, power and RF-to-DC efficiency for one waveform."""
    y = _as_samples(signal)
    p_rf = float(np.mean(np.abs(y) ** 2))
    if p_rf == 0:
        return RectifierResult(0.0, 0.0, 0.0, 0.0, 0.0)
    log_phi = log_exponential_moment(y, diode)
    v, saturated = solve_vout(max(log_phi, 0.0), diode)
    p_dc = v * v / diode.r_load
    return RectifierResult(v, p_dc, p_rf, p_dc / p_rf, log_phi, saturated)
