"""Memoryless Rapp power amplifier with EVM-constrained operating-point search.

Complex baseband samples are normalised so that ``|v|^2`` is instantaneous
power in watts; the saturation amplitude is therefore ``sqrt(p_sat)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .waveform import TimeSignal, _as_samples, papr_db

__all__ = [
    "PaModel",
    "PaMetrics",
    "InfeasibleOperatingPoint",
    "dbm_to_watt",
    "watt_to_dbm",
    "rapp",
    "amplify",
    "drain_efficiency",
    "fit_gain",
    "compute_evm",
    "compute_sir",
    "find_operating_point",
]

SIR_CAP_DB = 100.0


class InfeasibleOperatingPoint(ValueError):
    """EVM already exceeds the cap at the low edge of the operating region."""


def dbm_to_watt(p_dbm):
    return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=float)) + 30.0


@dataclass(frozen=True)
class PaModel:
    """Rapp AM/AM parameters and the efficiency law constant.

    Attributes
    ----------
    p_sat : float
        Saturated output power in W.
    small_signal_gain : float
        Linear power gain ``G``; the amplitude gain is ``sqrt(G)``.
    smoothness : float
        Rapp knee parameter ``p``.
    eta_max : float
        Drain efficiency at saturation.
    region_dbm : tuple of float
        Admissible per-antenna input power range for the operating-point search.
    """

    p_sat: float = 10.0
    small_signal_gain: float = 100.0
    smoothness: float = 3.0
    eta_max: float = 0.65
    region_dbm: tuple[float, float] = (12.0, 17.0)

    def __post_init__(self):
        if self.p_sat <= 0 or self.small_signal_gain <= 0 or self.smoothness <= 0:
            raise ValueError("p_sat, gain and smoothness must be positive")
        if not 0 < self.eta_max <= 1:
            raise ValueError("eta_max must lie in (0, 1]")
        lo, hi = self.region_dbm
        if lo >= hi:
            raise ValueError("region_dbm must be an increasing pair")

    @property
    def a_sat(self) -> float:
        return float(np.sqrt(self.p_sat))


@dataclass(frozen=True)
class PaMetrics:
    p_in: float
    p_out: float
    p_dc: float
    obo: float
    eta_pa: float
    evm: float
    sir: float
    papr_tx: float


def rapp(v, model: PaModel) -> np.ndarray:
    """Rapp AM/AM on the envelope; phase is preserved."""
    v = np.asarray(v, dtype=complex)
    g = np.sqrt(model.small_signal_gain)
    p = model.smoothness
    r = g * np.abs(v) / model.a_sat
    return g * v / (1.0 + r ** (2 * p)) ** (1.0 / (2 * p))


def drain_efficiency(obo, model: PaModel):
    """``eta_max * 10**(-OBO/20)``; negative back-off is clamped to zero."""
    obo = np.asarray(obo, dtype=float)
    if np.any(obo < 0):
        warnings.warn("negative OBO clamped to 0 dB", RuntimeWarning, stacklevel=2)
        obo = np.maximum(obo, 0.0)
    eta = model.eta_max * 10.0 ** (-obo / 20.0)
    return float(eta) if eta.ndim == 0 else eta


def fit_gain(reference, distorted) -> complex:
    """Least-squares complex scalar ``a`` minimising ``||y - a x||^2``."""
    x = _as_samples(reference).ravel()
    y = _as_samples(distorted).ravel()
    if x.shape != y.shape:
        raise ValueError("reference and distorted signals differ in length")
    ex = np.vdot(x, x).real
    if ex <= 0:
        raise ValueError("reference signal has zero energy")
    return np.vdot(x, y) / ex


def compute_evm(reference, distorted) -> float:
    """``||y - a x|| / ||a x||`` with ``a`` from :func:`fit_gain`."""
    x = _as_samples(reference).ravel()
    y = _as_samples(distorted).ravel()
    a = fit_gain(x, y)
    fit = a * x
    err = np.vdot(y - fit, y - fit).real
    sig = np.vdot(fit, fit).real
    if sig <= 0:
        return np.inf
    return float(np.sqrt(err / sig))


def compute_sir(reference, distorted) -> float:
    """Fitted-signal to residual power in dB, capped at ``SIR_CAP_DB``."""
    evm = compute_evm(reference, distorted)
    if evm <= 0:
        return SIR_CAP_DB
    return float(min(-20.0 * np.log10(evm), SIR_CAP_DB))


def _drive(signal, input_power):
    x = _as_samples(signal)
    p = np.mean(np.abs(x) ** 2)
    if p <= 0:
        raise ValueError("cannot drive an all-zero signal")
    return x * np.sqrt(input_power / p)


def amplify(signal, model: PaModel, input_power: float):
    """Scale ``signal`` to ``input_power`` W (mean over all samples) and amplify.

    Returns the output :class:`TimeSignal` and its :class:`PaMetrics`. OBO is
    taken from the realised mean output power.
    """
    if input_power <= 0:
        raise ValueError("input power must be positive")
    x = _drive(signal, input_power)
    y = rapp(x, model)
    p_out = float(np.mean(np.abs(y) ** 2))
    obo = 10.0 * np.log10(model.p_sat / p_out)
    eta = drain_efficiency(max(obo, 0.0), model)
    evm = compute_evm(x, y)
    sir = SIR_CAP_DB if evm <= 0 else min(-20.0 * np.log10(evm), SIR_CAP_DB)
    rate = signal.sample_rate if isinstance(signal, TimeSignal) else 1.0
    metrics = PaMetrics(p_in=float(input_power), p_out=p_out, p_dc=p_out / eta, obo=float(obo),
                        eta_pa=eta, evm=evm, sir=sir, papr_tx=float(np.mean(papr_db(x))))
    return TimeSignal(y, rate), metrics


def _evm_at(x_unit, model, p_in):
    x = x_unit * np.sqrt(p_in)
    return compute_evm(x, rapp(x, model))


def find_operating_point(signal, model: PaModel, evm_max: float, tol_db: float = 0.01) -> float:
    """Largest input power in ``model.region_dbm`` with EVM <= ``evm_max``.

    Bisection on the input power in dB; EVM of the Rapp model is
    nondecreasing in drive level. Returns watts.

    Raises
    ------
    InfeasibleOperatingPoint
        If the EVM at the lower edge of the region already exceeds ``evm_max``.
    """
    if not 0 < evm_max:
        raise ValueError("evm_max must be positive")
    x_unit = _drive(signal, 1.0)
    lo, hi = model.region_dbm
    if _evm_at(x_unit, model, dbm_to_watt(hi)) <= evm_max:
        return float(dbm_to_watt(hi))
    if _evm_at(x_unit, model, dbm_to_watt(lo)) > evm_max:
        raise InfeasibleOperatingPoint(
            f"EVM exceeds {evm_max:.3f} already at {lo} dBm input")
    while hi - lo >= tol_db:
        mid = 0.5 * (lo + hi)
        if _evm_at(x_unit, model, dbm_to_watt(mid)) <= evm_max:
            lo = mid
        else:
            hi = mid
    return float(dbm_to_watt(lo))
