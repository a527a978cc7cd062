"""Tone-reservation PAPR reduction on the reserved subcarriers of each antenna.

Both solvers address the same convex problem: minimise the peak magnitude of
the oversampled time signal ``|F^H (x + c)|`` over reserved-tone vectors ``c``
supported on the TR set, subject to
``||c||^2 < 0.5 * K_TR / (K - K_TR) * ||x||^2``.

* :func:`tr_optimize_gd` -- gradient descent on a log-sum-exp smoothed peak.
* :func:`tr_optimize_minimax` -- projected subgradient on the exact peak,
  slower, kept as a reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .waveform import SubcarrierPartition, _bin_index, ofdm_modulate, papr_db

__all__ = [
    "TrParams",
    "TrResult",
    "power_bound",
    "smoothed_peak",
    "tr_gradient",
    "tr_optimize_gd",
    "tr_optimize_gd_batch",
    "tr_optimize_minimax",
    "reduce_frame_papr",
]

# radial projection lands strictly inside the power ball
_PROJECT_MARGIN = 0.999


@dataclass(frozen=True)
class TrParams:
    """Settings for the smoothed gradient-descent solver.

    ``step`` is in units of signal RMS per unit of the peak-cancellation gain
    ``K_TR / (L K)``, so one value works for any frame size. With
    ``smoothing=None`` the log-sum-exp sharpness is ``sharpness / max|z|`` at
    each iterate, ramped geometrically towards ``sharpness_final``.
    """

    smoothing: float | None = None
    sharpness: float = 10.0
    sharpness_final: float | None = 150.0
    step: float = 2.0
    step_growth: float = 1.0
    max_iters: int = 200
    grad_tol: float = 0.0
    oversampling: int = 4
    init_scale: float = 1e-3

    def __post_init__(self):
        if self.smoothing is not None and self.smoothing <= 0:
            raise ValueError("smoothing must be positive")
        if self.sharpness <= 0:
            raise ValueError("sharpness must be positive")
        if self.step <= 0 or self.max_iters < 0 or self.grad_tol < 0:
            raise ValueError("invalid step / iteration settings")


@dataclass
class TrResult:
    reserved_symbols: np.ndarray  # length K, zero off the TR set
    papr_before: float
    papr_after: float
    iterations_used: int
    trajectory: np.ndarray = field(repr=False)  # best true peak |z| so far, per iterate
    papr_trajectory: np.ndarray = field(repr=False)  # same, as PAPR in dB
    objective_trajectory: np.ndarray = field(default=None, repr=False)

    @property
    def reduction_db(self) -> float:
        return self.papr_before - self.papr_after


def power_bound(frame_row, partition: SubcarrierPartition) -> float:
    """``0.5 * K_TR / (K - K_TR) * ||x||^2`` over the non-reserved part of ``frame_row``."""
    x = np.asarray(frame_row)
    k_tr = partition.k_tr
    if k_tr == 0:
        return 0.0
    mask = np.ones(partition.k_total, dtype=bool)
    mask[partition.set_tr] = False
    energy = float(np.sum(np.abs(x[..., mask]) ** 2))
    return 0.5 * k_tr / (partition.k_total - k_tr) * energy


def smoothed_peak(z, smoothing: float):
    """``(1/eps) * ln(sum(exp(eps * z)))`` along the last axis, max-shifted."""
    if np.any(np.asarray(smoothing) <= 0):
        raise ValueError("smoothing must be positive")
    z = np.asarray(z, dtype=float)
    eps = np.asarray(smoothing, dtype=float)[..., None] if np.ndim(smoothing) else smoothing
    top = z.max(axis=-1, keepdims=True)
    val = top + np.log(np.sum(np.exp(eps * (z - top)), axis=-1, keepdims=True)) / eps
    val = val[..., 0]
    return float(val) if val.ndim == 0 else val


def _time(x, oversampling):
    return ofdm_modulate(x, oversampling).samples


def _grad_from_time(z, smoothing, k, oversampling, tr_set):
    mag = np.abs(z)
    eps = np.asarray(smoothing, dtype=float)
    if eps.ndim:
        eps = eps[..., None]
    top = mag.max(axis=-1, keepdims=True)
    w = np.exp(eps * (mag - top))
    w /= w.sum(axis=-1, keepdims=True)
    phase = np.divide(z, mag, out=np.zeros_like(z), where=mag > 0)
    spec = np.fft.fft(w * phase, norm="ortho")
    g = np.zeros(z.shape[:-1] + (k,), dtype=complex)
    g[..., tr_set] = spec[..., _bin_index(k, oversampling)[tr_set]]
    return g


def tr_gradient(frame_row, c, smoothing: float, tr_set, oversampling: int = 4) -> np.ndarray:
    """Gradient of the smoothed peak of ``|F^H (x + c)|`` with respect to ``c``.

    Entry ``k`` packs the partial derivatives with respect to ``Re c[k]``
    (real part) and ``Im c[k]`` (imaginary part). It is the forward DFT of the
    softmax weights times the sample phase ``z/|z|``, restricted to
    ``tr_set``; zero-magnitude samples get a zero phase factor.
    """
    x = np.asarray(frame_row, dtype=complex)
    z = _time(x + np.asarray(c), oversampling)
    return _grad_from_time(z, smoothing, x.shape[-1], oversampling, np.asarray(tr_set, dtype=int))


def _project(c, bound):
    energy = np.sum(np.abs(c) ** 2, axis=-1, keepdims=True)
    limit = _PROJECT_MARGIN * np.asarray(bound, dtype=float).reshape(energy.shape)
    scale = np.where(energy > limit, np.sqrt(limit / np.where(energy > 0, energy, 1.0)), 1.0)
    return c * scale


def _identity_result(x, oversampling):
    z = _time(x, oversampling)
    papr = papr_db(z)
    peak = float(np.abs(z).max())
    return TrResult(np.zeros_like(x), papr, papr, 0, np.array([peak]), np.array([papr]),
                    np.array([peak]))


def tr_optimize_gd_batch(rows, partition: SubcarrierPartition, params: TrParams | None = None,
                         rng: np.random.Generator | None = None) -> list[TrResult]:
    """Run the smoothed gradient descent independently on every row of ``rows``.

    Rows share no state; the batch only shares FFT calls. Each row starts from
    small random reserved tones, takes steps ``c <- P(c - a*g)`` where ``P``
    rescales onto the power ball, halves its own step whenever the smoothed
    objective would rise (the update is then rejected), and stops after
    ``max_iters`` updates or when ``||g|| <= grad_tol``. The tones with the
    lowest true peak seen are returned.
    """
    params = params or TrParams()
    X = np.atleast_2d(np.asarray(rows, dtype=complex))
    n_rows, k = X.shape
    L = params.oversampling
    if partition.k_tr == 0:
        return [_identity_result(x, L) for x in X]
    if k != partition.k_total:
        raise ValueError("frame row length does not match the partition")
    rng = rng if rng is not None else np.random.default_rng(0)
    tr_set = partition.set_tr
    k_tr = partition.k_tr
    bounds = np.array([power_bound(x, partition) for x in X])

    z0 = _time(X, L)
    mean_pow = np.mean(np.abs(z0) ** 2, axis=-1)
    rms = np.sqrt(mean_pow)
    papr0 = papr_db(z0)

    C = np.zeros_like(X)
    noise = rng.standard_normal((n_rows, k_tr)) + 1j * rng.standard_normal((n_rows, k_tr))
    C[:, tr_set] = noise / np.sqrt(2) * (params.init_scale * np.sqrt(np.mean(np.abs(X) ** 2, axis=-1)))[:, None]
    C = _project(C, bounds)
    step = params.step * rms * (L * k) / k_tr

    final = params.sharpness_final or params.sharpness
    ramp = (final / params.sharpness) ** (1.0 / max(params.max_iters, 1))

    def sharp(mag, it):
        if params.smoothing is not None:
            return np.full(mag.shape[0], params.smoothing)
        return params.sharpness * ramp ** np.asarray(it) / mag.max(axis=-1)

    Z = _time(X + C, L)
    mag = np.abs(Z)
    iters = np.zeros(n_rows, dtype=int)
    eps = sharp(mag, iters)
    f = smoothed_peak(mag, eps)
    peak = mag.max(axis=-1)
    best_C, best_peak = C.copy(), peak.copy()
    start_peak = np.abs(z0).max(axis=-1)
    peaks = [start_peak, np.minimum(start_peak, best_peak)]
    objs = [start_peak, f.copy()]
    active = np.ones(n_rows, dtype=bool)

    for _ in range(params.max_iters):
        G = _grad_from_time(Z, eps, k, L, tr_set)
        active &= np.linalg.norm(G, axis=-1) > params.grad_tol
        active &= iters < params.max_iters
        if not active.any():
            break
        iters += active
        trial = _project(C - step[:, None] * G, bounds)
        Zt = _time(X + trial, L)
        mag_t = np.abs(Zt)
        f_t = smoothed_peak(mag_t, eps)
        accept = active & (f_t <= f)
        reject = active & ~accept
        step[reject] *= 0.5
        step[accept] *= params.step_growth
        C[accept], Z[accept] = trial[accept], Zt[accept]
        mag = np.where(accept[:, None], mag_t, mag)
        eps = np.where(accept, sharp(mag, iters), eps)
        f = np.where(accept, smoothed_peak(mag, eps), f)
        peak = mag.max(axis=-1)
        improved = peak < best_peak
        best_C[improved], best_peak[improved] = C[improved], peak[improved]
        peaks.append(np.minimum(best_peak, start_peak))
        objs.append(f.copy())

    Zb = _time(X + best_C, L)
    papr_b = papr_db(Zb)
    traj = np.array(peaks).T
    obj_traj = np.array(objs).T
    out = []
    for i in range(n_rows):
        t = traj[i, :iters[i] + 2]
        out.append(TrResult(best_C[i], float(papr0[i]), float(papr_b[i]), int(iters[i]), t,
                            10 * np.log10(t**2 / mean_pow[i]), obj_traj[i, :iters[i] + 2]))
    return out


def tr_optimize_gd(frame_row, partition: SubcarrierPartition, params: TrParams | None = None,
                   rng: np.random.Generator | None = None) -> TrResult:
    """Single-row form of :func:`tr_optimize_gd_batch`."""
    x = np.asarray(frame_row, dtype=complex)
    if x.ndim != 1:
        raise ValueError("expected one frequency-domain row")
    return tr_optimize_gd_batch(x[None, :], partition, params, rng)[0]


def tr_optimize_minimax(frame_row, partition: SubcarrierPartition, iters: int = 2000,
                        oversampling: int = 4, step0: float = 1.0) -> TrResult:
    """Projected subgradient descent on ``max_n |F^H (x + c)|[n]``.

    Moves along the unit-norm subgradient of the current peak sample with
    the diminishing step ``step0 * rms / sqrt(t + 1)``.
    """
    x = np.asarray(frame_row, dtype=complex)
    L = oversampling
    if partition.k_tr == 0:
        return _identity_result(x, L)
    k = x.shape[-1]
    tr_set = partition.set_tr
    bins = _bin_index(k, L)[tr_set]
    n = L * k
    bound = power_bound(x, partition)
    z0 = _time(x, L)
    rms = np.sqrt(np.mean(np.abs(z0) ** 2))
    c = np.zeros_like(x)
    z = z0
    best_c, best_peak = c, float(np.abs(z0).max())
    peaks = [best_peak]
    for t in range(iters):
        mag = np.abs(z)
        i = int(np.argmax(mag))
        g = np.zeros_like(x)
        g[tr_set] = np.exp(-2j * np.pi * bins * i / n) * (z[i] / mag[i])
        g /= np.linalg.norm(g)
        c = _project(c - step0 * rms / np.sqrt(t + 1.0) * g, bound)
        z = _time(x + c, L)
        peak = float(np.abs(z).max())
        if peak < best_peak:
            best_c, best_peak = c, peak
        peaks.append(best_peak)
    peaks = np.array(peaks)
    mean_pow = np.mean(np.abs(z0) ** 2)
    return TrResult(best_c, papr_db(z0), papr_db(_time(x + best_c, L)), iters, peaks,
                    10 * np.log10(peaks**2 / mean_pow), peaks)


def reduce_frame_papr(grid, partition: SubcarrierPartition, params: TrParams | None = None,
                      rng: np.random.Generator | None = None):
    """Optimise the reserved tones of every antenna row of ``grid``.

    Returns the updated grid and one :class:`TrResult` per antenna.
    """
    grid = np.array(grid, dtype=complex)
    results = tr_optimize_gd_batch(grid, partition, params, rng)
    for i, res in enumerate(results):
        grid[i] = grid[i] + res.reserved_symbols
    return grid, results
