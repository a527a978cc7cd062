"""Efficiency surrogates, SCA subcarrier allocation and rate-energy metrics.

The allocation vector is ``k = [K_TR, K_IM]``. Efficiencies are modelled
locally as affine functions of ``k`` around a calibration point ``k0``;
rate and harvested energy then become closed-form functions of ``k`` and the
rate-maximisation problem is solved by successive convex approximation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq, nnls
from scipy.stats import spearmanr

from .waveform import MimoConfig

__all__ = [
    "SurrogateModel",
    "LinkBudget",
    "ScaProblem",
    "ScaIterate",
    "AllocationResult",
    "ReMetrics",
    "RePoint",
    "TabulatedEfficiency",
    "re_frontier",
    "InfeasibleAllocation",
    "calibrate_surrogate",
    "save_surrogate",
    "load_surrogate",
    "qam_bits",
    "mu_factor",
    "rate",
    "energy",
    "re_metrics",
    "build_sca",
    "solve_p3",
    "kkt_residual",
    "sca_step",
    "allocate",
    "round_allocation",
    "xi_metric",
    "re_region",
    "envelope_energy",
    "rx_papr_prediction",
    "rank_correlation",
]

_LN2 = math.log(2.0)


class InfeasibleAllocation(ValueError):
    """No allocation satisfies the harvested-power and box constraints."""


# --------------------------------------------------------------------------- surrogate


@dataclass(frozen=True)
class SurrogateModel:
    """Local affine efficiency model around ``k0``.

    ``eta_PA(k) = eta_pa0 + a_pa (K_TR - K_TR0) + b_pa (K_IM - K_IM0)`` and
    likewise for ``eta_R`` with ``a_r``, ``b_r``. The compact coefficients
    ``c1..c4``, ``beta1``, ``beta2`` are derived from the slopes.
    """

    k0: tuple[float, float]
    eta_pa0: float
    eta_r0: float
    a_pa: float
    b_pa: float
    a_r: float
    b_r: float
    beta_cancel: float = 0.0
    papr_tx0: float = float("nan")
    papr_rx0: float = float("nan")
    step: float = float("nan")

    _TINY = 1e-14

    @property
    def c1(self) -> float:
        return self.a_pa

    @property
    def c2(self) -> float:
        return self.eta_pa0 - self.a_pa * self.k0[0] - self.b_pa * self.k0[1]

    @property
    def c3(self) -> float:
        return self.b_r

    @property
    def c4(self) -> float:
        return self.eta_r0 - self.a_r * self.k0[0] - self.b_r * self.k0[1]

    @property
    def beta1(self) -> float:
        return -self.b_pa / self.a_pa if abs(self.a_pa) > self._TINY else float("nan")

    @property
    def beta2(self) -> float:
        return -self.a_r / self.b_r if abs(self.b_r) > self._TINY else float("nan")

    @property
    def degenerate(self) -> tuple[str, ...]:
        """Names of compact coefficients that are undefined (zero slope)."""
        bad = []
        if abs(self.a_pa) <= self._TINY:
            bad.append("beta1")
        if abs(self.b_r) <= self._TINY:
            bad.append("beta2")
        return tuple(bad)

    def eta_pa(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        return self.a_pa * k[..., 0] + self.b_pa * k[..., 1] + self.c2

    def eta_r(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        return self.a_r * k[..., 0] + self.b_r * k[..., 1] + self.c4

    @classmethod
    def constant(cls, k0, eta_pa0: float, eta_r0: float, **kw) -> "SurrogateModel":
        """Flat model, used for fixed schemes such as the OFDM baseline."""
        return cls(tuple(map(float, k0)), eta_pa0, eta_r0, 0.0, 0.0, 0.0, 0.0, **kw)


def _unpack_measurement(m):
    eta_pa, eta_r, papr_tx, papr_rx = tuple(m)[:4]
    return float(eta_pa), float(eta_r), float(papr_tx), float(papr_rx)


def calibrate_surrogate(k0, step: float, scenario=None, trials: int = 8, seed: int = 0,
                        measure: Callable | None = None, upper: float | None = None) -> SurrogateModel:
    """Central finite differences of measured efficiencies around ``k0``.

    Parameters
    ----------
    k0 : pair
        Calibration centre ``(K_TR0, K_IM0)``.
    step : float
        Perturbation ``h`` in subcarriers.
    scenario, trials, seed
        Forwarded to ``measure``.
    measure : callable, optional
        ``measure(k, scenario, trials, seed)`` returning at least
        ``(eta_PA, eta_R, E[PAPR_TX], E[PAPR_RX])``. Defaults to
        :func:`swipt_forge.pipeline.measure_efficiencies`. Every point uses
        the same seed, so the differences see common random numbers.
    upper : float, optional
        Box upper bound; defaults to ``K/4`` from the scenario.

    Notes
    -----
    ``beta_cancel`` is the least-squares fit of the normalised EH peak
    ``sqrt(PAPR_RX)`` against ``s (K_IM/sqrt(2) - beta K_TR) sqrt(N_r) + c``
    over the five calibration points, with free scale ``s`` and offset ``c``.
    """
    if measure is None:
        from .pipeline import measure_efficiencies as measure
    k0 = (float(k0[0]), float(k0[1]))
    h = float(step)
    if h <= 0:
        raise ValueError("step must be positive")
    if upper is None and scenario is not None:
        upper = scenario.mimo.n_subcarriers / 4
    lo = min(k0) - h
    hi = max(k0) + h
    if lo < 0 or (upper is not None and hi > upper):
        raise ValueError("k0 +/- step leaves the allocation box")
    pts = [k0, (k0[0] + h, k0[1]), (k0[0] - h, k0[1]), (k0[0], k0[1] + h), (k0[0], k0[1] - h)]
    res = [_unpack_measurement(measure(p, scenario, trials, seed)) for p in pts]
    eta = np.array([r[:2] for r in res])
    a_pa, a_r = (eta[1] - eta[2]) / (2 * h)
    b_pa, b_r = (eta[3] - eta[4]) / (2 * h)
    n_r = scenario.mimo.n_rx if scenario is not None else 1
    peaks = np.sqrt([r[3] for r in res])
    kk = np.array(pts)
    # peak = s*sqrt(Nr)*K_IM/sqrt(2) + t*sqrt(Nr)*K_TR + c, with t = -s*beta
    design = np.column_stack([kk[:, 1] / math.sqrt(2), kk[:, 0], np.full(5, 1 / math.sqrt(n_r))])
    (s, t, _), *_ = np.linalg.lstsq(design * math.sqrt(n_r), peaks, rcond=None)
    beta = float(-t / s) if abs(s) > 1e-300 else float("nan")
    return SurrogateModel(k0, float(eta[0, 0]), float(eta[0, 1]), float(a_pa), float(b_pa), float(a_r), float(b_r),
                          beta_cancel=beta, papr_tx0=res[0][2], papr_rx0=res[0][3], step=h)


def save_surrogate(model: SurrogateModel, path) -> None:
    """Write ``key = value`` lines; floats use ``repr`` so reloading is exact."""
    lines = ["# swipt-forge surrogate model"]
    for f in fields(model):
        v = getattr(model, f.name)
        if f.name == "k0":
            lines.append(f"k0_tr = {v[0]!r}")
            lines.append(f"k0_im = {v[1]!r}")
        else:
            lines.append(f"{f.name} = {float(v)!r}")
    for name in ("c1", "c2", "c3", "c4", "beta1", "beta2"):
        lines.append(f"# {name} = {getattr(model, name)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_surrogate(path) -> SurrogateModel:
    vals = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        vals[key.strip()] = float(val)
    k0 = (vals.pop("k0_tr"), vals.pop("k0_im"))
    known = {f.name for f in fields(SurrogateModel)}
    unknown = set(vals) - known
    if unknown:
        raise ValueError(f"unknown surrogate keys: {sorted(unknown)}")
    return SurrogateModel(k0=k0, **vals)


class TabulatedEfficiency:
    """Measured efficiencies at discrete allocations.

    Exposes the same ``eta_pa(k)`` / ``eta_r(k)`` interface as
    :class:`SurrogateModel` but is only defined at the tabulated points.
    """

    def __init__(self, table):
        self._table = {(int(a), int(b)): (float(p), float(r)) for (a, b), (p, r) in dict(table).items()}

    @classmethod
    def from_measurements(cls, measurements) -> "TabulatedEfficiency":
        """Build from a ``{k: measurement}`` mapping (first two entries are the efficiencies)."""
        return cls({k: tuple(m)[:2] for k, m in dict(measurements).items()})

    def keys(self) -> list[tuple[int, int]]:
        return sorted(self._table)

    def _lookup(self, k, i):
        k = np.asarray(k, dtype=float)
        flat = k.reshape(-1, 2)
        vals = [self._table[(int(round(a)), int(round(b)))][i] for a, b in flat]
        return np.asarray(vals).reshape(k.shape[:-1])

    def eta_pa(self, k) -> np.ndarray:
        return self._lookup(k, 0)

    def eta_r(self, k) -> np.ndarray:
        return self._lookup(k, 1)


# --------------------------------------------------------------------------- rate and energy


@dataclass(frozen=True)
class LinkBudget:
    """Scalar link abstraction used by the rate and energy expressions.

    Attributes
    ----------
    tx_power : float
        Transmit-side power budget ``P`` (W).
    noise : float
        Receiver noise power (W).
    g_eff : float
        Effective channel power gain after precoding.
    rho : float
        Power-splitting ratio towards information decoding.
    p_min : float
        Minimum harvested power (W).
    """

    tx_power: float = 10.0
    noise: float = 1e-7
    g_eff: float = 5e-6
    rho: float = 0.5
    p_min: float = 0.0

    def __post_init__(self):
        if self.tx_power <= 0 or self.noise <= 0 or self.g_eff <= 0:
            raise ValueError("tx_power, noise and g_eff must be positive")
        if not 0 <= self.rho <= 1:
            raise ValueError("rho must lie in [0, 1]")
        if self.p_min < 0:
            raise ValueError("p_min must be nonnegative")

    @property
    def gain(self) -> float:
        """``P G_eff / sigma^2``."""
        return self.tx_power * self.g_eff / self.noise


def qam_bits(snr: float) -> int:
    """``floor(log2(1 + snr))``."""
    if not snr > 0:
        raise ValueError("SNR argument must be positive")
    return int(math.floor(math.log2(1.0 + snr) + 1e-12))


def mu_factor(n_streams: int, m_bits: int) -> float:
    return 1.0 - 1.0 / (2 * n_streams * 2.0 ** m_bits)


def _snr(k, budget, surrogate):
    eta = surrogate.eta_pa(k)
    return budget.rho * eta * budget.gain


def rate(k, budget: LinkBudget, surrogate: SurrogateModel, mimo: MimoConfig,
         mu: float | None = None) -> float:
    """Achievable-rate bound in bit per OFDM symbol.

    ``mu`` defaults to the value implied by the floor rule at ``k`` itself.
    """
    snr = float(_snr(k, budget, surrogate))
    if budget.rho == 0:
        return 0.0
    if not snr > 0:
        raise ValueError("nonpositive SNR argument; surrogate eta_PA must be positive")
    if mu is None:
        mu = mu_factor(mimo.n_streams, qam_bits(snr))
    k_tr, k_im = (float(v) for v in k)
    return mimo.n_streams * (mimo.n_subcarriers - mu * k_im - k_tr) * math.log2(1.0 + snr)


def energy(k, budget: LinkBudget, surrogate: SurrogateModel) -> float:
    """Harvested-power bound; negative surrogate efficiencies clamp to 0 with a warning."""
    e_pa = float(surrogate.eta_pa(k))
    e_r = float(surrogate.eta_r(k))
    if e_pa < 0 or e_r < 0:
        warnings.warn("surrogate efficiency negative at k; clamped to 0", RuntimeWarning, stacklevel=2)
        e_pa, e_r = max(e_pa, 0.0), max(e_r, 0.0)
    return e_pa * e_r * (1.0 - budget.rho) * budget.tx_power * budget.g_eff


@dataclass(frozen=True)
class ReMetrics:
    rate: float
    energy: float
    mu: float
    m_order: int
    xi: float
    eta_end_to_end: float
    j_value: float
    r_max: float
    e_max: float


def re_metrics(k, budget, surrogate, mimo, r_max=None, e_max=None, xi=float("nan")) -> ReMetrics:
    snr = float(_snr(k, budget, surrogate))
    m = qam_bits(snr) if snr > 0 else 0
    mu = mu_factor(mimo.n_streams, m)
    r = rate(k, budget, surrogate, mimo, mu) if budget.rho > 0 else 0.0
    e = energy(k, budget, surrogate)
    r_max = r if r_max is None else r_max
    e_max = e if e_max is None else e_max
    j = (r / r_max if r_max > 0 else 0.0) + (e / e_max if e_max > 0 else 0.0)
    eta = float(surrogate.eta_pa(k) * surrogate.eta_r(k))
    return ReMetrics(r, e, mu, m, xi, eta, j, r_max, e_max)


# --------------------------------------------------------------------------- SCA


@dataclass(frozen=True)
class ScaProblem:
    """Allocation problem in vector form.

    maximise ``(ns_k + q0.k) log2(r0 + q1.k)``
    subject to ``(q2.k + c2)(q3.k + c4) >= eta_min`` and ``0 <= k <= upper``.
    """

    q0: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    q3: np.ndarray
    r0: float
    eta_min: float
    c2: float
    c4: float
    ns_k: float
    upper: float
    mu: float = float("nan")
    m_order: int = -1

    def __post_init__(self):
        for name in ("q0", "q1", "q2", "q3"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (2,):
                raise ValueError(f"{name} must be a 2-vector")
            object.__setattr__(self, name, v)
        if self.upper <= 0:
            raise ValueError("upper bound must be positive")

    @property
    def p1_matrix(self) -> np.ndarray:
        return 0.5 * (np.outer(self.q2, self.q3) + np.outer(self.q3, self.q2))

    @property
    def q1_tilde(self) -> np.ndarray:
        return self.c2 * self.q3 + self.c4 * self.q2

    @property
    def r1_tilde(self) -> float:
        return self.c2 * self.c4 - self.eta_min

    def objective(self, k) -> np.ndarray:
        """True (P2) objective; ``-inf`` where the log argument is nonpositive."""
        k = np.asarray(k, dtype=float)
        arg = self.r0 + k @ self.q1
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (self.ns_k + k @ self.q0) * np.log2(arg)
        return np.where(arg > 0, val, -np.inf)

    def constraint(self, k) -> np.ndarray:
        """Harvested-efficiency slack ``(q2.k + c2)(q3.k + c4) - eta_min``."""
        k = np.asarray(k, dtype=float)
        return (k @ self.q2 + self.c2) * (k @ self.q3 + self.c4) - self.eta_min

    def feasible(self, k, tol: float = 1e-12) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        in_box = np.all((k >= -tol * self.upper) & (k <= self.upper * (1 + tol)), axis=-1)
        scale = max(abs(self.c2 * self.c4), abs(self.eta_min), 1e-300)
        return in_box & (self.constraint(k) >= -tol * scale)

    def is_nsd(self, tol: float = 1e-12) -> tuple[bool, bool]:
        """Whether ``P0`` (at k=0) and ``P1`` are negative semidefinite."""
        p0 = np.outer(self.q0, self.q1) + np.outer(self.q1, self.q0)
        out = []
        for m in (p0, self.p1_matrix):
            ev = np.linalg.eigvalsh(m)
            out.append(bool(ev.max() <= tol * max(1.0, np.abs(ev).max())))
        return tuple(out)


def build_sca(budget: LinkBudget, surrogate: SurrogateModel, mimo: MimoConfig,
              upper: float | None = None) -> ScaProblem:
    """Assemble the vector-form problem.

    ``mu`` (through the floor rule on ``M``) is evaluated once at the
    surrogate centre and held fixed, which keeps the objective smooth.
    """
    if not 0 < budget.rho < 1:
        raise ValueError("allocation needs rho strictly inside (0, 1)")
    g = budget.rho * budget.gain
    snr0 = g * surrogate.eta_pa0
    m = qam_bits(snr0)
    mu = mu_factor(mimo.n_streams, m)
    ns = mimo.n_streams
    return ScaProblem(
        q0=np.array([-ns, -mu * ns], dtype=float),
        q1=g * np.array([surrogate.a_pa, surrogate.b_pa]),
        q2=np.array([surrogate.a_pa, surrogate.b_pa]),
        q3=np.array([surrogate.a_r, surrogate.b_r]),
        r0=1.0 + g * surrogate.c2,
        eta_min=budget.p_min / ((1.0 - budget.rho) * budget.tx_power * budget.g_eff),
        c2=surrogate.c2,
        c4=surrogate.c4,
        ns_k=float(ns * mimo.n_subcarriers),
        upper=float(mimo.n_subcarriers / 4 if upper is None else upper),
        mu=mu,
        m_order=m,
    )


@dataclass(frozen=True)
class ScaIterate:
    k_t: np.ndarray
    s_t: float
    p0_t: np.ndarray
    q0_tilde_t: np.ndarray
    r0_tilde_t: float
    kkt_residual: float = float("nan")
    multipliers: dict = field(default_factory=dict)

    def surrogate_value(self, k) -> float:
        k = np.asarray(k, dtype=float)
        return float(k @ self.p0_t @ k + self.q0_tilde_t @ k + self.r0_tilde_t)


def _p3_coefficients(problem: ScaProblem, k_t):
    k_t = np.asarray(k_t, dtype=float)
    s = float(problem.r0 + problem.q1 @ k_t)
    if not s > 0:
        raise ValueError("linearisation point invalid: r0 + q1.k_t <= 0")
    q0, q1 = problem.q0, problem.q1
    d = s * _LN2
    p0 = (np.outer(q0, q1) + np.outer(q1, q0)) / (2 * d)
    log_s = math.log2(s)
    q1k = float(q1 @ k_t)
    q0t = log_s * q0 + problem.ns_k / d * q1 - q1k / d * q0
    r0t = problem.ns_k * log_s - problem.ns_k / d * q1k
    return s, p0, q0t, r0t


def _quad(p, q, r, x):
    return np.einsum("...i,ij,...j->...", x, p, x) + x @ q + r


def _active_set_candidates(p0, q0, p1, q1, r1, upper):
    """KKT candidates of a 2-D box + one-quadratic-constraint problem.

    Enumerates every active set: each coordinate free / at 0 / at ``upper``,
    with the quadratic constraint on or off. All stationary points with
    ``lambda >= 0`` are returned; the caller filters for feasibility.
    """
    cands = []
    bounds = (None, 0.0, upper)
    states = [(a, b) for a in bounds for b in bounds]
    for st in states:
        fixed = {i: v for i, v in enumerate(st) if v is not None}
        free = [i for i in range(2) if i not in fixed]
        # constraint off
        if not free:
            cands.append(np.array(st, dtype=float))
        elif len(free) == 1:
            i, j = free[0], 1 - free[0]
            a = p0[i, i]
            b = q0[i] + 2 * p0[i, j] * fixed[j]
            if abs(a) > 0:
                x = np.empty(2)
                x[j] = fixed[j]
                x[i] = -b / (2 * a)
                cands.append(x)
        else:
            try:
                cands.append(np.linalg.solve(2 * p0, -q0))
            except np.linalg.LinAlgError:
                pass
        # constraint on
        if len(free) == 1:
            i, j = free[0], 1 - free[0]
            xj = fixed[j]
            a = p1[i, i]
            b = q1[i] + 2 * p1[i, j] * xj
            c = p1[j, j] * xj * xj + q1[j] * xj + r1
            for root in _real_roots(a, b, c):
                x = np.empty(2)
                x[i], x[j] = root, xj
                cands.append(x)
        elif len(free) == 2:
            cands.extend(_constraint_stationary(p0, q0, p1, q1, r1))
    return cands


def _real_roots(a, b, c):
    scale = max(abs(a), abs(b), abs(c), 1e-300)
    a, b, c = a / scale, b / scale, c / scale
    if abs(a) < 1e-14:
        return [] if abs(b) < 1e-300 else [-c / b]
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    sq = math.sqrt(disc)
    # numerically stable pair
    q = -0.5 * (b + math.copysign(sq, b))
    roots = [q / a]
    if q != 0:
        roots.append(c / q)
    return roots


def _constraint_stationary(p0, q0, p1, q1, r1):
    """Points with ``grad f + lambda grad g = 0``, ``g = 0``, ``lambda >= 0``."""

    def x_of(lam):
        return np.linalg.solve(2 * (p0 + lam * p1), -(q0 + lam * q1))

    def h(lam):
        x = x_of(lam)
        return x @ p1 @ x + q1 @ x + r1

    # lambda spans many decades because f and g have unrelated scales
    grid = np.concatenate([[0.0], np.logspace(-12, 14, 521)])
    vals = []
    for lam in grid:
        try:
            vals.append(h(lam))
        except np.linalg.LinAlgError:
            vals.append(np.nan)
    vals = np.array(vals)
    out = []
    for a, b, va, vb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if not (np.isfinite(va) and np.isfinite(vb)) or va * vb > 0:
            continue
        try:
            lam = brentq(h, a, b, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
        except (ValueError, np.linalg.LinAlgError):
            continue
        x = x_of(lam)
        scale = max(abs(r1), float(np.abs(q1 @ x)), float(abs(x @ p1 @ x)), 1e-300)
        if abs(h(lam)) <= 1e-8 * scale:
            out.append(x)
    return out


def kkt_residual(p0, q0, p1, q1, r1, upper, x, tol: float = 1e-7):
    """Relative stationarity residual with multipliers recovered by NNLS.

    Uses ``grad f + lambda grad g + mu - nu = 0`` (maximisation, ``g >= 0``,
    ``mu`` for ``k >= 0``, ``nu`` for ``k <= upper``). Returns
    ``(residual, multipliers)``.
    """
    x = np.asarray(x, dtype=float)
    grad_f = 2 * p0 @ x + q0
    grad_g = 2 * p1 @ x + q1
    g = x @ p1 @ x + q1 @ x + r1
    g_scale = max(abs(r1), float(np.abs(q1 @ x)), float(abs(x @ p1 @ x)), 1e-300)
    cols, names = [], []
    if abs(g) <= tol * g_scale:
        cols.append(grad_g)
        names.append("lambda")
    for i in range(2):
        if abs(x[i]) <= tol * upper:
            cols.append(np.eye(2)[i])
            names.append(f"mu{i}")
        if abs(x[i] - upper) <= tol * upper:
            cols.append(-np.eye(2)[i])
            names.append(f"nu{i}")
    scale = max(float(np.linalg.norm(grad_f)), 1.0)
    if not cols:
        return float(np.linalg.norm(grad_f) / scale), {}
    a = np.column_stack(cols)
    col_scale = np.maximum(np.linalg.norm(a, axis=0), 1e-300)
    coef, res = nnls(a / col_scale, -grad_f)
    mult = dict(zip(names, coef / col_scale))
    return float(res / scale), mult


def solve_p3(p0, q0, r0, p1, q1, r1, upper, grid: int = 41, levels: int = 4):
    """Maximise ``k'P0k + q0'k + r0`` over the box subject to ``k'P1k + q1'k + r1 >= 0``.

    A constraint-filtered grid search, zoomed ``levels`` times around the
    incumbent, locates the optimum; exact active-set enumeration then
    refines it. Returns ``(k, value)``.

    Raises
    ------
    InfeasibleAllocation
        If no grid point or KKT candidate is feasible.
    """
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    q0, q1 = np.asarray(q0, float), np.asarray(q1, float)
    g_scale = max(abs(r1), float(np.abs(q1).max()) * upper, float(np.abs(p1).max()) * upper ** 2, 1e-300)
    tol_g = 1e-12 * g_scale

    def obj(x):
        return _quad(p0, q0, r0, x)

    def feas(x):
        return _quad(p1, q1, r1, x) >= -tol_g

    lo, hi = np.zeros(2), np.full(2, float(upper))
    best_x, best_v = None, -np.inf
    for _ in range(levels + 1):
        axes = [np.linspace(lo[i], hi[i], grid) for i in range(2)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2)
        ok = feas(pts)
        if ok.any():
            vals = np.where(ok, obj(pts), -np.inf)
            i = int(np.argmax(vals))
            if vals[i] > best_v:
                best_x, best_v = pts[i], float(vals[i])
        if best_x is None:
            break
        cell = (hi - lo) / (grid - 1)
        lo = np.maximum(best_x - 2 * cell, 0.0)
        hi = np.minimum(best_x + 2 * cell, upper)

    for x in _active_set_candidates(p0, q0, p1, q1, r1, upper):
        if not np.all(np.isfinite(x)):
            continue
        x = np.clip(x, 0.0, upper)
        if feas(x):
            v = float(obj(x))
            if v > best_v:
                best_x, best_v = x, v
    if best_x is None:
        raise InfeasibleAllocation("subproblem has no feasible point")
    return np.asarray(best_x, dtype=float), best_v


def sca_step(problem: ScaProblem, k_t, grid: int = 41, levels: int = 4):
    """One SCA iteration: linearise at ``k_t`` and solve the subproblem.

    Returns ``(iterate, k_next)``; ``iterate.kkt_residual`` certifies
    ``k_next``.
    """
    s, p0, q0t, r0t = _p3_coefficients(problem, k_t)
    p1, q1t, r1t = problem.p1_matrix, problem.q1_tilde, problem.r1_tilde
    k_next, _ = solve_p3(p0, q0t, r0t, p1, q1t, r1t, problem.upper, grid, levels)
    res, mult = kkt_residual(p0, q0t, p1, q1t, r1t, problem.upper, k_next)
    it = ScaIterate(np.asarray(k_t, float), s, p0, q0t, r0t, res, mult)
    return it, k_next


@dataclass
class AllocationResult:
    k_continuous: np.ndarray
    k_integer: tuple[int, int] | None
    iterations: int
    converged: bool
    trajectory: np.ndarray = field(repr=False)
    tolerance: float = 0.5
    feasible: bool = True
    objective_trajectory: np.ndarray = field(default=None, repr=False)
    kkt_residuals: np.ndarray = field(default=None, repr=False)
    nsd: tuple[bool, bool] = (True, True)


def round_allocation(problem: ScaProblem, k) -> tuple[int, int] | None:
    """Best feasible integer point near ``k`` with even ``K_IM``.

    Candidates: ``K_TR`` in ``{floor, ceil}`` widened by one on each side and
    ``K_IM`` in the even numbers bracketing ``k[1]`` widened by two.
    """
    k = np.asarray(k, dtype=float)
    f0 = math.floor(k[0])
    trs = {f0 - 1, f0, f0 + 1, f0 + 2}
    e0 = 2 * math.floor(k[1] / 2)
    ims = {e0 - 2, e0, e0 + 2, e0 + 4}
    ub = math.floor(problem.upper)
    best, best_v = None, -np.inf
    for a in sorted(trs):
        for b in sorted(ims):
            if not (0 <= a <= ub and 0 <= b <= ub):
                continue
            c = np.array([a, b], dtype=float)
            if not problem.feasible(c):
                continue
            v = float(problem.objective(c))
            if v > best_v:
                best, best_v = (int(a), int(b)), v
    return best


def allocate(problem: ScaProblem, k_init, eps: float = 0.5, max_outer: int = 50,
             grid: int = 41, levels: int = 4) -> AllocationResult:
    """Successive convex approximation with a monotone safeguard.

    The linearised objective over-estimates the true one, so each subproblem
    step is backtracked along the segment from ``k_t`` until the true
    objective does not decrease and the point stays feasible.

    Raises
    ------
    InfeasibleAllocation
        If ``k_init`` is infeasible.
    """
    k = np.asarray(k_init, dtype=float)
    if not problem.feasible(k):
        raise InfeasibleAllocation("initial point violates the box or harvested-power constraint")
    traj, objs, kkts = [k.copy()], [float(problem.objective(k))], []
    converged = False
    it = 0
    for it in range(1, max_outer + 1):
        step, k_hat = sca_step(problem, k, grid, levels)
        kkts.append(step.kkt_residual)
        f_t = objs[-1]
        tau, k_new = 1.0, k
        while tau > 1e-12:
            cand = k + tau * (k_hat - k)
            if problem.feasible(cand) and float(problem.objective(cand)) >= f_t:
                k_new = cand
                break
            tau *= 0.5
        move = float(np.linalg.norm(k_new - k))
        k = k_new
        traj.append(k.copy())
        objs.append(float(problem.objective(k)))
        if move <= eps:
            converged = True
            break
    k_int = round_allocation(problem, k)
    return AllocationResult(
        k_continuous=k, k_integer=k_int, iterations=it, converged=converged,
        trajectory=np.array(traj), tolerance=eps, feasible=k_int is not None,
        objective_trajectory=np.array(objs), kkt_residuals=np.array(kkts),
        nsd=problem.is_nsd())


# --------------------------------------------------------------------------- metrics


def xi_metric(papr_tx_samples, papr_rx_samples) -> float:
    """``E[PAPR_RX] / E[PAPR_TX]`` from linear-scale samples."""
    tx = np.asarray(papr_tx_samples, dtype=float)
    rx = np.asarray(papr_rx_samples, dtype=float)
    if tx.size == 0 or rx.size == 0:
        raise ValueError("empty sample set")
    den = tx.mean()
    if den == 0:
        raise ZeroDivisionError("mean transmit PAPR is zero")
    return float(rx.mean() / den)


def rx_papr_prediction(k_im: float, k_tr: float, beta: float, n_rx: int) -> float:
    """Closed-form receive-side PAPR prediction in dB."""
    arg = k_im / math.sqrt(2) - beta * k_tr
    if not arg > 0:
        raise ValueError("K_IM/sqrt(2) - beta*K_TR must be positive")
    return 20 * math.log10(arg) + 10 * math.log10(n_rx)


def rank_correlation(x, y) -> float:
    return float(spearmanr(x, y).statistic)


@dataclass(frozen=True)
class RePoint:
    rho: float
    k: tuple[int, int]
    rate: float
    energy: float
    j: float


def _k_grid(upper, resolution, even_im=True):
    vals = np.unique(np.round(np.linspace(0, upper, resolution)).astype(int))
    ims = np.unique(2 * (vals // 2)) if even_im else vals
    return [(int(a), int(b)) for a in vals for b in ims]


def _re_table(budget, model, mimo, rho_grid, cands):
    table = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for rho in rho_grid:
            b = LinkBudget(budget.tx_power, budget.noise, budget.g_eff, float(rho), budget.p_min)
            row = []
            for k in cands:
                try:
                    r = rate(k, b, model, mimo)
                except ValueError:
                    r = -np.inf
                row.append((r, energy(k, b, model)))
            table.append(row)
    return np.array(table, dtype=float)  # (rho, k, 2)


def re_region(budget: LinkBudget, surrogate, mimo: MimoConfig,
              rho_grid: Sequence[float], resolution: int = 17,
              k_candidates: Sequence | None = None,
              normalizers: tuple[float, float] | None = None) -> list[RePoint]:
    """Scalarised rate-energy envelope.

    For every ``rho`` the allocation maximising ``R/R_max + E/E_max`` is
    picked from a grid over the box (or from ``k_candidates``). ``R_max``
    and ``E_max`` are maxima over the whole sweep unless ``normalizers`` is
    given, which lets two schemes share one scale.
    """
    cands = list(k_candidates) if k_candidates is not None else _k_grid(mimo.n_subcarriers / 4, resolution)
    arr = _re_table(budget, surrogate, mimo, rho_grid, cands)
    if normalizers is None:
        r_max = float(np.max(arr[..., 0]))
        e_max = float(np.max(arr[..., 1]))
    else:
        r_max, e_max = normalizers
    j = (arr[..., 0] / r_max if r_max > 0 else 0.0) + (arr[..., 1] / e_max if e_max > 0 else 0.0)
    out = []
    for i, rho in enumerate(rho_grid):
        idx = int(np.argmax(j[i]))
        out.append(RePoint(float(rho), tuple(cands[idx]), float(arr[i, idx, 0]),
                           float(arr[i, idx, 1]), float(j[i, idx])))
    return out


def envelope_energy(points, r_query) -> np.ndarray:
    """Largest envelope energy among points with rate at least ``r_query``.

    ``nan`` where no envelope point reaches the requested rate.
    """
    rates = np.array([p.rate for p in points])
    energies = np.array([p.energy for p in points])
    q = np.atleast_1d(np.asarray(r_query, dtype=float))
    out = np.full(q.shape, np.nan)
    for i, r in enumerate(q):
        m = rates >= r
        if m.any():
            out[i] = energies[m].max()
    return out


def re_frontier(budget: LinkBudget, model, mimo: MimoConfig, rho_grid: Sequence[float],
                k_candidates: Sequence | None = None, resolution: int = 17) -> list[RePoint]:
    """Pareto-optimal (rate, energy) pairs over every ``rho`` and allocation.

    Unlike :func:`re_region` this keeps all nondominated points, not only
    the scalarised maximisers, so :func:`envelope_energy` sees the full
    region boundary. ``j`` is left as ``nan``.
    """
    cands = list(k_candidates) if k_candidates is not None else _k_grid(mimo.n_subcarriers / 4, resolution)
    arr = _re_table(budget, model, mimo, rho_grid, cands)
    pts = [RePoint(float(rho), tuple(cands[j]), float(arr[i, j, 0]), float(arr[i, j, 1]), float("nan"))
           for i, rho in enumerate(rho_grid) for j in range(len(cands)) if np.isfinite(arr[i, j, 0])]
    pts.sort(key=lambda p: (-p.rate, -p.energy))
    front, best_e = [], -np.inf
    for p in pts:
        if p.energy > best_e:
            front.append(p)
            best_e = p.energy
    return front[::-1]
