"""End-to-end Monte-Carlo link: frame -> TR -> PA -> channel -> power split -> rectifier."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelConfig, generate_channel, power_split, precoders_for, propagate_time, effective_gain
from .pa import InfeasibleOperatingPoint, PaModel, amplify, dbm_to_watt, find_operating_point
from .rectifier import DiodeParams, rectify
from .tone_reservation import TrParams, reduce_frame_papr, tr_optimize_gd_batch
from .waveform import ImConfig, MimoConfig, build_frame, build_partition, ofdm_modulate, papr_linear

__all__ = [
    "Scenario",
    "TrialOutcome",
    "EfficiencyMeasurement",
    "seed_for",
    "worker_count",
    "run_trial",
    "eh_waveform",
    "tr_symbols",
    "measure_efficiencies",
]


@dataclass(frozen=True)
class Scenario:
    """Everything the physical pipeline needs for one operating point."""

    mimo: MimoConfig = field(default_factory=MimoConfig)
    diode: DiodeParams = field(default_factory=DiodeParams)
    pa: PaModel = field(default_factory=PaModel)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    tr: TrParams = field(default_factory=TrParams)
    rho: float = 0.5
    evm_max: float = 0.125
    im_phase: float = 0.0
    # "floor": drive at the region's lower edge when even that breaks the EVM
    # cap (the trial is flagged); "raise": propagate InfeasibleOperatingPoint
    on_infeasible: str = "floor"

    def __post_init__(self):
        if self.on_infeasible not in ("floor", "raise"):
            raise ValueError("on_infeasible must be 'floor' or 'raise'")

    def quick(self) -> "Scenario":
        """Smaller frame for fast runs: K=256, oversampling 2."""
        mimo = replace(self.mimo, n_subcarriers=256, oversampling=2)
        return replace(self, mimo=mimo, tr=replace(self.tr, oversampling=2))


@dataclass(frozen=True)
class TrialOutcome:
    eta_pa: float
    eta_r: float
    papr_tx: float  # linear, mean over antennas before the PA
    papr_rx: float  # linear, energy-harvesting branch
    peak_rx: float  # max|y_EH| / rms(y_EH)
    p_in: float
    p_out: float
    obo: float
    evm: float
    sir: float
    v_out: float
    p_rf_in: float
    p_dc_out: float
    g_eff: float
    evm_violated: bool = False


@dataclass(frozen=True)
class EfficiencyMeasurement:
    """Trial means of one pipeline operating point (``*_std`` are standard errors)."""

    eta_pa: float
    eta_r: float
    papr_tx: float
    papr_rx: float
    eta_pa_std: float
    eta_r_std: float
    peak_rx: float
    g_eff: float
    trials: tuple = field(repr=False, default=())

    def __iter__(self):
        # unpacks as (eta_pa, eta_r, E[PAPR_TX], E[PAPR_RX])
        return iter((self.eta_pa, self.eta_r, self.papr_tx, self.papr_rx))

    @property
    def eta(self) -> float:
        return self.eta_pa * self.eta_r

    @property
    def xi(self) -> float:
        return self.papr_rx / self.papr_tx


def seed_for(master_seed: int, *index: int) -> np.random.SeedSequence:
    """Independent, order-free seed stream for one (point, trial) index."""
    return np.random.SeedSequence([int(master_seed), *map(int, index)])


def worker_count() -> int:
    cap = os.environ.get("SWIPT_FORGE_THREADS")
    n = os.cpu_count() or 1
    return max(1, min(n, int(cap))) if cap else n


def _transmit(k, scenario: Scenario, ss: np.random.SeedSequence):
    """Channel, precoded frame and TR-optimised baseband transmit signal."""
    k_tr, k_im = (int(round(v)) for v in k)
    mimo = scenario.mimo
    s_chan, s_bits, s_tr, s_noise = ss.spawn(4)
    chan = generate_channel(scenario.channel, mimo, s_chan)
    w = precoders_for(chan, scenario.channel, mimo)
    part = build_partition(mimo.n_subcarriers, k_tr, k_im)
    im = ImConfig.for_receivers(mimo.n_rx, scenario.im_phase)
    frame = build_frame(mimo, part, np.random.default_rng(s_bits), w, im)
    grid = frame.antenna_grid
    if k_tr:
        grid, _ = reduce_frame_papr(grid, part, replace(scenario.tr, oversampling=mimo.oversampling),
                                    np.random.default_rng(s_tr))
    tx = ofdm_modulate(grid, mimo.oversampling, mimo.subcarrier_spacing)
    return chan, w, tx, s_noise


def _as_seed(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def run_trial(k, scenario: Scenario, seed) -> TrialOutcome:
    """One OFDM frame through the full chain at allocation ``k = (K_TR, K_IM)``."""
    mimo = scenario.mimo
    chan, w, tx, s_noise = _transmit(k, scenario, _as_seed(seed))
    papr_tx = float(np.mean(papr_linear(tx)))
    violated = False
    try:
        p_in = find_operating_point(tx, scenario.pa, scenario.evm_max)
    except InfeasibleOperatingPoint:
        if scenario.on_infeasible == "raise":
            raise
        p_in, violated = dbm_to_watt(scenario.pa.region_dbm[0]), True
    out, met = amplify(tx, scenario.pa, p_in)
    rx = propagate_time(out, chan, mimo.n_subcarriers, scenario.channel.noise_power, s_noise)
    eh = power_split(rx, scenario.rho).eh_branch
    rect = rectify(eh, scenario.diode)
    papr_rx = float(papr_linear(eh))
    return TrialOutcome(
        eta_pa=met.eta_pa, eta_r=rect.eta_r, papr_tx=papr_tx, papr_rx=papr_rx,
        peak_rx=float(np.sqrt(papr_rx)), p_in=p_in, p_out=met.p_out, obo=met.obo,
        evm=met.evm, sir=met.sir, v_out=rect.v_out, p_rf_in=rect.p_rf_in,
        p_dc_out=rect.p_dc_out, g_eff=effective_gain(chan, w), evm_violated=violated)


def eh_waveform(k, scenario: Scenario, seed) -> np.ndarray:
    """Energy-harvesting branch samples with a linear transmitter (no PA).

    Used to compare rectifier response across waveforms at a common RF
    power, so the absolute scale is irrelevant.
    """
    mimo = scenario.mimo
    chan, _, tx, s_noise = _transmit(k, scenario, _as_seed(seed))
    rx = propagate_time(tx, chan, mimo.n_subcarriers, scenario.channel.noise_power, s_noise)
    return power_split(rx, scenario.rho).eh_branch


def tr_symbols(mimo: MimoConfig, k_tr: int, n_symbols: int, params: TrParams, seed,
               k_im: int = 0) -> list:
    """TR results for ``n_symbols`` independent single-antenna OFDM symbols."""
    part = build_partition(mimo.n_subcarriers, k_tr, k_im)
    one = replace(mimo, n_tx=1, n_rx=1, n_streams=1)
    ss = _as_seed(seed)
    s_bits, s_tr = ss.spawn(2)
    rng = np.random.default_rng(s_bits)
    rows = np.concatenate([build_frame(one, part, rng).antenna_grid for _ in range(n_symbols)])
    return tr_optimize_gd_batch(rows, part, replace(params, oversampling=mimo.oversampling),
                                np.random.default_rng(s_tr))


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    se = v.std(ddof=1) / np.sqrt(v.size) if v.size > 1 else 0.0
    return float(v.mean()), float(se)


def measure_efficiencies(k, scenario: Scenario, trials: int, seed: int, point: int = 0,
                         workers: int | None = None) -> EfficiencyMeasurement:
    """Trial means of ``eta_PA``, ``eta_R``, ``E[PAPR_TX]`` and ``E[PAPR_RX]`` at ``k``.

    Trial ``t`` always uses the seed stream ``(seed, point, t)``, and results
    land in pre-indexed slots, so the output does not depend on ``workers``.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    workers = workers or worker_count()
    seeds = [seed_for(seed, point, t) for t in range(trials)]
    if workers == 1:
        outs = [run_trial(k, scenario, s) for s in seeds]
    else:
        with ThreadPoolExecutor(workers) as pool:
            outs = list(pool.map(lambda s: run_trial(k, scenario, s), seeds))
    eta_pa, eta_pa_se = _mean_se([o.eta_pa for o in outs])
    eta_r, eta_r_se = _mean_se([o.eta_r for o in outs])
    return EfficiencyMeasurement(
        eta_pa=eta_pa, eta_r=eta_r,
        papr_tx=float(np.mean([o.papr_tx for o in outs])),
        papr_rx=float(np.mean([o.papr_rx for o in outs])),
        eta_pa_std=eta_pa_se, eta_r_std=eta_r_se,
        peak_rx=float(np.mean([o.peak_rx for o in outs])),
        g_eff=float(np.mean([o.g_eff for o in outs])),
        trials=tuple(outs))
