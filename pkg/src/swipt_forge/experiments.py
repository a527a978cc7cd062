"""Seeded experiment campaigns behind the command-line subcommands.

Every ``run_*`` function takes an :class:`~swipt_forge.config.ExperimentConfig`
and returns a :class:`Table` (CSV header plus rows) and a small report dict.
Results depend only on the configuration and its ``master_seed``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .allocation import (
    InfeasibleAllocation,
    SurrogateModel,
    TabulatedEfficiency,
    allocate,
    build_sca,
    calibrate_surrogate,
    load_surrogate,
    rank_correlation,
    re_frontier,
    re_region,
    save_surrogate,
)
from .config import ExperimentConfig
from .pa import dbm_to_watt
from .pipeline import eh_waveform, measure_efficiencies, seed_for, tr_symbols
from .rectifier import rectify
from .waveform import ccdf

__all__ = [
    "Table",
    "papr_ccdf",
    "tr_convergence",
    "rectifier_sweep",
    "end_to_end",
    "re_regions",
    "allocation",
    "scale_to_power",
]

# fixed stream indices keep subcommands statistically independent
_STREAM = {"ccdf": 1, "conv": 2, "rect": 3, "e2e": 4, "re": 5, "alloc": 6}


@dataclass
class Table:
    header: list[str]
    rows: list[list] = field(default_factory=list)
    report: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        i = self.header.index(name)
        return np.array([r[i] for r in self.rows])


def _label(v) -> str:
    return f"{v:g}"


def papr_ccdf(cfg: ExperimentConfig) -> Table:
    """CCDF of per-symbol transmit PAPR for each ``K_TR`` in the sweep.

    Columns: ``threshold_db, ccdf_ktr<K_TR>...``.
    """
    lo, hi, step = cfg.sweep.ccdf_thresholds_db
    thr = np.round(np.arange(lo, hi + step / 2, step), 10)
    cols, report = [], {}
    for i, k_tr in enumerate(cfg.sweep.ccdf_k_tr):
        res = tr_symbols(cfg.mimo, k_tr, cfg.sweep.ccdf_trials, cfg.tr,
                         seed_for(cfg.master_seed, _STREAM["ccdf"], i))
        papr = np.array([r.papr_after for r in res])
        cols.append(ccdf(papr, thr))
        report[f"p99_db_ktr{k_tr}"] = float(np.percentile(papr, 99))
    table = Table(["threshold_db"] + [f"ccdf_ktr{k}" for k in cfg.sweep.ccdf_k_tr], report=report)
    for j, t in enumerate(thr):
        table.rows.append([float(t)] + [float(c[j]) for c in cols])
    return table


def tr_convergence(cfg: ExperimentConfig) -> Table:
    """Mean best-so-far PAPR (dB) per iteration for each step size.

    Columns: ``iteration, papr_db_step<step>...``. Row 0 is the unreduced
    mean PAPR.
    """
    k_tr = cfg.partition.k_tr
    n_it = cfg.tr.max_iters
    curves = []
    for step in cfg.sweep.tr_steps:
        params = dataclasses.replace(cfg.tr, step=step)
        # same symbols for every step size
        res = tr_symbols(cfg.mimo, k_tr, cfg.trials, params, seed_for(cfg.master_seed, _STREAM["conv"]))
        traj = np.empty((len(res), n_it + 1))
        for r, tr in enumerate(res):
            t = tr.papr_trajectory[: n_it + 1]
            traj[r, : t.size] = t
            traj[r, t.size:] = t[-1]
        curves.append(traj.mean(axis=0))
    table = Table(["iteration"] + [f"papr_db_step{_label(s)}" for s in cfg.sweep.tr_steps])
    for it in range(n_it + 1):
        table.rows.append([it] + [float(c[it]) for c in curves])
    table.report = {f"final_db_step{_label(s)}": float(c[-1]) for s, c in zip(cfg.sweep.tr_steps, curves)}
    table.report["initial_db"] = float(curves[0][0]) if curves else float("nan")
    return table


def scale_to_power(samples, power: float) -> np.ndarray:
    """Rescale ``samples`` to mean power ``power`` (W)."""
    y = np.asarray(samples, dtype=complex)
    return y * np.sqrt(power / np.mean(np.abs(y) ** 2))


def rectifier_sweep(cfg: ExperimentConfig) -> Table:
    """Mean rectifier output voltage versus RF input power.

    Compares a single tone, the OFDM baseline EH waveform and the proposed
    waveform at the configured ``(K_TR, K_IM)``, all at equal RF power.
    Columns: ``p_rf_dbm, vout_single_tone, vout_ofdm, vout_proposed,
    ratio_proposed_ofdm``.
    """
    sc = cfg.scenario()
    k_prop = (cfg.partition.k_tr, cfg.partition.k_im)
    waves = {"ofdm": [], "proposed": []}
    for t in range(cfg.trials):
        s = seed_for(cfg.master_seed, _STREAM["rect"], t)
        waves["ofdm"].append(eh_waveform((0, 0), sc, s))
        waves["proposed"].append(eh_waveform(k_prop, sc, s))
    table = Table(["p_rf_dbm", "vout_single_tone", "vout_ofdm", "vout_proposed", "ratio_proposed_ofdm"])
    tone = np.ones(64, dtype=complex)
    for p_dbm in cfg.sweep.rf_dbm:
        p = dbm_to_watt(p_dbm)
        v_tone = rectify(scale_to_power(tone, p), cfg.diode).v_out
        v = {name: float(np.mean([rectify(scale_to_power(w, p), cfg.diode).v_out for w in ws]))
             for name, ws in waves.items()}
        ratio = v["proposed"] / v["ofdm"] if v["ofdm"] > 0 else float("nan")
        table.rows.append([float(p_dbm), float(v_tone), v["ofdm"], v["proposed"], ratio])
    table.report = {"min_ratio": float(np.nanmin(table.column("ratio_proposed_ofdm"))),
                    "max_ratio": float(np.nanmax(table.column("ratio_proposed_ofdm")))}
    return table


def _scheme(k, cfg):
    if tuple(k) == (0, 0):
        return "baseline"
    if tuple(k) == (cfg.partition.k_tr, cfg.partition.k_im):
        return "proposed"
    return "sweep"


def end_to_end(cfg: ExperimentConfig) -> Table:
    """Full-chain metrics for every allocation in ``sweep.e2e_points``.

    Columns: ``scheme, k_tr, k_im, papr_tx_db, obo_db, eta_pa, papr_rx_db,
    eta_r, p_dc_out, xi, eta``. ``xi`` is the linear ratio
    ``E[PAPR_RX] / E[PAPR_TX]``.
    """
    sc = cfg.scenario()
    table = Table(["scheme", "k_tr", "k_im", "papr_tx_db", "obo_db", "eta_pa", "papr_rx_db",
                   "eta_r", "p_dc_out", "xi", "eta"])
    for i, k in enumerate(cfg.sweep.e2e_points):
        m = measure_efficiencies(k, sc, cfg.trials, cfg.master_seed * 1000 + _STREAM["e2e"], point=i)
        obo = float(np.mean([o.obo for o in m.trials]))
        p_dc = float(np.mean([o.p_dc_out for o in m.trials]))
        table.rows.append([_scheme(k, cfg), int(k[0]), int(k[1]), 10 * np.log10(m.papr_tx), obo,
                           m.eta_pa, 10 * np.log10(m.papr_rx), m.eta_r, p_dc, m.xi, m.eta])
    xi, eta = table.column("xi"), table.column("eta")
    table.report = {"spearman_xi_eta": rank_correlation(xi, eta) if len(xi) > 2 else float("nan")}
    return table


def _measure_grid(cfg, sc, ks, trials, stream):
    return {k: measure_efficiencies(k, sc, trials, cfg.master_seed * 1000 + stream, point=0) for k in ks}


def re_regions(cfg: ExperimentConfig) -> Table:
    """Rate-energy envelopes for the baseline and the proposed scheme.

    ``proposed_surrogate`` maximises the scalarised objective with the
    affine surrogate calibrated at the configured allocation;
    ``proposed_measured`` uses measured efficiencies on ``sweep.re_grid``
    (which contains ``k = (0, 0)``, the baseline itself). All schemes share
    the normalisers ``R_max`` and ``E_max``. Columns: ``scheme, rho, k_tr,
    k_im, rate, energy, j``.
    """
    sc = cfg.scenario()
    k0 = (cfg.partition.k_tr, cfg.partition.k_im)
    seed = cfg.master_seed * 1000 + _STREAM["re"]
    surrogate = calibrate_surrogate(k0, cfg.sca.calib_step, sc, cfg.sca.calib_trials, seed)
    grid = [(a, b) for a in cfg.sweep.re_grid for b in cfg.sweep.re_grid
            if a + b <= cfg.mimo.n_subcarriers]
    meas = _measure_grid(cfg, sc, grid, cfg.sca.calib_trials, _STREAM["re"])
    if (0, 0) not in meas:
        meas[(0, 0)] = measure_efficiencies((0, 0), sc, cfg.sca.calib_trials, seed)
    table_model = TabulatedEfficiency.from_measurements(meas)
    base = meas[(0, 0)]
    baseline = SurrogateModel.constant((0, 0), base.eta_pa, base.eta_r)
    rhos = list(cfg.sweep.rho_grid)
    schemes = [("baseline", baseline, [(0, 0)]),
               ("proposed_surrogate", surrogate, None),
               ("proposed_measured", table_model, table_model.keys())]
    fronts = [re_frontier(cfg.budget, m, cfg.mimo, rhos, c) for _, m, c in schemes]
    r_max = max(p.rate for f in fronts for p in f)
    e_max = max(p.energy for f in fronts for p in f)
    table = Table(["scheme", "rho", "k_tr", "k_im", "rate", "energy", "j"])
    for name, model, cands in schemes:
        for p in re_region(cfg.budget, model, cfg.mimo, rhos, k_candidates=cands, normalizers=(r_max, e_max)):
            table.rows.append([name, p.rho, int(p.k[0]), int(p.k[1]), p.rate, p.energy, p.j])
    table.report = {"surrogate": surrogate, "measurements": meas, "r_max": r_max, "e_max": e_max}
    return table


def _feasible_start(problem, k_init):
    if problem.feasible(k_init):
        return np.asarray(k_init, dtype=float)
    ax = np.linspace(0, problem.upper, 65)
    pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    ok = problem.feasible(pts)
    if not ok.any():
        raise InfeasibleAllocation("no allocation meets the harvested-power constraint")
    pts = pts[ok]
    return pts[np.argmin(np.linalg.norm(pts - np.asarray(k_init, float), axis=1))]


def allocation(cfg: ExperimentConfig, out_dir=None) -> Table:
    """Calibrate (or load) the surrogate and run the SCA allocation.

    Columns: ``iteration, k_tr, k_im, objective``. The report carries the
    integer allocation, convergence and feasibility flags. Raises
    :class:`InfeasibleAllocation` when no feasible starting point exists.
    """
    k0 = (cfg.partition.k_tr, cfg.partition.k_im)
    if cfg.sca.surrogate_path:
        surrogate = load_surrogate(cfg.sca.surrogate_path)
        path = cfg.sca.surrogate_path
    else:
        surrogate = calibrate_surrogate(k0, cfg.sca.calib_step, cfg.scenario(), cfg.sca.calib_trials,
                                        cfg.master_seed * 1000 + _STREAM["alloc"])
        path = None
        if out_dir is not None:
            path = str(out_dir / "surrogate.txt")
            save_surrogate(surrogate, path)
    problem = build_sca(cfg.budget, surrogate, cfg.mimo)
    k_init = cfg.sca.k_init if cfg.sca.k_init is not None else surrogate.k0
    start = _feasible_start(problem, k_init)
    res = allocate(problem, start, cfg.sca.eps, cfg.sca.max_outer)
    table = Table(["iteration", "k_tr", "k_im", "objective"])
    for i, (k, f) in enumerate(zip(res.trajectory, res.objective_trajectory)):
        table.rows.append([i, float(k[0]), float(k[1]), float(f)])
    table.report = {
        "k_tr": res.k_integer[0] if res.k_integer else None,
        "k_im": res.k_integer[1] if res.k_integer else None,
        "k_continuous": [float(v) for v in res.k_continuous],
        "iterations": res.iterations,
        "converged": res.converged,
        "feasible": res.feasible,
        "p0_nsd": res.nsd[0],
        "p1_nsd": res.nsd[1],
        "max_kkt_residual": float(np.max(res.kkt_residuals)) if res.kkt_residuals.size else 0.0,
        "surrogate_file": path,
    }
    return table
