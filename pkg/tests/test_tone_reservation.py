import numpy as np
import pytest
from hypothesis import given, strategies as st

from swipt_forge.tone_reservation import (
    TrParams, power_bound, reduce_frame_papr, smoothed_peak, tr_gradient,
    tr_optimize_gd, tr_optimize_gd_batch, tr_optimize_minimax,
)
from swipt_forge.waveform import MimoConfig, build_frame, build_partition, ofdm_modulate, papr_db

from conftest import random_qpsk


def _rows(k, k_tr, n, seed):
    mimo = MimoConfig(n_tx=1, n_rx=1, n_streams=1, n_subcarriers=k)
    part = build_partition(k, k_tr, 0)
    rng = np.random.default_rng(seed)
    return part, np.concatenate([build_frame(mimo, part, rng).antenna_grid for _ in range(n)])


def _smoothed_of_c(x, c, eps, L):
    return smoothed_peak(np.abs(ofdm_modulate(x + c, L).samples), eps)


# ---------------------------------------------------------------- smoothed peak

def test_smoothed_peak_equal_entries():
    assert smoothed_peak([1, 1, 1, 1], 10.0) == pytest.approx(1 + np.log(4) / 10, abs=1e-12)
    assert smoothed_peak([1, 1, 1, 1], 10.0) == pytest.approx(1.1386, abs=1e-4)


def test_smoothed_peak_limit():
    z = np.r_[np.zeros(9), 5.0]
    assert smoothed_peak(z, 1e6) == pytest.approx(5.0, abs=1e-5)


def test_smoothed_peak_no_overflow():
    assert np.isfinite(smoothed_peak([1e4, 2e4], 100.0))


@given(st.lists(st.floats(0, 100), min_size=1, max_size=64), st.floats(1e-2, 1e3))
def test_smoothed_peak_sandwich(z, eps):
    v = smoothed_peak(z, eps)
    top = max(z)
    assert top - 1e-9 * (1 + top) <= v <= top + np.log(len(z)) / eps + 1e-9 * (1 + top)


def test_smoothed_peak_rejects_nonpositive():
    with pytest.raises(ValueError):
        smoothed_peak([1.0], 0.0)


# ---------------------------------------------------------------- gradient

@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    k, L, eps = 64, 4, 5.0
    part = build_partition(k, 8, 0)
    x = random_qpsk(rng, k)
    x[part.set_tr] = 0
    c = np.zeros(k, complex)
    c[part.set_tr] = 0.3 * (rng.standard_normal(8) + 1j * rng.standard_normal(8))
    g = tr_gradient(x, c, eps, part.set_tr, L)
    h = 1e-6
    fd = np.zeros(k, complex)
    for i in part.set_tr:
        for unit, part_of in ((1.0, 1.0), (1j, 1j)):
            e = np.zeros(k, complex)
            e[i] = unit * h
            d = (_smoothed_of_c(x, c + e, eps, L) - _smoothed_of_c(x, c - e, eps, L)) / (2 * h)
            fd[i] += part_of * d
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-5


def test_gradient_zero_off_reserved_set(rng):
    part = build_partition(64, 8, 16)
    x = random_qpsk(rng, 64)
    g = tr_gradient(x, np.zeros(64), 3.0, part.set_tr, 4)
    assert np.all(g[part.set_im] == 0) and np.all(g[part.set_qam] == 0)
    assert np.any(g[part.set_tr] != 0)


def test_gradient_constant_envelope_weights():
    # single tone: constant envelope, softmax weights 1/N, so the gradient on
    # the tone equals the DFT of phase/N at that bin
    k, L = 16, 2
    part = build_partition(k, 4, 0)
    x = np.zeros(k, complex)
    x[2] = 1.0
    g = tr_gradient(x, np.zeros(k), 7.0, part.set_tr, L)
    n = k * L
    assert abs(g[2]) == pytest.approx(1 / np.sqrt(n), rel=1e-10)
    assert np.allclose(np.delete(g, 2), 0, atol=1e-12)


# ---------------------------------------------------------------- GD solver

def test_power_bound_example():
    part = build_partition(1024, 128, 0)
    x = np.ones(1024)
    x[:128] = 0
    assert power_bound(x, part) == pytest.approx(64.0)


def test_gd_identity_without_reserved_tones(rng):
    part = build_partition(64, 0, 0)
    x = random_qpsk(rng, 64)
    res = tr_optimize_gd(x, part)
    assert res.papr_after == res.papr_before
    assert np.all(res.reserved_symbols == 0)


def test_gd_respects_support_and_power():
    part, rows = _rows(256, 32, 6, 3)
    results = tr_optimize_gd_batch(rows, part, TrParams(max_iters=60))
    for x, r in zip(rows, results):
        off = np.ones(256, bool)
        off[part.set_tr] = False
        assert np.all(r.reserved_symbols[off] == 0)
        assert np.sum(np.abs(r.reserved_symbols) ** 2) < power_bound(x, part)
        assert r.papr_after <= r.papr_before + 1e-12
        assert np.all(np.diff(r.trajectory) <= 0)


def test_gd_batch_rows_independent():
    part, rows = _rows(128, 16, 3, 4)
    p = TrParams(max_iters=40)
    batch = tr_optimize_gd_batch(rows, part, p, np.random.default_rng(9))
    # only the tiny random start differs between batch and single-row runs
    for x, b in zip(rows, batch):
        single = tr_optimize_gd(x, part, p, np.random.default_rng(9))
        assert single.papr_after == pytest.approx(b.papr_after, abs=0.05)
    again = tr_optimize_gd_batch(rows, part, p, np.random.default_rng(9))
    assert all(np.array_equal(a.reserved_symbols, b.reserved_symbols) for a, b in zip(batch, again))


def test_gd_reduction_default_setting():
    part, rows = _rows(1024, 128, 200, 7)
    results = tr_optimize_gd_batch(rows, part, TrParams(max_iters=100))
    gain = np.mean([r.reduction_db for r in results])
    assert gain >= 2.5


def test_gd_init_sensitivity():
    part, rows = _rows(1024, 128, 30, 8)
    p = TrParams(init_scale=1.0)
    a = tr_optimize_gd_batch(rows, part, p, np.random.default_rng(1))
    b = tr_optimize_gd_batch(rows, part, p, np.random.default_rng(2))
    gaps = np.abs([x.papr_after - y.papr_after for x, y in zip(a, b)])
    assert gaps.max() <= 0.2


def test_gd_agrees_with_minimax_reference():
    part, rows = _rows(1024, 128, 3, 11)
    for x in rows:
        g = tr_optimize_gd(x, part)
        m = tr_optimize_minimax(x, part, iters=2000)
        assert abs(g.trajectory[-1] - m.trajectory[-1]) <= 0.05 * m.trajectory[-1]


def test_minimax_identity_and_bound(rng):
    x = random_qpsk(rng, 64)
    assert tr_optimize_minimax(x, build_partition(64, 0, 0), iters=10).papr_after == papr_db(ofdm_modulate(x, 4))
    part = build_partition(64, 8, 0)
    x[part.set_tr] = 0
    r = tr_optimize_minimax(x, part, iters=200)
    assert np.sum(np.abs(r.reserved_symbols) ** 2) < power_bound(x, part)
    assert r.papr_after <= r.papr_before


def test_reduce_frame_leaves_data_untouched(rng):
    part = build_partition(128, 16, 16)
    grid = build_frame(MimoConfig(n_subcarriers=128), part, rng).antenna_grid
    out, res = reduce_frame_papr(grid, part, TrParams(max_iters=20))
    assert np.array_equal(out[:, 16:], grid[:, 16:])
    assert len(res) == grid.shape[0]
