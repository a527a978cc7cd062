"""
Rectifier output for three waveforms at equal RF power
======================================================

A single tone, plain OFDM and OFDM with a coherent index-modulation block
are scaled to the same mean power; the diode output follows the peaks.
"""

import numpy as np

from swipt_forge.experiments import scale_to_power
from swipt_forge.pa import dbm_to_watt
from swipt_forge.rectifier import DiodeParams, rectify
from swipt_forge.waveform import ImConfig, map_im, ofdm_modulate, papr_db

diode = DiodeParams()
rng = np.random.default_rng(1)
k = 1024

qpsk = (rng.choice([-1, 1], k) + 1j * rng.choice([-1, 1], k)) / np.sqrt(2)
im = qpsk.copy()
im[:128] = map_im(rng.integers(0, 2, 64), ImConfig.for_receivers(1))
tone = np.zeros(k, complex)
tone[3] = 1

waves = {name: ofdm_modulate(x, 4).samples for name, x in
         [("tone", tone), ("ofdm", qpsk), ("ofdm+IM", im)]}
for name, y in waves.items():
    print(f"{name:8s} PAPR {papr_db(y):5.2f} dB")

print("\n p_rf [dBm]   v_out tone / ofdm / ofdm+IM [V]")
for p_dbm in (-20, -10, -5, 0, 5):
    v = [rectify(scale_to_power(y, dbm_to_watt(p_dbm)), diode).v_out for y in waves.values()]
    print(f"{p_dbm:8d}      " + "  ".join(f"{x:.4f}" for x in v))
