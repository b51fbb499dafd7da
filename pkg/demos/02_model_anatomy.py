"""
Inside the two forecasters
==========================

A dilated TCN sees a fixed stretch of the past, its receptive field. An LSTM
carries state across the whole window. Both map a (W, C) window of sensor
readings to one number, the next value of the target channel.
"""

import numpy as np

from tsanomaly.models import (
    LstmConfig,
    TcnConfig,
    count_params,
    init_params,
    lstm_cell,
    lstm_forward,
    tcn_forward,
)

rng = np.random.default_rng(1)

tcn = TcnConfig()
print(f"TCN: {tcn.num_blocks} blocks x {tcn.filters} filters, kernel {tcn.kernel_length}, "
      f"dilations {tcn.dilations}, receptive field {tcn.receptive_field}, {count_params(tcn)} parameters")
for units in [(64,), (64, 45, 35)]:
    print(f"LSTM {list(units)}: {count_params(LstmConfig(layer_units=units))} parameters")

# rows older than the receptive field cannot move the prediction
params = init_params(tcn, seed=0)
window = rng.normal(size=(40, 3))
base = tcn_forward(window, tcn, params)
for age in (28, 29):
    bumped = window.copy()
    bumped[-1 - age] += 5.0
    print(f"bump {age} steps back changes TCN output by {tcn_forward(bumped, tcn, params) - base:+.3e}")

# one LSTM step by hand: zero weights leave gates at 0.5 and halve the cell
h, c = lstm_cell(np.zeros(3), np.zeros(1), np.array([2.0]), np.zeros((3, 4)), np.zeros((1, 4)), np.zeros(4))
print(f"zero-weight cell, c_prev=2: c={c.data[0]}, h={h.data[0]:.6f}")

# dropout only acts in train mode, and a seed makes it repeatable
lstm = LstmConfig(layer_units=(64, 45, 35))
lp = init_params(lstm, seed=0)
win = rng.normal(size=(30, 3))
print("infer:", lstm_forward(win, lstm, lp))
print("train, seed 7 twice:", lstm_forward(win, lstm, lp, mode="train", rng_seed=7),
      lstm_forward(win, lstm, lp, mode="train", rng_seed=7))
