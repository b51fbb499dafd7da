"""
Training on the synthetic tank scenario
=======================================

The generator mimics a water-treatment stage: a sawtooth tank level and two
slowly drifting analysers. A scripted level shift plays the attack. We place
it inside the test segment so training only ever sees normal behaviour, then
fit a small TCN and watch the validation loss.
"""

import numpy as np

from tsanomaly.data import SyntheticSpec, attack_in_test_segment, generate_synthetic, make_windows, split, standardize
from tsanomaly.models import TcnConfig
from tsanomaly.training import TrainConfig, plateau_step, train

length, window = 4000, 30
start = attack_in_test_segment(length, 270, window)
frame = generate_synthetic(SyntheticSpec(length=length, attack_start=start, seed=0))
print(f"{len(frame)} rows, attack rows [{start}, {start + 270}), channels {frame.channels}")

train_f, valid_f, test_f = split(frame)
train_s, stats = standardize(train_f)
valid_s, _ = standardize(valid_f, stats)
print(f"segments: train {len(train_f)}, valid {len(valid_f)}, test {len(test_f)}")
print("train mean/std after scaling:", train_s.values.mean(0).round(6), train_s.values.std(0).round(6))

train_w = make_windows(train_s, window, "LIT301")
valid_w = make_windows(valid_s, window, "LIT301")

model = TcnConfig(filters=16)
params, history = train(model, TrainConfig(epochs=8, learning_rate=0.003), train_w, valid_w)
for r in history.records:
    print(f"step {r.step:4d}  epoch {r.epoch:2d}  train {r.train_loss:.4f}  valid {r.valid_loss:.4f}")
print(f"best step {history.best.step}; plateau (within 5% of min) at step {plateau_step(history)}")
print(f"wall clock {history.duration_seconds:.1f}s over {len(history.step_losses)} optimizer steps")
