"""Why a fixed target order fails when the talkers are interchangeable.

Two output streams each learn "a speaker", but nothing tells them which one.
If the network happens to emit the targets in swapped order, the fixed
assignment charges it for a perfect answer; PIT does not.

    python3 demos/pit_by_hand.py
"""
import numpy as np

from pitmix import pit

rng = np.random.default_rng(0)
T, D = 6, 4
speaker_a = rng.standard_normal((T, D))
speaker_b = rng.standard_normal((T, D))
targets = [speaker_a, speaker_b]

# a "network" that separated perfectly but emits B first
outputs = [speaker_b + 0.01 * rng.standard_normal((T, D)),
           speaker_a + 0.01 * rng.standard_normal((T, D))]

fixed = float(pit.fixed_mse(outputs, targets).data)
result = pit.pit_mse(outputs, targets)
print(f"fixed-order MSE : {fixed:10.4f}")
print(f"PIT MSE         : {result.best.loss:10.4f}  chosen perm {result.best.perm}")
for perm, loss in result.all_losses:
    print(f"  perm {perm}: {loss:10.4f}")

# relabelling the targets moves the chosen permutation, never the loss
swapped = pit.pit_mse(outputs, targets[::-1])
print(f"targets swapped : {swapped.best.loss:10.4f}  chosen perm {swapped.best.perm}")
