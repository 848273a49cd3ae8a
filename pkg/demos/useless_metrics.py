"""Which metrics can never be rescued by pre-processing.

A metric whose row differences do not depend on the output is useless: every
pre-processor leaves the LM rate at zero.  Any other metric has a witness
quadruple, and the witness channel built from it carries one full bit.
"""
import math

import numpy as np

from predecode import binary_mismatch_capacity, is_useless, r_pre_lm, witness_channel
from predecode.metric_analysis import restrict

rng = np.random.default_rng(3)

additive = rng.normal(size=3)[:, None] + rng.normal(size=3)[None, :]
print("additive metric q(x,y) = a(x) + b(y):", is_useless(additive))
w = rng.dirichlet(np.ones(3), size=3)
print(f"  best pre-processed LM rate on a random channel: {r_pre_lm(w, additive).rate:.2e}")

q = rng.integers(-2, 3, size=(3, 3)).astype(float)
verdict = is_useless(q)
print("\nrandom integer metric:\n", q)
print(verdict)
x1, x2, y1, y2 = verdict.witness
wbar = witness_channel(q, verdict.witness)
print("witness channel:\n", np.round(wbar, 3))
sub_w, sub_q = restrict(wbar, q, [x1, x2], [y1, y2])
cap = binary_mismatch_capacity(sub_w, sub_q)
print(f"restricted mismatch capacity: {cap.value:.6f} nats = {cap.value / math.log(2):.3f} bits")
print(f"LM rate with the best pre-processor on the witness channel: {r_pre_lm(wbar, q).rate:.6f} nats")
