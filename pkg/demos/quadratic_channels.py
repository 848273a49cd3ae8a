"""Two noiseless 4-ary channels decoded with a metric that confuses inputs 2 and 3.

On the identity channel the decoder can still use three inputs, and no
pre-processor does better.  When the channel adds 2 (mod 4) the plain decoder
never decodes correctly, but undoing the shift restores log 3 nats.
"""
import math

import numpy as np

from predecode import Codebook, PreProcessor, lm_rate_max_input, r_pre_lm, simulate
from predecode.instances import SHIFT_BY_2, quadratic_channel_1, quadratic_channel_2

for name, make in (("identity channel", quadratic_channel_1), ("shift-by-2 channel", quadratic_channel_2)):
    w, q = make()
    p_x, sol = lm_rate_max_input(w, q)
    rep = r_pre_lm(w, q)
    print(f"{name}")
    print(f"  LM rate without pre-processing: {sol.rate:.6f} nats at P_X = {np.round(p_x, 3)}")
    print(f"  best pre-processor {rep.best_f.mapping}: {rep.rate:.6f} nats (log 3 = {math.log(3):.6f})")
    print(f"  maps solved {len(rep.per_function_rates)}, pruned by capacity bounds {len(rep.pruned)}")

w, q = quadratic_channel_2()
cb = Codebook(np.array([[0, 1, 2, 0], [1, 2, 0, 2], [2, 0, 1, 1]]))
for label, f in (("identity", PreProcessor.identity(4)), ("shift by 2", SHIFT_BY_2)):
    res = simulate(w, cb, q, f, 5000, seed=0)
    print(f"simulated error rate with {label}: {res.p_err:.3f}")
