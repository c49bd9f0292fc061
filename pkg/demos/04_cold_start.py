"""Why the first two steps of a stream matter so much.

Features are standardized with statistics of the past only.  At step 0
there is no past, and at step 1 the past is a single point with zero
variance, so both inputs are divided by sqrt(1e-8) and reach the network
at roughly 1e4 times their usual scale.  One SGD step on such an input
moves the first-layer weights by a lot, and the network stays
overconfident for a long while afterwards.

This script counts steps whose probability for the true class sits at the
1e-12 floor, with standardization on (the default) and off.

    python demos/04_cold_start.py
"""

import os

import numpy as np

from ramol import LearnerConfig, gen_piecewise_stream, load_stream_spec, prequential_run

HERE = os.path.dirname(os.path.abspath(__file__))
regimes, seed = load_stream_spec(os.path.join(HERE, "specs", "recurring.toml"))
examples = list(gen_piecewise_stream(regimes, seed))

floor_loss = -np.log(1e-12) - 1e-6
for standardize in (True, False):
    for variant in ("baseline", "ram_gated"):
        m = prequential_run(LearnerConfig(variant=variant, seed=1, standardize=standardize), examples, 2)
        saturated = int((m.per_step_loss >= floor_loss).sum())
        print(f"standardize={standardize!s:<5} {variant:<9} avg acc {m.avg_acc:.3f}  "
              f"mean loss {m.per_step_loss.mean():6.2f}  steps at the floor {saturated}")
