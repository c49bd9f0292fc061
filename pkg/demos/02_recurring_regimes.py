"""What happens when an old regime comes back?

The stream in ``specs/recurring.toml`` starts in regime A, detours through
B for 300 steps, and then returns to A.  A learner without memory has to
relearn A from scratch after the detour, while the memory variants can
pull in stored A examples the moment their embeddings look familiar.

We compare the accuracy in the 500 steps after A returns, and report the
regret against the Bayes classifier of whichever regime is active.

    python demos/02_recurring_regimes.py
"""

import os

import numpy as np

from ramol import LearnerConfig, gen_piecewise_stream, load_stream_spec, regret_run

HERE = os.path.dirname(os.path.abspath(__file__))
regimes, _ = load_stream_spec(os.path.join(HERE, "specs", "recurring.toml"))
onset = regimes[0].length + regimes[1].length

print(f"return of regime A at step {onset}\n")
print(f"{'seed':>4} {'variant':<10} {'post-return acc':>15} {'avg acc':>8} {'regret':>8} {'0/1 regret':>10}")
for seed in (1, 2, 3):
    examples = list(gen_piecewise_stream(regimes, 100 + seed))
    for variant in ("baseline", "ram_naive", "ram_gated"):
        rec = regret_run(LearnerConfig(variant=variant, seed=seed), regimes, 100 + seed,
                         examples=examples, drift_samples=5000)
        post = rec.metrics.per_step_correct[onset:onset + 500].mean()
        print(f"{seed:>4} {variant:<10} {post:>15.3f} {rec.metrics.avg_acc:>8.3f} "
              f"{rec.regret:>8.1f} {rec.regret_01:>10d}")
    print()

print(f"drift budget of this stream (two boundaries): {rec.drift_budget:.3f}")

# The regret curve is flat inside a regime once the learner has caught up and
# climbs after each switch.
curve = rec.regret_curve()
marks = [regimes[0].length - 1, onset - 1, len(curve) - 1]
print("cumulative regret at the end of each segment:", np.round(curve[marks], 1))
