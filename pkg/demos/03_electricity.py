"""Prequential runs on the ElecNormNew electricity-price stream.

The data lives in ``data/elec.csv`` (fetch it again with
``python -m ramol.datasets``).  Each of the 45312 half-hour records is
predicted before it is learned from.  By default we use the first 10000
rows so the script finishes in well under a minute; pass ``--full`` for
the whole stream.

    python demos/03_electricity.py [--full]
"""

import os
import sys

from ramol import ABLATIONS, CsvSchema, LearnerConfig, open_csv_stream, prequential_run

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
stream = open_csv_stream(os.path.join(ROOT, "data", "elec.csv"), CsvSchema(label="target"))
examples = list(stream)
if "--full" not in sys.argv:
    examples = examples[:10000]
print(f"{len(examples)} examples, features: {', '.join(stream.feature_names)}\n")

# The six methods of the ablation table: baseline, naive replay, and the
# gated learner with each of its three gates switched off in turn.
print(f"{'method':<14} {'final':>6} {'avg':>6} {'cover':>6} {'match':>6} {'secs':>6}")
for name, overrides in ABLATIONS.items():
    m = prequential_run(LearnerConfig(seed=42).replace(**overrides), examples, 2, dataset="elec")
    cov = "--" if m.coverage is None else f"{m.coverage:.2f}"
    lm = "--" if m.label_match is None else f"{m.label_match:.2f}"
    print(f"{name:<14} {m.final_acc:>6.3f} {m.avg_acc:>6.3f} {cov:>6} {lm:>6} {m.wall_clock_s:>6.1f}")
