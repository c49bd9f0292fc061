"""A tour of the pieces a retrieval-augmented learner is made of.

We build a tiny network, check its gradient by hand, fill a memory buffer
with embeddings, and see how a query turns into a weighted training batch.

    python demos/01_building_blocks.py
"""

import numpy as np

from ramol import (
    Buffer,
    Example,
    MemoryEntry,
    WeightedExample,
    forward,
    gated_batch,
    init_params,
    retrieve,
    similarity_gate,
    similarity_weights,
    weighted_grad,
    weighted_loss,
)

rng = np.random.default_rng(0)

# A 2-input, 16-unit, 2-class network.  The hidden layer doubles as the
# embedding space we search in.
params = init_params(d=2, hidden_dim=16, n_classes=2, seed=0)
x = np.array([0.3, -1.2])
fr = forward(params, x)
print("probabilities for x:", np.round(fr.probs, 4))
print("embedding has", fr.h.size, "coordinates,", int((fr.h > 0).sum()), "active")

# The gradient of a weighted loss, checked against a central difference on
# the W2 weight leaving the most active hidden unit.
j = int(np.argmax(fr.h))
batch = [WeightedExample(x, 1, 1.0), WeightedExample(rng.normal(size=2), 0, 0.25)]
g = weighted_grad(params, batch)
eps = 1e-5
params.W2[1, j] += eps
up = weighted_loss(params, batch)
params.W2[1, j] -= 2 * eps
down = weighted_loss(params, batch)
params.W2[1, j] += eps
print(f"dL/dW2[1,{j}]: analytic {g.W2[1, j]:.8f}, numeric {(up - down) / (2 * eps):.8f}")

# Fill a small buffer.  When full, the oldest entry is evicted first.
buf = Buffer(capacity=50, input_dim=2, hidden_dim=16)
for t in range(80):
    xi = rng.normal(size=2)
    yi = int(xi[0] > 0)
    buf.insert(MemoryEntry(xi, yi, forward(params, xi).h, t))
print("buffer holds", len(buf), "entries, oldest t =", buf.timestamps()[0])

# Retrieval: the K closest embeddings, with an optional recency window H.
ns = retrieve(buf, fr.h, t_now=80, K=5, H=40)
print("neighbour steps:", ns.t.tolist(), "distances:", np.round(ns.d, 3))

# Distances become similarity weights; weak neighbours are gated away and
# the survivors share a total weight alpha next to the current example.
ns = similarity_gate(similarity_weights(ns, tau=1.0), rho=0.5)
print("after the gate:", len(ns), "neighbours with weights", np.round(ns.w, 3))
train = gated_batch(Example(x, 1, 80), ns, alpha=0.5)
print("batch weights:", [round(b.weight, 3) for b in train], "sum =", round(sum(b.weight for b in train), 6))
