# %%
# Toy corpus: structure is tied to the spec label, parameters to a bucket
from collections import Counter

from cktgen.circuit import canonical_hash
from cktgen.dataset import group_by_spec, make_batch, split, synthesize_toy
from cktgen.profiles import PROFILE_101 as P

recs = synthesize_toy(P, 400, 10, seed=0, n_buckets=4)
train, test = split(recs, 0.9, seed=0)
len(train), len(test)

# %%
groups = group_by_spec(recs)
print(len(groups), "distinct specs")
spec, members = next(iter(groups.items()))
print(spec, Counter(canonical_hash(r.circuit.with_params([(0.0,) * 3] * len(r.circuit)), P)
                    for r in members).most_common(3))

# %%
b = make_batch(train[:8], P)
print(b.types.shape, b.edges.shape, b.params.shape)
print(b.types[0])
