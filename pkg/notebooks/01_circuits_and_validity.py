# %%
# Building circuits by hand and checking them
from cktgen.circuit import Circuit, Node, canonical_hash, to_dot, validate
from cktgen.profiles import PROFILE_101 as P

print(P.n_types, "device types, at most", P.n_max, "nodes")

# %%
# input -> gm stage -> output, plus a compensation branch
nodes = (Node(P.input_type, 0), Node(2, 1, (0.4, 0.0, 0.0)), Node(5, 2, (0.1, 0.6, 0.0)), Node(P.output_type, 4))
ckt = Circuit(nodes, frozenset({(0, 1), (1, 2), (2, 3), (1, 3)}))
rep = validate(ckt, P)
print(rep)

# %%
# a node that never reaches the output is floating
dangling = Circuit(nodes, frozenset({(0, 1), (1, 3), (0, 2)}))
print(validate(dangling, P).no_floating)

# %%
# the hash does not care how nodes were numbered
print(canonical_hash(ckt, P)[:16])
print(to_dot(ckt, P))
