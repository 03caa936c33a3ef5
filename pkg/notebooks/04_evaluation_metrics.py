# %%
# Metric behaviour on synthetic latents
import numpy as np

from cktgen.evaluator import diversity, fid_latent, mm_distance, retrieval_precision

rng = np.random.default_rng(0)
x = rng.normal(size=(300, 8))

# %%
for shift in (0.0, 0.5, 1.0, 2.0):
    print(shift, round(fid_latent(x, x + shift), 3))   # grows like 8 * shift**2

# %%
noisy = x + rng.normal(scale=0.5, size=x.shape)
print(retrieval_precision(x[:32], noisy[:32]))
print(retrieval_precision(x[:32], rng.permutation(noisy[:32])))

# %%
print(mm_distance(x, noisy))
groups = {k: x[k * 10:(k + 1) * 10] for k in range(5)}
print(diversity(groups, n_pairs=500))
