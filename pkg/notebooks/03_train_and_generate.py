# %%
# Short conditional run at desk size, then sampling for a held-out spec
import tempfile

import torch

from cktgen.circuit import validate
from cktgen.config import ModelConfig, TrainConfig
from cktgen.dataset import split, synthesize_toy
from cktgen.profiles import PROFILE_101 as P
from cktgen.trainer import fit

recs = synthesize_toy(P, 600, 10, seed=1)
train, test = split(recs, 0.9, seed=1)
out = tempfile.mkdtemp()
res = fit(train, TrainConfig(epochs=10, lr=3e-4, seed=1), ModelConfig.desk(), P, out, val_records=test)
print(res.epochs_run, res.logs[-1].to_dict())

# %%
model = res.model.eval()
target = test[0].spec
with torch.no_grad():
    z = model.encode_specs([target] * 8).mu
circuits = model.generate(z)
print(target, sum(validate(c, P).is_valid_circuit for c in circuits), "/ 8 valid")
print(model.predict_spec(circuits[:4]))
