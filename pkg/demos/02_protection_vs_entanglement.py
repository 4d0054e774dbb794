"""One disorder draw: how much of each two-photon state stays in the edge-edge subspace.

The product state (Schmidt number 1) keeps most of its edge content; the
correlated and anti-correlated states trade protection for entanglement.
"""

from biphoton_edge.biphoton import named_recipe
from biphoton_edge.campaign import EnsembleConfig, prepare_model, run_ensemble
from biphoton_edge.lattice import DisorderSpec, HaldaneSpec

names = ("product", "correlated", "anticorrelated")
model = prepare_model(HaldaneSpec())
cfg = EnsembleConfig(model.spec, DisorderSpec(1.0, seed=2), 1, tuple(named_recipe(n) for n in names),
                     z=78.5, labels=names)
res = run_ensemble(cfg, model)
for r in res.records:
    print(f"{r.label:>15}: S_N {r.S_N:6.3f}  E {r.E:.4f}  F {r.F:.4f}  F_N {r.F_N:.4f}  (z_m {r.z_m:.1f})")
print("projection weights onto E(x)E:", {k: round(v, 4) for k, v in res.projection_weights.items()})
