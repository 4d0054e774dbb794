"""Ensemble-averaged edge-edge map of a narrow probe and its surviving square."""

from biphoton_edge.campaign import EnsembleConfig, extract_window, prepare_model, run_ensemble
from biphoton_edge.lattice import DisorderSpec, HaldaneSpec

model = prepare_model(HaldaneSpec())
cfg = EnsembleConfig(model.spec, DisorderSpec(1.0, seed=0), 20, (model.recipe(0.01, 0.01),),
                     z=78.5, labels=("probe",), reference=False)
avg = run_ensemble(cfg, model).mean_maps["probe"]
print(f"{model.n_edge} edge modes, gap centre at index {model.gap_center_index()}")
for t in (0.01, 0.1, 0.2, 0.5):
    w = extract_window(avg, t)
    print(f"  threshold {t:>4}: square [{w.lo}, {w.hi}], centre {w.center:.1f}")
