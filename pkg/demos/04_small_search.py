"""A tiny genetic search with an interruption halfway through.

The full desk configuration used by the acceptance tests is 8 individuals
for 5 generations on 200 phantoms at 32x32.  This demo shrinks everything
so it finishes in under a minute.  Run with
``python demos/04_small_search.py``.
"""

import tempfile
from pathlib import Path

from evorecon import kspace as ks
from evorecon import search as se
from evorecon import trainer as tr
from evorecon.phenotype import TensorShape

images = ks.generate_phantoms(60, 16, seed=1)
ds = ks.build_dataset(images, ks.make_uniform_mask(16, 4, 0.04), seed=1)

cfg = se.SearchConfig(population_size=4, generations=3, seed=5,
                      train=tr.TrainConfig(max_epochs=6, patience=3))

with tempfile.TemporaryDirectory() as tmp:
    ckpt = Path(tmp) / "search.evck"

    # stop after 6 slots, i.e. in the middle of generation 1
    try:
        se.run_search(cfg, ds, checkpoint_path=ckpt, stop_after_slots=6)
    except se.SearchInterrupted as exc:
        print("stopped:", exc)

    # pick up from the file, as a fresh process would
    state = se.resume(ckpt)
    print("resuming at generation", state.generation, "slot", state.slot,
          "with", len(state.cache), "cached evaluations")
    result = se.run_search(cfg, ds, state=state, checkpoint_path=ckpt)

print()
print(result.lineage)
for h in result.history:
    print(f"generation {h.generation:2d}: best FV {h.best_fv:8.2f}  mean FV {h.mean_fv:8.2f}")

best = result.best
print("best genome:", best.genome)
x, y = ds.arrays("test")
graph = se.best_graph(result, TensorShape(16, 16, 1))
print("test MSE %.5f (aliased %.5f)" % (tr.evaluate_mse(graph, best.params, x, y),
                                         float(((x - y) ** 2).mean())))
