"""Train one compiled network on aliased phantoms and score it.

Takes well under a minute on one core.  Run with
``python demos/03_train_one_network.py``.
"""

import numpy as np

from evorecon import analyzer as an
from evorecon import genome as gn
from evorecon import kspace as ks
from evorecon import metrics as me
from evorecon import phenotype as ph
from evorecon import tensor_engine as te
from evorecon import trainer as tr

images = ks.generate_phantoms(200, 32, seed=0)
ds = ks.build_dataset(images, ks.make_uniform_mask(32, 4, 0.04), seed=0)
print("splits:", len(ds.train), len(ds.validation), len(ds.test))

# a shallow two-kernel network with one pool and a residual skip
g = gn.Genome(g1=3, g2=(3, 7), g3=1, g4=0, g5=0, g6=34, g7=0, g8=0, g9=0, g10=0,
              g11="ADAM", g12=8)
graph = ph.compile_genome(g, ph.TensorShape(32, 32, 1), 0)
s = an.summarize(graph)
print(f"{s.conv_layers} conv layers, {s.params:,} params, {s.flops / 1e6:.1f} MFLOPs")

cfg = tr.TrainConfig(max_epochs=12, patience=4, seed=0)
res = tr.train(graph, ds, cfg, optimizer=g.g11)
print(res.history_csv())
print("best epoch", res.best_epoch, "fitness %.1f" % tr.fitness(res.best_val_mse))

# compare with doing nothing at all
x, y = ds.arrays("test")
pred = te.predict(graph, res.params, x)
table = {"Aliased": me.evaluate_pairs(y, x), "Trained": me.evaluate_pairs(y, pred)}
print(me.format_table(table))

# show the centre row of the first test image
row = 16
print("truth  ", np.round(y[0, row, 8:24, 0], 2))
print("aliased", np.round(x[0, row, 8:24, 0], 2))
print("output ", np.round(pred[0, row, 8:24, 0], 2))
