"""From a 12-gene genome to a network graph and its cost.

Run with ``python demos/02_genome_to_graph.py``.
"""

import numpy as np

from evorecon import analyzer as an
from evorecon import genome as gn
from evorecon import phenotype as ph

# genomes have a small text form
text = """\
g1 = 3
g2 = 3,5
g3 = 2
g4 = 50
g5 = 34
g6 = 34
g7 = 0000
g8 = 0
g9 = 0100
g10 = 67
g11 = ADAM
g12 = 4
"""
g = gn.from_text(text)
print(g)

# g3 asks for 2 pools; the other percentages are taken of g1 = 3
graph = ph.compile_genome(g, ph.TensorShape(32, 32, 1), decode_seed=7)
print(ph.to_text(graph))
print(an.report_table(an.summarize(graph)))

# separation turns 5x5 branches into 5x1 then 1x5 pairs
seps = [n for n in graph.nodes if n.kind == ph.SEP_CONV_PAIR]
print("separated branches:", len(seps), "kernels", sorted({n.kernel for n in seps}))

# crossover swaps tails at a gene index, mutation redraws one gene
rng = np.random.default_rng(0)
other = gn.random_genome(rng)
a, b = gn.crossover(g, other, 5)
print("child A:", a)
print("child B:", b)
print("mutant: ", gn.mutate(g, rng))

# every random genome compiles; bigger images allow deeper pooling
for side in (8, 32, 256):
    depth = ph.max_pool_depth(side, side)
    sizes = []
    for i in range(200):
        gr = ph.compile_genome(gn.random_genome(rng), ph.TensorShape(side, side, 1), i)
        sizes.append(an.count_params(gr))
    print(f"{side:3d}x{side:<3d} max pools {depth}  median params {int(np.median(sizes)):,}")
