"""Walkthrough: cutting a percolation cluster down to an exact size.

Run with ``python demos/carving_clusters.py``.

A Bernoulli(0.6) configuration on Lambda(48) is drawn and its largest open
cluster extracted. ``bisect`` halves it with few edges, and ``carve`` then
isolates pieces of prescribed size around a fixed root. The cut sizes are
compared with the guaranteed bound K(d) |V|^((d-1)/d).
"""
import numpy as np

from socperc import analyze, build_box, sample_bernoulli
from socperc.separator import LatticeSubgraph, bisect, butcher_bound, carve, carve_bound

box = build_box(2, 48)
config = sample_bernoulli(box, 0.6, 5)
an = analyze(box, config)
c = int(np.argmax(an.cluster_sizes))
vs = np.flatnonzero(an.label == c)
inside = config.bits & (an.label[box.edges[:, 0]] == c)
g = LatticeSubgraph(box.coords[vs].astype(np.int64), np.searchsorted(vs, box.edges[inside]))
print(f"largest cluster: {g.num_vertices} vertices, {g.num_edges} open edges")

cut = bisect(g)
_, sizes = g.components(cut)
print(f"bisect: {len(cut)} edges removed (bound {butcher_bound(g.num_vertices, 2):.0f}), largest piece {sizes.max()}")

root = 0
print("\n    m   |E_0|   bound   component of root")
for m in (1, 10, 100, g.num_vertices // 2, g.num_vertices - 1):
    cut = carve(g, root, m)
    labels, sizes = g.components(cut)
    print(f"{m:5d}   {len(cut):5d}   {carve_bound(g.num_vertices, 2):5.0f}   {sizes[labels[root]]}")
