import numpy as np
import pytest
from collections import deque

from socperc.lattice import build_box


def flood_fill_labels(box, bits):
    """Plain BFS labelling, independent of the union-find kernels."""
    N = box.num_vertices
    adj = [[] for _ in range(N)]
    for (u, v), o in zip(box.edges.tolist(), bits.tolist()):
        if o:
            adj[u].append(v)
            adj[v].append(u)
    label = [-1] * N
    k = 0
    for s in range(N):
        if label[s] >= 0:
            continue
        label[s] = k
        q = deque([s])
        while q:
            x = q.popleft()
            for y in adj[x]:
                if label[y] < 0:
                    label[y] = k
                    q.append(y)
        k += 1
    return np.array(label)


@pytest.fixture(scope="session")
def box3():
    return build_box(2, 3)


@pytest.fixture(scope="session")
def box2():
    return build_box(2, 2)
