"""Primal network simplex for the uncapacitated transportation problem.

Node layout: sources 0..m-1, targets m..m+n-1, artificial root m+n.  Every
node gets an artificial arc to/from the root.  Artificial arcs cost one unit
of a separate "big-M" component, so the objective is minimized
lexicographically (artificial flow first, real cost second) without ever
adding a large number to a real cost.

Anti-cycling uses Cunningham's strongly feasible trees: zero-flow tree arcs
always point away from the root, and the leaving arc is the last blocking
arc met when walking the cycle from the join node.  Entering arcs come from
block search pricing.  The tree is rebuilt by BFS after each pivot, which
keeps the code short and is O(nodes) per pivot.
"""

from __future__ import annotations

import numpy as np
from numba import njit

OPTIMAL = 0
ITERATION_LIMIT = 1


@njit(cache=True)
def _rebuild(tree, n_nodes, root, tail, head, cM, cR, parent, pred, dirup, depth, piM, piR):
    deg = np.zeros(n_nodes + 1, dtype=np.int64)
    for k in range(tree.shape[0]):
        e = tree[k]
        deg[tail[e] + 1] += 1
        deg[head[e] + 1] += 1
    for v in range(n_nodes):
        deg[v + 1] += deg[v]
    fill = deg[:-1].copy()
    adj = np.empty(2 * tree.shape[0], dtype=np.int64)
    for k in range(tree.shape[0]):
        e = tree[k]
        adj[fill[tail[e]]] = e
        fill[tail[e]] += 1
        adj[fill[head[e]]] = e
        fill[head[e]] += 1

    queue = np.empty(n_nodes, dtype=np.int64)
    seen = np.zeros(n_nodes, dtype=np.bool_)
    queue[0] = root
    seen[root] = True
    parent[root] = -1
    pred[root] = -1
    depth[root] = 0
    piM[root] = 0.0
    piR[root] = 0.0
    qh = 0
    qt = 1
    while qh < qt:
        u = queue[qh]
        qh += 1
        for p in range(deg[u], deg[u + 1]):
            e = adj[p]
            w = head[e] if tail[e] == u else tail[e]
            if seen[w]:
                continue
            seen[w] = True
            parent[w] = u
            pred[w] = e
            depth[w] = depth[u] + 1
            if tail[e] == w:
                # arc w -> parent
                dirup[w] = True
                piM[w] = piM[u] - cM[e]
                piR[w] = piR[u] - cR[e]
            else:
                dirup[w] = False
                piM[w] = piM[u] + cM[e]
                piR[w] = piR[u] + cR[e]
            queue[qt] = w
            qt += 1
    return qt


@njit(cache=True)
def network_simplex(n_src, n_tgt, arc_tail, arc_head, arc_cost, supply, eps, max_iter):
    """Solve min sum c f s.t. conservation, f >= 0.

    Returns (flow over all arcs incl. artificial, tree arc ids, piM, piR,
    status, iterations).  ``supply`` has length n_src + n_tgt, positive at
    sources and negative at targets.
    """
    N = n_src + n_tgt
    root = N
    n_nodes = N + 1
    A = arc_tail.shape[0]
    E = A + N
    tail = np.empty(E, dtype=np.int64)
    head = np.empty(E, dtype=np.int64)
    cM = np.zeros(E)
    cR = np.zeros(E)
    flow = np.zeros(E)
    for e in range(A):
        tail[e] = arc_tail[e]
        head[e] = arc_head[e]
        cR[e] = arc_cost[e]
    tree = np.empty(N, dtype=np.int64)
    for v in range(N):
        e = A + v
        cM[e] = 1.0
        if supply[v] > 0:
            tail[e] = v
            head[e] = root
            flow[e] = supply[v]
        else:
            tail[e] = root
            head[e] = v
            flow[e] = -supply[v]
        tree[v] = e
    pos = np.full(E, -1, dtype=np.int64)
    for v in range(N):
        pos[A + v] = v

    parent = np.empty(n_nodes, dtype=np.int64)
    pred = np.empty(n_nodes, dtype=np.int64)
    dirup = np.zeros(n_nodes, dtype=np.bool_)
    depth = np.empty(n_nodes, dtype=np.int64)
    piM = np.empty(n_nodes)
    piR = np.empty(n_nodes)
    _rebuild(tree, n_nodes, root, tail, head, cM, cR, parent, pred, dirup, depth, piM, piR)

    block = max(10, int(np.sqrt(E)))
    next_arc = 0
    it = 0
    status = OPTIMAL
    while True:
        if it >= max_iter:
            status = ITERATION_LIMIT
            break
        # block search pricing; lexicographic reduced cost (M part, real part)
        best = -1
        bestM = 0.0
        bestR = 0.0
        scanned = 0
        cnt = 0
        e = next_arc
        while scanned < E:
            rM = cM[e] + piM[tail[e]] - piM[head[e]]
            rR = cR[e] + piR[tail[e]] - piR[head[e]]
            if rM < -0.5 or (rM < 0.5 and rR < -eps):
                if best < 0 or rM < bestM or (rM == bestM and rR < bestR):
                    best = e
                    bestM = rM
                    bestR = rR
            scanned += 1
            cnt += 1
            e += 1
            if e == E:
                e = 0
            if cnt == block:
                if best >= 0:
                    break
                cnt = 0
        next_arc = e
        if best < 0:
            break
        it += 1

        first = tail[best]
        second = head[best]
        # join node
        u = first
        v = second
        while u != v:
            if depth[u] > depth[v]:
                u = parent[u]
            elif depth[v] > depth[u]:
                v = parent[v]
            else:
                u = parent[u]
                v = parent[v]
        join = u

        delta = np.inf
        u_out = -1
        w = first
        while w != join:
            if dirup[w]:
                d = flow[pred[w]]
                if d < delta:
                    delta = d
                    u_out = w
            w = parent[w]
        w = second
        while w != join:
            if not dirup[w]:
                d = flow[pred[w]]
                if d <= delta:
                    delta = d
                    u_out = w
            w = parent[w]
        if u_out < 0:
            # unbounded cannot happen on a balanced transportation problem
            status = ITERATION_LIMIT
            break

        flow[best] += delta
        w = first
        while w != join:
            if dirup[w]:
                flow[pred[w]] -= delta
            else:
                flow[pred[w]] += delta
            w = parent[w]
        w = second
        while w != join:
            if dirup[w]:
                flow[pred[w]] += delta
            else:
                flow[pred[w]] -= delta
            w = parent[w]

        leaving = pred[u_out]
        k = pos[leaving]
        tree[k] = best
        pos[best] = k
        pos[leaving] = -1
        _rebuild(tree, n_nodes, root, tail, head, cM, cR, parent, pred, dirup, depth, piM, piR)

    return flow, tree, piM, piR, status, it
