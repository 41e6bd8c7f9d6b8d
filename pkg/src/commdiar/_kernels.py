"""Compiled inner loops for Louvain/Leiden.

All gains are expressed in edge-weight units: the gain of putting an isolated
node ``v`` into community ``c`` is ``w(v, c) - gamma * k_v * deg(c) / (2m)``,
which is m times the change in modularity.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _best_target(v, indptr, indices, weights, node_deg, comm, comm_deg, comm_size,
                 gamma, inv_2m, scratch, touched):
    """Remove ``v`` from its community and return (best, best_gain, own_gain).

    ``comm_deg``/``comm_size`` are left with ``v`` removed.  ``best`` is -1
    when the best move is to an empty community.
    """
    own = comm[v]
    kv = node_deg[v]
    n_touched = 0
    for p in range(indptr[v], indptr[v + 1]):
        c = comm[indices[p]]
        if scratch[c] == 0.0:
            touched[n_touched] = c
            n_touched += 1
        scratch[c] += weights[p]
    comm_deg[own] -= kv
    comm_size[own] -= 1

    own_gain = scratch[own] - gamma * kv * comm_deg[own] * inv_2m
    best = own
    best_gain = own_gain
    for t in range(n_touched):
        c = touched[t]
        if c == own:
            continue
        g = scratch[c] - gamma * kv * comm_deg[c] * inv_2m
        if g > best_gain or (g == best_gain and best != own and c < best):
            best = c
            best_gain = g
    for t in range(n_touched):
        scratch[touched[t]] = 0.0
    if best_gain < 0.0 and comm_size[own] > 0:
        best = -1
        best_gain = 0.0
    return best, best_gain, own_gain


@njit(cache=True)
def _commit(v, target, kv, comm, comm_deg, comm_size, empty, n_empty):
    own = comm[v]
    if target == -1:
        target = empty[n_empty - 1]
        n_empty -= 1
    if comm_size[own] == 0 and target != own:
        empty[n_empty] = own
        n_empty += 1
    comm[v] = target
    comm_deg[target] += kv
    comm_size[target] += 1
    return target, n_empty


@njit(cache=True)
def _init_state(n, node_deg, comm):
    comm_deg = np.zeros(n)
    comm_size = np.zeros(n, dtype=np.int64)
    for v in range(n):
        comm_deg[comm[v]] += node_deg[v]
        comm_size[comm[v]] += 1
    empty = np.empty(n, dtype=np.int64)
    n_empty = 0
    for c in range(n - 1, -1, -1):
        if comm_size[c] == 0:
            empty[n_empty] = c
            n_empty += 1
    return comm_deg, comm_size, empty, n_empty


@njit(cache=True)
def move_nodes_full(indptr, indices, weights, node_deg, comm, order, gamma, inv_2m, tol):
    """Louvain local moving: sweep all nodes until a sweep moves none.

    Returns (moves, node visits).
    """
    n = node_deg.size
    comm_deg, comm_size, empty, n_empty = _init_state(n, node_deg, comm)
    scratch = np.zeros(n)
    touched = np.empty(n, dtype=np.int64)
    moves = 0
    visits = 0
    while True:
        moved = 0
        for i in range(n):
            v = order[i]
            visits += 1
            best, best_gain, own_gain = _best_target(
                v, indptr, indices, weights, node_deg, comm, comm_deg, comm_size,
                gamma, inv_2m, scratch, touched)
            if best != comm[v] and best_gain > own_gain + tol:
                _, n_empty = _commit(v, best, node_deg[v], comm, comm_deg, comm_size, empty, n_empty)
                moved += 1
            else:
                comm_deg[comm[v]] += node_deg[v]
                comm_size[comm[v]] += 1
        moves += moved
        if moved == 0:
            break
    return moves, visits


@njit(cache=True)
def move_nodes_fast(indptr, indices, weights, node_deg, comm, order, gamma, inv_2m, tol):
    """Leiden fast local moving: FIFO queue of nodes whose neighbourhood changed.

    The queue rule never revisits members of the community a node joined, so
    once it drains after any move, a confirming scan re-queues every node that
    still has an improving move.  Returns (moves, node visits).
    """
    n = node_deg.size
    comm_deg, comm_size, empty, n_empty = _init_state(n, node_deg, comm)
    scratch = np.zeros(n)
    touched = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    in_queue = np.ones(n, dtype=np.bool_)
    for i in range(n):
        queue[i] = order[i]
    head = 0
    count = n
    moves = 0
    visits = 0
    while count > 0:
        moved = False
        while count > 0:
            v = queue[head]
            head = (head + 1) % n
            count -= 1
            in_queue[v] = False
            visits += 1
            best, best_gain, own_gain = _best_target(
                v, indptr, indices, weights, node_deg, comm, comm_deg, comm_size,
                gamma, inv_2m, scratch, touched)
            if best != comm[v] and best_gain > own_gain + tol:
                target, n_empty = _commit(v, best, node_deg[v], comm, comm_deg, comm_size, empty, n_empty)
                moves += 1
                moved = True
                for p in range(indptr[v], indptr[v + 1]):
                    u = indices[p]
                    if not in_queue[u] and comm[u] != target:
                        queue[(head + count) % n] = u
                        count += 1
                        in_queue[u] = True
            else:
                comm_deg[comm[v]] += node_deg[v]
                comm_size[comm[v]] += 1
        if not moved:
            # every node was checked against the final state
            break
        for i in range(n):
            v = order[i]
            visits += 1
            best, best_gain, own_gain = _best_target(
                v, indptr, indices, weights, node_deg, comm, comm_deg, comm_size,
                gamma, inv_2m, scratch, touched)
            comm_deg[comm[v]] += node_deg[v]
            comm_size[comm[v]] += 1
            if best != comm[v] and best_gain > own_gain + tol:
                queue[(head + count) % n] = v
                count += 1
                in_queue[v] = True
    return moves, visits


@njit(cache=True)
def refine(indptr, indices, weights, node_deg, comm, order, uniforms, gamma, inv_2m, theta, tol):
    """Leiden refinement of ``comm``.

    Inside each community every node starts as a singleton.  A well-connected
    singleton ``v`` joins a well-connected refined community of the same parent
    with positive gain, chosen with probability proportional to
    exp(gain / theta) (argmax with lowest index when theta == 0).  Refined
    communities therefore only ever grow along edges.
    """
    n = node_deg.size
    ref = np.arange(n)
    ref_deg = node_deg.copy()
    ref_size = np.ones(n, dtype=np.int64)
    parent_deg = np.zeros(n)
    for v in range(n):
        parent_deg[comm[v]] += node_deg[v]
    # weight from each refined community to the rest of its parent community
    ext = np.zeros(n)
    for v in range(n):
        for p in range(indptr[v], indptr[v + 1]):
            if comm[indices[p]] == comm[v]:
                ext[v] += weights[p]

    scratch = np.zeros(n)
    touched = np.empty(n, dtype=np.int64)
    cand = np.empty(n, dtype=np.int64)
    cand_gain = np.empty(n)
    for i in range(n):
        v = order[i]
        if ref_size[ref[v]] != 1:
            continue
        kv = node_deg[v]
        tot = parent_deg[comm[v]]
        if ext[v] < gamma * kv * (tot - kv) * inv_2m - tol:
            continue
        n_touched = 0
        for p in range(indptr[v], indptr[v + 1]):
            u = indices[p]
            if comm[u] != comm[v]:
                continue
            r = ref[u]
            if scratch[r] == 0.0:
                touched[n_touched] = r
                n_touched += 1
            scratch[r] += weights[p]
        n_cand = 0
        for t in range(n_touched):
            r = touched[t]
            d = ref_deg[r]
            if ext[r] < gamma * d * (tot - d) * inv_2m - tol:
                continue
            g = scratch[r] - gamma * kv * d * inv_2m
            if g > tol:
                cand[n_cand] = r
                cand_gain[n_cand] = g
                n_cand += 1
        if n_cand > 0:
            pick = 0
            for c in range(1, n_cand):
                if cand_gain[c] > cand_gain[pick] or (cand_gain[c] == cand_gain[pick] and cand[c] < cand[pick]):
                    pick = c
            if theta > 0.0 and n_cand > 1:
                gmax = cand_gain[pick]
                total = 0.0
                for c in range(n_cand):
                    total += np.exp((cand_gain[c] - gmax) / theta)
                target_mass = uniforms[v] * total
                acc = 0.0
                pick = n_cand - 1
                for c in range(n_cand):
                    acc += np.exp((cand_gain[c] - gmax) / theta)
                    if acc >= target_mass:
                        pick = c
                        break
            r = cand[pick]
            w_vr = scratch[r]
            ext[r] = ext[r] + ext[v] - 2.0 * w_vr
            ref_deg[r] += kv
            ref_size[r] += 1
            ref_size[ref[v]] -= 1
            ref_deg[ref[v]] -= kv
            ref[v] = r
        for t in range(n_touched):
            scratch[touched[t]] = 0.0
    return ref


@njit(cache=True)
def aggregate(indptr, indices, weights, node_deg, labels, k):
    """Collapse nodes by ``labels`` (0..k-1) into a k-node CSR graph.

    Intra-community weight disappears from the adjacency but stays inside the
    aggregated node degree, which is all modularity gains need.
    """
    n = node_deg.size
    agg_deg = np.zeros(k)
    counts = np.zeros(k + 1, dtype=np.int64)
    for v in range(n):
        agg_deg[labels[v]] += node_deg[v]
        counts[labels[v] + 1] += 1
    for c in range(k):
        counts[c + 1] += counts[c]
    members = np.empty(n, dtype=np.int64)
    fill = counts[:k].copy()
    for v in range(n):
        members[fill[labels[v]]] = v
        fill[labels[v]] += 1

    scratch = np.zeros(k)
    touched = np.empty(k, dtype=np.int64)
    out_ptr = np.zeros(k + 1, dtype=np.int64)
    cap = indices.size
    out_idx = np.empty(cap, dtype=np.int64)
    out_w = np.empty(cap)
    nnz = 0
    for c in range(k):
        n_touched = 0
        for q in range(counts[c], counts[c + 1]):
            v = members[q]
            for p in range(indptr[v], indptr[v + 1]):
                d = labels[indices[p]]
                if d == c:
                    continue
                if scratch[d] == 0.0:
                    touched[n_touched] = d
                    n_touched += 1
                scratch[d] += weights[p]
        srt = np.sort(touched[:n_touched])
        for t in range(n_touched):
            d = srt[t]
            out_idx[nnz] = d
            out_w[nnz] = scratch[d]
            scratch[d] = 0.0
            nnz += 1
        out_ptr[c + 1] = nnz
    return out_ptr, out_idx[:nnz].copy(), out_w[:nnz].copy(), agg_deg


@njit(cache=True)
def relabel(labels):
    """Compact labels to 0..K-1 in order of first appearance."""
    n = labels.size
    size = 0
    for v in range(n):
        if labels[v] + 1 > size:
            size = labels[v] + 1
    mapping = np.full(size, -1, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    k = 0
    for v in range(n):
        lab = labels[v]
        if mapping[lab] == -1:
            mapping[lab] = k
            k += 1
        out[v] = mapping[lab]
    return out, k
