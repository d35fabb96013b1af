"""Brute-force reference evaluator for the completion-time recurrences.

Works on the whole (rank, step) grid at once: start from all-zero waitall
times and re-evaluate every equation until nothing changes. Neighbor lists,
message resolution and the handshake ordering are written out here from
scratch so the engine's own code is not reused.
"""


def _partners(n, d, periodic, bidirectional):
    fwd, bwd = [], []
    for p in range(n):
        for j in range(1, d + 1):
            q = p + j
            if periodic:
                fwd.append((p, q % n))
            elif q < n:
                fwd.append((p, q))
            if bidirectional:
                q = p - j
                if periodic:
                    bwd.append((p, q % n))
                elif q >= 0:
                    bwd.append((p, q))
    return fwd, bwd


def evaluate(n, K, t_exec, cost, d, periodic, bidirectional, rendezvous, extra):
    """``extra[p][k-1]`` is noise plus injected delay. Returns waitall[p][k-1]."""
    fwd, bwd = _partners(n, d, periodic, bidirectional)
    wa = [[0.0] * K for _ in range(n)]
    for _ in range(n * K + 5):
        new = [[0.0] * K for _ in range(n)]
        for k in range(K):
            ce = [(wa[p][k - 1] if k else 0.0) + t_exec + extra[p][k] for p in range(n)]
            fin = [c + cost for c in ce]
            matched = list(ce)
            for s, r in fwd:
                if rendezvous:
                    t = max(ce[s], ce[r])
                    matched[s] = max(matched[s], t)
                    matched[r] = max(matched[r], t)
                    fin[s] = max(fin[s], t + cost)
                    fin[r] = max(fin[r], t + cost)
                else:
                    fin[r] = max(fin[r], ce[r], ce[s] + cost)
            for s, r in bwd:
                if rendezvous:
                    t = max(matched[s], matched[r])
                    fin[s] = max(fin[s], t + cost)
                    fin[r] = max(fin[r], t + cost)
                else:
                    fin[r] = max(fin[r], ce[r], ce[s] + cost)
            for p in range(n):
                new[p][k] = fin[p]
        if new == wa:
            return wa
        wa = new
    raise RuntimeError("recurrence did not settle")
