"""Independent straight-line replay of the CH and EPC security rounds.

Written from the algorithm listings without importing anything from
``secure_hfl.security``; records are plain dicts. Used as the oracle for
the replay-equivalence tests.
"""
import math

import numpy as np


def new_record(vid):
    return {
        "vehicle": vid,
        "total_accuracy": 0.0,
        "total_contributions": 0,
        "total_anomalous": 0,
        "block_flag": False,
        "block_duration": 0,
        "last_update": None,
        "reliability_score": 0.0,
        "rounds_observed": 0,
    }


def score(rec, wa=1.0, wf=1.0, wn=1.0):
    i = rec["rounds_observed"]
    if i == 0:
        ha = cf = ar = 0.0
    else:
        ha = rec["total_accuracy"] / i
        cf = rec["total_contributions"] / i
        ar = rec["total_anomalous"] / i
    return wa * ha + wf * cf - wn * ar


def cosine(a, b):
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        return None
    return float(np.dot(a, b)) / (na * nb)


def _vet(rec, vec, acc, threshold, unblock_time):
    """Block check plus cosine test for one examined vehicle. Returns True if accepted."""
    if rec["block_flag"]:
        if rec["block_duration"] < unblock_time:
            rec["block_duration"] += 1
            return False
        rec["block_flag"] = False
        rec["block_duration"] = 0
    if vec is None:  # dropped in transit
        return False
    prev = rec["last_update"]
    anomalous = False
    if prev is not None:
        c = cosine(vec, prev)
        anomalous = c is None or c < threshold
    if anomalous:
        rec["block_flag"] = True
        rec["block_duration"] = 0
        rec["total_anomalous"] += 1
        return False
    rec["total_contributions"] += 1
    rec["total_accuracy"] += acc
    rec["last_update"] = np.array(vec, copy=True)
    return True


def ch_step(records, members, received, accuracy, pct=0.75, threshold=0.5, unblock_time=5, weights=(1.0, 1.0, 1.0)):
    """One CH round. ``received`` maps id -> vector; ``accuracy`` maps id -> float."""
    for k in members:
        records[k]["rounds_observed"] += 1
    order = sorted(members, key=lambda k: (-records[k]["reliability_score"], k))
    n = max(1, math.ceil(pct * len(order) - 1e-9))
    selected = order[:n]
    accepted = []
    for k in selected:
        if _vet(records[k], received.get(k), accuracy.get(k, 0.0), threshold, unblock_time):
            accepted.append(k)
    for k in members:
        records[k]["reliability_score"] = score(records[k], *weights)
    return selected, accepted


def epc_step(records, heads, received, accuracy, threshold=0.5, unblock_time=5, weights=(1.0, 1.0, 1.0)):
    """One EPC round: every head examined in id order, no selection cut."""
    for h in heads:
        records[h]["rounds_observed"] += 1
    accepted = []
    for h in sorted(heads):
        if _vet(records[h], received.get(h), accuracy.get(h, 0.0), threshold, unblock_time):
            accepted.append(h)
    for h in heads:
        records[h]["reliability_score"] = score(records[h], *weights)
    return accepted


def scripted_trace(seed, rounds=50, n_vehicles=12, n_heads=3, dim=16):
    """Deterministic event script mixing blocks, re-offenses, drops and migrations.

    Yields per round: (clusters {head: [members]}, cm_received, cm_accuracy,
    epc_received, epc_accuracy).
    """
    rng = np.random.default_rng(seed)
    base = rng.normal(size=dim)
    heads = list(range(n_heads))
    cms = list(range(n_heads, n_vehicles))
    home = {k: heads[int(rng.integers(n_heads))] for k in cms}
    attackers = set(rng.choice(cms, size=3, replace=False).tolist())
    rogue_head = heads[-1]
    for r in range(1, rounds + 1):
        # migrations: a few CMs hop to another head each round
        for k in cms:
            if rng.random() < 0.15:
                home[k] = heads[int(rng.integers(n_heads))]
        clusters = {h: sorted(k for k in cms if home[k] == h) for h in heads}
        clusters = {h: m for h, m in clusters.items() if m}
        received, acc = {}, {}
        for k in cms:
            if rng.random() < 0.15:
                continue  # dropped
            if k in attackers and r >= 8 and rng.random() < 0.7:
                vec = rng.normal(size=dim) * 5  # fresh noise: dissimilar to anything stored
            elif rng.random() < 0.03:
                vec = np.zeros(dim)  # degenerate payload
            else:
                vec = base + rng.normal(scale=0.3, size=dim)
            received[k] = vec
            acc[k] = float(rng.uniform(0.3, 0.95))
        epc_received, epc_acc = {}, {}
        for h in clusters:
            if rng.random() < 0.1:
                continue
            if h == rogue_head and r % 7 == 0:
                vec = -base + rng.normal(scale=0.2, size=dim)
            else:
                vec = base + rng.normal(scale=0.2, size=dim)
            epc_received[h] = vec
            epc_acc[h] = float(rng.uniform(0.4, 0.9))
        yield clusters, received, acc, epc_received, epc_acc
