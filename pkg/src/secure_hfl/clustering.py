"""One-hop cluster formation and maintenance.

Cluster heads are elected greedily by a suitability score mixing relative
speed and model stability. Maintenance keeps every CH/CM link that is still
in range and only re-clusters the vehicles that lost their head.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .mobility import SPEED_SPREAD

CH, CM, FREE = "CH", "CM", "Free"


@dataclass(frozen=True)
class SuitabilityScore:
    vehicle: int
    speed_term: float
    similarity_term: float
    combined: float


@dataclass(frozen=True)
class ChurnEvent:
    round: int
    vehicle: int
    old_role: str
    new_role: str
    old_head: Optional[int]
    new_head: Optional[int]


@dataclass
class ClusterAssignment:
    role: dict = field(default_factory=dict)  # id -> CH | CM | Free
    head_of: dict = field(default_factory=dict)  # CM id -> CH id
    members: dict = field(default_factory=dict)  # CH id -> set of CM ids

    def heads(self):
        return sorted(self.members)

    def cluster_of(self, vid):
        """Head id of the cluster ``vid`` belongs to (itself for a CH)."""
        if self.role.get(vid) == CH:
            return vid
        return self.head_of.get(vid)

    def check(self, adjacency=None):
        """Raise AssertionError if roles, heads and member sets disagree."""
        for vid, r in self.role.items():
            if r == CH:
                assert vid in self.members and vid not in self.head_of, vid
            elif r == CM:
                h = self.head_of[vid]
                assert self.role.get(h) == CH and vid in self.members[h], vid
                if adjacency is not None:
                    assert h in adjacency[vid], f"CM {vid} is not one hop from CH {h}"
            else:
                assert vid not in self.members and vid not in self.head_of, vid
        for h, ms in self.members.items():
            assert self.role.get(h) == CH
            for m in ms:
                assert self.head_of.get(m) == h
        return True


def suitability(vehicle, neighbor_states, hello, alpha=0.5) -> SuitabilityScore:
    """Score how well ``vehicle`` would serve as CH.

    ``hello`` maps vehicle id to its latest HelloPacket. The speed term
    normalizes the mean relative speed by the spawn speed spread (25 m/s).
    The similarity term is the vehicle's own advertised model stability.
    """
    if not neighbor_states:
        speed_term, sim_term = 1.0, 0.0
    else:
        rel = sum(abs(vehicle.velocity - n.velocity) for n in neighbor_states) / len(neighbor_states)
        speed_term = min(1.0, max(0.0, 1.0 - rel / SPEED_SPREAD))
        packet = hello.get(vehicle.id)
        sim_term = packet.model_similarity if packet is not None else 0.0
    return SuitabilityScore(
        vehicle.id, speed_term, sim_term, alpha * speed_term + (1.0 - alpha) * sim_term
    )


def _rank(ids, scores):
    return sorted(ids, key=lambda v: (-scores[v].combined if v in scores else 0.0, v))


def form_clusters(adjacency, scores, restrict_to=None) -> ClusterAssignment:
    """Greedy election: best unassigned vehicle becomes CH and absorbs its
    unassigned neighbors; repeat until everyone is assigned."""
    pool = set(adjacency if restrict_to is None else restrict_to)
    out = ClusterAssignment()
    for vid in _rank(pool, scores):
        if vid not in pool:
            continue
        pool.discard(vid)
        out.role[vid] = CH
        out.members[vid] = set()
        for n in sorted(adjacency[vid]):
            if n in pool:
                pool.discard(n)
                out.role[n] = CM
                out.head_of[n] = vid
                out.members[vid].add(n)
    return out


def maintain_clusters(assignment, adjacency, scores, round=0):
    """Carry the previous assignment forward under the new topology.

    CMs still in range of their CH stay put and every CH keeps its role,
    even with no members left. CMs that lost their CH and newly arrived
    vehicles form the free pool: each
    joins the best-scoring CH in range if there is one, the rest are
    clustered among themselves with :func:`form_clusters`.
    Returns ``(assignment, churn_events)``.
    """
    new = ClusterAssignment()
    free = set()
    for h, ms in assignment.members.items():
        if h not in adjacency:
            continue
        kept = {m for m in ms if m in adjacency and h in adjacency[m]}
        new.role[h] = CH  # a CH that lost every member stays on as a singleton
        new.members[h] = kept
        for m in kept:
            new.role[m] = CM
            new.head_of[m] = h
    for vid in adjacency:
        if vid not in new.role:
            free.add(vid)

    leftover = set()
    for vid in _rank(free, scores):
        heads = [n for n in adjacency[vid] if new.role.get(n) == CH]
        if heads:
            h = _rank(heads, scores)[0]
            new.role[vid] = CM
            new.head_of[vid] = h
            new.members[h].add(vid)
        else:
            leftover.add(vid)
    fresh = form_clusters(adjacency, scores, restrict_to=leftover)
    new.role.update(fresh.role)
    new.head_of.update(fresh.head_of)
    new.members.update(fresh.members)

    events = []
    for vid in sorted(adjacency):
        old_role = assignment.role.get(vid, FREE)
        old_head = assignment.head_of.get(vid)
        new_role, new_head = new.role[vid], new.head_of.get(vid)
        if old_role != new_role or old_head != new_head:
            events.append(ChurnEvent(round, vid, old_role, new_role, old_head, new_head))
    return new, events
