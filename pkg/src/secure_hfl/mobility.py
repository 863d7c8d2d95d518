"""Vehicle kinematics on a closed two-lane ring, disk connectivity and a
lossy per-sender channel.

Lane 0 runs in the positive direction, lane 1 in the negative direction.
One call to :func:`step_mobility` corresponds to one communication round.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import seeding
from .errors import ConfigurationError, ContractViolation

logger = logging.getLogger(__name__)

MIN_SPEED = 10.0
MAX_SPEED = 35.0
SPEED_SPREAD = MAX_SPEED - MIN_SPEED
EPC = -1  # receiver id of the cellular core


@dataclass
class VehicleState:
    id: int
    position: float
    lane: int
    speed: float
    arrival_round: int
    attacker: bool = False
    unreliable: bool = False
    drop_prob: float = 0.0

    @property
    def direction(self) -> int:
        return 1 if self.lane == 0 else -1

    @property
    def velocity(self) -> float:
        return self.direction * self.speed


@dataclass
class HelloPacket:
    sender: int
    direction: int
    location: float
    velocity: float
    clustering_state: str  # "CH" | "CM" | "Free"
    connector: Optional[int]  # CH that links the sender to its cluster
    model_similarity: float  # cos(current local params, previous local params)
    avg_rel_speed: float


@dataclass
class ChannelModel:
    comm_range: float = 100.0

    def __post_init__(self):
        if not self.comm_range > 0:
            raise ConfigurationError("communication range must be positive", field="comm_range")


class Delivery(enum.Enum):
    DELIVERED = "delivered"
    DROPPED = "dropped"


def spawn_arrivals(rate, round, cap, rng, existing=0, track_length=4000.0, lanes=2):
    """Poisson(rate) new vehicles, truncated so the population never exceeds ``cap``.

    New ids continue from ``existing`` (ids are dense, in arrival order).
    """
    if rate < 0:
        raise ConfigurationError("arrival rate must be non-negative", field="arrival_rate")
    n = int(rng.poisson(rate)) if rate > 0 else 0
    room = max(0, cap - existing)
    if n > room:
        logger.info("round %d: %d arrivals truncated to %d (cap %d)", round, n, room, cap)
        n = room
    out = []
    for k in range(n):
        out.append(
            VehicleState(
                id=existing + k,
                position=float(rng.uniform(0.0, track_length)),
                lane=int(rng.integers(lanes)),
                speed=float(rng.uniform(MIN_SPEED, MAX_SPEED)),
                arrival_round=round,
            )
        )
    return out


def step_mobility(states, dt, rng=None, jitter_std=0.5, track_length=4000.0):
    """Advance every vehicle by ``dt`` seconds and jitter its speed."""
    if not dt > 0:
        raise ConfigurationError("dt must be positive", field="dt")
    out = []
    for s in states:
        pos = (s.position + s.direction * s.speed * dt) % track_length
        speed = s.speed
        if jitter_std > 0 and rng is not None:
            jitter = float(np.clip(rng.normal(0.0, jitter_std), -3 * jitter_std, 3 * jitter_std))
            speed = float(np.clip(speed + jitter, MIN_SPEED, MAX_SPEED))
        out.append(replace(s, position=float(pos), speed=speed))
    return out


def depart(states, prob, rng):
    """Split ``states`` into (staying, leaving); each leaves with probability ``prob``.

    Off by default in the reference scenario (``prob = 0``).
    """
    if not 0 <= prob <= 1:
        raise ConfigurationError("must lie in [0, 1]", field="mobility.departure_prob")
    if prob == 0:
        return list(states), []
    stay, leave = [], []
    for s in states:
        (leave if rng.random() < prob else stay).append(s)
    return stay, leave


def ring_distance(a, b, track_length):
    d = abs(a - b) % track_length
    return min(d, track_length - d)


def neighbors(states, channel, track_length=4000.0):
    """Symmetric, irreflexive disk adjacency: id -> set of neighbor ids."""
    adj = {s.id: set() for s in states}
    for i, a in enumerate(states):
        for b in states[i + 1 :]:
            if ring_distance(a.position, b.position, track_length) <= channel.comm_range:
                adj[a.id].add(b.id)
                adj[b.id].add(a.id)
    return adj


def avg_relative_speed(state, neighbor_states):
    if not neighbor_states:
        return 0.0
    return float(np.mean([abs(state.velocity - n.velocity) for n in neighbor_states]))


def transmit(message, sender, receiver, channel, rng, adjacency=None):
    """Deliver or drop one message according to the sender's drop probability.

    ``receiver`` is a VehicleState (V2V, must be a neighbor) or :data:`EPC`.
    """
    receiver_id = receiver if receiver == EPC else receiver.id
    if receiver_id == sender.id:
        raise ContractViolation("sender and receiver are the same vehicle")
    if receiver_id != EPC:
        if adjacency is None or receiver_id not in adjacency.get(sender.id, ()):
            raise ContractViolation(f"vehicle {sender.id} cannot reach {receiver_id} in one hop")
    if sender.drop_prob > 0 and rng.random() < sender.drop_prob:
        return Delivery.DROPPED
    return Delivery.DELIVERED


class Channel:
    """Message channel whose outcomes depend only on (seed, sequence number)."""

    def __init__(self, model: ChannelModel, seed: int):
        self.model = model
        self.seed = seed
        self.seq = 0
        self.sent = 0
        self.dropped = 0

    def send(self, message, sender, receiver, adjacency=None):
        rng = seeding.stream(self.seed, "channel", self.seq)
        self.seq += 1
        outcome = transmit(message, sender, receiver, self.model, rng, adjacency)
        self.sent += 1
        if outcome is Delivery.DROPPED:
            self.dropped += 1
        return outcome


def trace_rows(states, round):
    for s in sorted(states, key=lambda v: v.id):
        yield (round, s.id, f"{s.position:.3f}", s.lane, f"{s.speed:.3f}")
