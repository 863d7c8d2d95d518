"""Attacker and unreliable-vehicle roles, and the additive Gaussian noise attack."""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


class AttackKind(enum.Enum):
    SINGLE_ROUND = "single"
    CONTINUOUS = "continuous"


@dataclass(frozen=True)
class AttackPolicy:
    kind: AttackKind = AttackKind.CONTINUOUS
    start_round: int = 10
    noise_mean: float = 0.0
    noise_var: float = 0.1  # variance; the noise std is sqrt(noise_var)

    def __post_init__(self):
        if self.noise_var < 0:
            raise ConfigurationError("must be >= 0", field="attack.noise_var")
        if self.start_round < 1:
            raise ConfigurationError("must be >= 1", field="attack.start_round")


@dataclass(frozen=True)
class RoleMap:
    attackers: frozenset
    unreliable: frozenset
    drop_prob: float

    def drop_prob_of(self, vid):
        return self.drop_prob if vid in self.unreliable else 0.0

    def as_dict(self):
        return {
            "attackers": sorted(self.attackers),
            "unreliable": sorted(self.unreliable),
            "drop_prob": self.drop_prob,
        }


def assign_roles(vehicle_ids, attacker_fraction, unreliable_fraction, drop_prob, seed, overlap=False):
    """Pick floor(fraction * N) attackers and unreliable vehicles uniformly.

    The two sets are disjoint unless ``overlap`` is set.
    """
    ids = sorted(vehicle_ids)
    for name, f in (("attacker_fraction", attacker_fraction), ("unreliable_fraction", unreliable_fraction)):
        if not 0 <= f <= 1:
            raise ConfigurationError("must lie in [0, 1]", field=f"adversary.{name}")
    if not overlap and attacker_fraction + unreliable_fraction > 1:
        raise ConfigurationError("fractions sum above 1", field="adversary.unreliable_fraction")
    if not 0 <= drop_prob < 1:
        raise ConfigurationError("must lie in [0, 1)", field="adversary.drop_prob")
    rng = np.random.default_rng(seed)
    n = len(ids)
    n_att = math.floor(attacker_fraction * n + 1e-9)
    n_unr = math.floor(unreliable_fraction * n + 1e-9)
    perm = [ids[i] for i in rng.permutation(n)]
    attackers = frozenset(perm[:n_att])
    if overlap:
        unreliable = frozenset(ids[i] for i in rng.permutation(n)[:n_unr])
    else:
        unreliable = frozenset(perm[n_att : n_att + n_unr])
    return RoleMap(attackers, unreliable, float(drop_prob))


def attack_active(policy, round) -> bool:
    if policy is None:
        return False
    if policy.kind is AttackKind.SINGLE_ROUND:
        return round == policy.start_round
    return round >= policy.start_round


def poison(vector, policy, rng):
    """Return a noisy copy of ``vector``; the input is never modified."""
    values = np.asarray(getattr(vector, "values", vector), dtype=np.float64)
    noise = rng.normal(policy.noise_mean, math.sqrt(policy.noise_var), size=values.shape)
    out = values + noise
    if dataclasses.is_dataclass(vector):
        return dataclasses.replace(vector, values=out)
    return out
