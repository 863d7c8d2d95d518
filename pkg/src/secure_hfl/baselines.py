"""Comparison arms: the CosDefense filter and the flat (no clustering) topology."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .clustering import CM, ClusterAssignment
from .errors import ConfigurationError
from .mobility import EPC
from .model import cosine_similarity

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CosDefenseConfig:
    deviation_multiplier: float = 1.0

    def __post_init__(self):
        if self.deviation_multiplier < 0:
            raise ConfigurationError("must be >= 0", field="cosdefense.deviation_multiplier")


def cosdefense_scores(global_model, updates):
    lo, hi = global_model.last_layer_range
    ref = global_model.values[lo:hi]
    return {cid: cosine_similarity(ref, getattr(u, "values", u)[lo:hi]) for cid, u in updates.items()}


def cosdefense_filter(global_model, updates, config=CosDefenseConfig()):
    """Split clients into (kept, excluded) by last-layer cosine score.

    A client is excluded when its score exceeds mean + multiplier * std of the
    round's scores (population std). Fewer than two updates leaves the filter
    inert. Unscorable (zero) updates are excluded.
    """
    ids = sorted(updates)
    if len(ids) < 2:
        logger.debug("cosdefense inert with %d update(s)", len(ids))
        return ids, []
    scores = cosdefense_scores(global_model, updates)
    excluded = [c for c in ids if scores[c] is None]
    valid = [c for c in ids if scores[c] is not None]
    if len(valid) < 2:
        return valid, excluded
    vals = np.array([scores[c] for c in valid])
    cut = vals.mean() + config.deviation_multiplier * vals.std()
    kept = []
    for c in valid:
        (excluded if scores[c] > cut + 1e-12 else kept).append(c)
    return kept, sorted(excluded)


def no_clustering_topology(vehicles) -> ClusterAssignment:
    """Every vehicle is a direct client of the EPC; no vehicle is a CH."""
    ids = sorted(getattr(v, "id", v) for v in vehicles)
    return ClusterAssignment(
        role={v: CM for v in ids},
        head_of={v: EPC for v in ids},
        members={EPC: set(ids)},
    )
