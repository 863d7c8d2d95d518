"""Reliability bookkeeping, client selection and cosine anomaly detection.

Each evaluator (a cluster head for its members, the EPC for cluster heads)
keeps one :class:`ReliabilityRecord` per vehicle. A round of evaluation:

1. every vehicle under the evaluator's view has its round counter advanced;
2. records are ranked by reliability score and the top share selected
   (cluster-head tier only);
3. each selected vehicle goes through the block check, then the cosine test
   of its new contribution against its previous accepted one;
4. benign contributions are accepted, scored on the validation split and
   folded into the counters; anomalous ones block the sender.

The reliability score is always recomputed from the raw counters, so the
cached value can never drift from the formula.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError
from .model import cosine_similarity


class Decision(enum.Enum):
    PARTICIPATE = "participate"
    SKIP = "skip"


class Verdict(enum.Enum):
    BENIGN = "benign"
    ANOMALOUS = "anomalous"


@dataclass
class SecurityConfig:
    accuracy_weight: float = 1.0
    frequency_weight: float = 1.0
    anomaly_weight: float = 1.0
    selected_client_percentage: float = 0.75
    unblock_time: int = 5
    similarity_threshold: float = 0.5

    def __post_init__(self):
        weights = (self.accuracy_weight, self.frequency_weight, self.anomaly_weight)
        if min(weights) < 0 or max(weights) <= 0:
            raise ConfigurationError("weights must be >= 0 with at least one > 0", field="security.weights")
        if not 0 < self.selected_client_percentage <= 1:
            raise ConfigurationError("must lie in (0, 1]", field="security.selected_client_percentage")
        if self.unblock_time < 0:
            raise ConfigurationError("must be >= 0", field="security.unblock_time")


@dataclass
class ReliabilityRecord:
    vehicle: int
    total_accuracy: float = 0.0
    total_contributions: int = 0
    total_anomalous: int = 0
    block_flag: bool = False
    block_duration: int = 0
    last_update: Optional[np.ndarray] = field(default=None, repr=False)
    reliability_score: float = 0.0
    rounds_observed: int = 0

    def counters(self):
        """Everything except the stored vector, for equality checks and logs."""
        return (
            self.vehicle,
            self.total_accuracy,
            self.total_contributions,
            self.total_anomalous,
            self.block_flag,
            self.block_duration,
            self.reliability_score,
            self.rounds_observed,
        )


@dataclass(frozen=True)
class SecurityEvent:
    round: int
    tier: str  # "CH" or "EPC"
    evaluator: int  # CH id, or -1 for the EPC
    vehicle: int
    kind: str  # selected | unselected | skip | unblock | missed | flag | accept
    similarity: Optional[float] = None


@dataclass
class RoundOutcome:
    accepted: dict  # vehicle id -> accepted vector
    selected: list
    flagged: list
    skipped: list
    missed: list
    events: list


def historical_accuracy(record) -> float:
    if record.rounds_observed <= 0:
        return 0.0
    return record.total_accuracy / record.rounds_observed


def contribution_freq(record) -> float:
    if record.rounds_observed <= 0:
        return 0.0
    return record.total_contributions / record.rounds_observed


def anomaly_record(record) -> float:
    if record.rounds_observed <= 0:
        return 0.0
    return record.total_anomalous / record.rounds_observed


def reliability_score(record, config) -> float:
    """Weighted accuracy plus frequency minus anomaly rate; stored on the record."""
    score = (
        config.accuracy_weight * historical_accuracy(record)
        + config.frequency_weight * contribution_freq(record)
        - config.anomaly_weight * anomaly_record(record)
    )
    record.reliability_score = score
    return score


def select_clients(records, config) -> list:
    """Top ``ceil(pct * N)`` vehicle ids (at least one) by score, ties to lower id."""
    records = list(records)
    if not records:
        return []
    ranked = sorted(records, key=lambda r: (-r.reliability_score, r.vehicle))
    n = max(1, math.ceil(config.selected_client_percentage * len(ranked) - 1e-9))
    return [r.vehicle for r in ranked[:n]]


def check_block(record, config) -> Decision:
    if record.block_flag:
        if record.block_duration < config.unblock_time:
            record.block_duration += 1
            return Decision.SKIP
        record.block_flag = False
        record.block_duration = 0
    return Decision.PARTICIPATE


def similarity_to_previous(current, previous):
    if previous is None:
        return None
    return cosine_similarity(current, previous)


def anomaly_test(current, previous, config) -> Verdict:
    """Anomalous iff cos(current, previous) < threshold, or the cosine is undefined.

    Without a previous contribution the first one is trusted as a baseline.
    """
    if previous is None:
        return Verdict.BENIGN
    sim = cosine_similarity(current, previous)
    if sim is None or sim < config.similarity_threshold:
        return Verdict.ANOMALOUS
    return Verdict.BENIGN


def _vec(v):
    return getattr(v, "values", v)


def _evaluate(
    tier,
    evaluator,
    records,
    received,
    accuracy_of: Callable[[int], float],
    round,
    config,
    selected,
    reference=None,
    fallback=None,
):
    events = []
    for rec in records.values():
        rec.rounds_observed += 1
    chosen = set(selected)
    if tier == "CH":
        for vid in sorted(records):
            kind = "selected" if vid in chosen else "unselected"
            events.append(SecurityEvent(round, tier, evaluator, vid, kind))

    out = RoundOutcome({}, list(selected), [], [], [], events)
    for vid in selected:
        rec = records[vid]
        was_blocked = rec.block_flag
        if check_block(rec, config) is Decision.SKIP:
            out.skipped.append(vid)
            events.append(SecurityEvent(round, tier, evaluator, vid, "skip"))
            continue
        if was_blocked:
            events.append(SecurityEvent(round, tier, evaluator, vid, "unblock"))
        if vid not in received:
            out.missed.append(vid)
            events.append(SecurityEvent(round, tier, evaluator, vid, "missed"))
            continue
        current = _vec(received[vid])
        previous = reference if reference is not None else rec.last_update
        probe = current
        if previous is None and fallback and vid in fallback:
            # cold start: compare the implied parameters with the model they came from
            probe, previous = (_vec(x) for x in fallback[vid])
        sim = similarity_to_previous(probe, previous)
        if anomaly_test(probe, previous, config) is Verdict.ANOMALOUS:
            rec.block_flag = True
            rec.block_duration = 0
            rec.total_anomalous += 1
            out.flagged.append(vid)
            events.append(SecurityEvent(round, tier, evaluator, vid, "flag", sim))
        else:
            rec.total_contributions += 1
            rec.total_accuracy += float(accuracy_of(vid))
            rec.last_update = np.array(current, copy=True)
            out.accepted[vid] = received[vid]
            events.append(SecurityEvent(round, tier, evaluator, vid, "accept", sim))
    for rec in records.values():
        reliability_score(rec, config)
    return out


def ch_round(records, received, accuracy_of, round, config, evaluator=-1, selected=None, fallback=None):
    """Client selection and anomaly detection at a cluster head.

    ``records`` maps every CM of the cluster to its record (mutated in place);
    ``received`` holds the updates that actually arrived this round;
    ``accuracy_of(vid)`` scores an accepted contribution on the validation split.
    ``selected`` may be precomputed with :func:`select_clients` (the harness
    does so to decide who trains); it defaults to the same rule.

    ``fallback`` maps a vehicle id to a (parameters, base parameters) pair.
    It is consulted only for a vehicle with no accepted update on record:
    instead of trusting that first update blindly, the parameters it implies
    are tested against the model they were trained from. Without an entry
    the first update is accepted as the baseline.
    """
    if selected is None:
        selected = select_clients(records.values(), config)
    return _evaluate("CH", evaluator, records, received, accuracy_of, round, config, selected, fallback=fallback)


def epc_round(records, received, accuracy_of, round, config, reference=None):
    """Anomaly detection for cluster heads at the EPC.

    No selection step: every CH in ``records`` (the current heads) is examined
    in id order. Each CH's parameters are compared with ``reference`` when
    given (the global model it last received) and otherwise with its own
    previously accepted parameters.
    """
    selected = sorted(records)
    return _evaluate("EPC", -1, records, received, accuracy_of, round, config, selected, reference)
