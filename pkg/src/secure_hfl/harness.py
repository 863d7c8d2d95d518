"""Round orchestration, convergence detection and experiment sweeps.

One communication round runs these phases in a fixed order:

    mobility -> clustering -> selection -> local training -> CM->CH uplink
    -> CH security round -> CH aggregation -> CH->EPC uplink
    -> EPC security round -> global aggregation -> broadcast

In the flat topology the EPC takes the CH role for every vehicle and the
second tier is skipped.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels, seeding
from .adversary import assign_roles, attack_active, poison
from .baselines import cosdefense_filter, no_clustering_topology
from .clustering import CH, CM, ClusterAssignment, form_clusters, maintain_clusters, suitability
from .config import ARM_ORDER, ExperimentConfig
from .errors import AggregationError
from .mobility import EPC, Channel, ChannelModel, Delivery, HelloPacket, avg_relative_speed
from .mobility import depart, neighbors, spawn_arrivals, step_mobility, trace_rows
from .model import (
    ParamVector,
    cosine_similarity,
    evaluate,
    fedavg,
    gen_dataset,
    init_model,
    load_dataset,
    local_train,
    mlp_layout,
    partition_non_iid,
)
from .security import ReliabilityRecord, ch_round, epc_round, reliability_score, select_clients

logger = logging.getLogger(__name__)

ROUNDS_HEADER = (
    "arm", "mean", "var", "round", "epc_accuracy",
    "selected", "accepted", "flagged", "blocked", "n_vehicles", "n_clusters", "churn",
)
SUMMARY_HEADER = ("arm", "mean", "var", "epsilon", "converged_round")


@dataclass
class RoundMetrics:
    round: int
    epc_accuracy: float
    cluster_accuracy: dict = field(default_factory=dict)
    selected: int = 0
    accepted: int = 0
    flagged: int = 0
    blocked: int = 0
    n_vehicles: int = 0
    n_clusters: int = 0
    churn: int = 0
    flagged_ids: list = field(default_factory=list)
    per_cluster: dict = field(default_factory=dict)  # evaluator -> (selected, accepted, flagged)


@dataclass(frozen=True)
class ConvergenceResult:
    epsilon: float
    converged_round: Optional[int]  # None means unconverged

    @property
    def converged(self):
        return self.converged_round is not None

    def render(self):
        return "inf" if self.converged_round is None else str(self.converged_round)


def detect_convergence(series, epsilon) -> ConvergenceResult:
    """First round r >= 3 whose window a[r-2..r] spans less than ``epsilon``.

    Rounds are 1-based: ``series[0]`` is round 1.
    """
    a = list(series)
    for r in range(3, len(a) + 1):
        window = a[r - 3 : r]
        if max(window) - min(window) < epsilon:
            return ConvergenceResult(epsilon, r)
    return ConvergenceResult(epsilon, None)


def _fmt(x):
    return repr(float(x)) if isinstance(x, float) else str(x)


class Simulation:
    """Mutable state of one run; call :meth:`run_round` with rounds 1, 2, ..."""

    def __init__(self, config: ExperimentConfig):
        self.config = config.validate()
        cfg = self.config
        seed = cfg.run.seed
        self.seeds = {
            name: seeding.derive_int(seed, name)
            for name in ("data", "split", "partition", "init", "roles", "mobility", "channel")
        }
        if cfg.data.path:
            self.dataset = load_dataset(cfg.data.path, self.seeds["split"], n_classes=None)
        else:
            d = cfg.data
            self.dataset = gen_dataset(d.n_classes, d.n_features, d.n_samples, d.class_separation, self.seeds["data"])
        n = cfg.mobility.n_vehicles
        self.client_data = partition_non_iid(self.dataset, n, cfg.data.shards_per_client, self.seeds["partition"])
        layout = mlp_layout(self.dataset.n_features, cfg.model.hidden, self.dataset.n_classes)
        self.global_model = init_model(layout, self.seeds["init"], scale=cfg.model.init_scale)
        self.roles = assign_roles(
            range(n),
            cfg.adversary.attacker_fraction,
            cfg.adversary.unreliable_fraction,
            cfg.adversary.drop_prob,
            self.seeds["roles"],
            overlap=cfg.adversary.overlap,
        )
        self.policy = cfg.attack.policy()
        self.mobility_rng = np.random.default_rng(self.seeds["mobility"])
        self.channel = Channel(ChannelModel(cfg.mobility.comm_range), self.seeds["channel"])

        self.vehicles = []
        self.arrived = 0  # ids are dense in arrival order; departures do not free ids
        self.departed = []  # (round, vid)
        self.adjacency = {}
        self.assignment = ClusterAssignment()
        self.held = {}  # vid -> ParamVector the vehicle trains from
        self.prev_local = {}  # vid -> previous local parameters (for HELLO)
        self.hello = {}
        self.cm_records = {}  # VIB records for the CM tier (travel with the vehicle)
        self.ch_records = {}  # EPC-side records for the CH tier
        self.history = []
        self.events = []
        self.churn_events = []
        self.trace = []
        self.cluster_log = []
        self.attack_log = []  # (round, vid, tier, delivered)
        self.first_attack = {}
        self.round = 0

    # ------------------------------------------------------------ phases

    def _mobility(self, i):
        m = self.config.mobility
        if self.vehicles:
            self.vehicles = step_mobility(self.vehicles, m.dt, self.mobility_rng, m.jitter_std, m.track_length)
            if m.departure_prob > 0:
                self.vehicles, gone = depart(self.vehicles, m.departure_prob, self.mobility_rng)
                self.departed.extend((i, v.id) for v in gone)
        new = spawn_arrivals(m.arrival_rate, i, m.n_vehicles, self.mobility_rng, self.arrived, m.track_length)
        self.arrived += len(new)
        for v in new:
            v.attacker = v.id in self.roles.attackers
            v.unreliable = v.id in self.roles.unreliable
            v.drop_prob = self.roles.drop_prob_of(v.id)
            self.held[v.id] = self.global_model
            self.cm_records[v.id] = ReliabilityRecord(v.id)
        self.vehicles.extend(new)
        self.by_id = {v.id: v for v in self.vehicles}
        self.adjacency = neighbors(self.vehicles, ChannelModel(m.comm_range), m.track_length)
        if self.config.run.verbose:
            self.trace.extend(trace_rows(self.vehicles, i))

    def _clustering(self, i):
        if self.config.topology == "none":
            self.assignment = no_clustering_topology(self.vehicles)
            return []
        scores = {}
        for v in self.vehicles:
            nbrs = [self.by_id[n] for n in self.adjacency[v.id]]
            prev = self.prev_local.get(v.id)
            sim = cosine_similarity(self.held[v.id], prev) if prev is not None else None
            self.hello[v.id] = HelloPacket(
                sender=v.id,
                direction=v.direction,
                location=v.position,
                velocity=v.velocity,
                clustering_state=self.assignment.role.get(v.id, "Free"),
                connector=self.assignment.cluster_of(v.id),
                model_similarity=0.0 if sim is None else sim,
                avg_rel_speed=avg_relative_speed(v, nbrs),
            )
        for v in self.vehicles:
            nbrs = [self.by_id[n] for n in self.adjacency[v.id]]
            scores[v.id] = suitability(v, nbrs, self.hello, self.config.mobility.alpha)
        if not self.assignment.members:
            self.assignment = form_clusters(self.adjacency, scores)
            events = []
        else:
            self.assignment, events = maintain_clusters(self.assignment, self.adjacency, scores, i)
        if self.config.run.verbose:
            for h in self.assignment.heads():
                self.cluster_log.append((i, h, " ".join(map(str, sorted(self.assignment.members[h])))))
        return events

    def _train(self, vid, i):
        cfg = self.config.training
        seed = seeding.derive_int(self.config.run.seed, "train", vid, i)
        return local_train(self.held[vid], self.client_data[vid], cfg.lr, cfg.epochs, cfg.batch_size, seed)

    def _weight(self, vid):
        if self.config.training.weighting == "uniform":
            return 1.0
        return float(len(self.client_data[vid]))

    def _attacking(self, vid, i):
        return vid in self.roles.attackers and attack_active(self.policy, i)

    def _poison(self, vec, vid, i, tier):
        rng = seeding.stream(self.config.run.seed, "poison", tier, vid, i)
        return poison(vec, self.policy, rng)

    def _val_accuracy(self, params):
        return evaluate(params, self.dataset, "validation")

    # ------------------------------------------------------------ round

    def run_round(self, i) -> RoundMetrics:
        cfg = self.config
        self.round = i
        self._mobility(i)
        churn = self._clustering(i)
        self.churn_events.extend(churn)
        if cfg.topology == "none":
            metrics, new_global = self._flat_round(i)
        else:
            metrics, new_global = self._hierarchical_round(i)
        if new_global is not None:
            self.global_model = new_global
        # broadcast: every vehicle now holds the global model
        for v in self.vehicles:
            self.prev_local[v.id] = self.held[v.id]
            self.held[v.id] = self.global_model
        metrics.epc_accuracy = evaluate(self.global_model, self.dataset, "test")
        metrics.n_vehicles = len(self.vehicles)
        metrics.churn = len(churn)
        metrics.blocked = sum(r.block_flag for r in self.cm_records.values()) + sum(
            r.block_flag for r in self.ch_records.values()
        )
        self.history.append(metrics)
        return metrics

    def _note_attack(self, i, vid, tier, delivered):
        self.attack_log.append((i, vid, tier, delivered))
        if delivered:
            self.first_attack.setdefault(vid, i)

    def _cm_tier(self, i, evaluator, members, defense, send):
        """Selection, training, uplink and vetting for one cluster's CMs.

        ``send(vid, update)`` returns True when the update reaches the
        evaluator. Returns (accepted {vid: new local params}, selected, flagged).
        """
        cfg = self.config
        records = {v: self.cm_records[v] for v in members}
        if defense == "proposed":
            selected = select_clients(records.values(), cfg.security)
        else:
            selected = sorted(members)
        received, local = {}, {}
        for vid in selected:
            if defense == "proposed" and records[vid].block_flag and records[vid].block_duration < cfg.security.unblock_time:
                continue  # blocked vehicles are told to sit the round out
            out = self._train(vid, i)
            if out is None:
                continue
            new_params, update = out
            wire = update
            if self._attacking(vid, i):
                wire = self._poison(update, vid, i, "cm")
            ok = send(vid, wire)
            if self._attacking(vid, i):
                self._note_attack(i, vid, "cm", ok)
            if ok:
                received[vid] = wire
                local[vid] = ParamVector(self.held[vid].values + wire.values, self.held[vid].layout)

        flagged = []
        if defense == "proposed":
            fallback = None
            if i > 1:
                fallback = {v: (local[v], self.held[v]) for v in received}
            outcome = ch_round(
                records, received, lambda v: self._val_accuracy(local[v]), i, cfg.security,
                evaluator=evaluator, selected=selected, fallback=fallback,
            )
            self.events.extend(outcome.events)
            accepted = {v: local[v] for v in outcome.accepted}
            flagged = outcome.flagged
        elif defense == "cosdefense":
            kept, excluded = cosdefense_filter(self.global_model, received, cfg.cosdefense)
            accepted = {v: local[v] for v in kept}
            flagged = excluded
        else:
            accepted = dict(local)
        return accepted, selected, flagged

    def _flat_round(self, i):
        cfg = self.config
        members = sorted(v.id for v in self.vehicles)

        def send(vid, msg):
            return self.channel.send(msg, self.by_id[vid], EPC) is Delivery.DELIVERED

        accepted, selected, flagged = self._cm_tier(i, EPC, members, cfg.defense, send)
        metrics = RoundMetrics(i, 0.0, n_clusters=1)
        metrics.selected = len(selected)
        metrics.accepted = len(accepted)
        metrics.flagged = len(flagged)
        metrics.flagged_ids = sorted(flagged)
        metrics.per_cluster[EPC] = (len(selected), len(accepted), len(flagged))
        new_global = None
        if accepted and i % cfg.run.epc_period == 0:
            new_global = fedavg([(accepted[v], self._weight(v)) for v in sorted(accepted)])
        return metrics, new_global

    def _hierarchical_round(self, i):
        cfg = self.config
        defense = cfg.defense
        metrics = RoundMetrics(i, 0.0, n_clusters=len(self.assignment.members))
        cluster_models, cluster_weight, cluster_members = {}, {}, {}
        for h in self.assignment.heads():
            members = sorted(self.assignment.members[h])

            def send(vid, msg, h=h):
                return self.channel.send(msg, self.by_id[vid], self.by_id[h], self.adjacency) is Delivery.DELIVERED

            accepted, selected, flagged = self._cm_tier(i, h, members, defense, send)
            own = self._train(h, i)
            contributions = [(accepted[v], self._weight(v)) for v in sorted(accepted)]
            if own is not None:
                contributions.insert(0, (own[0], self._weight(h)))
            metrics.selected += len(selected) + 1
            metrics.flagged += len(flagged)
            metrics.flagged_ids.extend(flagged)
            metrics.per_cluster[h] = (len(selected), len(accepted), len(flagged))
            try:
                theta = fedavg(contributions)
            except AggregationError:
                theta = self.held[h]
            cluster_models[h] = theta
            cluster_weight[h] = sum(w for _, w in contributions) or 1.0
            cluster_members[h] = [v for v in sorted(accepted)] + ([h] if own is not None else [])
            metrics.cluster_accuracy[h] = None

        if i % cfg.run.epc_period != 0:
            # no EPC aggregation this round: members keep their cluster model
            for h, theta in cluster_models.items():
                for v in [h, *self.assignment.members[h]]:
                    self.held[v] = theta
            return metrics, None

        received = {}
        for h, theta in cluster_models.items():
            wire = theta
            if self._attacking(h, i):
                wire = self._poison(theta, h, i, "ch")
            ok = self.channel.send(wire, self.by_id[h], EPC) is Delivery.DELIVERED
            if self._attacking(h, i):
                self._note_attack(i, h, "ch", ok)
            if ok:
                received[h] = wire

        if defense == "proposed":
            records = {h: self.ch_records.setdefault(h, ReliabilityRecord(h)) for h in cluster_models}
            reference = None
            if cfg.run.epc_reference == "global" and i > 1:
                reference = self.global_model.values
            outcome = epc_round(records, received, lambda h: self._val_accuracy(received[h]), i, cfg.security, reference)
            self.events.extend(outcome.events)
            accepted_heads = sorted(outcome.accepted)
            metrics.flagged += len(outcome.flagged)
            metrics.flagged_ids.extend(outcome.flagged)
        elif defense == "cosdefense":
            updates = {h: received[h].values - self.global_model.values for h in received}
            kept, excluded = cosdefense_filter(self.global_model, updates, cfg.cosdefense)
            accepted_heads = kept
            metrics.flagged += len(excluded)
        else:
            accepted_heads = sorted(received)
        metrics.accepted = sum(len(cluster_members[h]) for h in accepted_heads)
        metrics.flagged_ids = sorted(metrics.flagged_ids)
        for h in cluster_models:
            if h in received:
                metrics.cluster_accuracy[h] = self._val_accuracy(received[h])
        if not accepted_heads:
            return metrics, None
        return metrics, fedavg([(received[h], cluster_weight[h]) for h in accepted_heads])

    # ------------------------------------------------------------ driver

    def run(self, rounds=None):
        rounds = rounds or self.config.run.max_rounds
        for i in range(self.round + 1, rounds + 1):
            self.run_round(i)
        return self.history

    def accuracy_series(self):
        return [m.epc_accuracy for m in self.history]


# ---------------------------------------------------------------- experiments


@dataclass
class RunResult:
    arm: str
    mean: float
    var: float
    history: list
    convergence: list
    manifest: dict
    simulation: Optional[Simulation] = field(default=None, repr=False)

    def accuracy_series(self):
        return [m.epc_accuracy for m in self.history]

    def summary_rows(self):
        return [(self.arm, self.mean, self.var, c.epsilon, c.render()) for c in self.convergence]

    def round_rows(self):
        return [
            (self.arm, self.mean, self.var, m.round, m.epc_accuracy, m.selected, m.accepted,
             m.flagged, m.blocked, m.n_vehicles, m.n_clusters, m.churn)
            for m in self.history
        ]


def arm_name(config):
    attacked = config.attack.enabled
    if config.topology == "cbhfl":
        base = f"cbhfl+{config.defense}"
        return base if attacked else "cbhfl+noattack" if config.defense == "proposed" else base + "+noattack"
    name = "cosdefense" if config.defense == "cosdefense" else f"noclustering+{config.defense}"
    return name if attacked else name + "+noattack"


def run_single(config, arm=None, keep_simulation=False) -> RunResult:
    sim = Simulation(config)
    sim.run()
    series = sim.accuracy_series()
    conv = [detect_convergence(series, e) for e in config.run.epsilons]
    manifest = {
        "config": config.to_dict(),
        "roles": sim.roles.as_dict(),
        "seeds": sim.seeds,
        "backend": kernels.BACKEND,
    }
    return RunResult(
        arm or arm_name(config),
        float(config.attack.mean),
        float(config.attack.var),
        sim.history,
        conv,
        manifest,
        sim if keep_simulation else None,
    )


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_outputs(results, out_dir, extra_manifest=None):
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "rounds.csv"), ROUNDS_HEADER, [r for res in results for r in res.round_rows()])
    _write_csv(os.path.join(out_dir, "summary.csv"), SUMMARY_HEADER, [r for res in results for r in res.summary_rows()])
    manifest = {"runs": [{"arm": r.arm, "mean": r.mean, "var": r.var, **r.manifest} for r in results]}
    if extra_manifest:
        manifest.update(extra_manifest)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    for res in results:
        sim = res.simulation
        if sim is None or not sim.config.run.verbose:
            continue
        tag = f"{res.arm}_m{res.mean:g}_v{res.var:g}"
        _write_csv(os.path.join(out_dir, f"trace_{tag}.csv"), ("round", "vehicle", "position", "lane", "speed"), sim.trace)
        _write_csv(os.path.join(out_dir, f"clusters_{tag}.csv"), ("round", "head", "members"), sim.cluster_log)
        _write_csv(
            os.path.join(out_dir, f"events_{tag}.csv"),
            ("round", "tier", "evaluator", "vehicle", "kind", "similarity"),
            [(e.round, e.tier, e.evaluator, e.vehicle, e.kind, "" if e.similarity is None else e.similarity) for e in sim.events],
        )


def run_experiment(config, out_dir=None) -> RunResult:
    """Run one configured arm and optionally write rounds/summary/manifest."""
    config.validate()
    result = run_single(config, keep_simulation=config.run.verbose)
    if out_dir is not None:
        write_outputs([result], out_dir)
    return result


def run_grid(config, out_dir=None, progress=None):
    """Sweep means x vars x arms; the no-attack arm runs once and is reused."""
    config.validate()
    results = []
    cache = {}
    for mean in config.grid.means:
        for var in config.grid.vars:
            for arm in config.grid.arms:
                cfg = config.with_arm(arm, mean, var)
                key = ("noattack", arm) if not cfg.attack.enabled else (arm, mean, var)
                if key not in cache:
                    cache[key] = run_single(cfg, arm, keep_simulation=config.run.verbose)
                    if progress:
                        progress(arm, mean, var, cache[key])
                base = cache[key]
                results.append(
                    RunResult(arm, float(mean), float(var), base.history, base.convergence, base.manifest, base.simulation)
                )
    if out_dir is not None:
        write_outputs(results, out_dir)
    return results


# ---------------------------------------------------------------- comparison


def read_summary(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _as_round(value):
    if value in (None, "", "inf"):
        return math.inf
    return int(value)


def compare_arms(summaries, proposed="cbhfl+proposed", baselines=("noclustering+proposed", "cosdefense")):
    """Per grid cell, rank arms by convergence round (unconverged = inf) and
    check that ``proposed`` is no slower than each baseline.

    ``summaries`` is an iterable of dicts or tuples with arm, mean, var,
    epsilon, converged_round.
    """
    cells = {}
    for row in summaries:
        if not isinstance(row, dict):
            row = dict(zip(SUMMARY_HEADER, row))
        key = (float(row["mean"]), float(row["var"]), float(row["epsilon"]))
        cells.setdefault(key, {})[row["arm"]] = _as_round(row["converged_round"])
    report = {"cells": [], "violations": 0, "incomparable": 0}
    for key in sorted(cells):
        arms = cells[key]
        cell = {
            "mean": key[0], "var": key[1], "epsilon": key[2],
            "ranking": sorted(arms, key=lambda a: (arms[a], ARM_ORDER.index(a) if a in ARM_ORDER else 99)),
            "rounds": dict(arms),
            "checks": {},
            "comparable": proposed in arms and all(b in arms for b in baselines),
        }
        if not cell["comparable"]:
            report["incomparable"] += 1
        else:
            for b in baselines:
                ok = arms[proposed] <= arms[b]
                cell["checks"][b] = ok
                if not ok:
                    report["violations"] += 1
        report["cells"].append(cell)
    # mean convergence round per arm over converged cells; unconverged counted apart
    stats = {}
    for arms in cells.values():
        for arm, r in arms.items():
            stats.setdefault(arm, []).append(r)
    report["arm_stats"] = {
        arm: {
            "mean_round": float(np.mean([r for r in rs if not math.isinf(r)])) if any(not math.isinf(r) for r in rs) else None,
            "converged": sum(not math.isinf(r) for r in rs),
            "unconverged": sum(math.isinf(r) for r in rs),
        }
        for arm, rs in sorted(stats.items())
    }
    return report


def format_report(report):
    buf = io.StringIO()
    buf.write("mean,var,epsilon,ranking,cbhfl_ok,violations\n")
    for c in report["cells"]:
        rank = " < ".join(
            f"{a}({'inf' if math.isinf(c['rounds'][a]) else c['rounds'][a]})" for a in c["ranking"]
        )
        status = "incomparable" if not c["comparable"] else str(all(c["checks"].values()))
        buf.write(f"{c['mean']:g},{c['var']:g},{c['epsilon']:g},{rank},{status},"
                  f"{sum(not ok for ok in c['checks'].values())}\n")
    for arm, st in report.get("arm_stats", {}).items():
        mean = "n/a" if st["mean_round"] is None else f"{st['mean_round']:.1f}"
        buf.write(f"{arm}: mean converged round {mean} over {st['converged']} cells, {st['unconverged']} unconverged\n")
    buf.write(f"total violations: {report['violations']}, incomparable cells: {report['incomparable']}\n")
    return buf.getvalue()
