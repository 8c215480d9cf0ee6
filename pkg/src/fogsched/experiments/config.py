"""Experiment configuration: YAML schema, defaults and validation.

A config file describes the fleet, the network between servers, the synthetic
workload, the optimization objective and per-algorithm hyperparameters. Every
field except the fleet is optional; omitted fields take the reference defaults
baked into the respective dataclasses. Validation errors name the offending
field path, and capacity or weight violations carry their constraint id (C3,
C6) so they can be grepped out of batch logs.

Network links may be given either as full matrices or as the ``links``
shorthand keyed by server-kind pairs ("fog-fog", "cloud-fog", ...), which is
how the shipped fleet files are written.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from ..baselines import DqnConfig, Nsga2Config, QLearningConfig
from ..domain import CostWeights, NetworkModel, ServerSpec, validate_fleet
from ..ppo import PpoHyper
from ..simulator import WorkloadProfile

OBJECTIVES = ("load_balance", "response_time", "weighted")
ALGORITHMS = ("ppo", "qlearning", "dqn", "nsga2")


class ConfigError(ValueError):
    """Malformed or invalid experiment configuration."""


def _err(path: str, msg: str) -> "ConfigError":
    return ConfigError(f"{path}: {msg}")


@dataclass
class ExperimentConfig:
    """Everything a training, evaluation or overhead run needs.

    ``seeds`` are independent replications; ``updates`` is the policy-update
    budget of one run. ``eval_scale`` shrinks or grows task sizes for the
    evaluation workload (the analog of changing the input detail level).
    """

    fleet: List[ServerSpec]
    network: NetworkModel
    profile: WorkloadProfile = field(default_factory=WorkloadProfile)
    objective: str = "weighted"
    weights: CostWeights = field(default_factory=CostWeights)
    algorithm: str = "ppo"
    ppo: PpoHyper = field(default_factory=PpoHyper)
    qlearning: QLearningConfig = field(default_factory=QLearningConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    nsga2: Nsga2Config = field(default_factory=Nsga2Config)
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    updates: int = 100
    eval_scale: float = 0.5
    eval_updates: int = 20

    def validate(self) -> None:
        if not self.fleet:
            raise _err("fleet", "must list at least one server")
        for i, s in enumerate(self.fleet):
            if s.cpu_freq_mhz <= 0:
                raise _err(f"fleet[{i}].cpu_freq_mhz", "must be positive (C3)")
            if s.ram_size_gb <= 0:
                raise _err(f"fleet[{i}].ram_size_gb", "must be positive (C3)")
            if s.cpu_cores < 1:
                raise _err(f"fleet[{i}].cpu_cores", "must be at least 1 (C3)")
        bad = validate_fleet(self.fleet)
        if bad:
            raise _err("fleet", "; ".join(v.message for v in bad))

        bw, prop = self.network.bandwidth_mbps, self.network.propagation_ms
        n = len(self.fleet)
        if bw.shape != (n, n):
            raise _err("network.bandwidth_mbps", f"must be {n}x{n}, got {bw.shape}")
        if prop.shape != (n, n):
            raise _err("network.propagation_ms", f"must be {n}x{n}, got {prop.shape}")
        try:
            self.network.validate()
        except ValueError as exc:
            raise _err("network", str(exc)) from exc

        for name, value in (("a1", self.weights.a1), ("a2", self.weights.a2),
                            ("w1", self.weights.w1), ("w2", self.weights.w2)):
            if not 0.0 <= value <= 1.0:
                raise _err(f"weights.{name}", "must lie in [0, 1] (C6)")
        if not math.isclose(self.weights.a1 + self.weights.a2, 1.0, rel_tol=1e-9):
            raise _err("weights", "a1 + a2 must equal 1")
        if not math.isclose(self.weights.w1 + self.weights.w2, 1.0, rel_tol=1e-9):
            raise _err("weights", "w1 + w2 must equal 1 (C6)")

        if self.objective not in OBJECTIVES:
            raise _err("objective", f"must be one of {OBJECTIVES}")
        if self.algorithm not in ALGORITHMS:
            raise _err("algorithm", f"must be one of {ALGORITHMS}")
        if not self.seeds:
            raise _err("seeds", "must be nonempty")
        if any(int(s) != s for s in self.seeds):
            raise _err("seeds", "must be integers")
        if self.updates < 1:
            raise _err("updates", "must be at least 1")
        if self.eval_updates < 1:
            raise _err("eval.updates", "must be at least 1")
        if self.eval_scale <= 0:
            raise _err("eval.scale", "must be positive")

        p = self.profile
        if p.apps_per_episode < 1:
            raise _err("workload.apps_per_episode", "must be at least 1")
        for name, (lo, hi) in (("tasks_per_app", p.tasks_per_app),
                               ("dag_width", p.dag_width),
                               ("size_mcycles", p.size_mcycles),
                               ("ram_demand_gb", p.ram_demand_gb),
                               ("cpu_demand", p.cpu_demand),
                               ("packet_mb", p.packet_mb)):
            if lo <= 0 or hi < lo:
                raise _err(f"workload.{name}", "needs 0 < lo <= hi")
        if p.arrival_mode not in ("fixed", "poisson"):
            raise _err("workload.arrival.mode", "must be fixed or poisson")
        if p.arrival_mode == "poisson" and not p.arrival_rate_per_s:
            raise _err("workload.arrival.rate_per_s", "required for poisson arrivals")


# ---------------------------------------------------------------------------
# dict <-> dataclass plumbing
# ---------------------------------------------------------------------------

_KINDS_KEY = "links"


def _pair_key(kind_a: str, kind_b: str) -> str:
    return "-".join(sorted((kind_a, kind_b)))


def _network_from_links(fleet: Sequence[ServerSpec], links: Dict[str, Any]) -> NetworkModel:
    n = len(fleet)
    bw = np.zeros((n, n))
    prop = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            key = _pair_key(fleet[i].kind, fleet[j].kind)
            if key not in links:
                raise _err(f"network.links.{key}", "missing kind pair")
            entry = links[key]
            try:
                bw[i, j] = float(entry["bandwidth_mbps"])
                prop[i, j] = float(entry["propagation_ms"])
            except (KeyError, TypeError) as exc:
                raise _err(f"network.links.{key}",
                           "needs bandwidth_mbps and propagation_ms") from exc
    return NetworkModel(bw, prop)


def _build_dataclass(cls, d: Dict[str, Any], path: str, tuple_fields=()):
    known = set(cls.__dataclass_fields__)
    for key in d:
        if key not in known:
            raise _err(f"{path}.{key}", "unknown field")
    kwargs = dict(d)
    for key in tuple_fields:
        if key in kwargs and kwargs[key] is not None:
            kwargs[key] = tuple(kwargs[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise _err(path, str(exc)) from exc


def config_from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    known = {"fleet", "network", "workload", "objective", "weights",
             "algorithm", "seeds", "updates", "eval", "hyper"}
    for key in raw:
        if key not in known:
            raise _err(key, "unknown field")

    fleet_raw = raw.get("fleet")
    if not isinstance(fleet_raw, list) or not fleet_raw:
        raise _err("fleet", "must be a nonempty list of servers")
    fleet = []
    for i, entry in enumerate(fleet_raw):
        if not isinstance(entry, dict):
            raise _err(f"fleet[{i}]", "must be a mapping")
        spec = dict(entry)
        spec.setdefault("id", i)
        spec.setdefault("kind", "fog")
        fleet.append(_build_dataclass(ServerSpec, spec, f"fleet[{i}]"))

    net_raw = raw.get("network")
    if not isinstance(net_raw, dict):
        raise _err("network", "must be a mapping")
    if _KINDS_KEY in net_raw:
        network = _network_from_links(fleet, net_raw[_KINDS_KEY])
    else:
        try:
            network = NetworkModel(np.asarray(net_raw["bandwidth_mbps"], dtype=float),
                                   np.asarray(net_raw["propagation_ms"], dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            raise _err("network", "needs links or explicit matrices") from exc

    profile = _build_dataclass(
        WorkloadProfile, _workload_fields(raw.get("workload", {})), "workload",
        tuple_fields=("tasks_per_app", "dag_width", "size_mcycles",
                      "ram_demand_gb", "cpu_demand", "packet_mb"))

    weights = _build_dataclass(CostWeights, raw.get("weights", {}), "weights")

    hyper = raw.get("hyper", {})
    if not isinstance(hyper, dict):
        raise _err("hyper", "must be a mapping")
    for key in hyper:
        if key not in ALGORITHMS:
            raise _err(f"hyper.{key}", "unknown algorithm")

    eval_raw = raw.get("eval", {})
    if not isinstance(eval_raw, dict):
        raise _err("eval", "must be a mapping")
    for key in eval_raw:
        if key not in ("scale", "updates"):
            raise _err(f"eval.{key}", "unknown field")

    cfg = ExperimentConfig(
        fleet=fleet,
        network=network,
        profile=profile,
        objective=raw.get("objective", "weighted"),
        weights=weights,
        algorithm=raw.get("algorithm", "ppo"),
        ppo=_build_dataclass(PpoHyper, hyper.get("ppo", {}), "hyper.ppo"),
        qlearning=_build_dataclass(QLearningConfig, hyper.get("qlearning", {}),
                                   "hyper.qlearning"),
        dqn=_build_dataclass(DqnConfig, hyper.get("dqn", {}), "hyper.dqn"),
        nsga2=_build_dataclass(Nsga2Config, hyper.get("nsga2", {}), "hyper.nsga2"),
        seeds=list(raw.get("seeds", [0, 1, 2, 3, 4])),
        updates=int(raw.get("updates", 100)),
        eval_scale=float(eval_raw.get("scale", 0.5)),
        eval_updates=int(eval_raw.get("updates", 20)),
    )
    cfg.validate()
    return cfg


def _workload_fields(raw: Dict[str, Any]) -> Dict[str, Any]:
    if not isinstance(raw, dict):
        raise _err("workload", "must be a mapping")
    out = dict(raw)
    arrival = out.pop("arrival", None)
    if arrival is not None:
        if not isinstance(arrival, dict):
            raise _err("workload.arrival", "must be a mapping")
        for key in arrival:
            if key not in ("mode", "interval_ms", "rate_per_s"):
                raise _err(f"workload.arrival.{key}", "unknown field")
        out["arrival_mode"] = arrival.get("mode", "fixed")
        out["arrival_interval_ms"] = arrival.get("interval_ms")
        out["arrival_rate_per_s"] = arrival.get("rate_per_s")
    return out


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Plain-data mirror of the config, suitable for YAML and for equality
    checks (the dataclass itself holds numpy arrays)."""
    p = cfg.profile
    return {
        "fleet": [{"id": s.id, "cpu_cores": s.cpu_cores,
                   "cpu_freq_mhz": s.cpu_freq_mhz, "ram_size_gb": s.ram_size_gb,
                   "kind": s.kind} for s in cfg.fleet],
        "network": {
            "bandwidth_mbps": cfg.network.bandwidth_mbps.tolist(),
            "propagation_ms": cfg.network.propagation_ms.tolist(),
        },
        "workload": {
            "apps_per_episode": p.apps_per_episode,
            "tasks_per_app": list(p.tasks_per_app),
            "dag_width": list(p.dag_width),
            "size_mcycles": list(p.size_mcycles),
            "ram_demand_gb": list(p.ram_demand_gb),
            "cpu_demand": list(p.cpu_demand),
            "packet_mb": list(p.packet_mb),
            "arrival": {"mode": p.arrival_mode,
                        "interval_ms": p.arrival_interval_ms,
                        "rate_per_s": p.arrival_rate_per_s},
        },
        "objective": cfg.objective,
        "weights": {"a1": cfg.weights.a1, "a2": cfg.weights.a2,
                    "w1": cfg.weights.w1, "w2": cfg.weights.w2},
        "algorithm": cfg.algorithm,
        "seeds": list(cfg.seeds),
        "updates": cfg.updates,
        "eval": {"scale": cfg.eval_scale, "updates": cfg.eval_updates},
        "hyper": {
            "ppo": {k: getattr(cfg.ppo, k) for k in cfg.ppo.__dataclass_fields__},
            "qlearning": {k: getattr(cfg.qlearning, k)
                          for k in cfg.qlearning.__dataclass_fields__},
            "dqn": {k: getattr(cfg.dqn, k) for k in cfg.dqn.__dataclass_fields__},
            "nsga2": {k: getattr(cfg.nsga2, k)
                      for k in cfg.nsga2.__dataclass_fields__},
        },
    }


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return config_from_dict(raw or {})


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)


# ---------------------------------------------------------------------------
# Reference environment
# ---------------------------------------------------------------------------

def reference_fleet() -> List[ServerSpec]:
    """Six heterogeneous servers: three cloud-like, three fog-like."""
    return [
        ServerSpec(0, 2, 2000.0, 9.0, "cloud"),
        ServerSpec(1, 16, 2000.0, 64.0, "cloud"),
        ServerSpec(2, 2, 2200.0, 4.0, "cloud"),
        ServerSpec(3, 4, 1200.0, 1.0, "fog"),
        ServerSpec(4, 8, 3200.0, 16.0, "fog"),
        ServerSpec(5, 2, 3100.0, 4.0, "fog"),
    ]


def reference_config() -> ExperimentConfig:
    """The shipped reference environment: any link touching a cloud server is
    a WAN hop (15 ms, 6 MB/s), fog-to-fog links are LAN (3 ms, 25 MB/s).

    The workload keeps per-task cpu and ram demands fixed so that placement
    quality is decided by where the heterogeneous task sizes land, and keeps
    the stream dense enough (12 apps, 400 ms apart) that greedy choices
    collide on the busy servers.
    """
    fleet = reference_fleet()
    links = {
        "cloud-cloud": {"bandwidth_mbps": 6.0, "propagation_ms": 15.0},
        "cloud-fog": {"bandwidth_mbps": 6.0, "propagation_ms": 15.0},
        "fog-fog": {"bandwidth_mbps": 25.0, "propagation_ms": 3.0},
    }
    profile = WorkloadProfile(
        apps_per_episode=12,
        tasks_per_app=(4, 4),
        dag_width=(2, 3),
        size_mcycles=(2000.0, 6400.0),
        ram_demand_gb=(0.65, 0.65),
        cpu_demand=(0.25, 0.25),
        packet_mb=(6.0, 6.0),
        arrival_mode="fixed",
        arrival_interval_ms=400.0,
    )
    cfg = ExperimentConfig(fleet=fleet, network=_network_from_links(fleet, links),
                           profile=profile)
    cfg.validate()
    return cfg
