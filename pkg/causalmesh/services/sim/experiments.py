"""
Experiment sweeps behind the CLI's CSV commands.

``anomaly_rates`` runs the two-function write-then-read workflow under each
mode and cluster size and reports the share of workflows whose second
function missed the first one's write. ``visibility_window`` times a single
write from its acknowledgement to its tail integration. ``abort_rates``
replays a contended TCC script at several ring capacities.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from causalmesh.errors import ConfigurationError
from causalmesh.schemas.config import (
    BaselineMode,
    PropagationMode,
    RoamingPolicy,
    SimConfig,
    WorkflowShape,
    WorkloadSpec,
)
from causalmesh.schemas.trace import EventKind
from causalmesh.services.checker.report import anomaly_rate
from causalmesh.services.sim.scenarios import ring_contention_script, run_script
from causalmesh.services.sim.simulator import measure_visibility, sim_run
from causalmesh.services.sim.workflow import FunctionSpec, OpKind, OpSpec, WorkflowDag

logger = logging.getLogger(__name__)

MODES = ("causalmesh", "tcc", "buggy", "baseline")
ANOMALY_HEADER = ("servers", "mode", "anomaly_rate")
WINDOW_HEADER = ("servers", "hops", "latency", "marginal")
ABORT_HEADER = ("capacity", "readers", "aborts", "abort_rate")


def mode_config(mode: str, **overrides) -> SimConfig:
    """SimConfig for one of the CLI's --mode names."""
    if mode == "causalmesh":
        return SimConfig(**overrides)
    if mode == "tcc":
        return SimConfig(tcc=True, **overrides)
    if mode == "buggy":
        return SimConfig(propagation_mode=PropagationMode.SINGLE_ROUND_BUGGY, **overrides)
    if mode == "baseline":
        return SimConfig(baseline_mode=BaselineMode.EVENTUAL_BASELINE, **overrides)
    raise ConfigurationError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")


@dataclass
class AnomalyRow:
    servers: int
    mode: str
    anomaly_rate: float

    def cells(self) -> List[str]:
        return [str(self.servers), self.mode, f"{self.anomaly_rate:.4f}"]


def anomaly_rates(
    servers: Iterable[int] = (1, 2, 4, 8),
    modes: Sequence[str] = ("baseline", "causalmesh"),
    requests: int = 200,
    seed: int = 0,
    key_pool_size: int = 100,
) -> List[AnomalyRow]:
    rows: List[AnomalyRow] = []
    for mode in modes:
        for n in servers:
            # Every key starts cached everywhere so a stale replica can answer a read.
            config = mode_config(
                mode,
                n=n,
                seed=seed,
                roaming_policy=RoamingPolicy.UNIFORM_RANDOM,
                preload_keys=key_pool_size,
            )
            workload = WorkloadSpec(
                shape=WorkflowShape.WRITE_THEN_READ_2FN,
                requests=requests,
                key_pool_size=key_pool_size,
                tcc=config.tcc,
                seed=seed,
            ).check()
            result = sim_run(config, workload)
            if result.fatal:
                logger.warning("%s run with n=%d ended early: %s", mode, n, result.fatal)
            rate = anomaly_rate(result.trace)
            logger.info("anomaly rate %s n=%d: %.4f", mode, n, rate)
            rows.append(AnomalyRow(servers=n, mode=mode, anomaly_rate=rate))
    return rows


@dataclass
class WindowRow:
    servers: int
    hops: int
    latency: Optional[float]
    marginal: Optional[float]

    def cells(self) -> List[str]:
        def fmt(x: Optional[float]) -> str:
            return "" if x is None else f"{x:g}"

        return [str(self.servers), str(self.hops), fmt(self.latency), fmt(self.marginal)]


def single_write(key: str = "w") -> WorkflowDag:
    return WorkflowDag(
        id="window",
        functions=[FunctionSpec(name="write", ops=[OpSpec(kind=OpKind.WRITE, keys=[key], value=b"v")])],
    )


def visibility_window(
    servers: Iterable[int] = range(2, 9),
    delay: int = 10,
    trials: int = 1,
    seed: int = 0,
) -> List[WindowRow]:
    """
    Per cluster size, mean hops and latency from a write's acknowledgement to
    its tail integration. With a fixed per-hop delay (trials=1) the hops are
    exactly 2N-1 and the latency (2N-1)*delay.
    """
    rows: List[WindowRow] = []
    previous: Optional[float] = None
    for n in servers:
        hops: List[int] = []
        latencies: List[int] = []
        for trial in range(trials):
            delay_range = (delay, delay) if trials == 1 else (1, delay)
            config = SimConfig(n=n, seed=seed + trial, delay_range=delay_range)
            result = sim_run(config, [single_write()])
            for write in (e for e in result.trace if e.kind == EventKind.CLIENT_WRITE_REPLY):
                h, latency = measure_visibility(result.trace, write)
                hops.append(h)
                if latency is not None:
                    latencies.append(latency)
        mean_latency = float(np.mean(latencies)) if latencies else None
        marginal = None
        if mean_latency is not None and previous is not None:
            marginal = mean_latency - previous
        rows.append(
            WindowRow(
                servers=n,
                hops=int(round(np.mean(hops))) if hops else 0,
                latency=mean_latency,
                marginal=marginal,
            )
        )
        previous = mean_latency
    return rows


@dataclass
class AbortRow:
    capacity: int
    readers: int
    aborts: int

    @property
    def abort_rate(self) -> float:
        return self.aborts / self.readers if self.readers else 0.0

    def cells(self) -> List[str]:
        return [str(self.capacity), str(self.readers), str(self.aborts), f"{self.abort_rate:.4f}"]


def abort_rates(capacities: Iterable[int] = (1, 2, 3, 4), readers: int = 8) -> List[AbortRow]:
    """
    Share of two-key TCC reads that abort, per ring capacity. Writers keep
    committing between each reader's two reads, so a short ring loses the
    versions an early read needs.
    """
    rows: List[AbortRow] = []
    for capacity in capacities:
        result = run_script(ring_contention_script(readers=readers, ring_capacity=capacity))
        aborts = sum(1 for e in result.trace if e.kind == EventKind.ABORT)
        row = AbortRow(capacity=capacity, readers=readers, aborts=aborts)
        logger.info("abort rate at capacity %d: %.4f", capacity, row.abort_rate)
        rows.append(row)
    return rows


def visibility_stats(trace) -> Dict[str, float]:
    """Mean and max hops and latency over every acknowledged write in a trace."""
    hops: List[int] = []
    latencies: List[int] = []
    for write in (e for e in trace if e.kind == EventKind.CLIENT_WRITE_REPLY):
        h, latency = measure_visibility(trace, write)
        hops.append(h)
        if latency is not None:
            latencies.append(latency)
    stats: Dict[str, float] = {"writes": len(hops), "integrated": len(latencies)}
    if hops:
        stats["mean_hops"] = float(np.mean(hops))
    if latencies:
        stats["mean_latency"] = float(np.mean(latencies))
        stats["max_latency"] = float(np.max(latencies))
    return stats


__all__ = [
    "ABORT_HEADER",
    "ANOMALY_HEADER",
    "AbortRow",
    "AnomalyRow",
    "MODES",
    "WINDOW_HEADER",
    "WindowRow",
    "abort_rates",
    "anomaly_rates",
    "mode_config",
    "single_write",
    "visibility_stats",
    "visibility_window",
]
