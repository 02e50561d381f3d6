"""
Configuration records for servers, simulations, faults and workloads.

Every record is a pydantic model so it can be loaded from a JSON file with
``model_validate_json``. Cross-field rules that pydantic cannot express are
enforced by ``check()``, which raises ConfigurationError.
"""

from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field

from causalmesh.config import (
    DEFAULT_RING_CAPACITY,
    DEFAULT_STEP_BUDGET,
    DEFAULT_TCC_RETRY_LIMIT,
    DEFAULT_TXN_RETRY_LIMIT,
)
from causalmesh.errors import ConfigurationError


# ============================================================================
# ENUMS
# ============================================================================

class PropagationMode(str, Enum):
    TWO_ROUND = "two_round"
    # Integrates at the end of the first traversal. Simulation only.
    SINGLE_ROUND_BUGGY = "single_round_buggy"


class FlushMode(str, Enum):
    SYNCHRONOUS = "synchronous"
    ASYNC_LOG = "async_log"


class RoamingPolicy(str, Enum):
    UNIFORM_RANDOM = "uniform_random"
    ROUND_ROBIN = "round_robin"
    STICKY = "sticky"


class BaselineMode(str, Enum):
    CAUSALMESH = "causalmesh"
    EVENTUAL_BASELINE = "eventual_baseline"


class DelayProfile(str, Enum):
    UNIFORM = "uniform"
    HEAVY_TAIL = "heavy_tail"


class FaultKind(str, Enum):
    LINK_STALL = "link_stall"


class WorkflowShape(str, Enum):
    WRITE_THEN_READ_2FN = "write_then_read_2fn"
    MICRO_3FN = "micro3fn"
    RANDOM_DAG = "random_dag"


# ============================================================================
# SERVER
# ============================================================================

class ServerConfig(BaseModel):
    propagation_mode: PropagationMode = Field(
        default=PropagationMode.TWO_ROUND, description="Chain traversal used before tail integration"
    )
    tail_disseminate: bool = Field(
        default=False, description="Tail sends integrate hints to every other server"
    )
    flush_mode: FlushMode = Field(
        default=FlushMode.SYNCHRONOUS, description="Write-through before ack, or an async flush log"
    )
    tcc: bool = Field(default=False, description="Run the multi-version TCC C-cache")
    ring_capacity: int = Field(
        default=DEFAULT_RING_CAPACITY, description="Versions kept per key in TCC mode"
    )

    def check(self) -> "ServerConfig":
        if self.ring_capacity < 1:
            raise ConfigurationError(f"ring_capacity must be >= 1, got {self.ring_capacity}")
        return self

    @property
    def implicit_same_key(self) -> bool:
        return self.propagation_mode == PropagationMode.SINGLE_ROUND_BUGGY


class PeerAddress(BaseModel):
    server: int = Field(description="Server index")
    host: str = Field(default="127.0.0.1")
    port: int


class PeerList(BaseModel):
    peers: List[PeerAddress] = Field(description="Identical on every process, one entry per server")

    def check(self) -> "PeerList":
        indices = sorted(p.server for p in self.peers)
        if indices != list(range(len(self.peers))):
            raise ConfigurationError(f"peer indices must be 0..{len(self.peers) - 1}, got {indices}")
        return self

    def address(self, server: int) -> PeerAddress:
        for peer in self.peers:
            if peer.server == server:
                return peer
        raise ConfigurationError(f"no peer with index {server}")

    @classmethod
    def parse(cls, spec: str) -> "PeerList":
        """Parse 'host:port,host:port,...' where position is the server index."""
        peers = []
        for i, item in enumerate(p for p in spec.split(",") if p.strip()):
            host, _, port = item.strip().rpartition(":")
            if not host or not port.isdigit():
                raise ConfigurationError(f"bad peer address {item!r}")
            peers.append(PeerAddress(server=i, host=host, port=int(port)))
        return cls(peers=peers).check()


# ============================================================================
# SIMULATION
# ============================================================================

class FaultSpec(BaseModel):
    kind: FaultKind = Field(default=FaultKind.LINK_STALL)
    link: Tuple[int, int] = Field(description="(from-server, to-server)")
    start: int = Field(description="Logical time the stall begins")
    duration: int = Field(description="Logical time units the link stays stalled")

    @property
    def end(self) -> int:
        return self.start + self.duration


class SimConfig(BaseModel):
    n: int = Field(default=3, description="Server count")
    seed: int = Field(default=0, description="PRNG seed")
    delay_range: Tuple[int, int] = Field(default=(1, 10), description="Per-hop delay bounds, inclusive")
    delay_profile: DelayProfile = Field(default=DelayProfile.UNIFORM)
    store_latency: int = Field(default=5, description="Logical units per store access")
    op_gap: int = Field(default=1, description="Client think time between operations")
    arrival_interval: int = Field(default=2, description="Logical time between workflow arrivals")
    roaming_policy: RoamingPolicy = Field(default=RoamingPolicy.UNIFORM_RANDOM)
    propagation_mode: PropagationMode = Field(default=PropagationMode.TWO_ROUND)
    tail_disseminate: bool = Field(default=False)
    flush_mode: FlushMode = Field(default=FlushMode.SYNCHRONOUS)
    baseline_mode: BaselineMode = Field(default=BaselineMode.CAUSALMESH)
    tcc: bool = Field(default=False, description="Run workflows as TCC transactions")
    ring_capacity: int = Field(default=DEFAULT_RING_CAPACITY)
    faults: List[FaultSpec] = Field(default_factory=list)
    snapshot_every: int = Field(default=0, description="Global snapshot every k steps (0 = off)")
    snapshot_on_tail: bool = Field(default=False, description="Global snapshot after each tail integration")
    preload_keys: int = Field(
        default=0, description="Seed the store and every cache with this many pool keys"
    )
    step_budget: int = Field(default=DEFAULT_STEP_BUDGET)
    txn_retry_limit: int = Field(default=DEFAULT_TXN_RETRY_LIMIT)
    tcc_retry_limit: int = Field(default=DEFAULT_TCC_RETRY_LIMIT)
    retry_backoff: int = Field(default=10, description="Logical delay before a retried dispatch")

    def check(self) -> "SimConfig":
        if self.n < 1:
            raise ConfigurationError(f"n must be >= 1, got {self.n}")
        lo, hi = self.delay_range
        if lo < 0 or hi < lo:
            raise ConfigurationError(f"empty delay range {list(self.delay_range)}")
        if self.store_latency < 0 or self.op_gap < 0 or self.arrival_interval < 0:
            raise ConfigurationError("latencies and gaps must be >= 0")
        if self.step_budget < 1:
            raise ConfigurationError("step_budget must be >= 1")
        if self.snapshot_every < 0:
            raise ConfigurationError("snapshot_every must be >= 0")
        for fault in self.faults:
            a, b = fault.link
            if not (0 <= a < self.n and 0 <= b < self.n) or a == b:
                raise ConfigurationError(f"bad stall link {list(fault.link)} for n={self.n}")
            if fault.start < 0 or fault.duration < 0:
                raise ConfigurationError("stall start/duration must be >= 0")
        if self.baseline_mode == BaselineMode.EVENTUAL_BASELINE and self.tcc:
            raise ConfigurationError("the eventual baseline has no TCC mode")
        self.server_config().check()
        return self

    def server_config(self) -> ServerConfig:
        return ServerConfig(
            propagation_mode=self.propagation_mode,
            tail_disseminate=self.tail_disseminate,
            flush_mode=self.flush_mode,
            tcc=self.tcc,
            ring_capacity=self.ring_capacity,
        )


# ============================================================================
# WORKLOAD
# ============================================================================

class WorkloadSpec(BaseModel):
    key_pool_size: int = Field(default=10_000, description="Keys k0..k{pool-1}")
    zipf_theta: float = Field(default=1.0, description="Zipf exponent (> 0)")
    value_size: int = Field(default=8, description="Bytes per written value")
    shape: WorkflowShape = Field(default=WorkflowShape.MICRO_3FN)
    requests: int = Field(default=1000, description="Workflows to generate")
    tcc: bool = Field(default=False, description="Emit TCC operations")
    seed: int = Field(default=0, description="Generator seed")
    read_txn_fraction: float = Field(
        default=0.2, description="Share of random-DAG reads issued as read transactions"
    )
    max_functions: int = Field(default=4, description="Upper bound on random-DAG size")

    def check(self) -> "WorkloadSpec":
        if self.key_pool_size < 1:
            raise ConfigurationError("key_pool_size must be >= 1")
        if self.zipf_theta <= 0:
            raise ConfigurationError(f"zipf_theta must be > 0, got {self.zipf_theta}")
        if self.value_size < 1 or self.requests < 0:
            raise ConfigurationError("value_size must be >= 1 and requests >= 0")
        if not 0.0 <= self.read_txn_fraction <= 1.0:
            raise ConfigurationError("read_txn_fraction must lie in [0, 1]")
        if self.max_functions < 2:
            raise ConfigurationError("max_functions must be >= 2")
        return self


PRESET_SHAPES = {shape.value: shape for shape in WorkflowShape}
PRESET_ALIASES = {"write_then_read": WorkflowShape.WRITE_THEN_READ_2FN, "random": WorkflowShape.RANDOM_DAG}


def workload_preset(name: str, **overrides) -> WorkloadSpec:
    """Named workload presets accepted by the CLI."""
    shape: Optional[WorkflowShape] = PRESET_SHAPES.get(name) or PRESET_ALIASES.get(name)
    if shape is None:
        raise ConfigurationError(f"unknown workload preset {name!r}")
    return WorkloadSpec(shape=shape, **overrides).check()
