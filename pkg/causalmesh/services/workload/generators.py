"""
Workload generators.

Keys are drawn from a pool k0..k{pool-1} by Zipf rank (k0 is the most
popular). Every generator takes its randomness from a numpy Generator seeded
from the WorkloadSpec, so one spec always yields the same workflows.
"""

import logging
from functools import lru_cache
from typing import List, Optional

import numpy as np

from causalmesh.schemas.config import WorkflowShape, WorkloadSpec
from causalmesh.services.core.versions import Key
from causalmesh.services.sim.workflow import FunctionSpec, OpKind, OpSpec, WorkflowDag

logger = logging.getLogger(__name__)

# Operations per function in random DAGs.
MAX_OPS_PER_FUNCTION = 3
READ_TXN_WIDTH = 2


@lru_cache(maxsize=16)
def zipf_cdf(pool: int, theta: float) -> np.ndarray:
    weights = np.arange(1, pool + 1, dtype=np.float64) ** -theta
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return cdf


def gen_zipf_key(spec: WorkloadSpec, rng: np.random.Generator) -> Key:
    """Draw one key with P(rank r) proportional to r^-theta."""
    cdf = zipf_cdf(spec.key_pool_size, spec.zipf_theta)
    rank = int(np.searchsorted(cdf, rng.random(), side="right"))
    return f"k{min(rank, spec.key_pool_size - 1)}"


def gen_value(spec: WorkloadSpec, rng: np.random.Generator) -> bytes:
    return rng.bytes(spec.value_size)


def _read(spec: WorkloadSpec, rng: np.random.Generator) -> OpSpec:
    kind = OpKind.TCC_READ if spec.tcc else OpKind.READ
    return OpSpec(kind=kind, keys=[gen_zipf_key(spec, rng)])


def _write(spec: WorkloadSpec, rng: np.random.Generator, key: Optional[Key] = None) -> OpSpec:
    kind = OpKind.TCC_WRITE if spec.tcc else OpKind.WRITE
    return OpSpec(kind=kind, keys=[key or gen_zipf_key(spec, rng)], value=gen_value(spec, rng))


def build_micro3fn(spec: WorkloadSpec, rng: np.random.Generator, workflow_id: str = "wf0") -> WorkflowDag:
    """Three chained functions: read three keys, read three keys, write one key."""
    return WorkflowDag(
        id=workflow_id,
        functions=[
            FunctionSpec(name="read_a", ops=[_read(spec, rng) for _ in range(3)]),
            FunctionSpec(name="read_b", ops=[_read(spec, rng) for _ in range(3)]),
            FunctionSpec(name="write", ops=[_write(spec, rng)]),
        ],
        edges=[(0, 1), (1, 2)],
        tcc=spec.tcc,
    )


def build_write_then_read(
    spec: WorkloadSpec, rng: np.random.Generator, workflow_id: str = "wf0"
) -> WorkflowDag:
    """The first function writes a key and the second reads it back."""
    key = gen_zipf_key(spec, rng)
    read_kind = OpKind.TCC_READ if spec.tcc else OpKind.READ
    return WorkflowDag(
        id=workflow_id,
        functions=[
            FunctionSpec(name="writer", ops=[_write(spec, rng, key)]),
            FunctionSpec(name="reader", ops=[OpSpec(kind=read_kind, keys=[key])]),
        ],
        edges=[(0, 1)],
        tcc=spec.tcc,
    )


def _random_op(spec: WorkloadSpec, rng: np.random.Generator) -> OpSpec:
    if rng.random() < 0.5:
        return _write(spec, rng)
    if not spec.tcc and rng.random() < spec.read_txn_fraction:
        keys = sorted({gen_zipf_key(spec, rng) for _ in range(READ_TXN_WIDTH)})
        return OpSpec(kind=OpKind.READ_TXN, keys=keys)
    return _read(spec, rng)


def build_random_dag(spec: WorkloadSpec, rng: np.random.Generator, workflow_id: str = "wf0") -> WorkflowDag:
    """
    A random DAG over 2..max_functions nodes. Node i > 0 gets one parent
    drawn from the earlier nodes plus, with probability 1/2, a second one, so
    fan-out and joins both occur. TCC workflows get a single sink.
    """
    size = int(rng.integers(2, spec.max_functions + 1))
    functions = []
    for i in range(size):
        ops = [_random_op(spec, rng) for _ in range(int(rng.integers(1, MAX_OPS_PER_FUNCTION + 1)))]
        functions.append(FunctionSpec(name=f"fn{i}", ops=ops))
    edges = []
    for i in range(1, size):
        parents = {int(rng.integers(0, i))}
        if i > 1 and rng.random() < 0.5:
            parents.add(int(rng.integers(0, i)))
        edges.extend((p, i) for p in sorted(parents))
    dag = WorkflowDag(id=workflow_id, functions=functions, edges=edges, tcc=spec.tcc).check()
    return dag.with_sink() if spec.tcc else dag


BUILDERS = {
    WorkflowShape.MICRO_3FN: build_micro3fn,
    WorkflowShape.WRITE_THEN_READ_2FN: build_write_then_read,
    WorkflowShape.RANDOM_DAG: build_random_dag,
}


def generate_workflows(spec: WorkloadSpec) -> List[WorkflowDag]:
    spec = spec.check()
    rng = np.random.default_rng(spec.seed)
    build = BUILDERS[spec.shape]
    workflows = [build(spec, rng, f"wf{i}") for i in range(spec.requests)]
    logger.info("generated %d %s workflows", len(workflows), spec.shape.value)
    return workflows
