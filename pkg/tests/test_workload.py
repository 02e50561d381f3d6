from collections import Counter

import numpy as np
import pytest

from causalmesh.errors import ConfigurationError
from causalmesh.schemas.config import WorkflowShape, WorkloadSpec, workload_preset
from causalmesh.services.sim.workflow import OpKind
from causalmesh.services.workload.generators import (
    build_micro3fn,
    build_random_dag,
    build_write_then_read,
    gen_zipf_key,
    generate_workflows,
    zipf_cdf,
)


def test_zipf_cdf_shape():
    cdf = zipf_cdf(5, 1.0)
    assert cdf[-1] == pytest.approx(1.0)
    assert np.all(np.diff(cdf) > 0)
    # P(k0) = 1 / H(5)
    assert cdf[0] == pytest.approx(1 / sum(1 / r for r in range(1, 6)))


def test_zipf_keys_favour_low_ranks():
    spec = WorkloadSpec(key_pool_size=50, zipf_theta=1.2).check()
    rng = np.random.default_rng(0)
    counts = Counter(gen_zipf_key(spec, rng) for _ in range(5000))
    assert set(counts) <= {f"k{i}" for i in range(50)}
    assert counts["k0"] > counts["k1"] > counts["k10"]


def test_same_seed_same_workflows():
    spec = WorkloadSpec(shape=WorkflowShape.RANDOM_DAG, requests=20, seed=4).check()
    assert generate_workflows(spec) == generate_workflows(spec)
    other = spec.model_copy(update={"seed": 5})
    assert generate_workflows(other) != generate_workflows(spec)


def test_micro3fn_is_a_chain():
    spec = WorkloadSpec().check()
    dag = build_micro3fn(spec, np.random.default_rng(1))
    assert dag.edges == [(0, 1), (1, 2)]
    assert [len(f.ops) for f in dag.functions] == [3, 3, 1]
    assert dag.functions[2].ops[0].kind == OpKind.WRITE
    assert len(dag.functions[2].ops[0].value) == spec.value_size


def test_write_then_read_uses_one_key():
    dag = build_write_then_read(WorkloadSpec(tcc=True).check(), np.random.default_rng(2))
    (write,), (read,) = (f.ops for f in dag.functions)
    assert write.kind == OpKind.TCC_WRITE and read.kind == OpKind.TCC_READ
    assert write.key == read.key


@pytest.mark.parametrize("seed", range(10))
def test_random_dags_are_acyclic(seed):
    spec = WorkloadSpec(shape=WorkflowShape.RANDOM_DAG, tcc=bool(seed % 2), max_functions=5).check()
    dag = build_random_dag(spec, np.random.default_rng(seed))
    assert len(dag.topo_order()) == len(dag.functions)
    assert dag.sources() == [0]
    if spec.tcc:
        assert len(dag.sinks()) == 1
        assert all(op.kind in (OpKind.TCC_READ, OpKind.TCC_WRITE) for f in dag.functions for op in f.ops)


def test_presets():
    assert workload_preset("micro3fn").shape == WorkflowShape.MICRO_3FN
    assert workload_preset("write_then_read", requests=3).requests == 3
    with pytest.raises(ConfigurationError):
        workload_preset("nope")


@pytest.mark.parametrize(
    "fields", [{"key_pool_size": 0}, {"zipf_theta": 0}, {"read_txn_fraction": 2.0}, {"max_functions": 1}]
)
def test_bad_specs(fields):
    with pytest.raises(ConfigurationError):
        WorkloadSpec(**fields).check()
