"""Workflow DAGs: functions, their operations and the edges between them."""

from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from causalmesh.errors import ConfigurationError
from causalmesh.services.core.versions import Key, WireBytes


class OpKind(str, Enum):
    READ = "read"
    WRITE = "write"
    READ_TXN = "read_txn"
    TCC_READ = "tcc_read"
    TCC_WRITE = "tcc_write"


class OpSpec(BaseModel):
    kind: OpKind
    keys: List[Key] = Field(description="One key, or several for a read transaction")
    value: Optional[WireBytes] = Field(default=None, description="Written value")

    @property
    def key(self) -> Key:
        return self.keys[0]


class FunctionSpec(BaseModel):
    name: str
    ops: List[OpSpec] = Field(default_factory=list)


class WorkflowDag(BaseModel):
    id: str
    functions: List[FunctionSpec]
    edges: List[Tuple[int, int]] = Field(default_factory=list, description="(from, to) function indices")
    tcc: bool = False

    def check(self) -> "WorkflowDag":
        size = len(self.functions)
        if size == 0:
            raise ConfigurationError(f"workflow {self.id} has no functions")
        for a, b in self.edges:
            if not (0 <= a < size and 0 <= b < size) or a == b:
                raise ConfigurationError(f"workflow {self.id}: bad edge ({a}, {b})")
        if len(self.topo_order()) != size:
            raise ConfigurationError(f"workflow {self.id} has a cycle")
        return self

    def predecessors(self, node: int) -> List[int]:
        return sorted({a for a, b in self.edges if b == node})

    def successors(self, node: int) -> List[int]:
        return sorted({b for a, b in self.edges if a == node})

    def sources(self) -> List[int]:
        targets = {b for _, b in self.edges}
        return [i for i in range(len(self.functions)) if i not in targets]

    def sinks(self) -> List[int]:
        origins = {a for a, _ in self.edges}
        return [i for i in range(len(self.functions)) if i not in origins]

    def topo_order(self) -> List[int]:
        indegree: Dict[int, int] = {i: 0 for i in range(len(self.functions))}
        for _, b in set(self.edges):
            indegree[b] += 1
        ready = [i for i, d in indegree.items() if d == 0]
        order: List[int] = []
        while ready:
            node = ready.pop(0)
            order.append(node)
            for succ in self.successors(node):
                indegree[succ] -= 1
                if indegree[succ] == 0:
                    ready.append(succ)
        return order

    def with_sink(self) -> "WorkflowDag":
        """Join every leaf into one empty sink function, if there is more than one leaf."""
        leaves = self.sinks()
        if len(leaves) <= 1:
            return self
        sink = len(self.functions)
        return self.model_copy(
            update={
                "functions": [*self.functions, FunctionSpec(name="sink")],
                "edges": [*self.edges, *((leaf, sink) for leaf in leaves)],
            }
        )
