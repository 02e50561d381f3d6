from causalmesh.services.workload.generators import (
    build_micro3fn,
    build_random_dag,
    build_write_then_read,
    gen_zipf_key,
    generate_workflows,
    zipf_cdf,
)

__all__ = [
    "build_micro3fn",
    "build_random_dag",
    "build_write_then_read",
    "gen_zipf_key",
    "generate_workflows",
    "zipf_cdf",
]
