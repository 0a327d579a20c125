"""Graph store, sampling specs and rooted-subgraph sampling."""

from hetgnn.sampler.sampling import (SamplingError, choose_without_replacement, full_graph, sample_edges,
                                     sample_one, sample_subgraphs)
from hetgnn.sampler.spec import (RANDOM_UNIFORM, SamplingOp, SamplingSpec, SamplingSpecBuilder, SeedOp, SpecError,
                                 parse_spec, read_spec, spec_from_dict, validate_spec)
from hetgnn.sampler.store import (CSR, GraphStore, StoreError, build_csr, build_graph_store, load_graph_store,
                                  parse_table_args, read_table)

__all__ = [
    "CSR", "GraphStore", "RANDOM_UNIFORM", "SamplingError", "SamplingOp", "SamplingSpec", "SamplingSpecBuilder",
    "SeedOp", "SpecError", "StoreError", "build_csr", "build_graph_store", "choose_without_replacement",
    "full_graph", "load_graph_store", "parse_spec", "parse_table_args", "read_spec", "read_table",
    "sample_edges", "sample_one", "sample_subgraphs", "spec_from_dict", "validate_spec",
]
