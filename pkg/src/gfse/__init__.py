"""Graph structural encoder toolkit.

Exact random-walk positional encodings, structural-refinement graph tests,
structural label extraction, and a small self-supervised pretraining stack
built on a hand-written reverse-mode tape.
"""

from .graph import (
    Graph,
    GraphFamily,
    GraphFormatError,
    from_edge_list,
    parse_graph6,
    write_graph6,
)

__all__ = [
    "Graph",
    "GraphFamily",
    "GraphFormatError",
    "from_edge_list",
    "parse_graph6",
    "write_graph6",
]

__version__ = "0.1.0"
