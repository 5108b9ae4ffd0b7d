"""Population graph data model and file ingestion.

The population is an immutable simple undirected graph with per-node numeric
attributes. Node labels from input files are mapped to dense 0-based indices
at load time so the sampling loops can run on tight arrays; the label <-> index
map is kept for output.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError, InvariantError, ParseError

__all__ = [
    "PopulationGraph",
    "AttributeTable",
    "LoadReport",
    "load_edges",
    "from_edge_pairs",
    "save_edges",
    "load_attributes",
    "save_attributes",
    "derived_variable",
    "load_population",
]

DERIVED_VARIABLES = ("degree", "deg2plus")


@dataclass(frozen=True)
class LoadReport:
    """Counts of records dropped while reading an edge list."""

    duplicate_edges: int = 0
    self_loops: int = 0


@dataclass(frozen=True)
class PopulationGraph:
    """Simple undirected graph in CSR form.

    indptr/indices hold sorted per-node neighbor lists; ``labels[i]`` is the
    original label of node ``i``. Immutable after construction and safe to
    share read-only across parallel replications.
    """

    indptr: np.ndarray
    indices: np.ndarray
    labels: tuple[str, ...]
    load_report: LoadReport = field(default=LoadReport(), compare=False)

    def __post_init__(self):
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    @property
    def label_index(self) -> dict[str, int]:
        try:
            return object.__getattribute__(self, "_label_index")
        except AttributeError:
            object.__setattr__(
                self, "_label_index", {lab: i for i, lab in enumerate(self.labels)}
            )
            return object.__getattribute__(self, "_label_index")

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def validate(self) -> None:
        """Check structural invariants; raises InvariantError on violation."""
        deg = self.degrees()
        if deg.sum() != 2 * self.n_edges:
            raise InvariantError("degree sum != 2M")
        for i in range(self.n_nodes):
            nbrs = self.neighbors(i)
            if len(nbrs) > 1 and not np.all(np.diff(nbrs) > 0):
                raise InvariantError(f"neighbor list of node {i} not strictly sorted")
            if np.any(nbrs == i):
                raise InvariantError(f"self-loop at node {i}")
        # symmetry: every (i, j) must appear as (j, i)
        src = np.repeat(np.arange(self.n_nodes), deg)
        forward = set(zip(src.tolist(), self.indices.tolist()))
        for i, j in forward:
            if (j, i) not in forward:
                raise InvariantError(f"asymmetric edge ({i}, {j})")


@dataclass(frozen=True)
class AttributeTable:
    """Per-node numeric attribute vectors, aligned with graph indices.

    Nodes missing from the source file get 0 for every variable. Binary
    attributes are stored as 0/1 floats.
    """

    names: tuple[str, ...]
    values: dict[str, np.ndarray]

    def __post_init__(self):
        lengths = {len(v) for v in self.values.values()}
        if len(lengths) > 1:
            raise InvariantError("attribute vectors have differing lengths")

    @property
    def n_nodes(self) -> int:
        return len(next(iter(self.values.values()))) if self.values else 0

    def variable(self, name: str, graph: PopulationGraph | None = None) -> np.ndarray:
        """Look up a stored variable or compute a derived one from the graph."""
        if name in self.values:
            return self.values[name]
        if name in DERIVED_VARIABLES:
            if graph is None:
                raise DataError(f"derived variable {name!r} requires the graph")
            return derived_variable(graph, name)
        raise DataError(f"unknown variable {name!r}")


def _iter_lines(source) -> Iterator[tuple[int, str]]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            yield from enumerate(fh, start=1)
    else:
        yield from enumerate(source, start=1)


def load_edges(
    source, node_roster: Iterable[str] | None = None
) -> PopulationGraph:
    """Read an edge list into a PopulationGraph.

    ``source`` is a path or an iterable of lines, one edge per line, two
    whitespace- or comma-separated labels; lines starting with ``#`` are
    skipped. Duplicate edges and self-loops are dropped and counted in the
    graph's load_report. ``node_roster`` admits extra labels as isolated
    nodes (degree 0); without it an empty edge list is an error.
    """
    order: dict[str, int] = {}
    if node_roster is not None:
        for lab in node_roster:
            order.setdefault(str(lab), len(order))

    raw_edges: list[tuple[int, int]] = []
    n_self = 0
    for line_no, line in _iter_lines(source):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.replace(",", " ").split()
        if len(parts) != 2:
            raise ParseError(f"expected two labels, got {len(parts)}", line_no)
        a = order.setdefault(parts[0], len(order))
        b = order.setdefault(parts[1], len(order))
        if a == b:
            n_self += 1
            continue
        raw_edges.append((a, b) if a < b else (b, a))

    if not raw_edges and not order:
        raise DataError("empty edge source and no node roster")

    unique = set(raw_edges)
    n_dup = len(raw_edges) - len(unique)
    n = len(order)
    labels = tuple(order.keys())

    if unique:
        pairs = np.array(sorted(unique), dtype=np.int64)
        src = np.concatenate([pairs[:, 0], pairs[:, 1]])
        dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
        perm = np.lexsort((dst, src))
        src, dst = src[perm], dst[perm]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        indptr = np.cumsum(indptr)
        indices = dst
    else:
        indptr = np.zeros(n + 1, dtype=np.int64)
        indices = np.empty(0, dtype=np.int64)

    return PopulationGraph(
        indptr=indptr,
        indices=indices,
        labels=labels,
        load_report=LoadReport(duplicate_edges=n_dup, self_loops=n_self),
    )


def from_edge_pairs(
    pairs: Iterable[tuple[int, int]],
    n_nodes: int,
    labels: Sequence[str] | None = None,
) -> PopulationGraph:
    """Build a graph from integer index pairs, dropping duplicates and
    self-loops with counts (same rules as load_edges)."""
    n_self = 0
    unique: set[tuple[int, int]] = set()
    n_raw = 0
    for a, b in pairs:
        n_raw += 1
        if a == b:
            n_self += 1
            continue
        unique.add((a, b) if a < b else (b, a))
    n_dup = n_raw - n_self - len(unique)
    if labels is None:
        labels = tuple(str(i) for i in range(n_nodes))
    else:
        labels = tuple(labels)
    if unique:
        arr = np.array(sorted(unique), dtype=np.int64)
        if arr.min() < 0 or arr.max() >= n_nodes:
            raise DataError("edge endpoint out of range")
        src = np.concatenate([arr[:, 0], arr[:, 1]])
        dst = np.concatenate([arr[:, 1], arr[:, 0]])
        perm = np.lexsort((dst, src))
        src, dst = src[perm], dst[perm]
        indptr = np.zeros(n_nodes + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        indptr = np.cumsum(indptr)
        indices = dst
    else:
        indptr = np.zeros(n_nodes + 1, dtype=np.int64)
        indices = np.empty(0, dtype=np.int64)
    return PopulationGraph(
        indptr=indptr,
        indices=indices,
        labels=labels,
        load_report=LoadReport(duplicate_edges=n_dup, self_loops=n_self),
    )


def save_edges(graph: PopulationGraph, path) -> None:
    """Write the graph back out as a label edge list (each edge once)."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(graph.n_nodes):
            for j in graph.neighbors(i):
                if i < j:
                    fh.write(f"{graph.labels[i]} {graph.labels[j]}\n")


def load_attributes(source, graph: PopulationGraph) -> AttributeTable:
    """Read a node-attribute CSV keyed by node label.

    First column is the node label, remaining columns are numeric; a header
    row is required. Nodes absent from the file get 0 for every variable.
    Labels not present in the graph are an error (extend the graph with a
    node roster at load time if the attribute roster is wider).
    """
    if isinstance(source, (str, Path)):
        fh = open(source, "r", encoding="utf-8", newline="")
        close = True
    else:
        fh = source
        close = False
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("attribute source is empty; a header row is required")
        names = tuple(h.strip() for h in header[1:])
        if not names:
            raise DataError("attribute header has no variable columns")
        values = {name: np.zeros(graph.n_nodes) for name in names}
        for row_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            label = row[0].strip()
            idx = graph.label_index.get(label)
            if idx is None:
                raise DataError(f"row {row_no}: unknown node label {label!r}")
            if len(row) != len(names) + 1:
                raise ParseError(
                    f"expected {len(names) + 1} columns, got {len(row)}", row_no
                )
            for name, cell in zip(names, row[1:]):
                try:
                    values[name][idx] = float(cell) if cell.strip() else 0.0
                except ValueError:
                    raise DataError(
                        f"row {row_no}, column {name!r}: non-numeric cell {cell!r}"
                    ) from None
    finally:
        if close:
            fh.close()
    return AttributeTable(names=names, values=values)


def save_attributes(attrs: AttributeTable, graph: PopulationGraph, path) -> None:
    """Write the attribute table as CSV keyed by node label."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", *attrs.names])
        for i, label in enumerate(graph.labels):
            writer.writerow([label, *(repr(attrs.values[n][i]) for n in attrs.names)])


def derived_variable(graph: PopulationGraph, kind: str) -> np.ndarray:
    """Per-node degree, or the indicator of having two or more partners."""
    deg = graph.degrees()
    if kind == "degree":
        return deg.astype(np.float64)
    if kind == "deg2plus":
        return (deg >= 2).astype(np.float64)
    raise DataError(f"unknown derived variable kind {kind!r}")


def load_population(
    edge_source, attr_source=None
) -> tuple[PopulationGraph, AttributeTable | None]:
    """Load a graph and, optionally, its attribute table.

    When an attribute file is given, its labels are used as a node roster so
    nodes that appear only there come in as isolated nodes.
    """
    roster: list[str] | None = None
    if attr_source is not None and isinstance(attr_source, (str, Path)):
        with open(attr_source, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            roster = [row[0].strip() for row in reader if row and row[0].strip()]
    graph = load_edges(edge_source, node_roster=roster)
    attrs = load_attributes(attr_source, graph) if attr_source is not None else None
    return graph, attrs
