"""Cartesian genetic programs encoding synaptic plasticity rules.

A genome is a fixed grid of arithmetic nodes (rows x cols) wired by integer
genes. Node inputs may reference any input terminal or any node in a strictly
earlier column, so the graph is acyclic by construction. Only nodes reachable
from the output gene are phenotypically active; inactive genes mutate
neutrally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

# Evaluation semantics: every node output is clamped so degenerate programs
# stay finite, and division by a near-zero denominator yields 1.0.
VALUE_CLAMP = 1e6
DIV_EPS = 1e-9


class Op(IntEnum):
    ADD = 0
    SUB = 1
    MUL = 2
    DIV = 3  # protected division
    ONE = 4  # arity-0 constant 1.0


OP_ARITY = {Op.ADD: 2, Op.SUB: 2, Op.MUL: 2, Op.DIV: 2, Op.ONE: 0}
OP_SYMBOL = {Op.ADD: "+", Op.SUB: "-", Op.MUL: "*", Op.DIV: "/"}


class GenomeError(ValueError):
    """Raised for malformed genomes or mismatched evaluation inputs."""


@dataclass(frozen=True)
class NodeGene:
    """One internal node: operator plus two connection genes.

    Connection genes always exist, even for arity-0 operators and inactive
    nodes; they drift neutrally under mutation.
    """

    op: Op
    in_a: int
    in_b: int


@dataclass(frozen=True)
class Genome:
    """Immutable CGP genome.

    Value indices: terminals occupy ``0 .. n_inputs-1``, internal node ``j``
    occupies ``n_inputs + j`` and sits in column ``j // rows``. A node may
    connect to any terminal or to any node in an earlier column (levels-back
    unrestricted). The output gene may reference a terminal directly.
    """

    n_inputs: int
    rows: int
    cols: int
    nodes: tuple[NodeGene, ...]
    output_gene: int

    @property
    def n_nodes(self) -> int:
        return self.rows * self.cols

    def column_of(self, node_idx: int) -> int:
        return node_idx // self.rows

    def max_source(self, col: int) -> int:
        """Exclusive upper bound of legal connection indices for column `col`."""
        return self.n_inputs + col * self.rows

    def validate(self) -> None:
        if self.n_inputs < 1 or self.rows < 1 or self.cols < 1:
            raise GenomeError("n_inputs, rows and cols must all be >= 1")
        if len(self.nodes) != self.n_nodes:
            raise GenomeError(
                f"expected {self.n_nodes} nodes, got {len(self.nodes)}"
            )
        for j, node in enumerate(self.nodes):
            hi = self.max_source(self.column_of(j))
            if not (0 <= node.in_a < hi and 0 <= node.in_b < hi):
                raise GenomeError(
                    f"node {j} connects forward or out of range "
                    f"(in_a={node.in_a}, in_b={node.in_b}, limit={hi})"
                )
            if node.op not in OP_ARITY:
                raise GenomeError(f"node {j} has unknown operator {node.op!r}")
        if not (0 <= self.output_gene < self.n_inputs + self.n_nodes):
            raise GenomeError(f"output gene {self.output_gene} out of range")

    def to_json(self) -> dict:
        """Stable checkpoint encoding: flat integer genes, 3 per node."""
        genes = []
        for node in self.nodes:
            genes.extend((int(node.op), node.in_a, node.in_b))
        return {
            "n_inputs": self.n_inputs,
            "rows": self.rows,
            "cols": self.cols,
            "genes": genes,
            "output": self.output_gene,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Genome":
        try:
            genes = obj["genes"]
            if len(genes) % 3 != 0:
                raise GenomeError("gene list length must be a multiple of 3")
            nodes = tuple(
                NodeGene(Op(genes[k]), int(genes[k + 1]), int(genes[k + 2]))
                for k in range(0, len(genes), 3)
            )
            genome = cls(
                n_inputs=int(obj["n_inputs"]),
                rows=int(obj["rows"]),
                cols=int(obj["cols"]),
                nodes=nodes,
                output_gene=int(obj["output"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, GenomeError):
                raise
            raise GenomeError(f"malformed genome object: {exc}") from exc
        genome.validate()
        return genome


def save_genome(genome: Genome, path) -> None:
    with open(path, "w") as fh:
        json.dump(genome.to_json(), fh, indent=2)
        fh.write("\n")


def load_genome(path) -> Genome:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GenomeError(f"cannot parse genome file {path}: {exc}") from exc
    return Genome.from_json(obj)


def random_genome(n_inputs: int, shape: tuple[int, int], rng: np.random.Generator) -> Genome:
    """Draw a uniformly random genome with the given (rows, cols) grid."""
    rows, cols = shape
    if n_inputs < 1 or rows < 1 or cols < 1:
        raise GenomeError("n_inputs, rows and cols must all be >= 1")
    nodes = []
    for j in range(rows * cols):
        hi = n_inputs + (j // rows) * rows
        nodes.append(
            NodeGene(
                op=Op(int(rng.integers(0, len(Op)))),
                in_a=int(rng.integers(0, hi)),
                in_b=int(rng.integers(0, hi)),
            )
        )
    output_gene = int(rng.integers(0, n_inputs + rows * cols))
    genome = Genome(n_inputs, rows, cols, tuple(nodes), output_gene)
    genome.validate()
    return genome


def mutate(genome: Genome, rate: float, rng: np.random.Generator) -> Genome:
    """Resample each gene from its legal range with probability `rate`.

    Resampling draws uniformly over the whole legal range, so a mutated gene
    may keep its old value. Inactive genes mutate too (neutral drift).
    """
    if not 0.0 <= rate <= 1.0:
        raise GenomeError(f"mutation rate must lie in [0, 1], got {rate}")
    nodes = []
    for j, node in enumerate(genome.nodes):
        hi = genome.max_source(genome.column_of(j))
        op, in_a, in_b = node.op, node.in_a, node.in_b
        if rng.random() < rate:
            op = Op(int(rng.integers(0, len(Op))))
        if rng.random() < rate:
            in_a = int(rng.integers(0, hi))
        if rng.random() < rate:
            in_b = int(rng.integers(0, hi))
        nodes.append(NodeGene(op, in_a, in_b))
    output_gene = genome.output_gene
    if rng.random() < rate:
        output_gene = int(rng.integers(0, genome.n_inputs + genome.n_nodes))
    return Genome(genome.n_inputs, genome.rows, genome.cols, tuple(nodes), output_gene)


def _clamp(x):
    return np.minimum(np.maximum(x, -VALUE_CLAMP), VALUE_CLAMP)


def _apply_op(op: Op, a, b):
    if op == Op.ADD:
        return _clamp(a + b)
    if op == Op.SUB:
        return _clamp(a - b)
    if op == Op.MUL:
        return _clamp(a * b)
    if op == Op.DIV:
        with np.errstate(divide="ignore", invalid="ignore"):
            quotient = np.where(np.abs(b) >= DIV_EPS, np.divide(a, np.where(b == 0, 1.0, b)), 1.0)
        return _clamp(quotient)
    raise GenomeError(f"operator {op!r} is not binary")


def evaluate(genome: Genome, inputs) -> float:
    """Forward-evaluate the full graph on one input vector.

    Inputs may be scalars or broadcastable numpy arrays (one entry per
    terminal); the result has the broadcast shape. Every node output is
    clamped to +-VALUE_CLAMP and division is protected, so finite inputs give
    a finite result.
    """
    if len(inputs) != genome.n_inputs:
        raise GenomeError(
            f"genome takes {genome.n_inputs} inputs, got {len(inputs)}"
        )
    values = [np.float64(v) if np.isscalar(v) else np.asarray(v, dtype=np.float64) for v in inputs]
    for node in genome.nodes:
        if node.op == Op.ONE:
            values.append(np.float64(1.0))
        else:
            values.append(_apply_op(node.op, values[node.in_a], values[node.in_b]))
    out = values[genome.output_gene]
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Active-subgraph view

@dataclass(frozen=True)
class ExprLeaf:
    """Reference to input terminal `terminal`."""

    terminal: int


@dataclass(frozen=True)
class ExprNode:
    op: Op
    args: tuple


ExpressionTree = ExprLeaf | ExprNode


def decode_active(genome: Genome) -> ExpressionTree:
    """Extract the expression tree of nodes reachable from the output gene."""
    memo: dict[int, ExpressionTree] = {}

    def build(idx: int) -> ExpressionTree:
        if idx in memo:
            return memo[idx]
        if idx < genome.n_inputs:
            tree: ExpressionTree = ExprLeaf(idx)
        else:
            node = genome.nodes[idx - genome.n_inputs]
            if node.op == Op.ONE:
                tree = ExprNode(Op.ONE, ())
            else:
                tree = ExprNode(node.op, (build(node.in_a), build(node.in_b)))
        memo[idx] = tree
        return tree

    return build(genome.output_gene)


def active_indices(genome: Genome) -> list[int]:
    """Node indices (0-based, grid order) reachable from the output gene."""
    active: set[int] = set()
    stack = [genome.output_gene]
    while stack:
        idx = stack.pop()
        if idx < genome.n_inputs:
            continue
        j = idx - genome.n_inputs
        if j in active:
            continue
        active.add(j)
        node = genome.nodes[j]
        if OP_ARITY[node.op] == 2:
            stack.extend((node.in_a, node.in_b))
    return sorted(active)


def compile_active(genome: Genome):
    """Flatten the active subgraph into int arrays for fast interpretation.

    Returns (ops, in_a, in_b, out_ref) where connection values reference a
    buffer laid out as [terminal 0..n_inputs-1, active node 0..k-1] and
    out_ref points at the genome output within that buffer.
    """
    order = active_indices(genome)
    remap = {genome.n_inputs + j: genome.n_inputs + pos for pos, j in enumerate(order)}

    def ref(idx: int) -> int:
        return idx if idx < genome.n_inputs else remap[idx]

    ops = np.empty(len(order), dtype=np.int64)
    in_a = np.zeros(len(order), dtype=np.int64)
    in_b = np.zeros(len(order), dtype=np.int64)
    for pos, j in enumerate(order):
        node = genome.nodes[j]
        ops[pos] = int(node.op)
        if OP_ARITY[node.op] == 2:
            in_a[pos] = ref(node.in_a)
            in_b[pos] = ref(node.in_b)
    return ops, in_a, in_b, ref(genome.output_gene)


# ---------------------------------------------------------------------------
# Pretty-printing

@dataclass(frozen=True)
class _Const:
    value: float


def _fold(op: Op, a: float, b: float) -> float:
    return float(_apply_op(op, np.float64(a), np.float64(b)))


def _simplify(tree):
    if isinstance(tree, ExprLeaf):
        return tree
    if tree.op == Op.ONE:
        return _Const(1.0)
    a = _simplify(tree.args[0])
    b = _simplify(tree.args[1])
    if isinstance(a, _Const) and isinstance(b, _Const):
        return _Const(_fold(tree.op, a.value, b.value))
    # neutral elements; exact because operands are already clamped
    if tree.op == Op.ADD:
        if isinstance(a, _Const) and a.value == 0.0:
            return b
        if isinstance(b, _Const) and b.value == 0.0:
            return a
    elif tree.op == Op.SUB:
        if isinstance(b, _Const) and b.value == 0.0:
            return a
    elif tree.op == Op.MUL:
        if isinstance(a, _Const) and a.value == 1.0:
            return b
        if isinstance(b, _Const) and b.value == 1.0:
            return a
    elif tree.op == Op.DIV:
        if isinstance(b, _Const) and b.value == 1.0:
            return a
    return ExprNode(tree.op, (a, b))


_PRECEDENCE = {Op.ADD: 1, Op.SUB: 1, Op.MUL: 2, Op.DIV: 2}


def _fmt_const(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _render(tree, names: list[str]) -> str:
    if isinstance(tree, ExprLeaf):
        return names[tree.terminal]
    if isinstance(tree, _Const):
        if tree.value < 0:
            return f"({_fmt_const(tree.value)})"
        return _fmt_const(tree.value)
    prec = _PRECEDENCE[tree.op]
    left, right = tree.args

    def side(sub, is_right: bool) -> str:
        text = _render(sub, names)
        sub_prec = _PRECEDENCE.get(getattr(sub, "op", None), 3)
        # right operands of equal precedence keep parentheses so the printed
        # string re-associates exactly like the graph
        if sub_prec < prec or (is_right and sub_prec == prec):
            return f"({text})"
        return text

    if tree.op in (Op.ADD, Op.SUB):
        return f"{side(left, False)} {OP_SYMBOL[tree.op]} {side(right, True)}"
    return f"{side(left, False)}{OP_SYMBOL[tree.op]}{side(right, True)}"


def default_input_names(n_inputs: int) -> list[str]:
    return [f"x{i}" for i in range(n_inputs)]


def to_expression_string(genome: Genome, input_names: list[str] | None = None) -> str:
    """Render the active subgraph as a canonical infix expression.

    Constants are folded (with the same clamped arithmetic as `evaluate`) and
    neutral elements dropped, so parsing the string back reproduces
    `evaluate` on inputs within the clamp range.
    """
    if input_names is None:
        input_names = default_input_names(genome.n_inputs)
    if len(input_names) != genome.n_inputs:
        raise GenomeError(
            f"need {genome.n_inputs} input names, got {len(input_names)}"
        )
    return _render(_simplify(decode_active(genome)), list(input_names))
