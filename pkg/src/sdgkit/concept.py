"""Finite boolean concept classes and their combinatorial dimensions.

A class is stored as a boolean evaluation table: one row per hypothesis, one
column per domain point.  Rows are deduplicated and sorted lexicographically,
so two classes with the same set of functions compare equal.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from sdgkit.rng import stream

MAX_VC_POINTS = 24
MAX_ROWS = 4096
MAX_CUBE = 20
ZOO_NAMES = ("cube", "thresholds", "singletons", "half_arcs", "random")


class EmptyClassError(ValueError):
    pass


class SizeCapError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    size: int
    labels: Optional[tuple] = None

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("domain size must be at least 1")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != self.size:
                raise ValueError(
                    f"got {len(self.labels)} labels for a domain of size {self.size}"
                )


def _canonical(table):
    table = np.asarray(table, dtype=bool)
    if table.ndim != 2:
        raise ValueError("evaluation table must be two-dimensional")
    if table.shape[0] == 0:
        return table.copy()
    # np.unique on uint8 rows sorts lexicographically, with 0 before 1
    return np.unique(table.astype(np.uint8), axis=0).astype(bool)


class ConceptClass:
    """Immutable set of boolean functions over ``range(n_points)``.

    Args:
        rows: array-like of shape (k, n) with 0/1 entries.
        n_points: domain size, needed only when ``rows`` is empty.
        labels: optional point names.
    """

    __slots__ = ("table", "domain", "_hash")

    def __init__(self, rows, n_points=None, labels=None):
        rows = np.asarray(rows, dtype=bool)
        if rows.ndim == 1 and rows.size == 0:
            if n_points is None:
                raise ValueError("n_points is required for an empty class")
            rows = rows.reshape(0, n_points)
        table = _canonical(rows)
        if n_points is not None and table.shape[1] != n_points:
            raise ValueError(f"rows have {table.shape[1]} columns, expected {n_points}")
        table.setflags(write=False)
        self.table = table
        self.domain = Domain(table.shape[1], labels)
        self._hash = hash((table.shape, table.tobytes()))

    @property
    def n_points(self):
        return self.table.shape[1]

    @property
    def n_rows(self):
        return self.table.shape[0]

    def __len__(self):
        return self.n_rows

    def is_empty(self):
        return self.n_rows == 0

    def __eq__(self, other):
        if not isinstance(other, ConceptClass):
            return NotImplemented
        return self.table.shape == other.table.shape and bool(
            np.array_equal(self.table, other.table)
        )

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"ConceptClass(rows={self.n_rows}, points={self.n_points})"

    def row_strings(self):
        return ["".join("1" if b else "0" for b in row) for row in self.table]

    def index_of(self, bits):
        """Row index of hypothesis ``bits``, or ``None`` if absent."""
        bits = np.asarray(bits, dtype=bool)
        hits = np.flatnonzero((self.table == bits).all(axis=1))
        return int(hits[0]) if hits.size else None

    def is_symmetric(self):
        return all(self.index_of(~row) is not None for row in self.table)

    def complement_index(self):
        """For a symmetric class, map each row index to its complement's index."""
        out = np.empty(self.n_rows, dtype=np.int64)
        for i, row in enumerate(self.table):
            j = self.index_of(~row)
            if j is None:
                raise ValueError("class is not closed under complement")
            out[i] = j
        return out

    def fingerprint(self):
        import hashlib

        h = hashlib.sha256()
        h.update(f"{self.n_rows}x{self.n_points}".encode())
        h.update(np.packbits(self.table).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class MistakeTree:
    """Complete binary tree in heap layout.

    ``nodes[i]`` is the point queried at internal node ``i``; its children are
    ``2i+1`` (label 0) and ``2i+2`` (label 1).  ``leaves[b]`` is a hypothesis
    index realizing the path whose labels are the bits of ``b``, most
    significant bit first.
    """

    depth: int
    nodes: tuple
    leaves: tuple

    def path(self, leaf):
        """List of (point, label) pairs from the root to ``leaf``."""
        out = []
        node = 0
        for level in range(self.depth):
            label = (leaf >> (self.depth - 1 - level)) & 1
            out.append((self.nodes[node], label))
            node = 2 * node + 1 + label
        return out


@dataclass(frozen=True)
class DimensionReport:
    vc: int
    ldim: int
    dual_ldim: int
    dual_bound: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "dual_bound", dual_ldim_bound(self.ldim))

    @property
    def bound_holds(self):
        return self.dual_ldim <= self.dual_bound

    def to_dict(self):
        return {
            "vc": self.vc,
            "ldim": self.ldim,
            "dual_ldim": self.dual_ldim,
            "dual_bound": self.dual_bound,
            "bound_holds": self.bound_holds,
        }


def dual_ldim_bound(ldim):
    """Upper bound 2^(2^(ldim+2)) - 2 on the dual Littlestone dimension."""
    return 2 ** (2 ** (ldim + 2)) - 2


# ---------------------------------------------------------------- transforms


def symmetrize(c: ConceptClass) -> ConceptClass:
    return ConceptClass(np.vstack([c.table, ~c.table]), n_points=c.n_points)


def dualize(c: ConceptClass) -> ConceptClass:
    """Transpose the evaluation table; identical columns collapse."""
    return ConceptClass(c.table.T, n_points=c.n_rows)


def dual_representatives(c: ConceptClass) -> np.ndarray:
    """For each row of ``dualize(c)``, the lowest point of ``c`` it came from."""
    dual = dualize(c)
    reps = np.empty(dual.n_rows, dtype=np.int64)
    for j, row in enumerate(dual.table):
        reps[j] = int(np.flatnonzero((c.table.T == row).all(axis=1))[0])
    return reps


def restrict(c: ConceptClass, point: int, label: int) -> ConceptClass:
    if not 0 <= point < c.n_points:
        raise IndexError(f"point {point} outside domain of size {c.n_points}")
    keep = c.table[:, point] == bool(label)
    return ConceptClass(c.table[keep], n_points=c.n_points)


# ---------------------------------------------------------------- dimensions


def column_masks(table) -> list:
    """Per column, the int bitmask of rows that evaluate to 1 there."""
    table = np.asarray(table, dtype=bool)
    masks = []
    for col in table.T:
        packed = np.packbits(col, bitorder="little")
        masks.append(int.from_bytes(packed.tobytes(), "little"))
    return masks


class BitLdim:
    """Littlestone dimension of subsets of a fixed hypothesis set.

    Hypotheses are bits of an int; ``split_masks`` lists, per query point, the
    hypotheses labelling it 1.  Results are memoized per instance.  The empty
    set has dimension -1.
    """

    def __init__(self, split_masks):
        self.masks = list(dict.fromkeys(split_masks))
        self.memo = {}

    def __call__(self, members: int) -> int:
        limit = sys.getrecursionlimit()
        if limit < 20000:
            sys.setrecursionlimit(20000)
        try:
            return self._ldim(members)
        finally:
            sys.setrecursionlimit(limit)

    def _ldim(self, members):
        if members == 0:
            return -1
        count = members.bit_count()
        if count == 1:
            return 0
        hit = self.memo.get(members)
        if hit is not None:
            return hit
        ceiling = count.bit_length() - 1
        best = 0
        seen = set()
        for mask in self.masks:
            ones = members & mask
            if ones == 0 or ones == members:
                continue
            zeros = members ^ ones
            key = min(ones, zeros)
            if key in seen:
                continue
            seen.add(key)
            small, big = (ones, zeros) if ones.bit_count() <= zeros.bit_count() else (zeros, ones)
            if small.bit_count().bit_length() <= best:
                # 1 + floor(log2 |small|) cannot beat best
                continue
            low = self._ldim(small)
            if low + 1 <= best:
                continue
            high = self._ldim(big)
            value = 1 + min(low, high)
            if value > best:
                best = value
                if best == ceiling:
                    break
        self.memo[members] = best
        return best


def _full_mask(k):
    return (1 << k) - 1


def _check_rows(c, max_rows):
    if c.is_empty():
        raise EmptyClassError("empty class")
    if max_rows is not None and c.n_rows > max_rows:
        raise SizeCapError(
            f"class has {c.n_rows} rows, above the cap of {max_rows}; raise max_rows to proceed"
        )


def littlestone_dimension(c: ConceptClass, max_rows: Optional[int] = MAX_ROWS) -> int:
    _check_rows(c, max_rows)
    return BitLdim(column_masks(c.table))(_full_mask(c.n_rows))


def dual_littlestone_dimension(c: ConceptClass, max_rows: Optional[int] = MAX_ROWS) -> int:
    _check_rows(c, max_rows)
    value = littlestone_dimension(dualize(c), max_rows=max_rows)
    primal = littlestone_dimension(c, max_rows=max_rows)
    if value > dual_ldim_bound(primal):
        raise AssertionError(f"dual dimension {value} exceeds the bound for ldim {primal}")
    return value


def vc_dimension(
    c: ConceptClass,
    max_points: Optional[int] = MAX_VC_POINTS,
    max_rows: Optional[int] = MAX_ROWS,
) -> int:
    _check_rows(c, max_rows)
    if max_points is not None and c.n_points > max_points:
        raise SizeCapError(
            f"domain has {c.n_points} points, above the cap of {max_points}"
        )
    table = c.table.astype(np.int64)
    best = 0
    top = min(c.n_points, int(math.floor(math.log2(c.n_rows))))
    for size in range(1, top + 1):
        weights = 1 << np.arange(size)
        found = False
        for subset in combinations(range(c.n_points), size):
            codes = table[:, subset] @ weights
            if np.unique(codes).size == 1 << size:
                found = True
                break
        if not found:
            break
        best = size
    return best


def dimension_report(c: ConceptClass, **caps) -> DimensionReport:
    return DimensionReport(
        vc=vc_dimension(c, **caps),
        ldim=littlestone_dimension(c, max_rows=caps.get("max_rows", MAX_ROWS)),
        dual_ldim=dual_littlestone_dimension(c, max_rows=caps.get("max_rows", MAX_ROWS)),
    )


def shattered_tree(c: ConceptClass, depth: int, max_rows: Optional[int] = MAX_ROWS):
    """A mistake tree of exactly ``depth`` shattered by ``c``, or ``None``."""
    if depth < 0:
        raise ValueError("depth must be non-negative")
    _check_rows(c, max_rows)
    masks = column_masks(c.table)
    ldim = BitLdim(masks)
    everything = _full_mask(c.n_rows)
    if ldim(everything) < depth:
        return None
    nodes = [None] * ((1 << depth) - 1)
    leaves = [None] * (1 << depth)

    def grow(members, level, node, prefix):
        if level == depth:
            leaves[prefix] = (members & -members).bit_length() - 1
            return
        need = depth - level - 1
        for point, mask in enumerate(masks):
            ones = members & mask
            zeros = members ^ ones
            if ones and zeros and ldim(zeros) >= need and ldim(ones) >= need:
                nodes[node] = point
                grow(zeros, level + 1, 2 * node + 1, prefix << 1)
                grow(ones, level + 1, 2 * node + 2, (prefix << 1) | 1)
                return
        raise AssertionError("no splitting point despite sufficient dimension")

    grow(everything, 0, 0, 0)
    return MistakeTree(depth=depth, nodes=tuple(nodes), leaves=tuple(leaves))


def validate_tree(c: ConceptClass, tree: MistakeTree) -> bool:
    """Check that every root-to-leaf path is realized by its leaf hypothesis."""
    if len(tree.nodes) != (1 << tree.depth) - 1 or len(tree.leaves) != 1 << tree.depth:
        return False
    for leaf, hyp in enumerate(tree.leaves):
        if hyp is None or not 0 <= hyp < c.n_rows:
            return False
        for point, label in tree.path(leaf):
            if bool(c.table[hyp, point]) != bool(label):
                return False
    return True


# ---------------------------------------------------------------- zoo


def class_zoo(name: str, n: int, k: int = 0, seed: int = 0) -> ConceptClass:
    """Named constructions.

    ``cube``: all 2^n functions.  ``thresholds``: x -> [x >= j] for j = 0..n.
    ``singletons``: point indicators.  ``half_arcs``: the n cyclic intervals of
    n/2 points on an n-point circle, closed under complement by construction.
    ``random``: k distinct uniform rows drawn from ``seed``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if name == "cube":
        if n > MAX_CUBE:
            raise SizeCapError(f"cube is capped at n <= {MAX_CUBE}")
        codes = np.arange(1 << n)[:, None]
        rows = (codes >> np.arange(n - 1, -1, -1)) & 1
    elif name == "thresholds":
        rows = np.arange(n)[None, :] >= np.arange(n + 1)[:, None]
    elif name == "singletons":
        rows = np.eye(n, dtype=bool)
    elif name == "half_arcs":
        if n % 2:
            raise ValueError("half_arcs needs an even number of points")
        offsets = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
        rows = offsets < n // 2
    elif name == "random":
        if n > 62:
            raise SizeCapError("random classes are capped at n <= 62")
        if k > 1 << n:
            raise ValueError(f"cannot draw {k} distinct rows over {n} points")
        if k < 1:
            raise ValueError("random classes need k >= 1")
        rng = stream(seed, "zoo", "random", n, k)
        codes = rng.choice(1 << n, size=k, replace=False)
        rows = (np.asarray(codes, dtype=np.int64)[:, None] >> np.arange(n - 1, -1, -1)) & 1
    else:
        raise ValueError(f"unknown class {name!r}; choose from {', '.join(ZOO_NAMES)}")
    return ConceptClass(rows, n_points=n)


# ---------------------------------------------------------------- files


def parse_class(text: str) -> ConceptClass:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("class file is empty")
    try:
        n, k = (int(tok) for tok in lines[0].split())
    except ValueError:
        raise ValueError("first line must be 'n k'") from None
    body = lines[1:]
    if len(body) != k:
        raise ValueError(f"header promises {k} rows, found {len(body)}")
    for i, line in enumerate(body, start=2):
        if len(line) != n or set(line) - {"0", "1"}:
            raise ValueError(f"line {i}: expected {n} characters from {{0,1}}")
    rows = np.array([[ch == "1" for ch in line] for line in body], dtype=bool).reshape(k, n)
    return ConceptClass(rows, n_points=n)


def load_class(path) -> ConceptClass:
    return parse_class(Path(path).read_text())


def format_class(c: ConceptClass) -> str:
    lines = [f"{c.n_points} {c.n_rows}", *c.row_strings()]
    return "\n".join(lines) + "\n"


def save_class(c: ConceptClass, path) -> None:
    Path(path).write_text(format_class(c))


def class_from_strings(rows: Sequence[str]) -> ConceptClass:
    """Convenience constructor: ``class_from_strings(["10", "01"])``."""
    n = len(rows[0])
    return ConceptClass([[ch == "1" for ch in r] for r in rows], n_points=n)
