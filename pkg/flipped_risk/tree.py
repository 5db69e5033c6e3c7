"""Binary decision trees over a fixed design: in-place growth for the sampler, flat storage for draws."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

LEAF = -1
FREE = -2


def cut_grid(column: np.ndarray, max_cuts: int = 100) -> np.ndarray:
    """Candidate thresholds for one column: midpoints between sorted distinct values.

    Indicator columns therefore get the single threshold 0.5. Columns with more than `max_cuts`
    midpoints are thinned to evenly spaced ones.
    """
    distinct = np.unique(column[np.isfinite(column)])
    if distinct.size < 2:
        return np.empty(0)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    if mids.size > max_cuts:
        picks = np.unique(np.linspace(0, mids.size - 1, max_cuts).round().astype(np.int64))
        mids = mids[picks]
    return mids


class DecisionTree:
    """A binary tree stored in parallel node arrays.

    Node `k` is a leaf when `var[k] == LEAF`, free when `var[k] == FREE`, otherwise it sends a
    row left when `x[var[k]] < cut[k]`. `rule[k]` indexes `cut[k]` in the column's cut grid.
    `leaf_of[i]` is the leaf currently holding row `i` of the design the tree was built on.
    """

    __slots__ = ("var", "rule", "cut", "left", "right", "parent", "depth", "value", "leaf_of")

    def __init__(self, n_rows: int, leaf_value: float = 0.0, capacity: int = 8) -> None:
        self.var = np.full(capacity, FREE, dtype=np.int64)
        self.rule = np.zeros(capacity, dtype=np.int64)
        self.cut = np.zeros(capacity, dtype=float)
        self.left = np.full(capacity, -1, dtype=np.int64)
        self.right = np.full(capacity, -1, dtype=np.int64)
        self.parent = np.full(capacity, -1, dtype=np.int64)
        self.depth = np.zeros(capacity, dtype=np.int64)
        self.value = np.zeros(capacity, dtype=float)
        self.var[0] = LEAF
        self.value[0] = leaf_value
        self.leaf_of = np.zeros(n_rows, dtype=np.int64)

    # Structure queries
    def leaves(self) -> np.ndarray:
        """Indices of leaf nodes."""
        return np.flatnonzero(self.var == LEAF)

    def internal(self) -> np.ndarray:
        """Indices of internal nodes."""
        return np.flatnonzero(self.var >= 0)

    def nog_nodes(self) -> np.ndarray:
        """Internal nodes whose two children are both leaves."""
        nodes = self.internal()
        if nodes.size == 0:
            return nodes
        both = (self.var[self.left[nodes]] == LEAF) & (self.var[self.right[nodes]] == LEAF)
        return nodes[both]

    @property
    def n_leaves(self) -> int:
        """Number of leaves."""
        return int(np.count_nonzero(self.var == LEAF))

    @property
    def is_stump(self) -> bool:
        """True when the root is the only node."""
        return bool(self.var[0] == LEAF)

    def max_depth(self) -> int:
        """Depth of the deepest leaf."""
        return int(self.depth[self.leaves()].max())

    def rows_of(self, node: int) -> np.ndarray:
        """Rows held by a leaf."""
        return np.flatnonzero(self.leaf_of == node)

    def rule_bounds(self, node: int, n_cuts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Per-variable half-open range [lo, hi) of cut indices still useful at `node`.

        Ancestors that split on a variable narrow its range; a variable is available when lo < hi.
        """
        lo = np.zeros(n_cuts.size, dtype=np.int64)
        hi = n_cuts.astype(np.int64).copy()
        child = node
        parent = self.parent[child]
        while parent >= 0:
            var = self.var[parent]
            rule = self.rule[parent]
            if self.left[parent] == child:
                hi[var] = min(hi[var], rule)
            else:
                lo[var] = max(lo[var], rule + 1)
            child = parent
            parent = self.parent[child]
        return lo, hi

    # Mutation
    def _allocate(self) -> int:
        free = np.flatnonzero(self.var == FREE)
        if free.size:
            return int(free[0])
        old = self.var.size
        grow = old
        self.var = np.concatenate([self.var, np.full(grow, FREE, dtype=np.int64)])
        self.rule = np.concatenate([self.rule, np.zeros(grow, dtype=np.int64)])
        self.cut = np.concatenate([self.cut, np.zeros(grow)])
        self.left = np.concatenate([self.left, np.full(grow, -1, dtype=np.int64)])
        self.right = np.concatenate([self.right, np.full(grow, -1, dtype=np.int64)])
        self.parent = np.concatenate([self.parent, np.full(grow, -1, dtype=np.int64)])
        self.depth = np.concatenate([self.depth, np.zeros(grow, dtype=np.int64)])
        self.value = np.concatenate([self.value, np.zeros(grow)])
        return old

    def birth(self, node: int, var: int, rule: int, cut: float, rows: np.ndarray, goes_left: np.ndarray) -> Tuple[int, int]:
        """Split leaf `node`; `rows` are its rows and `goes_left` their routing."""
        left = self._allocate()
        self.var[left] = LEAF
        right = self._allocate()
        for child in (left, right):
            self.var[child] = LEAF
            self.parent[child] = node
            self.depth[child] = self.depth[node] + 1
            self.value[child] = self.value[node]
            self.left[child] = -1
            self.right[child] = -1
        self.var[node] = var
        self.rule[node] = rule
        self.cut[node] = cut
        self.left[node] = left
        self.right[node] = right
        self.leaf_of[rows[goes_left]] = left
        self.leaf_of[rows[~goes_left]] = right
        return left, right

    def death(self, node: int) -> None:
        """Collapse `node`, whose children must both be leaves, back into a leaf."""
        left, right = self.left[node], self.right[node]
        self.leaf_of[(self.leaf_of == left) | (self.leaf_of == right)] = node
        for child in (left, right):
            self.var[child] = FREE
            self.parent[child] = -1
        self.var[node] = LEAF
        self.left[node] = -1
        self.right[node] = -1

    def change(self, node: int, var: int, rule: int, cut: float, rows: np.ndarray, goes_left: np.ndarray) -> None:
        """Replace the rule of a node whose children are both leaves."""
        self.var[node] = var
        self.rule[node] = rule
        self.cut[node] = cut
        self.leaf_of[rows[goes_left]] = self.left[node]
        self.leaf_of[rows[~goes_left]] = self.right[node]

    def fitted(self) -> np.ndarray:
        """Leaf value of every row."""
        return self.value[self.leaf_of]

    def route(self, X: np.ndarray) -> np.ndarray:
        """Leaf index of each row of `X`."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            var = self.var[node]
            active = var >= 0
            if not active.any():
                return node
            idx = rows[active]
            at = node[active]
            go_left = X[idx, var[active]] < self.cut[at]
            node[idx] = np.where(go_left, self.left[at], self.right[at])

    def compact(self) -> "TreeArrays":
        """Live nodes in breadth-first order with re-indexed children."""
        order: List[int] = []
        queue = [0]
        while queue:
            node = queue.pop(0)
            order.append(node)
            if self.var[node] >= 0:
                queue.extend([int(self.left[node]), int(self.right[node])])
        order_arr = np.asarray(order, dtype=np.int64)
        remap = np.full(self.var.size, -1, dtype=np.int64)
        remap[order_arr] = np.arange(order_arr.size)
        var = self.var[order_arr].copy()
        internal = var >= 0
        left = np.where(internal, remap[np.maximum(self.left[order_arr], 0)], -1)
        right = np.where(internal, remap[np.maximum(self.right[order_arr], 0)], -1)
        return TreeArrays(
            var=var,
            cut=self.cut[order_arr].copy(),
            left=left,
            right=right,
            value=np.where(internal, 0.0, self.value[order_arr]),
        )


@dataclass(frozen=True, eq=False)
class TreeArrays:
    """Immutable node arrays of one tree; node 0 is the root."""

    var: np.ndarray
    cut: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def constant(cls, value: float) -> "TreeArrays":
        """A single-leaf tree."""
        return cls(
            var=np.array([LEAF], dtype=np.int64),
            cut=np.zeros(1),
            left=np.array([-1], dtype=np.int64),
            right=np.array([-1], dtype=np.int64),
            value=np.array([float(value)]),
        )

    def describe(self) -> List[dict]:
        """One dict per node: split column and threshold with children, or the leaf value."""
        nodes = []
        for k in range(self.var.size):
            if self.var[k] >= 0:
                nodes.append(
                    {"split_column": int(self.var[k]), "split_rule": float(self.cut[k]),
                     "left": int(self.left[k]), "right": int(self.right[k])}
                )
            else:
                nodes.append({"leaf_value": float(self.value[k])})
        return nodes


@dataclass(frozen=True, eq=False)
class Forest:
    """Trees of one ensemble concatenated into flat arrays; `roots[t]` is tree t's root."""

    var: np.ndarray
    cut: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray

    @classmethod
    def from_trees(cls, trees: Sequence[TreeArrays]) -> "Forest":
        """Concatenate trees, offsetting child indices."""
        offsets = np.cumsum([0] + [tree.var.size for tree in trees[:-1]]).astype(np.int64)
        var = np.concatenate([tree.var for tree in trees])
        cut = np.concatenate([tree.cut for tree in trees])
        value = np.concatenate([tree.value for tree in trees])
        left = np.concatenate([np.where(t.left >= 0, t.left + off, -1) for t, off in zip(trees, offsets)])
        right = np.concatenate([np.where(t.right >= 0, t.right + off, -1) for t, off in zip(trees, offsets)])
        return cls(var=var, cut=cut, left=left, right=right, value=value, roots=offsets)

    @property
    def n_trees(self) -> int:
        """Number of trees."""
        return int(self.roots.size)

    @property
    def n_nodes(self) -> int:
        """Total nodes across trees."""
        return int(self.var.size)

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        """Matrix (rows, trees) of the leaf value each tree assigns each row."""
        n = X.shape[0]
        node = np.broadcast_to(self.roots, (n, self.n_trees)).copy()
        row = np.broadcast_to(np.arange(n)[:, None], node.shape)
        while True:
            var = self.var[node]
            active = var >= 0
            if not active.any():
                return self.value[node]
            at = node[active]
            go_left = X[row[active], var[active]] < self.cut[at]
            node[active] = np.where(go_left, self.left[at], self.right[at])

    def tree(self, index: int) -> TreeArrays:
        """Extract tree `index` with local node indices."""
        start = int(self.roots[index])
        stop = int(self.roots[index + 1]) if index + 1 < self.n_trees else self.n_nodes
        span = slice(start, stop)
        local = lambda child: np.where(child >= 0, child - start, -1)  # noqa: E731
        return TreeArrays(
            var=self.var[span].copy(), cut=self.cut[span].copy(),
            left=local(self.left[span]), right=local(self.right[span]), value=self.value[span].copy(),
        )
