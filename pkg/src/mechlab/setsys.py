"""Downward-closed set systems, greedy, weighted rank and p-independence.

Elements are the integers ``0..n-1``.  Exhaustive routines encode subsets as
bitmasks (bit ``i`` set iff element ``i`` is present).
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, ClassVar, Iterable, Sequence

import networkx as nx
import numpy as np

from .errors import CapacityError, DomainError

EXHAUSTIVE_LIMIT = 12
TABLE_LIMIT = 20
BRUTE_FORCE_LIMIT = 20


class SetSystem(ABC):
    kind: ClassVar[str]
    is_matroid: ClassVar[bool] = False

    @property
    @abstractmethod
    def n(self) -> int:
        ...

    @abstractmethod
    def _feasible(self, S: frozenset[int]) -> bool:
        ...

    @abstractmethod
    def to_config(self) -> dict[str, Any]:
        ...

    def _can_add(self, A: Sequence[int], i: int) -> bool:
        return self._feasible(frozenset(A) | {i})

    def is_feasible(self, S: Iterable[int]) -> bool:
        return self._feasible(_check_subset(self, S))


def _check_subset(sys: SetSystem, S: Iterable[int]) -> frozenset[int]:
    S = frozenset(int(i) for i in S)
    if S and (min(S) < 0 or max(S) >= sys.n):
        raise DomainError(f"set {sorted(S)} is not a subset of the ground set 0..{sys.n - 1}")
    return S


@dataclass(frozen=True)
class UniformMatroid(SetSystem):
    size: int
    k: int
    kind: ClassVar[str] = "uniform"
    is_matroid: ClassVar[bool] = True

    def __post_init__(self):
        if self.size < 1 or self.k < 0:
            raise DomainError("uniform matroid needs n >= 1 and k >= 0")

    @property
    def n(self) -> int:
        return self.size

    def _feasible(self, S):
        return len(S) <= self.k

    def _can_add(self, A, i):
        return len(A) < self.k

    def to_config(self):
        return {"type": "uniform", "n": self.size, "k": self.k}


@dataclass(frozen=True)
class PartitionMatroid(SetSystem):
    parts: tuple[tuple[int, ...], ...]
    caps: tuple[int, ...]
    kind: ClassVar[str] = "partition"
    is_matroid: ClassVar[bool] = True
    _part_of: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        parts = tuple(tuple(int(i) for i in p) for p in self.parts)
        caps = tuple(int(c) for c in self.caps)
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "caps", caps)
        flat = sorted(i for p in parts for i in p)
        if flat != list(range(len(flat))) or not flat:
            raise DomainError("partition parts must cover 0..n-1 exactly once")
        if len(caps) != len(parts) or any(c < 0 for c in caps):
            raise DomainError("partition needs one non-negative cap per part")
        object.__setattr__(self, "_part_of", {i: j for j, p in enumerate(parts) for i in p})

    @property
    def n(self) -> int:
        return sum(len(p) for p in self.parts)

    def _feasible(self, S):
        counts = [0] * len(self.parts)
        for i in S:
            counts[self._part_of[i]] += 1
        return all(c <= cap for c, cap in zip(counts, self.caps))

    def _can_add(self, A, i):
        j = self._part_of[i]
        return sum(1 for a in A if self._part_of[a] == j) < self.caps[j]

    def to_config(self):
        return {"type": "partition", "parts": [list(p) for p in self.parts], "caps": list(self.caps)}


def _acyclic(edges: Iterable[tuple[int, int]]) -> bool:
    parent: dict[int, int] = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in edges:
        ru, rv = find(u), find(v)
        if ru == rv:
            return False
        parent[ru] = rv
    return True


def _edge_tuple(edges) -> tuple[tuple[int, int], ...]:
    out = tuple((int(u), int(v)) for u, v in edges)
    if not out:
        raise DomainError("edge list must be non-empty")
    return out


@dataclass(frozen=True)
class GraphicMatroid(SetSystem):
    """Edges of a multigraph; a set is feasible iff it is a forest."""

    edges: tuple[tuple[int, int], ...]
    kind: ClassVar[str] = "graphic"
    is_matroid: ClassVar[bool] = True

    def __post_init__(self):
        object.__setattr__(self, "edges", _edge_tuple(self.edges))

    @property
    def n(self) -> int:
        return len(self.edges)

    def _feasible(self, S):
        return _acyclic(self.edges[i] for i in S)

    def to_config(self):
        return {"type": "graphic", "edges": [list(e) for e in self.edges]}


@dataclass(frozen=True)
class TransversalMatroid(SetSystem):
    """Element ``i`` may be assigned to any right vertex in ``sets[i]``.

    A set is feasible iff its elements can be assigned to distinct right vertices.
    """

    sets: tuple[tuple[int, ...], ...]
    kind: ClassVar[str] = "transversal"
    is_matroid: ClassVar[bool] = True

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(tuple(int(r) for r in s) for s in self.sets))
        if not self.sets:
            raise DomainError("transversal matroid needs at least one element")

    @property
    def n(self) -> int:
        return len(self.sets)

    def _feasible(self, S):
        if not S:
            return True
        g = nx.Graph()
        left = [("L", i) for i in S]
        g.add_nodes_from(left)
        g.add_edges_from((("L", i), ("R", r)) for i in S for r in self.sets[i])
        matching = nx.bipartite.hopcroft_karp_matching(g, top_nodes=left)
        return sum(1 for node in matching if node[0] == "L") == len(S)

    def to_config(self):
        return {"type": "transversal", "sets": [list(s) for s in self.sets]}


@dataclass(frozen=True)
class MatchingSystem(SetSystem):
    """Edges of a graph; a set is feasible iff no two edges share an endpoint."""

    edges: tuple[tuple[int, int], ...]
    kind: ClassVar[str] = "matching"

    def __post_init__(self):
        object.__setattr__(self, "edges", _edge_tuple(self.edges))

    @property
    def n(self) -> int:
        return len(self.edges)

    def _feasible(self, S):
        seen: set[int] = set()
        for i in S:
            u, v = self.edges[i]
            if u == v or u in seen or v in seen:
                return False
            seen.update((u, v))
        return True

    def to_config(self):
        return {"type": "matching", "edges": [list(e) for e in self.edges]}


@dataclass(frozen=True)
class MatroidIntersection(SetSystem):
    systems: tuple[SetSystem, ...]
    kind: ClassVar[str] = "matroid_intersection"

    def __post_init__(self):
        object.__setattr__(self, "systems", tuple(self.systems))
        if not self.systems or len({s.n for s in self.systems}) != 1:
            raise DomainError("intersection needs matroids over one common ground set")

    @property
    def n(self) -> int:
        return self.systems[0].n

    def _feasible(self, S):
        return all(s._feasible(S) for s in self.systems)

    def _can_add(self, A, i):
        return all(s._can_add(A, i) for s in self.systems)

    def to_config(self):
        return {"type": "intersection", "systems": [s.to_config() for s in self.systems]}


@dataclass(frozen=True)
class ExplicitSystem(SetSystem):
    """Feasible family listed explicitly; the empty set is always included."""

    size: int
    family: frozenset[frozenset[int]]
    kind: ClassVar[str] = "explicit"

    def __post_init__(self):
        fam = frozenset(frozenset(int(i) for i in S) for S in self.family) | {frozenset()}
        object.__setattr__(self, "family", fam)
        for S in fam:
            if S and (min(S) < 0 or max(S) >= self.size):
                raise DomainError(f"feasible set {sorted(S)} leaves the ground set")
            for i in S:
                if S - {i} not in fam:
                    raise DomainError(f"family is not downward-closed at {sorted(S)}")

    @property
    def n(self) -> int:
        return self.size

    def _feasible(self, S):
        return S in self.family

    def to_config(self):
        return {"type": "explicit", "n": self.size,
                "feasible": sorted(sorted(S) for S in self.family)}


@dataclass(frozen=True)
class MinisetSystem(SetSystem):
    """Index pairs ``(i, b)``, ``i, b`` in ``0..m-1``, stored as element ``i*m + b``.

    A set is feasible iff all its pairs share the same first coordinate.
    """

    m: int
    kind: ClassVar[str] = "miniset"

    def __post_init__(self):
        if self.m < 1:
            raise DomainError("miniset system needs m >= 1")

    @property
    def n(self) -> int:
        return self.m * self.m

    def pair(self, e: int) -> tuple[int, int]:
        return divmod(e, self.m)

    def _feasible(self, S):
        return len({e // self.m for e in S}) <= 1

    def _can_add(self, A, i):
        return not A or A[0] // self.m == i // self.m

    def to_config(self):
        return {"type": "miniset", "n": self.m}


def miniset_system(m: int) -> MinisetSystem:
    if m < 2:
        raise DomainError("miniset construction needs m >= 2")
    return MinisetSystem(m)


def system_from_config(cfg: dict[str, Any]) -> SetSystem:
    kind = cfg.get("type")
    try:
        if kind == "uniform":
            return UniformMatroid(int(cfg["n"]), int(cfg["k"]))
        if kind == "partition":
            return PartitionMatroid(cfg["parts"], cfg["caps"])
        if kind == "graphic":
            return GraphicMatroid(cfg["edges"])
        if kind == "transversal":
            return TransversalMatroid(cfg["sets"])
        if kind == "matching":
            return MatchingSystem(cfg["edges"])
        if kind in ("intersection", "matroid_intersection"):
            return MatroidIntersection(tuple(system_from_config(c) for c in cfg["systems"]))
        if kind == "explicit":
            return ExplicitSystem(int(cfg["n"]), frozenset(frozenset(S) for S in cfg["feasible"]))
        if kind == "miniset":
            return MinisetSystem(int(cfg["n"]))
    except KeyError as exc:
        raise DomainError(f"set-system config missing field {exc}") from None
    raise DomainError(f"unknown set-system type {kind!r}")


def is_feasible(sys: SetSystem, S: Iterable[int]) -> bool:
    return sys.is_feasible(S)


# -- greedy ------------------------------------------------------------------------


def _weights(sys: SetSystem, w: Sequence[float]) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (sys.n,):
        raise DomainError(f"weight vector must have length {sys.n}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DomainError("weights must be finite and non-negative")
    return w


def greedy_order(w: Sequence[float], items: Iterable[int] | None = None) -> list[int]:
    """Descending weight, ties by ascending id."""
    items = range(len(w)) if items is None else items
    return sorted(items, key=lambda i: (-w[i], i))


@dataclass(frozen=True)
class GreedyTrace:
    """Full run of greedy over the ground set, restricted to accepting members of ``S``.

    ``checked`` holds every visited element that could have been added when
    visited; ``ignored`` those that could not.  ``blocks[j]`` lists the
    elements ignored while ``A`` held exactly ``j`` elements.
    """

    accepted: tuple[int, ...]
    checked: tuple[int, ...]
    ignored: tuple[int, ...]
    blocks: tuple[tuple[int, ...], ...]
    weight: float


def greedy(sys: SetSystem, S: Iterable[int], w: Sequence[float]) -> GreedyTrace:
    S = _check_subset(sys, S)
    w = _weights(sys, w)
    A: list[int] = []
    checked: list[int] = []
    ignored: list[int] = []
    blocks: list[list[int]] = [[]]
    for i in greedy_order(w):
        if sys._can_add(A, i):
            checked.append(i)
            if i in S:
                A.append(i)
                blocks.append([])
        else:
            ignored.append(i)
            blocks[len(A)].append(i)
    weight = float(sum(w[i] for i in A))
    return GreedyTrace(tuple(A), tuple(checked), tuple(ignored),
                       tuple(tuple(b) for b in blocks), weight)


def greedy_select(sys: SetSystem, order: Iterable[int], initial: Sequence[int] = ()) -> list[int]:
    """Accept elements of ``order`` one by one while feasible, starting from ``initial``."""
    A = list(initial)
    for i in order:
        if sys._can_add(A, i):
            A.append(i)
    return A


def _max_weight_subset(sys: SetSystem, S: frozenset[int], w: np.ndarray) -> tuple[float, frozenset[int]]:
    elems = [i for i in greedy_order(w, S) if w[i] > 0]
    if len(S) > BRUTE_FORCE_LIMIT:
        raise CapacityError("brute-force weighted rank", len(S), BRUTE_FORCE_LIMIT)
    best = (0.0, frozenset())

    def rec(start: int, A: list[int], total: float):
        nonlocal best
        if total > best[0]:
            best = (total, frozenset(A))
        for idx in range(start, len(elems)):
            i = elems[idx]
            if sys._can_add(A, i):
                A.append(i)
                rec(idx + 1, A, total + w[i])
                A.pop()

    rec(0, [], 0.0)
    return best


def max_weight_feasible(sys: SetSystem, S: Iterable[int], w: Sequence[float]) -> tuple[float, frozenset[int]]:
    """A maximum-weight feasible subset of ``S`` and its weight.

    Greedy on matroids, exhaustive search otherwise.  Zero-weight elements are never chosen.
    """
    S = _check_subset(sys, S)
    w = _weights(sys, w)
    if sys.is_matroid:
        A = greedy_select(sys, (i for i in greedy_order(w, S) if w[i] > 0))
        return float(sum(w[i] for i in A)), frozenset(A)
    if isinstance(sys, MinisetSystem):
        groups: dict[int, list[int]] = {}
        for e in S:
            if w[e] > 0:
                groups.setdefault(e // sys.m, []).append(e)
        if not groups:
            return 0.0, frozenset()
        best = max(sorted(groups), key=lambda g: sum(w[e] for e in groups[g]))
        return float(sum(w[e] for e in groups[best])), frozenset(groups[best])
    return _max_weight_subset(sys, S, w)


def weighted_rank(sys: SetSystem, S: Iterable[int], w: Sequence[float]) -> float:
    return max_weight_feasible(sys, S, w)[0]


def rank(sys: SetSystem, S: Iterable[int]) -> int:
    return int(round(weighted_rank(sys, S, np.ones(sys.n))))


# -- exhaustive tables ---------------------------------------------------------


@lru_cache(maxsize=32)
def subset_bits(n: int) -> np.ndarray:
    """``(2**n, n)`` boolean matrix; row ``m`` is the indicator of mask ``m``."""
    masks = np.arange(1 << n, dtype=np.int64)
    return ((masks[:, None] >> np.arange(n)) & 1).astype(bool)


def mask_to_set(mask: int) -> frozenset[int]:
    return frozenset(i for i in range(mask.bit_length()) if mask >> i & 1)


@lru_cache(maxsize=64)
def feasible_table(sys: SetSystem) -> np.ndarray:
    n = sys.n
    if n > TABLE_LIMIT:
        raise CapacityError("feasibility table", n, TABLE_LIMIT)
    table = np.zeros(1 << n, dtype=bool)
    table[0] = True
    # downward closure: only masks whose one-smaller subsets are feasible need the oracle
    for mask in range(1, 1 << n):
        low = mask & -mask
        if not table[mask ^ low]:
            continue
        table[mask] = sys._feasible(mask_to_set(mask))
    return table


def _subset_max(values: np.ndarray, n: int) -> np.ndarray:
    """``out[S] = max over T subset of S of values[T]``."""
    out = values.copy()
    masks = np.arange(1 << n)
    for i in range(n):
        has = (masks >> i) & 1 == 1
        sel = masks[has]
        out[sel] = np.maximum(out[sel], out[sel ^ (1 << i)])
    return out


def weighted_rank_table(sys: SetSystem, w: Sequence[float]) -> np.ndarray:
    """``w*(S)`` for every mask ``S``."""
    w = _weights(sys, w)
    n = sys.n
    if isinstance(sys, UniformMatroid):
        # sum of the k largest weights present
        bits = subset_bits(n)
        order = greedy_order(w)
        taken = np.cumsum(bits[:, order], axis=1) <= sys.k
        return (bits[:, order] & taken) @ w[order]
    base = np.where(feasible_table(sys), subset_bits(n) @ w, 0.0)
    return _subset_max(base, n)


def greedy_table(sys: SetSystem, w: Sequence[float]) -> np.ndarray:
    """Weight of ``greedy(S)`` for every mask ``S``."""
    w = _weights(sys, w)
    feas = feasible_table(sys)
    n = sys.n
    masks = np.arange(1 << n)
    A = np.zeros(1 << n, dtype=np.int64)
    total = np.zeros(1 << n)
    for i in greedy_order(w):
        cand = A | (1 << i)
        ok = ((masks >> i) & 1 == 1) & feas[cand]
        A = np.where(ok, cand, A)
        total = total + np.where(ok, w[i], 0.0)
    return total


def _extension_masks(feas: np.ndarray, n: int) -> np.ndarray:
    """``ext[T]``: elements outside ``T`` that keep ``T`` feasible when added."""
    masks = np.arange(1 << n)
    ext = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        bit = 1 << i
        free = (masks & bit) == 0
        ok = free & feas & feas[masks | bit]
        ext |= np.where(ok, bit, 0)
    return ext


def _exhaustive_guard(sys: SetSystem, what: str):
    if sys.n > EXHAUSTIVE_LIMIT:
        raise CapacityError(what, sys.n, EXHAUSTIVE_LIMIT)


def is_downward_closed(sys: SetSystem) -> bool:
    _exhaustive_guard(sys, "downward-closure check")
    n = sys.n
    feas = np.array([sys._feasible(mask_to_set(m)) for m in range(1 << n)])
    if not feas[0]:
        return False
    masks = np.arange(1 << n)
    for i in range(n):
        has = feas & ((masks >> i) & 1 == 1)
        if not np.all(feas[masks[has] ^ (1 << i)]):
            return False
    return True


def verify_matroid(sys: SetSystem) -> bool:
    """Exhaustive check of downward closure and the exchange axiom."""
    if not is_downward_closed(sys):
        return False
    n = sys.n
    feas = feasible_table(sys)
    ext = _extension_masks(feas, n)
    fmasks = np.flatnonzero(feas)
    sizes = subset_bits(n)[fmasks].sum(axis=1)
    for T, size in zip(fmasks, sizes):
        bigger = fmasks[sizes > size]
        if np.any((bigger & ~T & ext[T]) == 0):
            return False
    return True


def base_size_bounds(sys: SetSystem) -> tuple[np.ndarray, np.ndarray]:
    """Largest and smallest base size of every subset ``S`` (indexed by mask)."""
    _exhaustive_guard(sys, "base enumeration")
    n = sys.n
    feas = feasible_table(sys)
    ext = _extension_masks(feas, n)
    masks = np.arange(1 << n)
    full = (1 << n) - 1
    big = np.zeros(1 << n)
    small = np.full(1 << n, np.inf)
    sizes = subset_bits(n).sum(axis=1)
    for T in np.flatnonzero(feas):
        # S has base T iff T is a subset of S and S avoids ext[T]
        sel = ((masks & T) == T) & ((masks & (ext[T] & full)) == 0)
        big[sel] = np.maximum(big[sel], sizes[T])
        small[sel] = np.minimum(small[sel], sizes[T])
    return big, small


def independence_ratio(sys: SetSystem, exhaustive: bool = False) -> float:
    """Smallest ``p`` for which the system is p-independent.

    Matroid kinds answer 1 and miniset systems answer ``m`` without enumeration
    unless ``exhaustive`` is set.
    """
    if not exhaustive:
        if sys.is_matroid:
            return 1.0
        if isinstance(sys, MinisetSystem):
            return float(sys.m)
    big, small = base_size_bounds(sys)
    ok = small[1:] > 0
    if not np.any(ok):
        return 1.0
    return float(np.max(big[1:][ok] / small[1:][ok]))
