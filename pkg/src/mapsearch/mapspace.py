"""Mappings, their flat encoding, uniform sampling, membership and projection.

A mapping fixes, for every loop dimension, a chain of tile sizes
``DRAM >= L2 >= L1 >= par`` where each divides the previous one; a loop order
per memory level; and a bank allocation per on-chip level and tensor.

Flat vector layout (length ``n + 3n + n + 3n + 2T`` for ``n`` dims and ``T``
tensors)::

    [ problem dims | DRAM/L2/L1 tile ratios | parallel degrees
      | loop-order scores (per level, per dim) | bank fractions (L2, L1) ]

A tile ratio is a level's tile divided by the next level's tile; the L1 ratio
divides by the parallel degree.  Loop order scores are read as a descending
argsort (ties break toward the lower dim index); ``encode`` writes the
outermost loop as 1.0 and the innermost as 0.0.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property, lru_cache
from math import comb, factorial, log10, prod
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .accel import LEVELS, ON_CHIP, AcceleratorConfig
from .workload import DIMS, TENSOR_AXES, AlgorithmKind, Problem

MAPPING_SCHEMA_VERSION = 1
SAMPLE_BUDGET = 10**6
CHAIN_TABLE_CAP = 50_000  # exact tile projection below this many chain combinations


class EmptyMapSpaceError(RuntimeError):
    """No valid mapping exists, or none was found within the sampling budget."""


@lru_cache(maxsize=None)
def divisors(n: int) -> tuple[int, ...]:
    small, large = [], []
    i = 1
    while i * i <= n:
        if n % i == 0:
            small.append(i)
            if i * i != n:
                large.append(n // i)
        i += 1
    return tuple(small + large[::-1])


@lru_cache(maxsize=None)
def factor_chains(n: int) -> np.ndarray:
    """All ordered ``(f_dram, f_l2, f_l1, par)`` with product ``n``, lexicographic."""
    rows = []
    for a in divisors(n):
        for b in divisors(n // a):
            for c in divisors(n // a // b):
                rows.append((a, b, c, n // a // b // c))
    out = np.array(rows, dtype=np.int64)
    out.setflags(write=False)
    return out


def _smallest_prime(n: int) -> int:
    p = 2
    while p * p <= n:
        if n % p == 0:
            return p
        p += 1
    return n


@dataclass(frozen=True)
class Mapping:
    """tiles[level][dim] for DRAM, L2, L1; order[level] lists dim indices outermost first;
    alloc[level][tensor] is the fraction of L2 / L1 banks given to each tensor."""

    tiles: tuple[tuple[int, ...], ...]
    par: tuple[int, ...]
    order: tuple[tuple[int, ...], ...]
    alloc: tuple[tuple[float, ...], ...]

    @classmethod
    def from_chains(cls, chains, order, banks, accel: AcceleratorConfig) -> "Mapping":
        """Build from per-dim ``(f_dram, f_l2, f_l1, par)`` rows and per-level bank counts."""
        ch = np.asarray(chains, dtype=np.int64)
        par = ch[:, 3]
        l1 = ch[:, 2] * par
        l2 = ch[:, 1] * l1
        dram = ch[:, 0] * l2
        tiles = tuple(tuple(int(x) for x in row) for row in (dram, l2, l1))
        alloc = tuple(
            tuple(int(b) / accel.banks(lvl) for b in banks[i]) for i, lvl in enumerate(ON_CHIP)
        )
        return cls(
            tiles=tiles,
            par=tuple(int(x) for x in par),
            order=tuple(tuple(int(x) for x in o) for o in order),
            alloc=alloc,
        )

    @property
    def chains(self) -> np.ndarray:
        t = np.array(self.tiles, dtype=np.int64)
        p = np.array(self.par, dtype=np.int64)
        return np.stack([t[0] // t[1], t[1] // t[2], t[2] // p, p], axis=1)

    def banks(self, accel: AcceleratorConfig) -> tuple[tuple[int, ...], ...]:
        return tuple(
            tuple(int(np.floor(a * accel.banks(lvl) + 1e-9)) for a in self.alloc[i])
            for i, lvl in enumerate(ON_CHIP)
        )

    @property
    def shard(self) -> tuple[int, ...]:
        """Per-PE extent of the L1 tile along each dim."""
        return tuple(t // p for t, p in zip(self.tiles[2], self.par))


class MapSpaceCtx:
    """A problem bound to an accelerator; caches the per-dim factor tables."""

    def __init__(self, problem: Problem, accel: AcceleratorConfig):
        self.problem = problem
        self.accel = accel

    def __repr__(self) -> str:
        return f"MapSpaceCtx({self.problem}, accel={self.accel.fingerprint()})"

    @property
    def kind(self) -> AlgorithmKind:
        return self.problem.kind

    @cached_property
    def dim_names(self) -> tuple[str, ...]:
        return DIMS[self.kind]

    @cached_property
    def tensors(self) -> tuple[str, ...]:
        return tuple(TENSOR_AXES[self.kind])

    @property
    def n_dims(self) -> int:
        return len(self.dim_names)

    @property
    def n_tensors(self) -> int:
        return len(self.tensors)

    @cached_property
    def bounds(self) -> np.ndarray:
        return np.array(self.problem.loop_bounds, dtype=np.int64)

    @cached_property
    def chains(self) -> list[np.ndarray]:
        return [factor_chains(int(b)) for b in self.bounds]

    @cached_property
    def log_chains(self) -> list[np.ndarray]:
        return [np.log(c.astype(float)) for c in self.chains]

    @cached_property
    def axes_idx(self) -> list[list[list[int]]]:
        pos = {n: i for i, n in enumerate(self.dim_names)}
        return [[[pos[d] for d in axis] for axis in TENSOR_AXES[self.kind][t]] for t in self.tensors]

    @cached_property
    def relevance(self) -> np.ndarray:
        """(T, n) boolean: does tensor t index loop dim d."""
        rel = np.zeros((self.n_tensors, self.n_dims), dtype=bool)
        for ti, axes in enumerate(self.axes_idx):
            for axis in axes:
                rel[ti, axis] = True
        return rel

    def footprints(self, extents) -> np.ndarray:
        """Tile footprint of every tensor; ``extents`` is (..., n), result (..., T)."""
        e = np.asarray(extents, dtype=np.int64)
        out = []
        for axes in self.axes_idx:
            fp = np.ones(e.shape[:-1], dtype=np.int64)
            for axis in axes:
                fp = fp * (e[..., axis].sum(axis=-1) - len(axis) + 1)
            out.append(fp)
        return np.stack(out, axis=-1)

    @cached_property
    def chain_table(self):
        """Every tile-chain combination with its PE check and per-level bank needs,
        or None when there are more than ``CHAIN_TABLE_CAP`` combinations."""
        ks = [len(c) for c in self.chains]
        if prod(ks) > CHAIN_TABLE_CAP:
            return None
        idx = np.stack(np.meshgrid(*[np.arange(k) for k in ks], indexing="ij"), axis=-1).reshape(-1, self.n_dims)
        ch = np.stack([self.chains[d][idx[:, d]] for d in range(self.n_dims)], axis=1)
        acc = self.accel
        pe_ok = np.prod(ch[:, :, 3], axis=1) <= acc.num_pes
        needs = []
        for lvl, ext in (("L2", ch[:, :, 1] * ch[:, :, 2] * ch[:, :, 3]), ("L1", ch[:, :, 2])):
            needs.append(-(-self.footprints(ext) * acc.banks(lvl) // acc.capacity(lvl)))
        return idx, pe_ok, needs[0], needs[1]

    # ---- flat vector schema -------------------------------------------------

    @cached_property
    def schema(self) -> dict[str, slice]:
        n, T = self.n_dims, self.n_tensors
        sizes = [("pid", n), ("ratio", 3 * n), ("par", n), ("order", 3 * n), ("alloc", 2 * T)]
        out, start = {}, 0
        for name, size in sizes:
            out[name] = slice(start, start + size)
            start += size
        return out

    @property
    def vector_length(self) -> int:
        return self.schema["alloc"].stop

    @cached_property
    def pid_mask(self) -> np.ndarray:
        mask = np.zeros(self.vector_length, dtype=bool)
        mask[self.schema["pid"]] = True
        return mask


def schema_length(kind: AlgorithmKind) -> int:
    n, T = len(DIMS[kind]), len(TENSOR_AXES[kind])
    return 8 * n + 2 * T


# ---- membership -------------------------------------------------------------


def _needs(ctx: MapSpaceCtx, m: Mapping) -> list[np.ndarray]:
    acc = ctx.accel
    fp_l2 = ctx.footprints(m.tiles[1])
    fp_l1 = ctx.footprints(m.shard)
    return [
        np.array([acc.banks_needed("L2", int(f)) for f in fp_l2]),
        np.array([acc.banks_needed("L1", int(f)) for f in fp_l1]),
    ]


def is_member(ctx: MapSpaceCtx, m: Mapping) -> bool:
    """True iff ``m`` is a well-formed mapping whose tiles fit their bank allocations."""
    n, T, acc = ctx.n_dims, ctx.n_tensors, ctx.accel
    try:
        if len(m.tiles) != 3 or any(len(row) != n for row in m.tiles):
            return False
        if len(m.par) != n or len(m.order) != 3 or len(m.alloc) != 2:
            return False
        tiles = [[int(x) for x in row] for row in m.tiles]
        par = [int(x) for x in m.par]
    except (TypeError, ValueError):
        return False
    if any(a != b for a, b in zip(tiles[0], ctx.bounds)):
        return False
    for d in range(n):
        if min(tiles[1][d], tiles[2][d], par[d]) < 1:
            return False
        if tiles[0][d] % tiles[1][d] or tiles[1][d] % tiles[2][d] or tiles[2][d] % par[d]:
            return False
    if prod(par) > acc.num_pes:
        return False
    for o in m.order:
        if sorted(o) != list(range(n)):
            return False
    for i, lvl in enumerate(ON_CHIP):
        row = m.alloc[i]
        if len(row) != T:
            return False
        nb = acc.banks(lvl)
        total = 0
        for a in row:
            if not (0.0 <= a <= 1.0):
                return False
            k = round(a * nb)
            if abs(a * nb - k) > 1e-9:
                return False
            total += k
        if total > nb:
            return False
    banks = m.banks(acc)
    for i, need in enumerate(_needs(ctx, m)):
        if any(b < nd for b, nd in zip(banks[i], need)):
            return False
    return True


# ---- sampling ---------------------------------------------------------------


def _trivially_empty(ctx: MapSpaceCtx) -> bool:
    # every tensor needs at least one bank at every on-chip level
    return any(ctx.accel.banks(lvl) < ctx.n_tensors for lvl in ON_CHIP)


def _draw_banks(rng: np.random.Generator, size: int, nb: int, T: int) -> np.ndarray:
    """Uniform over bank vectors with every entry >= 1 and sum <= nb.

    Every footprint is at least one word, so vectors outside this set are never
    valid; proposing only inside it keeps rejection sampling uniform while
    skipping most of the rejections. Such vectors biject with T-subsets of
    1..nb (cut points of a composition of nb + 1 into T + 1 positive parts).
    """
    cuts = np.sort(np.argsort(rng.random((size, nb)), axis=1)[:, :T] + 1, axis=1)
    return np.diff(cuts, axis=1, prepend=0)


def _draw_batch(ctx: MapSpaceCtx, rng: np.random.Generator, size: int):
    n, T, acc = ctx.n_dims, ctx.n_tensors, ctx.accel
    idx = np.stack([rng.integers(0, len(c), size=size) for c in ctx.chains], axis=1)
    ch = np.stack([ctx.chains[d][idx[:, d]] for d in range(n)], axis=1)  # (size, n, 4)
    orders = np.argsort(rng.random((size, 3, n)), axis=-1, kind="stable")
    banks = [_draw_banks(rng, size, acc.banks(lvl), T) for lvl in ON_CHIP]

    par = ch[:, :, 3]
    shard = ch[:, :, 2]
    l2 = ch[:, :, 1] * ch[:, :, 2] * par
    ok = np.prod(par, axis=1) <= acc.num_pes
    for lvl, b, ext in (("L2", banks[0], l2), ("L1", banks[1], shard)):
        cap, nb = acc.capacity(lvl), acc.banks(lvl)
        need = -(-ctx.footprints(ext) * nb // cap)
        ok &= (b.sum(axis=1) <= nb) & np.all(b >= need, axis=1)
    return ch, orders, banks, ok


def sample_mappings(ctx: MapSpaceCtx, rng: np.random.Generator, count: int,
                    budget: int = SAMPLE_BUDGET) -> list[Mapping]:
    """``count`` independent uniform draws from the valid map space.

    Attributes are drawn independently and uniformly from their domains and
    invalid combinations rejected, so accepted mappings are uniform over the
    valid set.
    """
    if _trivially_empty(ctx):
        raise EmptyMapSpaceError(f"{ctx}: fewer banks than tensors at an on-chip level")
    out: list[Mapping] = []
    drawn = 0
    batch = 512
    while len(out) < count:
        if drawn >= budget:
            raise EmptyMapSpaceError(f"{ctx}: no valid mapping in {budget} draws")
        size = min(batch, budget - drawn)
        ch, orders, banks, ok = _draw_batch(ctx, rng, size)
        drawn += size
        for i in np.flatnonzero(ok)[: count - len(out)]:
            out.append(Mapping.from_chains(ch[i], orders[i], (banks[0][i], banks[1][i]), ctx.accel))
        if ok.any():
            drawn = 0  # the budget bounds draws per accepted mapping
        else:
            batch = min(batch * 2, 8192)
    return out


def _as_rng(rng_or_seed) -> np.random.Generator:
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    return np.random.default_rng(rng_or_seed)


def get_mapping(ctx: MapSpaceCtx, rng_seed) -> Mapping:
    """A uniformly random valid mapping; deterministic for an integer seed."""
    return sample_mappings(ctx, _as_rng(rng_seed), 1)[0]


# ---- encoding ---------------------------------------------------------------


def encode(ctx: MapSpaceCtx, m: Mapping) -> np.ndarray:
    n = ctx.n_dims
    s = ctx.schema
    v = np.zeros(ctx.vector_length)
    v[s["pid"]] = ctx.problem.dims
    ch = m.chains.astype(float)
    v[s["ratio"]] = ch[:, :3].T.reshape(-1)
    v[s["par"]] = ch[:, 3]
    scores = np.zeros((3, n))
    for lvl, perm in enumerate(m.order):
        for pos, d in enumerate(perm):
            scores[lvl, d] = (n - 1 - pos) / (n - 1)
    v[s["order"]] = scores.reshape(-1)
    v[s["alloc"]] = np.asarray(m.alloc, dtype=float).reshape(-1)
    return v


def scores_to_order(scores: np.ndarray) -> tuple[int, ...]:
    """Descending argsort; equal scores keep ascending dim index."""
    return tuple(int(i) for i in np.argsort(-np.asarray(scores, dtype=float), kind="stable"))


def _check_length(ctx: MapSpaceCtx, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (ctx.vector_length,):
        raise ValueError(f"expected a flat vector of length {ctx.vector_length}, got shape {v.shape}")
    return v


def decode(ctx: MapSpaceCtx, v) -> Mapping:
    """Structured read-back of a flat vector; the result may be invalid."""
    v = _check_length(ctx, v)
    n, s = ctx.n_dims, ctx.schema
    ratios = v[s["ratio"]].reshape(3, n)
    par = [max(1, int(round(x))) for x in v[s["par"]]]
    l2 = [max(1, int(round(b / max(r, 1e-12)))) for b, r in zip(ctx.bounds, ratios[0])]
    l1 = [max(1, int(round(t / max(r, 1e-12)))) for t, r in zip(l2, ratios[1])]
    order = tuple(scores_to_order(row) for row in v[s["order"]].reshape(3, n))
    alloc = tuple(tuple(float(a) for a in row) for row in v[s["alloc"]].reshape(2, ctx.n_tensors))
    return Mapping(
        tiles=(tuple(int(b) for b in ctx.bounds), tuple(l2), tuple(l1)),
        par=tuple(par),
        order=order,
        alloc=alloc,
    )


# ---- projection -------------------------------------------------------------


def _chain_distances(ctx: MapSpaceCtx, d: int, target: np.ndarray) -> np.ndarray:
    t = np.where(np.isfinite(target), target, 1.0)
    lt = np.log(np.maximum(t, 1.0))
    return ((ctx.log_chains[d] - lt) ** 2).sum(axis=1)


def _chains_fit(ctx: MapSpaceCtx, ch: np.ndarray, banks) -> bool:
    acc = ctx.accel
    if int(np.prod(ch[:, 3])) > acc.num_pes:
        return False
    for lvl, b, ext in (("L2", banks[0], ch[:, 1] * ch[:, 2] * ch[:, 3]), ("L1", banks[1], ch[:, 2])):
        need = -(-ctx.footprints(ext) * acc.banks(lvl) // acc.capacity(lvl))
        if np.any(need > np.asarray(b)):
            return False
    return True


def _repair_capacity(ctx: MapSpaceCtx, ch: np.ndarray, banks: list[int], lvl: str) -> None:
    acc = ctx.accel
    nb = acc.banks(lvl)
    T = ctx.n_tensors
    while True:
        if lvl == "L2":
            ext = ch[:, 1] * ch[:, 2] * ch[:, 3]
        else:
            ext = ch[:, 2]
        fp = ctx.footprints(ext)
        need = [acc.banks_needed(lvl, int(f)) for f in fp]
        short = [t for t in range(T) if banks[t] < need[t]]
        if not short:
            return
        if sum(need) <= nb:
            spare = nb - sum(banks)
            for t in short:
                deficit = need[t] - banks[t]
                take = min(spare, deficit)
                banks[t] += take
                spare -= take
                deficit -= take
                while deficit > 0:
                    surplus = [banks[u] - need[u] for u in range(T)]
                    donor = int(np.argmax(surplus))
                    banks[donor] -= 1
                    banks[t] += 1
                    deficit -= 1
            return
        # shrink the hungriest short tensor along its largest relevant dim; a short
        # tensor already at one word frees nothing, so fall back to any tensor over one bank
        def shrinkable(u):
            return [d for d in range(ctx.n_dims) if ctx.relevance[u][d] and ext[d] > 1]

        pool = [u for u in short if shrinkable(u)] or [u for u in range(T) if need[u] > 1 and shrinkable(u)]
        if not pool:
            raise EmptyMapSpaceError(f"{ctx}: tensors cannot fit in {lvl}")
        t = max(pool, key=lambda u: (need[u], -u))
        cand = shrinkable(t)
        d = max(cand, key=lambda u: (ext[u], -u))
        if lvl == "L2":
            col = next(c for c in (1, 2, 3) if ch[d, c] > 1)
            q = _smallest_prime(int(ch[d, col]))
            ch[d, col] //= q
            ch[d, 0] *= q
        else:
            q = _smallest_prime(int(ch[d, 2]))
            ch[d, 2] //= q
            ch[d, 1] *= q


def get_projection(ctx: MapSpaceCtx, v) -> Mapping:
    """Nearest valid mapping under per-attribute rounding and repair.

    Tile chains snap to the nearest admissible factorization in log space,
    jointly over dims among combinations that fit the rounded banks when the
    combination table is small enough to scan; parallel degrees shrink largest-first until they fit the PE array; order
    scores argsort; bank fractions clamp, renormalize and floor to whole banks;
    finally banks are redistributed, and tiles shrunk if needed, until every
    tensor fits.  Valid encodings are fixed points.
    """
    v = _check_length(ctx, v)
    if _trivially_empty(ctx):
        raise EmptyMapSpaceError(f"{ctx}: fewer banks than tensors at an on-chip level")
    n, T, s, acc = ctx.n_dims, ctx.n_tensors, ctx.schema, ctx.accel
    ratios = v[s["ratio"]].reshape(3, n)
    pars = v[s["par"]]
    dists = [_chain_distances(ctx, d, np.array([*ratios[:, d], pars[d]])) for d in range(n)]
    ids = [int(np.argmin(dd)) for dd in dists]
    ch = np.stack([ctx.chains[d][ids[d]] for d in range(n)])
    order = [scores_to_order(row) for row in v[s["order"]].reshape(3, n)]

    banks = []
    for i, lvl in enumerate(ON_CHIP):
        a = v[s["alloc"]].reshape(2, T)[i]
        a = np.clip(np.where(np.isfinite(a), a, 0.0), 0.0, 1.0)
        total = a.sum()
        if total > 1.0 + 1e-9:
            a = a / total
        banks.append([int(np.floor(x * acc.banks(lvl) + 1e-9)) for x in a])

    if not _chains_fit(ctx, ch, banks):
        table = ctx.chain_table
        if table is not None:
            # closest chain combination that fits the rounded banks; lowest id wins ties
            idx, pe_ok, need2, need1 = table
            ok = pe_ok & np.all(need2 <= banks[0], axis=1) & np.all(need1 <= banks[1], axis=1)
            if ok.any():
                total = sum(dists[d][idx[:, d]] for d in range(n))
                best = idx[int(np.argmin(np.where(ok, total, np.inf)))]
                ch = np.stack([ctx.chains[d][best[d]] for d in range(n)])

    while int(np.prod(ch[:, 3])) > acc.num_pes:
        d = int(np.argmax(ch[:, 3]))
        divs = divisors(int(ch[d, 3]))
        smaller = divs[-2]
        ch[d, 2] *= ch[d, 3] // smaller
        ch[d, 3] = smaller

    _repair_capacity(ctx, ch, banks[0], "L2")
    _repair_capacity(ctx, ch, banks[1], "L1")
    return Mapping.from_chains(ch, order, banks, acc)


# ---- enumeration and size ---------------------------------------------------


@dataclass(frozen=True)
class SpaceSize:
    log10: float
    count: int | None = None  # exact count when enumerated

    @property
    def exact(self) -> bool:
        return self.count is not None


def _alloc_count(nb: int, need_sum, T: int):
    slack = nb - need_sum
    return np.where(slack >= 0, np.vectorize(lambda s: comb(int(s) + T, T) if s >= 0 else 0)(slack), 0)


def space_size(ctx: MapSpaceCtx, cap: int = 10**7) -> SpaceSize:
    """Exact valid-mapping count if at most ``cap`` tile chains need checking,
    otherwise the product-form upper bound ``prod|chains| * (n!)^3 * prod C(B+T, T)``.

    The upper bound ignores the PE limit and buffer capacities, so it can
    overshoot the true count by several orders of magnitude on large problems.
    """
    n, T, acc = ctx.n_dims, ctx.n_tensors, ctx.accel
    ks = [len(c) for c in ctx.chains]
    n_chain_combos = prod(ks)
    perms = factorial(n) ** 3
    if n_chain_combos > cap:
        ub = log10(n_chain_combos) + 3 * log10(factorial(n))
        ub += sum(log10(comb(acc.banks(l) + T, T)) for l in ON_CHIP)
        return SpaceSize(log10=ub)
    if _trivially_empty(ctx):
        return SpaceSize(log10=float("-inf"), count=0)
    total = 0
    chunk = 200_000
    radices = np.array(ks, dtype=np.int64)
    for start in range(0, n_chain_combos, chunk):
        flat = np.arange(start, min(start + chunk, n_chain_combos), dtype=np.int64)
        idx = np.empty((flat.size, n), dtype=np.int64)
        rem = flat
        for d in range(n - 1, -1, -1):
            idx[:, d] = rem % radices[d]
            rem = rem // radices[d]
        ch = np.stack([ctx.chains[d][idx[:, d]] for d in range(n)], axis=1)
        par = ch[:, :, 3]
        ok = np.prod(par, axis=1) <= acc.num_pes
        counts = np.ones(flat.size, dtype=object)
        for lvl, ext in (("L2", ch[:, :, 1] * ch[:, :, 2] * par), ("L1", ch[:, :, 2])):
            nb = acc.banks(lvl)
            need = -(-ctx.footprints(ext) * nb // acc.capacity(lvl))
            counts = counts * _alloc_count(nb, need.sum(axis=1), T).astype(object)
        total += int(np.sum(counts[ok])) if ok.any() else 0
    total *= perms
    return SpaceSize(log10=log10(total) if total else float("-inf"), count=total)


def enumerate_space(ctx: MapSpaceCtx) -> Iterator[Mapping]:
    """Every valid mapping, by brute force over the raw attribute domains."""
    n, T, acc = ctx.n_dims, ctx.n_tensors, ctx.accel
    perms = list(itertools.permutations(range(n)))
    bank_vecs = {
        lvl: list(itertools.product(range(acc.banks(lvl) + 1), repeat=T)) for lvl in ON_CHIP
    }
    for chain_rows in itertools.product(*[c.tolist() for c in ctx.chains]):
        ch = np.array(chain_rows, dtype=np.int64)
        if int(np.prod(ch[:, 3])) > acc.num_pes:
            continue
        base = Mapping.from_chains(ch, [perms[0]] * 3, ((0,) * T, (0,) * T), acc)
        need = _needs(ctx, base)
        ok2 = [b for b in bank_vecs["L2"] if sum(b) <= acc.l2_banks and all(x >= y for x, y in zip(b, need[0]))]
        ok1 = [b for b in bank_vecs["L1"] if sum(b) <= acc.l1_banks and all(x >= y for x, y in zip(b, need[1]))]
        if not ok2 or not ok1:
            continue
        for order in itertools.product(perms, repeat=3):
            for b2 in ok2:
                for b1 in ok1:
                    yield Mapping.from_chains(ch, order, (b2, b1), acc)


# ---- text records -------------------------------------------------------------


def _header(ctx: MapSpaceCtx) -> str:
    dims = ",".join(str(d) for d in ctx.problem.dims)
    return f"# mapsearch-mapping v{MAPPING_SCHEMA_VERSION} kind={ctx.kind.value} dims={dims}"


def mapping_to_record(ctx: MapSpaceCtx, m: Mapping, ident: int | None = None) -> str:
    names = ctx.dim_names
    parts = [] if ident is None else [f"id={ident}"]
    for lvl, row in zip(LEVELS, m.tiles):
        parts.append(f"tile.{lvl}=" + ",".join(map(str, row)))
    parts.append("par=" + ",".join(map(str, m.par)))
    for lvl, perm in zip(LEVELS, m.order):
        parts.append(f"order.{lvl}=" + ",".join(names[d] for d in perm))
    for i, lvl in enumerate(ON_CHIP):
        banks = m.banks(ctx.accel)[i]
        parts.append(f"banks.{lvl}=" + ",".join(map(str, banks)))
    return " ".join(parts)


def mapping_from_record(ctx: MapSpaceCtx, line: str) -> tuple[int | None, Mapping]:
    fields = dict(tok.split("=", 1) for tok in line.split())
    pos = {name: i for i, name in enumerate(ctx.dim_names)}
    ints = lambda s: tuple(int(x) for x in s.split(","))  # noqa: E731
    try:
        tiles = tuple(ints(fields[f"tile.{lvl}"]) for lvl in LEVELS)
        order = tuple(tuple(pos[x] for x in fields[f"order.{lvl}"].split(",")) for lvl in LEVELS)
        alloc = tuple(
            tuple(b / ctx.accel.banks(lvl) for b in ints(fields[f"banks.{lvl}"])) for lvl in ON_CHIP
        )
        m = Mapping(tiles=tiles, par=ints(fields["par"]), order=order, alloc=alloc)
    except KeyError as e:
        raise ValueError(f"mapping record missing field {e}") from None
    ident = int(fields["id"]) if "id" in fields else None
    return ident, m


def write_mappings(path, ctx: MapSpaceCtx, mappings: Sequence[Mapping]) -> None:
    lines = [_header(ctx)]
    lines += [mapping_to_record(ctx, m, i) for i, m in enumerate(mappings)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mappings(path, ctx: MapSpaceCtx) -> list[Mapping]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# mapsearch-mapping v"):
        raise ValueError(f"{path}: not a mapping record file")
    if lines[0] != _header(ctx):
        raise ValueError(f"{path}: header {lines[0]!r} does not match {_header(ctx)!r}")
    return [mapping_from_record(ctx, ln)[1] for ln in lines[1:] if ln.strip()]
