"""Concrete execution of a mapped loop nest, used as the cost model's oracle.

Buffers hold exactly the declared tiles: one L2 tile per tensor, and one
shard of the L1 tile per tensor per PE.  A transfer is counted whenever the
origin of the tile a buffer must hold (along the tensor's relevant dims)
differs from what it held at the previous boundary crossing.  Operands are
read only from the PE's own L1 buffers, and partial sums drain L1 -> L2 ->
DRAM, so a wrong tiling shows up as a wrong output or an out-of-tile access.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .accel import AcceleratorConfig
from .costmodel import InvalidMappingError, make_ctx
from .mapspace import Mapping, is_member
from .workload import OUTPUT_TENSOR, Problem, random_inputs

DEFAULT_DIM_CAP = 64


class SimulationCapError(ValueError):
    pass


@dataclass
class SimResult:
    counts: np.ndarray  # (3, T) words out of DRAM, L2, L1
    output: np.ndarray
    macs: int


class _Buffer:
    __slots__ = ("origin", "data")

    def __init__(self, origin: tuple[int, ...], data: np.ndarray):
        self.origin = origin
        self.data = data

    def region(self):
        return tuple(slice(o, o + s) for o, s in zip(self.origin, self.data.shape))

    def local(self, index: tuple[int, ...]) -> tuple[int, ...]:
        loc = tuple(i - o for i, o in zip(index, self.origin))
        for x, s in zip(loc, self.data.shape):
            if not 0 <= x < s:
                raise AssertionError(f"access {index} outside resident tile at {self.origin}")
        return loc


def simulate(accel: AcceleratorConfig, p: Problem, m: Mapping, inputs=None,
             seed: int = 0, dim_cap: int = DEFAULT_DIM_CAP) -> SimResult:
    """Run every MAC of ``p`` through the tiled hierarchy described by ``m``."""
    if max(p.dims) > dim_cap:
        raise SimulationCapError(f"{p} exceeds the simulation dim cap of {dim_cap}")
    ctx = make_ctx(p, accel)
    if not is_member(ctx, m):
        raise InvalidMappingError(f"mapping is not a member of the map space of {p}")
    if inputs is None:
        inputs = random_inputs(p, np.random.default_rng(seed))

    n = ctx.n_dims
    tnames = ctx.tensors
    out_t = tnames.index(OUTPUT_TENSOR)
    axes = ctx.axes_idx
    rel = [tuple(int(d) for d in np.flatnonzero(ctx.relevance[t])) for t in range(len(tnames))]
    ch = m.chains
    l2_tile = m.tiles[1]
    l1_tile = m.tiles[2]
    shard = m.shard
    dtype = np.result_type(*[np.asarray(a) for a in inputs.values()])

    dram = {}
    for ti, t in enumerate(tnames):
        if ti == out_t:
            dram[ti] = np.zeros(p.tensor_shape(t), dtype=dtype)
        else:
            dram[ti] = np.asarray(inputs[t])

    def region_of(ti, origin, extent):
        start = tuple(sum(origin[d] for d in axis) for axis in axes[ti])
        shape = tuple(sum(extent[d] for d in axis) - len(axis) + 1 for axis in axes[ti])
        return start, shape

    def fill(parent: _Buffer | np.ndarray, ti, origin, extent) -> _Buffer:
        start, shape = region_of(ti, origin, extent)
        if ti == out_t:
            return _Buffer(start, np.zeros(shape, dtype=dtype))
        if isinstance(parent, _Buffer):
            loc = parent.local(start)
            parent.local(tuple(a + s - 1 for a, s in zip(start, shape)))
            data = parent.data[tuple(slice(a, a + s) for a, s in zip(loc, shape))].copy()
        else:
            data = parent[tuple(slice(a, a + s) for a, s in zip(start, shape))].copy()
        return _Buffer(start, data)

    def drain(child: _Buffer, parent: _Buffer | np.ndarray) -> None:
        if isinstance(parent, _Buffer):
            loc = parent.local(child.origin)
            parent.local(tuple(a + s - 1 for a, s in zip(child.origin, child.data.shape)))
            parent.data[tuple(slice(a, a + s) for a, s in zip(loc, child.data.shape))] += child.data
        else:
            parent[child.region()] += child.data

    T = len(tnames)
    counts = np.zeros((3, T), dtype=np.int64)
    pes = list(itertools.product(*[range(int(x)) for x in m.par]))
    l2_buf: list[_Buffer | None] = [None] * T
    l2_key: list[tuple | None] = [None] * T
    l1_buf = [[None] * T for _ in pes]
    l1_key = [[None] * T for _ in pes]
    pe_key = [[None] * T for _ in pes]
    macs = 0

    def nest(level):
        perm = m.order[level]
        ranges = [range(int(ch[d, level])) for d in perm]
        for idx in itertools.product(*ranges):
            pos = [0] * n
            for d, i in zip(perm, idx):
                pos[d] = i
            yield pos

    for dram_pos in nest(0):
        l2_origin = [dram_pos[d] * l2_tile[d] for d in range(n)]
        for ti in range(T):
            key = tuple(l2_origin[d] for d in rel[ti])
            if key == l2_key[ti]:
                continue
            if ti == out_t and l2_buf[ti] is not None:
                for q in range(len(pes)):
                    if l1_buf[q][ti] is not None:
                        drain(l1_buf[q][ti], l2_buf[ti])
                        l1_buf[q][ti] = None
                drain(l2_buf[ti], dram[ti])
            l2_buf[ti] = fill(dram[ti], ti, l2_origin, l2_tile)
            l2_key[ti] = key
            counts[0, ti] += l2_buf[ti].data.size

        for l2_pos in nest(1):
            l1_origin = [l2_origin[d] + l2_pos[d] * l1_tile[d] for d in range(n)]
            for q, pe in enumerate(pes):
                sh_origin = [l1_origin[d] + pe[d] * shard[d] for d in range(n)]
                bufs = l1_buf[q]
                for ti in range(T):
                    key = tuple(sh_origin[d] for d in rel[ti])
                    if key == l1_key[q][ti]:
                        if bufs[ti] is None:
                            raise AssertionError("drained L1 tile reused without refetch")
                        continue
                    if ti == out_t and bufs[ti] is not None:
                        drain(bufs[ti], l2_buf[ti])
                    bufs[ti] = fill(l2_buf[ti], ti, sh_origin, shard)
                    l1_key[q][ti] = key
                    counts[1, ti] += bufs[ti].data.size

                for l1_pos in nest(2):
                    point = [sh_origin[d] + l1_pos[d] for d in range(n)]
                    prod_val = 1
                    out_loc = None
                    for ti in range(T):
                        key = tuple(point[d] for d in rel[ti])
                        if key != pe_key[q][ti]:
                            pe_key[q][ti] = key
                            counts[2, ti] += 1
                        index = tuple(sum(point[d] for d in axis) for axis in axes[ti])
                        loc = bufs[ti].local(index)
                        if ti == out_t:
                            out_loc = loc
                        else:
                            prod_val = prod_val * bufs[ti].data[loc]
                    bufs[out_t].data[out_loc] += prod_val
                    macs += 1

    for q in range(len(pes)):
        if l1_buf[q][out_t] is not None:
            drain(l1_buf[q][out_t], l2_buf[out_t])
    drain(l2_buf[out_t], dram[out_t])
    return SimResult(counts=counts, output=dram[out_t], macs=macs)
