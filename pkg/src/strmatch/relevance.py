"""Spatiotemporal relevance scores factorized over attention maps.

Given a block's self map S (f, h, n, n) and temporal map Tm (n, h, f, f),
the directional relevance of pixel q in frame j to pixel p in frame i is

    g(i,p -> j,q) = Tm[p,h,i,j] * S[j,h,p,q]  +  S[i,h,p,q] * Tm[q,h,i,j],

two temporal-times-spatial product paths.  Symmetrizing and summing over a
temporal neighborhood N(i) gives the score volume

    Omega[h,i,p,q] = sum_{j in N(i)} ( g(i,p -> j,q) + g(j,q -> i,p) ),

which captures cross-frame pixel relevance without ever materializing the
(f*n) x (f*n) joint attention matrix.  `str_score` is the production kernel
(vectorized per frame, differentiable through a hand-written VJP);
`str_score_bruteforce` is a literal scalar-loop transcription kept as the
oracle; `full3d_relevance_map` builds the joint matrix explicitly so the
memory claim can be measured rather than asserted.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DegenerateInputError, InputError
from .tensor import Tensor, tensor


@dataclass(frozen=True)
class Neighborhood:
    """Temporal window N(i) = {j : 0 < |j - i| <= radius}, optionally with i."""

    radius: int = 1
    include_self: bool = False

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ConfigError(f"neighborhood radius must be a positive int, got {self.radius}")

    def members(self, i: int, f: int) -> list:
        js = [j for j in range(max(0, i - self.radius), min(f - 1, i + self.radius) + 1)
              if j != i]
        if self.include_self:
            js.append(i)
            js.sort()
        return js

    def nominal_size(self) -> int:
        """Unclipped |N(i)|, the value cost formulas use."""
        return 2 * self.radius + (1 if self.include_self else 0)

    def mask(self, f: int) -> np.ndarray:
        """(f, f) indicator W with W[i, j] = 1 iff j in N(i)."""
        w = np.zeros((f, f))
        for i in range(f):
            w[i, self.members(i, f)] = 1.0
        return w

    def require_nonempty(self, f: int) -> None:
        if f == 1 and not self.include_self:
            raise DegenerateInputError(
                "neighborhood is empty for a single frame without include_self")


@dataclass
class STRScore:
    """Per-block relevance volumes Omega, each shaped (h, f, n, n)."""

    omega: dict  # block id -> Tensor
    timestep: Optional[int] = None

    def blocks(self) -> list:
        return sorted(self.omega)

    def __getitem__(self, block: int) -> Tensor:
        if block not in self.omega:
            raise InputError(f"no relevance score stored for block {block}")
        return self.omega[block]

    def detached(self) -> "STRScore":
        return STRScore({k: v.detach() for k, v in self.omega.items()},
                        timestep=self.timestep)

    def as_arrays(self) -> dict:
        return {k: v.data for k, v in self.omega.items()}


# ---------------------------------------------------------------------------
# allocation instrumentation
# ---------------------------------------------------------------------------

class AllocationTracker:
    """Element counts of the buffers a relevance kernel retains.

    Registered allocations are the representation-level buffers (outputs and
    named scratch); transient arithmetic temporaries are kept below scratch
    size by construction (the kernel works frame by frame with `out=`
    arguments), so these counters answer "how many numbers does each
    representation hold".
    """

    def __init__(self):
        self.entries = []  # (label, shape, elements)

    def alloc(self, label: str, shape) -> None:
        self.entries.append((label, tuple(shape), int(np.prod(shape, dtype=np.int64))))

    @property
    def total(self) -> int:
        return sum(e[2] for e in self.entries)

    @property
    def largest(self) -> int:
        return max((e[2] for e in self.entries), default=0)

    def by_label(self) -> dict:
        out = {}
        for label, _, size in self.entries:
            out[label] = out.get(label, 0) + size
        return out


_TRACKERS: list = []


@contextlib.contextmanager
def track_allocations():
    t = AllocationTracker()
    _TRACKERS.append(t)
    try:
        yield t
    finally:
        _TRACKERS.pop()


def _tracked_zeros(label: str, shape, dtype) -> np.ndarray:
    if _TRACKERS:
        _TRACKERS[-1].alloc(label, shape)
    return np.zeros(shape, dtype=dtype)


def _tracked_empty(label: str, shape, dtype) -> np.ndarray:
    if _TRACKERS:
        _TRACKERS[-1].alloc(label, shape)
    return np.empty(shape, dtype=dtype)


# ---------------------------------------------------------------------------
# scalar-path definitions (also the test oracle)
# ---------------------------------------------------------------------------

def _check_indices(m, head: int, i: int, p: int, j: int, q: int) -> None:
    f, h, n = m.f, m.heads, m.n
    for label, v, hi in (("head", head, h), ("i", i, f), ("j", j, f),
                         ("p", p, n), ("q", q, n)):
        if not 0 <= v < hi:
            raise InputError(f"index {label}={v} out of range [0, {hi})")


def directional_relevance(record, block: int, head: int,
                          i: int, p: int, j: int, q: int) -> float:
    """g(i,p -> j,q): importance of pixel q in frame j to pixel p in frame i."""
    m = record[block]
    _check_indices(m, head, i, p, j, q)
    s = m.self_map.data
    tm = m.temporal_map.data
    return float(tm[p, head, i, j] * s[j, head, p, q]
                 + s[i, head, p, q] * tm[q, head, i, j])


def bidirectional_relevance(record, block: int, head: int,
                            i: int, p: int, j: int, q: int) -> float:
    """Symmetrized relevance g(i,p -> j,q) + g(j,q -> i,p)."""
    return (directional_relevance(record, block, head, i, p, j, q)
            + directional_relevance(record, block, head, j, q, i, p))


def str_score_bruteforce(record, nbhd: Neighborhood,
                         timestep: Optional[int] = None) -> STRScore:
    """Literal scalar-loop evaluation of the score volume.  Oracle only."""
    out = {}
    for m in record.maps:
        f, h, n = m.f, m.heads, m.n
        nbhd.require_nonempty(f)
        omega = np.zeros((h, f, n, n), dtype=m.self_map.dtype)
        for head in range(h):
            for i in range(f):
                for j in nbhd.members(i, f):
                    for p in range(n):
                        for q in range(n):
                            omega[head, i, p, q] += bidirectional_relevance(
                                record, m.block, head, i, p, j, q)
        out[m.block] = tensor(omega)
    return STRScore(out, timestep=timestep)


# ---------------------------------------------------------------------------
# production kernel
# ---------------------------------------------------------------------------

def _omega_forward(s: np.ndarray, tm: np.ndarray, nbhd: Neighborhood,
                   block: int) -> np.ndarray:
    """Fused factorized forward pass.

    Works one frame i at a time so scratch stays at (h, n, n) elements; the
    only full-size buffer is the output itself.  Term names follow the
    expansion of the symmetrized relevance:

      A = Tm[p,h,i,j] * S[j,h,p,q]      B = S[i,h,p,q] * Tm[q,h,i,j]
      C = S[i,h,q,p] * Tm[q,h,j,i]      D = S[j,h,q,p] * Tm[p,h,j,i]
    """
    f, h, n, _ = s.shape
    omega = _tracked_zeros(f"omega[b{block}]", (h, f, n, n), s.dtype)
    scratch = _tracked_empty(f"scratch[b{block}]", (h, n, n), s.dtype)
    tb = _tracked_empty(f"tb[b{block}]", (h, n), s.dtype)
    for i in range(f):
        js = nbhd.members(i, f)
        out_i = omega[:, i]                          # (h, n, n) view
        for j in js:
            # A: rows of Tm at (i -> j) scale frame j's self map
            np.multiply(np.swapaxes(tm[:, :, i, j], 0, 1)[:, :, None], s[j],
                        out=scratch)
            out_i += scratch
            # D: columns of Tm at (j -> i) scale frame j's transposed self map
            np.multiply(np.swapaxes(tm[:, :, j, i], 0, 1)[:, :, None],
                        np.swapaxes(s[j], 1, 2), out=scratch)
            out_i += scratch
        # B: per-(head, q) neighborhood mass of Tm rows leaving frame i
        np.copyto(tb, np.swapaxes(tm[:, :, i, js].sum(axis=-1), 0, 1))
        np.multiply(s[i], tb[:, None, :], out=scratch)
        out_i += scratch
        # C: per-(head, q) neighborhood mass of Tm columns entering frame i
        np.copyto(tb, np.swapaxes(tm[:, :, js, i].sum(axis=-1), 0, 1))
        np.multiply(np.swapaxes(s[i], 1, 2), tb[:, None, :], out=scratch)
        out_i += scratch
    return omega


def _omega_vjp(g: np.ndarray, s: np.ndarray, tm: np.ndarray,
               w: np.ndarray) -> tuple:
    """Gradients of sum(g * Omega) w.r.t. the self and temporal maps.

    Index letters: a indexes the map's leading axis (frame for S, pixel for
    Tm), (b, c) its trailing square, h heads, i frames, q pixels.
    """
    tb = np.einsum("qhij,ij->hqi", tm, w)            # neighborhood row mass
    tc = np.einsum("qhji,ij->hqi", tm, w)            # neighborhood column mass
    ds = np.einsum("hibc,ia,bhia->ahbc", g, w, tm)                      # A
    ds += np.einsum("habc,hca->ahbc", g, tb)                            # B
    ds += np.einsum("hacb,hba->ahbc", g, tc)                            # C
    ds += np.einsum("hicb,ia,chai->ahbc", g, w, tm)                     # D

    e = np.einsum("hipq,ihpq->hiq", g, s)            # G against S rows
    fe = np.einsum("hipq,ihqp->hiq", g, s)           # G against S columns
    dtm = np.einsum("bc,hbaq,chaq->ahbc", w, g, s)                      # A
    dtm += np.einsum("bc,hba->ahbc", w, e)                              # B
    dtm += np.einsum("cb,hca->ahbc", w, fe)                             # C
    dtm += np.einsum("cb,hcaq,bhqa->ahbc", w, g, s)                     # D
    return ds, dtm


def str_score(record, nbhd: Neighborhood,
              timestep: Optional[int] = None) -> STRScore:
    """Factorized relevance volumes for every retained block.

    Differentiable: when a record's maps carry gradient tape, the returned
    Omega tensors are connected to it through a hand-written VJP.
    """
    out = {}
    for m in record.maps:
        nbhd.require_nonempty(m.f)
        s_t, tm_t = m.self_map, m.temporal_map
        omega = _omega_forward(s_t.data, tm_t.data, nbhd, m.block)
        if s_t.requires_grad or tm_t.requires_grad:
            w = nbhd.mask(m.f)

            def vjp(g, s=s_t.data, tm=tm_t.data, w=w):
                return _omega_vjp(g, s, tm, w)

            out[m.block] = Tensor(omega, _parents=(s_t, tm_t), _vjp=vjp)
        else:
            out[m.block] = tensor(omega)
    return STRScore(out, timestep=timestep)


# ---------------------------------------------------------------------------
# cost model and the explicit joint-matrix comparator
# ---------------------------------------------------------------------------

def cost_report(f: int, n: int, h: int, nbhd: Neighborhood) -> dict:
    """Multiply and memory counts of the factorized score vs joint attention.

    `factorized_mults` counts the two products per direction over both
    directions of the symmetrized relevance; the memory entries count the
    elements each representation holds (the two factor maps vs the joint
    (f*n) x (f*n) matrix per head).
    """
    size = nbhd.nominal_size()
    factorized_mults = 4 * h * f * size * n * n
    factorized_mem = h * (f * n * n + n * f * f)
    full3d_mem = h * (f * n) ** 2
    return {
        "factorized_mults": factorized_mults,
        "factorized_mem": factorized_mem,
        "full3d_mem": full3d_mem,
        "mem_ratio": full3d_mem / factorized_mem,
    }


def full3d_relevance_map(record, block: int) -> np.ndarray:
    """Materialized joint relevance matrix, shape (h, f*n, f*n).

    Entry [head, i*n + p, j*n + q] is the symmetrized relevance of the
    (frame, pixel) token pairs.  This is the representation the factorized
    kernel avoids; it exists so the memory comparison in the efficiency
    audit measures a real construction instead of a formula.
    """
    m = record[block]
    s = m.self_map.data
    tm = m.temporal_map.data
    f, h, n, _ = s.shape
    joint = _tracked_empty(f"full3d[b{block}]", (h, f, n, f, n), s.dtype)
    np.einsum("phij,jhpq->hipjq", tm, s, out=joint)
    joint += np.einsum("ihpq,qhij->hipjq", s, tm)
    joint += np.einsum("ihqp,qhji->hipjq", s, tm)
    joint += np.einsum("jhqp,phji->hipjq", s, tm)
    return joint.reshape(h, f * n, f * n)


def omega_from_full3d(joint: np.ndarray, nbhd: Neighborhood,
                      f: int, n: int) -> np.ndarray:
    """Neighborhood-sum the joint matrix back into an (h, f, n, n) volume.

    A third, independent route to Omega used to cross-check both the
    factorized kernel and the scalar oracle.
    """
    h = joint.shape[0]
    view = joint.reshape(h, f, n, f, n)
    omega = np.zeros((h, f, n, n), dtype=joint.dtype)
    for i in range(f):
        js = nbhd.members(i, f)
        if js:
            # view[:, i] is (h, p, j, q); pick neighborhood frames, sum over j
            omega[:, i] = view[:, i][:, :, js].sum(axis=2)
    return omega
