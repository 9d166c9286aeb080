"""Wavelet index sets and sparse coefficient vectors.

Indices are (basis tag, level, loc) with integer locs whose encoding is
owned by each basis. Sets and vectors are stored level-grouped as sorted
int64 arrays so kernels can operate in batched numpy; the dict-like views
exist for tests and I/O.
"""

from typing import NamedTuple

import numpy as np


class WaveletIndex(NamedTuple):
    basis: str
    level: int
    loc: int


def _merge_sorted_unique(a, b):
    return np.unique(np.concatenate([a, b]))


class IndexSet:
    """Per-basis, per-level sorted loc arrays."""

    def __init__(self, data=None):
        # data: {basis: {level: sorted int64 array}}
        self.data = data if data is not None else {}

    @classmethod
    def from_indices(cls, indices):
        tmp = {}
        for ix in indices:
            tmp.setdefault(ix.basis, {}).setdefault(ix.level, []).append(ix.loc)
        data = {
            b: {lv: np.unique(np.asarray(locs, dtype=np.int64)) for lv, locs in per.items()}
            for b, per in tmp.items()
        }
        return cls(data)

    def bases(self):
        return sorted(self.data)

    def levels(self, basis):
        return sorted(self.data.get(basis, {}))

    def locs(self, basis, level):
        return self.data.get(basis, {}).get(level, np.empty(0, dtype=np.int64))

    def add_array(self, basis, level, locs):
        locs = np.asarray(locs, dtype=np.int64)
        if len(locs) == 0:
            return
        per = self.data.setdefault(basis, {})
        cur = per.get(level)
        per[level] = np.unique(locs) if cur is None else _merge_sorted_unique(cur, locs)

    def __contains__(self, ix: WaveletIndex):
        arr = self.locs(ix.basis, ix.level)
        pos = np.searchsorted(arr, ix.loc)
        return pos < len(arr) and arr[pos] == ix.loc

    def contains_arr(self, basis, level, locs):
        arr = self.locs(basis, level)
        if len(arr) == 0:
            return np.zeros(len(locs), dtype=bool)
        pos = np.searchsorted(arr, locs)
        return (pos < len(arr)) & (arr[np.minimum(pos, len(arr) - 1)] == locs)

    def __len__(self):
        return sum(len(a) for per in self.data.values() for a in per.values())

    def count(self, basis):
        return sum(len(a) for a in self.data.get(basis, {}).values())

    def __iter__(self):
        for b in self.bases():
            for lv in self.levels(b):
                for loc in self.locs(b, lv):
                    yield WaveletIndex(b, lv, int(loc))

    def __eq__(self, other):
        if self.bases() != other.bases():
            return False
        for b in self.bases():
            if self.levels(b) != other.levels(b):
                return False
            for lv in self.levels(b):
                if not np.array_equal(self.locs(b, lv), other.locs(b, lv)):
                    return False
        return True

    def union(self, other):
        out = IndexSet()
        for b in set(self.data) | set(other.data):
            for lv in set(self.data.get(b, {})) | set(other.data.get(b, {})):
                out.add_array(b, lv, np.concatenate([self.locs(b, lv), other.locs(b, lv)]))
        return out

    def difference(self, other):
        out = IndexSet()
        for b in self.bases():
            for lv in self.levels(b):
                mine = self.locs(b, lv)
                mask = other.contains_arr(b, lv, mine)
                out.add_array(b, lv, mine[~mask])
        return out

    def restrict_basis(self, basis):
        return IndexSet({basis: dict(self.data.get(basis, {}))})

    def max_level(self):
        return max((lv for per in self.data.values() for lv in per), default=-1)

    def copy(self):
        return IndexSet({b: dict(per) for b, per in self.data.items()})


class CoeffVector:
    """Finitely supported vector over wavelet indices."""

    def __init__(self, data=None):
        # data: {basis: {level: (sorted locs, values)}}
        self.data = data if data is not None else {}

    @classmethod
    def zeros_like(cls, index_set: IndexSet):
        data = {
            b: {lv: (index_set.locs(b, lv).copy(), np.zeros(len(index_set.locs(b, lv))))
                for lv in index_set.levels(b)}
            for b in index_set.bases()
        }
        return cls(data)

    @classmethod
    def from_dict(cls, entries):
        tmp = {}
        for ix, v in entries.items():
            tmp.setdefault(ix.basis, {}).setdefault(ix.level, []).append((ix.loc, v))
        data = {}
        for b, per in tmp.items():
            data[b] = {}
            for lv, pairs in per.items():
                pairs.sort()
                locs = np.array([p[0] for p in pairs], dtype=np.int64)
                vals = np.array([p[1] for p in pairs])
                data[b][lv] = (locs, vals)
        return cls(data)

    def bases(self):
        return sorted(self.data)

    def levels(self, basis):
        return sorted(self.data.get(basis, {}))

    def arrays(self, basis, level):
        return self.data.get(basis, {}).get(
            level, (np.empty(0, dtype=np.int64), np.empty(0))
        )

    def set_arrays(self, basis, level, locs, vals):
        if len(locs) == 0:
            self.data.get(basis, {}).pop(level, None)
            return
        self.data.setdefault(basis, {})[level] = (
            np.asarray(locs, dtype=np.int64), np.asarray(vals, dtype=float)
        )

    def add_arrays(self, basis, level, locs, vals):
        """Scatter-add (locs need not be sorted or unique)."""
        locs = np.asarray(locs, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        if len(locs) == 0:
            return
        cur_locs, cur_vals = self.arrays(basis, level)
        all_locs = np.concatenate([cur_locs, locs])
        uniq, inv = np.unique(all_locs, return_inverse=True)
        acc = np.zeros(len(uniq))
        np.add.at(acc, inv, np.concatenate([cur_vals, vals]))
        self.set_arrays(basis, level, uniq, acc)

    def __getitem__(self, ix: WaveletIndex):
        locs, vals = self.arrays(ix.basis, ix.level)
        pos = np.searchsorted(locs, ix.loc)
        if pos < len(locs) and locs[pos] == ix.loc:
            return float(vals[pos])
        return 0.0

    def items(self):
        for b in self.bases():
            for lv in self.levels(b):
                locs, vals = self.arrays(b, lv)
                for loc, v in zip(locs, vals):
                    yield WaveletIndex(b, lv, int(loc)), float(v)

    def support(self):
        out = IndexSet()
        for b in self.bases():
            for lv in self.levels(b):
                locs, vals = self.arrays(b, lv)
                out.add_array(b, lv, locs[vals != 0.0])
        return out

    def nnz(self):
        return sum(len(a[0]) for per in self.data.values() for a in per.values())

    def norm(self):
        return float(
            np.sqrt(
                sum(
                    float(v @ v)
                    for per in self.data.values()
                    for (_, v) in per.values()
                )
            )
        )

    def dot(self, other):
        total = 0.0
        for b in self.bases():
            for lv in self.levels(b):
                la, va = self.arrays(b, lv)
                lb, vb = other.arrays(b, lv)
                if len(la) == 0 or len(lb) == 0:
                    continue
                pos = np.searchsorted(lb, la)
                ok = (pos < len(lb)) & (lb[np.minimum(pos, len(lb) - 1)] == la)
                total += float(va[ok] @ vb[pos[ok]])
        return total

    def axpy(self, alpha, other):
        for b in other.bases():
            for lv in other.levels(b):
                locs, vals = other.arrays(b, lv)
                self.add_arrays(b, lv, locs, alpha * vals)
        return self

    def scale(self, alpha):
        for per in self.data.values():
            for lv in per:
                per[lv] = (per[lv][0], alpha * per[lv][1])
        return self

    def restrict(self, index_set: IndexSet):
        out = CoeffVector()
        for b in self.bases():
            for lv in self.levels(b):
                locs, vals = self.arrays(b, lv)
                mask = index_set.contains_arr(b, lv, locs)
                out.set_arrays(b, lv, locs[mask], vals[mask])
        return out

    def drop(self, index_set: IndexSet):
        out = CoeffVector()
        for b in self.bases():
            for lv in self.levels(b):
                locs, vals = self.arrays(b, lv)
                mask = index_set.contains_arr(b, lv, locs)
                out.set_arrays(b, lv, locs[~mask], vals[~mask])
        return out

    def copy(self):
        out = CoeffVector()
        for b in self.bases():
            for lv in self.levels(b):
                locs, vals = self.arrays(b, lv)
                out.set_arrays(b, lv, locs.copy(), vals.copy())
        return out
