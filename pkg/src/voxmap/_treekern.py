"""Numba kernels backing :mod:`voxmap.tree`.

A grid lives in a flat tuple of arrays ("state") so that nopython code can
grow node pools and hand the new arrays back to the Python wrapper:

    (meta, root, up_child, up_cmask, up_amask, up_origin,
     lo_child, lo_cmask, lo_amask, lo_origin,
     leaf_amask, leaf_vals, leaf_origin, bg)

``meta`` holds the three log2 extents and the per-level node counts.  Node
pools are only ever appended to; rows past the count are pristine.

Bit grids store leaf values as one hit bit per voxel (``leaf_vals`` is a
``uint64`` word array); value grids store a dense float row per leaf.

An accessor cache is an ``int64[12]`` array holding, per level, the node
origin and pool index of the last node touched (index -1 when invalid).
Whenever a level is refreshed, every level below it is invalidated, so a
valid leaf entry always implies valid ancestors.
"""
from __future__ import annotations

import numpy as np
from numba import njit, types
from numba.typed import Dict

M_L1, M_L2, M_L3, M_NU, M_NL, M_NF = 0, 1, 2, 3, 4, 5
META_LEN = 8

KEY_TYPE = types.UniTuple(types.int64, 3)

ONE = np.uint64(1)
ZERO = np.uint64(0)
ALL = np.uint64(0xFFFFFFFFFFFFFFFF)


def new_root():
    return Dict.empty(key_type=KEY_TYPE, value_type=types.int64)


def n_words(log2n: int) -> int:
    return max(1, (1 << (3 * log2n)) >> 6)


def empty_state(log2, value_dtype, bg_word, cap=(1, 8, 64)):
    """Allocate an empty state tuple.

    ``value_dtype`` of ``np.uint64`` selects a bit grid; ``bg_word`` is the
    fill used for fresh leaf value rows.
    """
    l1, l2, l3 = log2
    meta = np.zeros(META_LEN, np.int64)
    meta[M_L1], meta[M_L2], meta[M_L3] = l1, l2, l3
    nu, nl, nf = cap
    c1, c2, c3 = 1 << (3 * l1), 1 << (3 * l2), 1 << (3 * l3)
    w1, w2, w3 = n_words(l1), n_words(l2), n_words(l3)
    vals_w = w3 if value_dtype == np.uint64 else c3
    bg = np.array([bg_word], dtype=value_dtype)
    return (
        meta,
        new_root(),
        np.full((nu, c1), -1, np.int32),
        np.zeros((nu, w1), np.uint64),
        np.zeros((nu, w1), np.uint64),
        np.zeros((nu, 3), np.int64),
        np.full((nl, c2), -1, np.int32),
        np.zeros((nl, w2), np.uint64),
        np.zeros((nl, w2), np.uint64),
        np.zeros((nl, 3), np.int64),
        np.zeros((nf, w3), np.uint64),
        np.full((nf, vals_w), bg[0], value_dtype),
        np.zeros((nf, 3), np.int64),
        bg,
    )


def new_cache():
    c = np.zeros(12, np.int64)
    c[3] = c[7] = c[11] = -1
    return c


# ---------------------------------------------------------------------------
# bit helpers


@njit(inline="always")
def bit(b):
    return ONE << np.uint64(b)


@njit(inline="always")
def popcount(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return np.int64((x * np.uint64(0x0101010101010101)) >> np.uint64(56))


@njit(inline="always")
def child_index(x, y, z, shift, log2n):
    m = (1 << log2n) - 1
    return (((x >> shift) & m) << (2 * log2n)) | (((y >> shift) & m) << log2n) | ((z >> shift) & m)


@njit(inline="always")
def row_empty(a, i):
    for w in range(a.shape[1]):
        if a[i, w] != ZERO:
            return False
    return True


@njit(cache=True)
def _grow(a, cap, fill):
    out = np.empty((cap, a.shape[1]), a.dtype)
    n = a.shape[0]
    out[:n] = a
    out[n:] = fill
    return out


# ---------------------------------------------------------------------------
# allocation


@njit(cache=True)
def alloc_upper(st, ox, oy, oz):
    meta, root, uc, ucm, uam, uo, lc, lcm, lam, lo, fam, fv, fo, bg = st
    n = meta[M_NU]
    if n == uc.shape[0]:
        cap = max(2 * n, 1)
        uc = _grow(uc, cap, -1)
        ucm = _grow(ucm, cap, 0)
        uam = _grow(uam, cap, 0)
        uo = _grow(uo, cap, 0)
        st = (meta, root, uc, ucm, uam, uo, lc, lcm, lam, lo, fam, fv, fo, bg)
    uo[n, 0], uo[n, 1], uo[n, 2] = ox, oy, oz
    meta[M_NU] = n + 1
    return st, n


@njit(cache=True)
def alloc_lower(st, ox, oy, oz):
    meta, root, uc, ucm, uam, uo, lc, lcm, lam, lo, fam, fv, fo, bg = st
    n = meta[M_NL]
    if n == lc.shape[0]:
        cap = max(2 * n, 1)
        lc = _grow(lc, cap, -1)
        lcm = _grow(lcm, cap, 0)
        lam = _grow(lam, cap, 0)
        lo = _grow(lo, cap, 0)
        st = (meta, root, uc, ucm, uam, uo, lc, lcm, lam, lo, fam, fv, fo, bg)
    lo[n, 0], lo[n, 1], lo[n, 2] = ox, oy, oz
    meta[M_NL] = n + 1
    return st, n


@njit(cache=True)
def reserve_leaves(st, extra):
    """Make room for ``extra`` more leaves with a single exact-size growth."""
    meta, root, uc, ucm, uam, uo, lc, lcm, lam, lo, fam, fv, fo, bg = st
    need = meta[M_NF] + extra
    if need > fam.shape[0]:
        fam = _grow(fam, need, 0)
        fv = _grow(fv, need, bg[0])
        fo = _grow(fo, need, 0)
        st = (meta, root, uc, ucm, uam, uo, lc, lcm, lam, lo, fam, fv, fo, bg)
    return st


@njit(cache=True)
def alloc_leaf(st, ox, oy, oz):
    meta, root, uc, ucm, uam, uo, lc, lcm, lam, lo, fam, fv, fo, bg = st
    n = meta[M_NF]
    if n == fam.shape[0]:
        cap = max(2 * n, 1)
        fam = _grow(fam, cap, 0)
        fv = _grow(fv, cap, bg[0])
        fo = _grow(fo, cap, 0)
        st = (meta, root, uc, ucm, uam, uo, lc, lcm, lam, lo, fam, fv, fo, bg)
    fo[n, 0], fo[n, 1], fo[n, 2] = ox, oy, oz
    meta[M_NF] = n + 1
    return st, n


# ---------------------------------------------------------------------------
# traversal


@njit(cache=True)
def probe(st, cache, x, y, z, create):
    """Return ``(state, leaf_index)`` for the leaf covering ``(x, y, z)``.

    With ``create`` false a missing path yields index -1 and the state is
    unchanged.  Cached levels are tried bottom-up before the root map.
    """
    meta = st[0]
    l1, l2, l3 = meta[M_L1], meta[M_L2], meta[M_L3]
    s2 = l2 + l3
    s1 = l1 + s2
    fx, fy, fz = (x >> l3) << l3, (y >> l3) << l3, (z >> l3) << l3
    if cache[11] >= 0 and cache[8] == fx and cache[9] == fy and cache[10] == fz:
        return st, cache[11]
    lx, ly, lz = (x >> s2) << s2, (y >> s2) << s2, (z >> s2) << s2
    if cache[7] >= 0 and cache[4] == lx and cache[5] == ly and cache[6] == lz:
        li = cache[7]
    else:
        ux, uy, uz = (x >> s1) << s1, (y >> s1) << s1, (z >> s1) << s1
        if cache[3] >= 0 and cache[0] == ux and cache[1] == uy and cache[2] == uz:
            ui = cache[3]
        else:
            key = (x >> s1, y >> s1, z >> s1)
            root = st[1]
            if key in root:
                ui = root[key]
            else:
                if not create:
                    return st, -1
                st, ui = alloc_upper(st, ux, uy, uz)
                st[1][key] = ui
            cache[0], cache[1], cache[2], cache[3] = ux, uy, uz, ui
            cache[7] = -1
            cache[11] = -1
        ci = child_index(x, y, z, s2, l1)
        li = np.int64(st[2][ui, ci])
        if li < 0:
            if not create:
                return st, -1
            st, li = alloc_lower(st, lx, ly, lz)
            st[2][ui, ci] = li
            st[3][ui, ci >> 6] |= bit(ci & 63)
        cache[4], cache[5], cache[6], cache[7] = lx, ly, lz, li
        cache[11] = -1
    ci = child_index(x, y, z, l3, l2)
    fi = np.int64(st[6][li, ci])
    if fi < 0:
        if not create:
            return st, -1
        st, fi = alloc_leaf(st, fx, fy, fz)
        st[6][li, ci] = fi
        st[7][li, ci >> 6] |= bit(ci & 63)
    cache[8], cache[9], cache[10], cache[11] = fx, fy, fz, fi
    return st, fi


@njit(cache=True)
def _parents_on(st, cache, fi):
    # leaf ``fi`` just went from empty to non-empty; cache holds its path
    meta, fo = st[0], st[12]
    l1, l2, l3 = meta[M_L1], meta[M_L2], meta[M_L3]
    li, ui = cache[7], cache[3]
    lam, uam = st[8], st[4]
    ci = child_index(fo[fi, 0], fo[fi, 1], fo[fi, 2], l3, l2)
    lower_was_empty = row_empty(lam, li)
    lam[li, ci >> 6] |= bit(ci & 63)
    if lower_was_empty:
        cu = child_index(fo[fi, 0], fo[fi, 1], fo[fi, 2], l2 + l3, l1)
        uam[ui, cu >> 6] |= bit(cu & 63)


@njit(cache=True)
def _parents_off(st, cache, fi):
    meta, fo = st[0], st[12]
    l1, l2, l3 = meta[M_L1], meta[M_L2], meta[M_L3]
    li, ui = cache[7], cache[3]
    lam, uam = st[8], st[4]
    ci = child_index(fo[fi, 0], fo[fi, 1], fo[fi, 2], l3, l2)
    lam[li, ci >> 6] &= ~bit(ci & 63)
    if row_empty(lam, li):
        cu = child_index(fo[fi, 0], fo[fi, 1], fo[fi, 2], l2 + l3, l1)
        uam[ui, cu >> 6] &= ~bit(cu & 63)


@njit(cache=True)
def activate(st, cache, fi, w, b):
    fam = st[10]
    if fam[fi, w] & b:
        return
    was_empty = row_empty(fam, fi)
    fam[fi, w] |= b
    if was_empty:
        _parents_on(st, cache, fi)


@njit(cache=True)
def deactivate(st, cache, fi, w, b):
    fam = st[10]
    if not (fam[fi, w] & b):
        return
    fam[fi, w] &= ~b
    if row_empty(fam, fi):
        _parents_off(st, cache, fi)


# ---------------------------------------------------------------------------
# single voxel access


@njit(cache=True)
def get_bit(st, cache, x, y, z):
    st, fi = probe(st, cache, x, y, z, False)
    if fi < 0:
        return False, st[13][0] != ZERO
    vi = child_index(x, y, z, 0, st[0][M_L3])
    w, b = vi >> 6, bit(vi & 63)
    return (st[10][fi, w] & b) != ZERO, (st[11][fi, w] & b) != ZERO


@njit(cache=True)
def get_val(st, cache, x, y, z):
    st, fi = probe(st, cache, x, y, z, False)
    if fi < 0:
        return False, st[13][0]
    vi = child_index(x, y, z, 0, st[0][M_L3])
    active = (st[10][fi, vi >> 6] & bit(vi & 63)) != ZERO
    return active, st[11][fi, vi] if active else st[13][0]


@njit(cache=True)
def set_bit(st, cache, x, y, z, value, active):
    st, fi = probe(st, cache, x, y, z, True)
    vi = child_index(x, y, z, 0, st[0][M_L3])
    w, b = vi >> 6, bit(vi & 63)
    fv = st[11]
    if value:
        fv[fi, w] |= b
    else:
        fv[fi, w] &= ~b
    if active:
        activate(st, cache, fi, w, b)
    else:
        deactivate(st, cache, fi, w, b)
    return st


@njit(cache=True)
def set_val(st, cache, x, y, z, value, active):
    st, fi = probe(st, cache, x, y, z, True)
    vi = child_index(x, y, z, 0, st[0][M_L3])
    st[11][fi, vi] = value
    if active:
        activate(st, cache, fi, vi >> 6, bit(vi & 63))
    else:
        deactivate(st, cache, fi, vi >> 6, bit(vi & 63))
    return st


@njit(cache=True)
def get_bit_many(st, cache, coords):
    n = coords.shape[0]
    act = np.zeros(n, np.bool_)
    val = np.zeros(n, np.bool_)
    for i in range(n):
        act[i], val[i] = get_bit(st, cache, coords[i, 0], coords[i, 1], coords[i, 2])
    return act, val


@njit(cache=True)
def get_val_many(st, cache, coords):
    n = coords.shape[0]
    act = np.zeros(n, np.bool_)
    val = np.empty(n, st[11].dtype)
    for i in range(n):
        act[i], val[i] = get_val(st, cache, coords[i, 0], coords[i, 1], coords[i, 2])
    return act, val


@njit(cache=True)
def set_bit_many(st, cache, coords, values, active):
    for i in range(coords.shape[0]):
        st = set_bit(st, cache, coords[i, 0], coords[i, 1], coords[i, 2], values[i], active[i])
    return st


@njit(cache=True)
def set_val_many(st, cache, coords, values, active):
    for i in range(coords.shape[0]):
        st = set_val(st, cache, coords[i, 0], coords[i, 1], coords[i, 2], values[i], active[i])
    return st


# ---------------------------------------------------------------------------
# observation marking (bit grids)


@njit(cache=True)
def mark_free(st, cache, x, y, z):
    """Activate as free unless already active (a hit is never downgraded)."""
    st, fi = probe(st, cache, x, y, z, True)
    vi = child_index(x, y, z, 0, st[0][M_L3])
    w, b = vi >> 6, bit(vi & 63)
    if not (st[10][fi, w] & b):
        st[11][fi, w] &= ~b
        activate(st, cache, fi, w, b)
    return st


@njit(cache=True)
def mark_hit(st, cache, x, y, z):
    st, fi = probe(st, cache, x, y, z, True)
    vi = child_index(x, y, z, 0, st[0][M_L3])
    w, b = vi >> 6, bit(vi & 63)
    st[11][fi, w] |= b
    activate(st, cache, fi, w, b)
    return st


# ---------------------------------------------------------------------------
# whole-grid operations


@njit(cache=True)
def count_active(st):
    fam = st[10]
    total = 0
    for i in range(st[0][M_NF]):
        for w in range(fam.shape[1]):
            total += popcount(fam[i, w])
    return total


@njit(cache=True)
def _missing_leaves(dst, dcache, src):
    sam, sfo = src[10], src[12]
    missing = 0
    for j in range(src[0][M_NF]):
        if row_empty(sam, j):
            continue
        dst, fi = probe(dst, dcache, sfo[j, 0], sfo[j, 1], sfo[j, 2], False)
        if fi < 0:
            missing += 1
    return missing


@njit(cache=True, nogil=True)
def merge_or(dst, dcache, src):
    """OR ``src`` into ``dst`` leaf-word-wise.

    A leaf missing from ``dst`` is adopted by copying its words; otherwise
    actives are unioned and hit dominates free where both are active.
    """
    dst = reserve_leaves(dst, _missing_leaves(dst, dcache, src))
    sam, sv, sfo = src[10], src[11], src[12]
    for j in range(src[0][M_NF]):
        if row_empty(sam, j):
            continue
        dst, fi = probe(dst, dcache, sfo[j, 0], sfo[j, 1], sfo[j, 2], True)
        dam, dv = dst[10], dst[11]
        was_empty = row_empty(dam, fi)
        if was_empty:
            for w in range(sam.shape[1]):
                sa = sam[j, w]
                dv[fi, w] = (dv[fi, w] & ~sa) | (sv[j, w] & sa)
                dam[fi, w] = sa
            _parents_on(dst, dcache, fi)
        else:
            for w in range(sam.shape[1]):
                sa = sam[j, w]
                da = dam[fi, w]
                dv[fi, w] = (dv[fi, w] & ~(sa & ~da)) | (sv[j, w] & sa)
                dam[fi, w] = da | sa
    return dst


@njit(cache=True, nogil=True)
def apply_aggregate(mst, mcache, agg, l_hit, l_miss, l_min, l_max):
    """Apply one log-odds update per active aggregation voxel.

    Returns ``(state, hits, frees)``.  Voxels that were inactive in the map
    start from the map background.
    """
    aam, av, afo = agg[10], agg[11], agg[12]
    mst = reserve_leaves(mst, _missing_leaves(mst, mcache, agg))
    l3 = mst[0][M_L3]
    nvox = 1 << (3 * l3)
    bgv = np.float64(mst[13][0])
    hits = 0
    frees = 0
    for j in range(agg[0][M_NF]):
        if row_empty(aam, j):
            continue
        mst, fi = probe(mst, mcache, afo[j, 0], afo[j, 1], afo[j, 2], True)
        mam, mv = mst[10], mst[11]
        was_empty = row_empty(mam, fi)
        for w in range(aam.shape[1]):
            a = aam[j, w]
            if a == ZERO:
                continue
            h = av[j, w]
            ma = mam[fi, w]
            for b in range(min(64, nvox)):
                bb = bit(b)
                if not (a & bb):
                    continue
                vi = w * 64 + b
                v = np.float64(mv[fi, vi]) if (ma & bb) else bgv
                if h & bb:
                    v = min(v + l_hit, l_max)
                    hits += 1
                else:
                    v = max(v + l_miss, l_min)
                    frees += 1
                mv[fi, vi] = v
            mam[fi, w] = ma | a
        if was_empty:
            _parents_on(mst, mcache, fi)
    return mst, hits, frees


@njit(cache=True)
def collect_active(st, upper_order):
    """Active voxels in canonical order as ``(coords, leaf_idx, voxel_idx)``.

    Upper nodes are visited in ``upper_order``; inside a node children and
    voxels follow bit order (x slowest, z fastest).
    """
    meta = st[0]
    l1, l2, l3 = meta[M_L1], meta[M_L2], meta[M_L3]
    uc, ucm, lc, lcm, fam, fo = st[2], st[3], st[6], st[7], st[10], st[12]
    n = count_active(st)
    coords = np.empty((n, 3), np.int32)
    leaf = np.empty(n, np.int64)
    vox = np.empty(n, np.int64)
    m3 = (1 << l3) - 1
    nvox = 1 << (3 * l3)
    k = 0
    for ui in upper_order:
        for w1 in range(ucm.shape[1]):
            word1 = ucm[ui, w1]
            if word1 == ZERO:
                continue
            for b1 in range(64):
                if not (word1 & bit(b1)):
                    continue
                li = uc[ui, w1 * 64 + b1]
                for w2 in range(lcm.shape[1]):
                    word2 = lcm[li, w2]
                    if word2 == ZERO:
                        continue
                    for b2 in range(64):
                        if not (word2 & bit(b2)):
                            continue
                        fi = lc[li, w2 * 64 + b2]
                        for w3 in range(fam.shape[1]):
                            word3 = fam[fi, w3]
                            if word3 == ZERO:
                                continue
                            for b3 in range(min(64, nvox)):
                                if not (word3 & bit(b3)):
                                    continue
                                vi = w3 * 64 + b3
                                coords[k, 0] = fo[fi, 0] + (vi >> (2 * l3))
                                coords[k, 1] = fo[fi, 1] + ((vi >> l3) & m3)
                                coords[k, 2] = fo[fi, 2] + (vi & m3)
                                leaf[k] = fi
                                vox[k] = vi
                                k += 1
    return coords, leaf, vox


@njit(cache=True)
def audit(st):
    """Full consistency check; returns 0 when clean, else an error code."""
    meta = st[0]
    l1, l2, l3 = meta[M_L1], meta[M_L2], meta[M_L3]
    s2 = l2 + l3
    s1 = l1 + s2
    uc, ucm, uam, uo = st[2], st[3], st[4], st[5]
    lc, lcm, lam, lo = st[6], st[7], st[8], st[9]
    fam, fo = st[10], st[12]
    seen_l = np.zeros(meta[M_NL], np.int64)
    seen_f = np.zeros(meta[M_NF], np.int64)
    for key, ui in st[1].items():
        if uo[ui, 0] != key[0] << s1 or uo[ui, 1] != key[1] << s1 or uo[ui, 2] != key[2] << s1:
            return 1
        for ci in range(uc.shape[1]):
            li = uc[ui, ci]
            present = (ucm[ui, ci >> 6] & bit(ci & 63)) != ZERO
            if present != (li >= 0):
                return 2
            if li < 0:
                if uam[ui, ci >> 6] & bit(ci & 63):
                    return 3
                continue
            seen_l[li] += 1
            if child_index(lo[li, 0], lo[li, 1], lo[li, 2], s2, l1) != ci:
                return 4
            for a in range(3):
                if (lo[li, a] >> s1) << s1 != uo[ui, a]:
                    return 4
            lower_active = not row_empty(lam, li)
            if lower_active != ((uam[ui, ci >> 6] & bit(ci & 63)) != ZERO):
                return 5
            for cj in range(lc.shape[1]):
                fi = lc[li, cj]
                present = (lcm[li, cj >> 6] & bit(cj & 63)) != ZERO
                if present != (fi >= 0):
                    return 6
                if fi < 0:
                    if lam[li, cj >> 6] & bit(cj & 63):
                        return 7
                    continue
                seen_f[fi] += 1
                if child_index(fo[fi, 0], fo[fi, 1], fo[fi, 2], l3, l2) != cj:
                    return 8
                for a in range(3):
                    if (fo[fi, a] >> s2) << s2 != lo[li, a]:
                        return 8
                if (not row_empty(fam, fi)) != ((lam[li, cj >> 6] & bit(cj & 63)) != ZERO):
                    return 9
    for i in range(seen_l.shape[0]):
        if seen_l[i] != 1:
            return 10
    for i in range(seen_f.shape[0]):
        if seen_f[i] != 1:
            return 11
    return 0
