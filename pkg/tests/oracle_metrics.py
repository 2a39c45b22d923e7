"""Independent brute-force re-implementation of every quality metric.

Written against the definitions only, in plain python loops with no numpy
and no imports from the package, so the main implementations can be checked
against it to 1e-9.  Slow on purpose.
"""

import itertools
import math


def oracle_ks(real, syn):
    real, syn = list(real), list(syn)
    sup = 0.0
    for t in real + syn:
        f_real = sum(1 for v in real if v <= t) / len(real)
        f_syn = sum(1 for v in syn if v <= t) / len(syn)
        sup = max(sup, abs(f_syn - f_real))
    return 1.0 - sup


def oracle_tvd(real, syn):
    real, syn = list(real), list(syn)
    support = set(real) | set(syn)
    total = 0.0
    for w in support:
        r = sum(1 for v in real if v == w) / len(real)
        s = sum(1 for v in syn if v == w) / len(syn)
        total += abs(s - r)
    return 1.0 - total / 2.0


def oracle_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    num = sum((a - mx) * (b - my) for a, b in zip(x, y))
    dx = sum((a - mx) ** 2 for a in x)
    dy = sum((b - my) ** 2 for b in y)
    if dx == 0.0 or dy == 0.0:
        return 0.0
    return max(-1.0, min(1.0, num / math.sqrt(dx * dy)))


def oracle_trend_numeric(real_pair, syn_pair):
    return 1.0 - abs(oracle_pearson(*syn_pair) - oracle_pearson(*real_pair)) / 2.0


def oracle_trend_categorical(real_pair, syn_pair):
    ra, rb = real_pair
    sa, sb = syn_pair
    support = set(zip(ra, rb)) | set(zip(sa, sb))
    total = 0.0
    for w in support:
        r = sum(1 for p in zip(ra, rb) if p == w) / len(ra)
        s = sum(1 for p in zip(sa, sb) if p == w) / len(sa)
        total += abs(s - r)
    return 1.0 - total / 2.0


def oracle_bin(real, syn, bins=10):
    srt = sorted(real)
    n = len(srt)
    edges = []
    if srt[0] != srt[-1]:
        for i in range(1, bins):
            pos = (n - 1) * (i / bins)
            lo, hi = math.floor(pos), math.ceil(pos)
            if lo == hi:
                e = float(srt[lo])
            else:
                e = float(srt[lo]) + (pos - lo) * (float(srt[hi]) - float(srt[lo]))
            if not edges or e != edges[-1]:
                edges.append(e)

    def label(v):
        # On-edge values land in the upper bin: count edges <= v.
        k = 0
        for e in edges:
            if v >= e:
                k += 1
        return k

    return [label(v) for v in real], [label(v) for v in syn]


def oracle_table_report(real_cols, syn_cols, kinds):
    """Column lists + kinds ('num'|'cat') -> (s_shape, s_trend, s_overall)."""
    names = list(real_cols)
    shapes = []
    for name in names:
        if kinds[name] == "num":
            shapes.append(oracle_ks(real_cols[name], syn_cols[name]))
        else:
            shapes.append(oracle_tvd(real_cols[name], syn_cols[name]))
    s_shape = sum(shapes) / len(shapes)

    trends = []
    for a, b in itertools.combinations(names, 2):
        ka, kb = kinds[a], kinds[b]
        if ka == "num" and kb == "num":
            trends.append(oracle_trend_numeric((real_cols[a], real_cols[b]), (syn_cols[a], syn_cols[b])))
        elif ka == "cat" and kb == "cat":
            trends.append(
                oracle_trend_categorical((real_cols[a], real_cols[b]), (syn_cols[a], syn_cols[b]))
            )
        else:
            if ka == "num":
                rb_, sb_ = oracle_bin(real_cols[a], syn_cols[a])
                trends.append(oracle_trend_categorical((rb_, real_cols[b]), (sb_, syn_cols[b])))
            else:
                rb_, sb_ = oracle_bin(real_cols[b], syn_cols[b])
                trends.append(oracle_trend_categorical((real_cols[a], rb_), (syn_cols[a], sb_)))
    if not trends:
        return s_shape, None, s_shape
    s_trend = sum(trends) / len(trends)
    return s_shape, s_trend, (s_shape + s_trend) / 2.0


def oracle_u_pairwise(a, b):
    """U via direct pairwise counting: #(a_i > b_j) + 0.5 #(a_i == b_j)."""
    u = 0.0
    for x in a:
        for y in b:
            if x > y:
                u += 1.0
            elif x == y:
                u += 0.5
    return u


def oracle_mann_whitney_exact(a, b):
    """Exhaustive two-sided p: fraction of group assignments at least as far
    from nm/2 as the observed U."""
    n, m = len(a), len(b)
    pooled = list(a) + list(b)
    center = n * m / 2.0
    u_obs = oracle_u_pairwise(a, b)
    dev = abs(u_obs - center)
    hits = 0
    total = 0
    for idx in itertools.combinations(range(n + m), n):
        group_a = [pooled[i] for i in idx]
        group_b = [pooled[i] for i in range(n + m) if i not in set(idx)]
        u = oracle_u_pairwise(group_a, group_b)
        total += 1
        if abs(u - center) >= dev - 1e-12:
            hits += 1
    return u_obs, hits / total
