"""Independent brute-force oracles used to pin expected values.

Everything here is deliberately naive (explicit loops, no vectorized
shortcuts shared with the library code) so the two routes stay independent.
"""

import cmath

import numpy as np


def naive_dft2(img):
    """Direct evaluation of the 2-D DFT sum, DC at (0, 0)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    out = np.zeros((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for x in range(h):
                for y in range(w):
                    acc += img[x, y] * cmath.exp(-2j * cmath.pi * (u * x / h + v * y / w))
            out[u, v] = acc
    return out


def naive_centered_dft2(img):
    """Same sum, re-laid-out with DC at (H//2, W//2)."""
    h, w = np.asarray(img).shape
    raw = naive_dft2(img)
    out = np.zeros_like(raw)
    for u in range(h):
        for v in range(w):
            out[(u + h // 2) % h, (v + w // 2) % w] = raw[u, v]
    return out


def brute_topz(scores, z):
    """Full sort by descending score, ties toward the lower index."""
    pairs = sorted(enumerate(scores), key=lambda p: (-p[1], p[0]))
    return [idx for idx, _ in pairs[:z]]


def brute_rankings(features, labels, normalize=True):
    """Query-vs-rest rankings from explicit per-pair distance loops."""
    feats = [list(map(float, row)) for row in features]
    if normalize:
        normed = []
        for row in feats:
            n = sum(v * v for v in row) ** 0.5
            normed.append([v / n if n > 1e-12 else v for v in row])
        feats = normed
    nt = len(feats)
    all_matches = []
    for q in range(nt):
        entries = []
        for g in range(nt):
            if g == q:
                continue
            d = sum((a - b) ** 2 for a, b in zip(feats[q], feats[g])) ** 0.5
            entries.append((d, g))
        entries.sort(key=lambda e: (e[0], e[1]))
        all_matches.append([labels[g] == labels[q] for _, g in entries])
    return all_matches


def brute_ap(matches):
    """AP over all true matches; None when the query has none."""
    total = sum(matches)
    if total == 0:
        return None
    hits = 0
    acc = 0.0
    for k, m in enumerate(matches, start=1):
        if m:
            hits += 1
            acc += hits / k
    return acc / total


def brute_inp(matches):
    total = sum(matches)
    if total == 0:
        return None
    last = max(k for k, m in enumerate(matches, start=1) if m)
    return total / last


def brute_cmc(all_matches, k):
    hit = 0
    valid = 0
    for matches in all_matches:
        if not any(matches):
            continue
        valid += 1
        first = min(i for i, m in enumerate(matches, start=1) if m)
        if first <= k:
            hit += 1
    return hit / valid if valid else 0.0


def brute_metrics(features, labels, normalize=True):
    """mAP / CMC@{1,5,10} / mINP, all from the loops above."""
    all_matches = brute_rankings(features, labels, normalize=normalize)
    aps = [brute_ap(m) for m in all_matches]
    inps = [brute_inp(m) for m in all_matches]
    valid_aps = [a for a in aps if a is not None]
    valid_inps = [i for i in inps if i is not None]
    return {
        "map": sum(valid_aps) / len(valid_aps) if valid_aps else 0.0,
        "rank1": brute_cmc(all_matches, 1),
        "rank5": brute_cmc(all_matches, 5),
        "rank10": brute_cmc(all_matches, 10),
        "minp": sum(valid_inps) / len(valid_inps) if valid_inps else 0.0,
        "num_skipped": sum(a is None for a in aps),
    }
