"""Slow, loop-based reference implementations used to check the vectorised code."""

import math


def iou_loop(pred, gt):
    inter = union = 0
    for row_p, row_g in zip(pred, gt):
        for a, b in zip(row_p, row_g):
            a, b = bool(a), bool(b)
            inter += a and b
            union += a or b
    return 1.0 if union == 0 else inter / union


def vpq_loop(pred_seq, gt_seq):
    total = 0.0
    for p, g in zip(pred_seq, gt_seq):
        total += iou_loop(p, g)
    return total / len(pred_seq)


def miou_loop(pairs):
    return sum(iou_loop(p, g) for p, g in pairs) / len(pairs)


def _dist(a, b):
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2)


def min_ade_loop(candidates, gt):
    best = math.inf
    for c in candidates:
        s = 0.0
        for pc, pg in zip(c, gt):
            s += _dist(pc, pg)
        best = min(best, s / len(gt))
    return best


def min_fde_loop(candidates, gt):
    return min(_dist(c[-1], gt[-1]) for c in candidates)


def separations_loop(ego, agents):
    out = []
    for t in range(len(ego)):
        d = math.inf
        for a in agents:
            d = min(d, _dist(ego[t], a[t]))
        out.append(d)
    return out


def collision_rate_loop(ego, agents, threshold=5.0):
    if not agents:
        return 0.0
    flags = [1 if d < threshold else 0 for d in separations_loop(ego, agents)]
    return sum(flags) / len(flags)


def mcd_loop(ego, agents):
    return min(separations_loop(ego, agents))


def maxpool_loop(cells, factor):
    h, w = len(cells) // factor, len(cells[0]) // factor
    out = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            m = 0.0
            for a in range(factor):
                for b in range(factor):
                    m = max(m, cells[i * factor + a][j * factor + b])
            out[i][j] = m
    return out


def avoidance_oracle(nominal_xy, obstacles, clearance=5.0, step=0.5, max_offset=3.5):
    """Candidate search written out by hand.

    ``obstacles`` is a list of per-waypoint (x, y) lists.  Returns the
    candidate waypoint list and a label ("keep", ("offset", o) or ("stop", j)).
    """
    m = len(nominal_xy)

    def clearance_of(cand):
        return min(_dist(cand[t], ob[t]) for t in range(m) for ob in obstacles)

    if not obstacles or clearance_of(nominal_xy) >= clearance:
        return list(nominal_xy), "keep"

    normals = []
    for j in range(m):
        if m < 2:
            tx, ty = 1.0, 0.0
        elif j == 0:
            tx, ty = nominal_xy[1][0] - nominal_xy[0][0], nominal_xy[1][1] - nominal_xy[0][1]
        elif j == m - 1:
            tx, ty = nominal_xy[j][0] - nominal_xy[j - 1][0], nominal_xy[j][1] - nominal_xy[j - 1][1]
        else:
            tx, ty = nominal_xy[j + 1][0] - nominal_xy[j - 1][0], nominal_xy[j + 1][1] - nominal_xy[j - 1][1]
        n = math.hypot(tx, ty)
        normals.append((-ty / n, tx / n) if n > 0 else (0.0, 1.0))

    k = 1
    while k * step <= max_offset + 1e-9:
        o = k * step
        options = []
        for sign in (1.0, -1.0):
            cand = [nominal_xy[0]] + [
                (nominal_xy[j][0] + sign * o * normals[j][0], nominal_xy[j][1] + sign * o * normals[j][1])
                for j in range(1, m)
            ]
            per_t = [min(_dist(cand[t], ob[t]) for ob in obstacles) for t in range(m)]
            if min(per_t) >= clearance:
                options.append((sum(per_t), sign, cand))
        if options:
            options.sort(key=lambda c: (-c[0], -c[1]))
            return options[0][2], ("offset", options[0][1] * o)
        k += 1

    for hold in range(m - 1, -1, -1):
        cand = [nominal_xy[min(j, hold)] for j in range(m)]
        conflict_free_prefix = all(
            min(_dist(nominal_xy[t], ob[t]) for ob in obstacles) >= clearance for t in range(hold + 1)
        )
        if conflict_free_prefix and (hold == 0 or clearance_of(cand) >= clearance):
            return cand, ("stop", hold)
    return [nominal_xy[0]] * m, ("stop", 0)
