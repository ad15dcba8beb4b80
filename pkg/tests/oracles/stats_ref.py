"""Plain-Python order statistics for checking the harness."""


def percentile(xs, q: float) -> float:
    """Linear interpolation between closest ranks, rank = q/100 * (n - 1)."""
    s = sorted(xs)
    if not s:
        raise ValueError("empty sample")
    pos = q / 100.0 * (len(s) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


def mean(xs) -> float:
    return sum(xs) / len(xs)


def budget_ceiling(budget: float, tx_cost: float) -> float:
    """Committed tps once a node's whole work budget goes to per-transaction work."""
    return budget / tx_cost


def latency_band(block_timeout: float, link_latency: float) -> float:
    """Worst case at light load: a block waits out its timeout, plus one submit hop and one notice hop."""
    return block_timeout + 2 * link_latency
