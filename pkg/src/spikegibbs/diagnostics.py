"""Posterior summaries and switching-chain theory checks.

Marginal and union inclusion probabilities come from the raw sparse
records; credibility intervals use the shortest-contiguous-window HPD
estimator on sorted draws; the switching-chain checks estimate coupling
and effective-sample-size quantities from recorded (W, A, D) sequences.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import chainstore
from .errors import NotWatched, TooFewDraws


def union_inclusion(beta_path, coord_set, iter_range=None):
    """Fraction of stored draws in which any coordinate of the set is active.

    Works on the raw sparse records, so it captures co-exclusion patterns
    that per-coordinate marginals cannot.
    """
    coords = np.array(sorted(coord_set), dtype=np.int64)
    hits = 0
    total = 0
    for t, idx, _ in chainstore.iter_records(beta_path):
        if iter_range is not None and not (iter_range[0] <= t < iter_range[1]):
            continue
        total += 1
        pos = np.searchsorted(idx, coords)
        ok = (pos < len(idx)) & (idx[np.minimum(pos, len(idx) - 1)] == coords) \
            if len(idx) else np.zeros(len(coords), dtype=bool)
        if np.any(ok):
            hits += 1
    return hits / total if total else 0.0


def hpd_interval(draws, level):
    """Shortest contiguous window containing ceil(level * T) sorted draws."""
    draws = np.sort(np.asarray(draws, dtype=np.float64))
    t = len(draws)
    if t < 100:
        raise TooFewDraws(f"need >= 100 draws, got {t}")
    if not 0 < level <= 1:
        raise ValueError("level must be in (0, 1]")
    k = int(math.ceil(level * t))
    if k >= t:
        return float(draws[0]), float(draws[-1])
    widths = draws[k - 1 :] - draws[: t - k + 1]
    i = int(np.argmin(widths))
    return float(draws[i]), float(draws[i + k - 1])


def unbounded_hpd(unbounded_path, j, level):
    """HPD interval from the always-active draws of a watched coordinate."""
    watchlist, rows = chainstore.read_unbounded(unbounded_path)
    pos = np.searchsorted(watchlist, j)
    if pos >= len(watchlist) or watchlist[pos] != j:
        raise NotWatched(f"coordinate {j} is not on the unbounded watchlist")
    return hpd_interval(rows[:, pos], level)


@dataclass
class CredibilitySummary:
    coefficient: int
    mip: float
    posterior_median: float
    hpd: dict = field(default_factory=dict)
    unbounded_hpd: dict = field(default_factory=dict)

    def __post_init__(self):
        for d in (self.hpd, self.unbounded_hpd):
            hull_lo, hull_hi = math.inf, -math.inf
            for level in sorted(d):
                lo, hi = d[level]
                # nested across levels: widen to the running hull
                hull_lo, hull_hi = min(hull_lo, lo), max(hull_hi, hi)
                d[level] = (hull_lo, hull_hi)


def summarize_coefficient(beta_path, j, mip_path=None, p=None,
                          levels=(0.5, 0.9, 0.95, 0.99),
                          unbounded_path=None):
    _, vals = chainstore.read_coefficient_trace(beta_path, j)
    mip = float(np.mean(vals != 0.0))
    if mip_path is not None and p is not None:
        mip = float(chainstore.compute_mips(mip_path, p)[j])
    hpd = {lv: hpd_interval(vals, lv) for lv in levels}
    unb = {}
    if unbounded_path is not None:
        try:
            unb = {lv: unbounded_hpd(unbounded_path, j, lv) for lv in levels}
        except NotWatched:
            unb = {}
    return CredibilitySummary(coefficient=j, mip=mip,
                              posterior_median=float(np.median(vals)),
                              hpd=hpd, unbounded_hpd=unb)


# ---------------------------------------------------------------------------
# switching-chain theory checks


@dataclass
class SwitchDiagnostics:
    a_bar: float
    d_bar: float
    lambda2_bar: float
    t_int_w: float
    n_independent: float
    p_bar_paper: float          # 1 - A - D - 2AD, as printed in the source
    p_bar_prob: float           # 1 - A - D + 2AD, the independent-draw rate
    coupling_mean: float = math.nan
    coupling_var: float = math.nan
    p_bar_empirical: float = math.nan
    on_frequency: float = math.nan


def autocorr_t_int(x, max_lag=None):
    """Initial-positive-sequence estimate of 1 + 2 sum_k rho(k)."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    x = x - x.mean()
    var = float(x @ x) / n
    if var == 0:
        return 1.0
    if max_lag is None:
        max_lag = min(n - 1, 10_000)
    t_int = 1.0
    for lag in range(1, max_lag):
        rho = float(x[:-lag] @ x[lag:]) / ((n - lag) * var)
        if rho <= 0:
            break
        t_int += 2.0 * rho
    return t_int


def autocorr_ess(x):
    """Effective sample size n / (2 T_int) from the autocorrelation."""
    return len(x) / (2.0 * autocorr_t_int(x))


def coupling_simulation(a_seq, d_seq, rng, replicates=10_000, max_steps=None):
    """Paired chains driven by a shared (A, D) stream until they meet.

    One chain starts on, the other off; each draws its own uniform per
    step.  Returns realized coupling times and the per-step coupling
    frequency.
    """
    a_seq = np.asarray(a_seq, dtype=np.float64)
    d_seq = np.asarray(d_seq, dtype=np.float64)
    n = len(a_seq)
    if max_steps is None:
        max_steps = 1000 * n
    times = np.empty(replicates, dtype=np.int64)
    pos = 0
    couple_events = 0
    total_steps = 0
    for r in range(replicates):
        w1, w2 = 1, 0
        t = 0
        while True:
            a = a_seq[pos % n]
            d = d_seq[pos % n]
            pos += 1
            t += 1
            w1 = int(rng.random() < (a if w1 else d))
            w2 = int(rng.random() < (a if w2 else d))
            total_steps += 1
            if w1 == w2:
                couple_events += 1
                break
            if t >= max_steps:
                break
        times[r] = t
    p_emp = couple_events / total_steps if total_steps else math.nan
    return times, p_emp


def switch_theory_check(w_trace, a_trace, d_trace, rng=None,
                        replicates=10_000):
    """Coupling and ESS quantities for a recorded switching chain.

    lambda2 is the non-unit eigenvalue of the mean transition matrix;
    t_int_w = (1 + lambda2) / (1 - lambda2) and the equivalent number of
    independent samples is n / (2 t_int_w).  The paired-chain coupling
    simulation reuses the recorded (A, D) stream.
    """
    w = np.asarray(w_trace, dtype=np.float64)
    a = np.asarray(a_trace, dtype=np.float64)
    d = np.asarray(d_trace, dtype=np.float64)
    keep = np.isfinite(a) & np.isfinite(d)
    a, d = a[keep], d[keep]
    if len(w) < 1000:
        raise TooFewDraws("switch diagnostics need a trace of >= 1000 steps")
    a_bar = float(np.mean(a))
    d_bar = float(np.mean(d))
    lam = a_bar - d_bar
    t_int = (1.0 + lam) / (1.0 - lam) if lam < 1 else math.inf
    diag = SwitchDiagnostics(
        a_bar=a_bar, d_bar=d_bar, lambda2_bar=lam, t_int_w=t_int,
        n_independent=len(w) / (2.0 * t_int),
        p_bar_paper=float(np.mean(1.0 - a - d - 2.0 * a * d)),
        p_bar_prob=float(np.mean(1.0 - a - d + 2.0 * a * d)),
        on_frequency=float(np.mean(w)),
    )
    if rng is not None:
        times, p_emp = coupling_simulation(a, d, rng, replicates)
        diag.coupling_mean = float(np.mean(times))
        diag.coupling_var = float(np.var(times))
        diag.p_bar_empirical = p_emp
    return diag
