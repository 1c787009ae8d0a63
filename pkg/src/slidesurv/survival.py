"""Survival statistics: Cox partial likelihood, C-index, dynamic AUC,
Kaplan-Meier curves, log-rank test, median-risk stratification.

Pure numpy, no model dependencies. Pair-counting metrics accumulate integer
counts and divide once, so they agree exactly with brute-force pair
enumeration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class SurvivalBatch:
    risks: np.ndarray
    times: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        self.risks = np.asarray(self.risks, dtype=np.float64)
        self.times = np.asarray(self.times, dtype=np.float64)
        self.events = np.asarray(self.events, dtype=bool)
        n = self.risks.shape[0]
        if n == 0 or self.times.shape[0] != n or self.events.shape[0] != n:
            raise ValueError("risks, times, events must be equally sized and nonempty")
        if not (self.times > 0).all():
            raise ValueError("times must be positive")


def cox_loss(risks, times, events) -> float:
    """Negative log Cox partial likelihood, mean over events, Breslow ties.

    loss = -(1/N_e) * sum_{i: event} [h_i - log sum_{j: t_j >= t_i} exp(h_j)]

    Stabilized by max-subtraction inside each risk-set log-sum-exp.
    """
    b = SurvivalBatch(risks, times, events)
    if not b.events.any():
        raise ValueError("batch has no events")
    h, t = b.risks, b.times
    total = 0.0
    for i in np.flatnonzero(b.events):
        in_set = t >= t[i]
        m = h[in_set].max()
        lse = m + math.log(np.exp(h[in_set] - m).sum())
        total += h[i] - lse
    return -total / b.events.sum()


def c_index(risks, times, events) -> float:
    """Harrell's concordance index.

    Comparable pairs are (i, j) with t_i < t_j and event_i observed;
    concordant when risk_i > risk_j, risk ties count 0.5.
    """
    b = SurvivalBatch(risks, times, events)
    r, t, e = b.risks, b.times, b.events
    conc = ties = comparable = 0
    # t_i < t_j with event_i, vectorized per event subject; integer counts
    for i in np.flatnonzero(e):
        later = t > t[i]
        comparable += int(later.sum())
        conc += int((r[i] > r[later]).sum())
        ties += int((r[i] == r[later]).sum())
    if comparable == 0:
        raise ValueError("no comparable pairs")
    return (2 * conc + ties) / (2 * comparable)


def dynamic_auc(risks, times, events, horizon_days: float) -> float:
    """Cumulative/dynamic AUC at a horizon.

    Cases: event observed and time <= horizon. Controls: time > horizon.
    Subjects censored at or before the horizon are excluded. Risk ties
    between a case and a control count 0.5.
    """
    b = SurvivalBatch(risks, times, events)
    r, t, e = b.risks, b.times, b.events
    case = e & (t <= horizon_days)
    control = t > horizon_days
    if not case.any():
        raise ValueError(f"no cases at horizon {horizon_days}")
    if not control.any():
        raise ValueError(f"no controls at horizon {horizon_days}")
    rc = r[control]
    conc = ties = 0
    for ri in r[case]:
        conc += int((ri > rc).sum())
        ties += int((ri == rc).sum())
    total = int(case.sum()) * int(control.sum())
    return (2 * conc + ties) / (2 * total)


def km_curve(times, events) -> np.ndarray:
    """Kaplan-Meier product-limit estimator.

    Returns an array of (time, survival) rows, starting at (0, 1.0), with a
    drop at each distinct event time. Censored subjects shrink the risk set
    without a drop.
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    if times.size == 0:
        raise ValueError("empty sample")
    order = np.argsort(times, kind="stable")
    times, events = times[order], events[order]
    steps = [(0.0, 1.0)]
    s = 1.0
    n = times.size
    at_risk = n
    i = 0
    while i < n:
        t = times[i]
        d = 0
        removed = 0
        while i < n and times[i] == t:
            d += int(events[i])
            removed += 1
            i += 1
        if d > 0:
            s *= 1.0 - d / at_risk
            steps.append((t, s))
        at_risk -= removed
    return np.array(steps, dtype=np.float64)


def logrank_test(times_a, events_a, times_b, events_b) -> tuple[float, float]:
    """Two-sample log-rank test.

    Returns (chi-square statistic, p-value). The statistic compares observed
    vs expected events in group A at each distinct event time using the
    hypergeometric variance; p comes from the chi-square distribution with
    one degree of freedom.
    """
    ta = np.asarray(times_a, dtype=np.float64)
    ea = np.asarray(events_a, dtype=bool)
    tb = np.asarray(times_b, dtype=np.float64)
    eb = np.asarray(events_b, dtype=bool)
    if ta.size == 0 or tb.size == 0:
        raise ValueError("both groups must be nonempty")
    if not (ea.any() or eb.any()):
        raise ValueError("no events in either group")

    event_times = np.unique(np.concatenate([ta[ea], tb[eb]]))
    obs_a = 0.0
    exp_a = 0.0
    var = 0.0
    for t in event_times:
        na = int((ta >= t).sum())
        nb = int((tb >= t).sum())
        da = int((ea & (ta == t)).sum())
        db = int((eb & (tb == t)).sum())
        n = na + nb
        d = da + db
        if n < 1 or d == 0:
            continue
        obs_a += da
        exp_a += d * na / n
        if n > 1:
            var += d * (na / n) * (nb / n) * (n - d) / (n - 1)
    if var == 0.0:
        return 0.0, 1.0
    chi2 = (obs_a - exp_a) ** 2 / var
    p = math.erfc(math.sqrt(chi2 / 2.0))  # chi-square(1) survival function
    return chi2, p


def stratify_by_median(train_risks, test_risks) -> np.ndarray:
    """Label test risks low/high by the training-set median.

    Strictly above the median goes high; equal to the median stays low.
    Returns an array of "low"/"high" strings aligned with test_risks.
    """
    train_risks = np.asarray(train_risks, dtype=np.float64)
    if train_risks.size == 0:
        raise ValueError("empty training risks")
    thr = float(np.median(train_risks))
    test_risks = np.asarray(test_risks, dtype=np.float64)
    return np.where(test_risks > thr, "high", "low")
