"""Deliberately naive reference implementations used as test oracles."""
import numpy as np


def km_bruteforce(times, flags, t):
    """Product over distinct event times s <= t of (1 - deaths(s) / at_risk(s))."""
    surv = 1.0
    for s in sorted(set(times)):
        if s > t:
            break
        deaths = sum(1 for ti, fi in zip(times, flags) if ti == s and fi == 1)
        at_risk = sum(1 for ti in times if ti >= s)
        if deaths:
            surv *= 1.0 - deaths / at_risk
    return surv


def km_left_bruteforce(times, flags, t):
    surv = 1.0
    for s in sorted(set(times)):
        if s >= t:
            break
        deaths = sum(1 for ti, fi in zip(times, flags) if ti == s and fi == 1)
        at_risk = sum(1 for ti in times if ti >= s)
        if deaths:
            surv *= 1.0 - deaths / at_risk
    return surv


def cindex_bruteforce(scores, times, events):
    num = den = 0.0
    n = len(times)
    for i in range(n):
        for k in range(n):
            if times[i] < times[k] and events[i] == 1:
                den += 1
                if scores[i] > scores[k]:
                    num += 1
                elif scores[i] == scores[k]:
                    num += 0.5
    return num / den


def brier_bruteforce(t, pred, times, events, w_max=100.0):
    cens = [1 - e for e in events]
    total = 0.0
    for zi, di, pi in zip(times, events, pred):
        if zi <= t and di == 1:
            g = km_left_bruteforce(times, cens, zi)
            w = min(1 / g, w_max) if g > 0 else w_max
            total += w * (0 - pi) ** 2
        elif zi > t:
            g = km_bruteforce(times, cens, t)
            w = min(1 / g, w_max) if g > 0 else w_max
            total += w * (1 - pi) ** 2
    return total / len(times)


def td_auc_bruteforce(t, scores, times, events):
    cens = [1 - e for e in events]
    num = den = 0.0
    for i in range(len(times)):
        if not (times[i] < t and events[i] == 1):
            continue
        g = km_left_bruteforce(times, cens, times[i])
        w = min(1 / g, 100.0) if g > 0 else 100.0
        for k in range(len(times)):
            if times[k] > t:
                den += w
                num += w * (1.0 if scores[i] > scores[k] else 0.5 if scores[i] == scores[k] else 0.0)
    return num / den


def random_instance(rng, n=None):
    """Small survival sample with tied times, tied scores and censoring."""
    n = int(rng.integers(3, 51)) if n is None else n
    times = rng.integers(1, max(3, n // 2), size=n).astype(float)
    events = (rng.random(n) < 0.7).astype(float)
    scores = np.round(rng.normal(size=n), 1)
    return times, events, scores
