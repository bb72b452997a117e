"""Scoring: scale-invariant SDR with permutation resolution, and mask AUC
against the ideal binary mask."""

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

SI_SDR_CAP = 80.0


@dataclass
class ScoreReport:
    si_sdr: list
    delta_si_sdr: list = field(default=None)
    permutation: tuple = ()
    mask_auc: list = field(default=None)


def si_sdr(est, ref):
    """Scale-invariant signal-to-distortion ratio in dB, capped at +80.

    Signals are trimmed to the shorter length; the reference must carry
    energy.
    """
    est = np.asarray(est, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    n = min(len(est), len(ref))
    est, ref = est[:n], ref[:n]
    ref_energy = float(ref @ ref)
    if ref_energy <= 0.0:
        raise ValueError("si_sdr: zero reference")
    alpha = float(est @ ref) / ref_energy
    target = alpha * ref
    err = est - target
    num = float(target @ target)
    den = float(err @ err)
    if den <= num * 10.0 ** (-SI_SDR_CAP / 10.0):
        return SI_SDR_CAP
    return min(10.0 * np.log10(num / den), SI_SDR_CAP)


def permutation_score(ests, refs, mixture_ref=None):
    """Best-permutation SI-SDR for two estimates against two references.

    Args:
        ests, refs: sequences of 2 signals
        mixture_ref: optional mixture at the reference channel; when given,
            delta_si_sdr reports the improvement over scoring the mixture.

    Returns:
        ScoreReport with per-source SI-SDR under the best (max mean)
        assignment and the chosen permutation.
    """
    if len(ests) != 2 or len(refs) != 2:
        raise ValueError("permutation_score expects 2 estimates and 2 references")
    best = None
    for perm in permutations(range(2)):
        scores = [si_sdr(ests[perm[i]], refs[i]) for i in range(2)]
        if best is None or np.mean(scores) > np.mean(best[0]):
            best = (scores, perm)
    scores, perm = best
    delta = None
    if mixture_ref is not None:
        base = [si_sdr(mixture_ref, refs[i]) for i in range(2)]
        delta = [scores[i] - base[i] for i in range(2)]
    return ScoreReport(si_sdr=scores, delta_si_sdr=delta, permutation=perm)


def best_pair_score(candidates, refs, mixture_ref=None):
    """Pick the 2 of K candidate signals that maximize the mean permuted
    SI-SDR against the 2 references (used when component identity is
    unknown, e.g. standalone spatial clustering)."""
    best = None
    for i, j in permutations(range(len(candidates)), 2):
        rep = permutation_score([candidates[i], candidates[j]], refs, mixture_ref)
        if best is None or np.mean(rep.si_sdr) > np.mean(best[1].si_sdr):
            best = ((i, j), rep)
    pair, rep = best
    rep.permutation = pair
    return rep


def ideal_binary_mask(log_mags):
    """One-hot argmax mask over stacked per-source log-magnitudes (K, T, F)."""
    stack = np.asarray(log_mags)
    winner = stack.argmax(axis=0)
    return np.eye(stack.shape[0], dtype=bool)[winner].transpose(2, 0, 1)


def mask_auc(mask, ibm, energy=None, energy_percentile=None):
    """Area under the ROC of mask values predicting IBM labels.

    Rank statistic (Mann-Whitney) with average ranks on ties. Optionally
    restricted to bins whose ``energy`` exceeds the given percentile.
    Returns None when the IBM is constant (AUC undefined).
    """
    mask = np.asarray(mask, dtype=np.float64).ravel()
    labels = np.asarray(ibm, dtype=bool).ravel()
    if mask.shape != labels.shape:
        raise ValueError(f"mask/ibm shapes differ: {mask.shape} vs {labels.shape}")
    if energy is not None and energy_percentile is not None:
        keep = np.asarray(energy).ravel() >= np.percentile(energy, energy_percentile)
        mask, labels = mask[keep], labels[keep]
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(mask, kind="mergesort")
    ranks = np.empty(mask.size, dtype=np.float64)
    sorted_vals = mask[order]
    i = 0
    while i < mask.size:
        j = i
        while j + 1 < mask.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[labels].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def sign_test_p(diffs):
    """One-sided sign test: P(#positives >= observed | fair coin), ignoring
    exact ties."""
    diffs = np.asarray(diffs, dtype=np.float64)
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n == 0:
        return 1.0
    k = int((diffs > 0).sum())
    from math import comb

    return sum(comb(n, i) for i in range(k, n + 1)) / 2.0**n
