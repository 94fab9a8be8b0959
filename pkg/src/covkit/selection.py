"""Finite-class model selection: cross-entropy and coverage tournaments."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import NEG_INF, Policy
from .metrics import empirical_pairwise_cov, onpolicy_cov_estimate


@dataclass
class CandidateClass:
    candidates: list

    def __post_init__(self):
        if len(self.candidates) < 1:
            raise ValueError("need at least one candidate")
        V = self.candidates[0].V
        H = self.candidates[0].H
        for c in self.candidates:
            if c.V != V or c.H != H:
                raise ValueError("candidates must share (V, H)")

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)


@dataclass
class SelectionReport:
    selected: int
    pairwise: np.ndarray | None = None
    offsets: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = {"selected": self.selected}
        if self.pairwise is not None:
            d["pairwise"] = self.pairwise.tolist()
        if self.offsets is not None:
            d["offsets"] = self.offsets.tolist()
        d.update(self.extra)
        return json.dumps(d)


def _logprob_matrix(candidates, dataset) -> np.ndarray:
    """(K, n) cached log-probs; fills once so tournaments cost O(K^2 n)."""
    return np.array([[pi.logprob(t) for t in dataset] for pi in candidates])


def select_ce(candidates: CandidateClass, dataset, return_report=False):
    """Argmax of total log-likelihood; ties break to the lowest index."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    lp = _logprob_matrix(candidates.candidates, dataset)
    totals = np.where(np.isneginf(lp).any(axis=1), -math.inf, lp.sum(axis=1))
    idx = int(np.argmax(totals))
    if return_report:
        return SelectionReport(idx, extra={"loglik": [
            None if t == -math.inf else t for t in totals.tolist()]})
    return idx


def _pairwise_matrix(candidates, dataset, N, lp=None) -> np.ndarray:
    K = len(candidates)
    if lp is None:
        lp = _logprob_matrix(candidates, dataset)
    logN = math.log(N)
    M = np.zeros((K, K))
    for i in range(K):          # pi' (covering candidate)
        for j in range(K):      # pi  (candidate under evaluation)
            if i == j:
                continue
            with np.errstate(invalid="ignore"):
                diff = lp[i] - lp[j]
            diff = np.where(np.isnan(diff), -math.inf, diff)
            M[i, j] = float((diff >= logN - 1e-12).mean())
    return M


def simple_tournament(candidates: CandidateClass, dataset, N: float,
                      return_report=False):
    """argmin_pi max_pi' empirical coverage of pi' against pi."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if N < 1:
        raise ValueError("N must be >= 1")
    M = _pairwise_matrix(candidates.candidates, dataset, N)
    worst = M.max(axis=0)
    idx = int(np.argmin(worst))
    if return_report:
        return SelectionReport(idx, pairwise=M)
    return idx


def offset_tournament(candidates: CandidateClass, dataset, N: float,
                      gamma: float, mode=None, m: int = 1000, rng=None,
                      return_report=False):
    """Tournament with on-policy offset: max_pi' { Cov - 2 gamma Cov^pi }.

    `mode` is "exact", "mc", or None (exact when V^H <= 1e4, else mc with m
    generations per prompt).
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    K = len(candidates)
    cands = candidates.candidates
    if N < 8.0 * gamma ** 2:
        warnings.warn("offset tournament precondition N >= 8 gamma^2 "
                      "violated; proceeding anyway")
    if mode is None:
        mode = "exact" if cands[0].V ** cands[0].H <= 10 ** 4 else "mc"
    prompts = [t.x for t in dataset]
    M = _pairwise_matrix(cands, dataset, N)
    offsets = np.zeros((K, K))
    for j in range(K):
        for i in range(K):
            if i == j:
                continue
            offsets[i, j] = onpolicy_cov_estimate(
                cands[j], cands[i], cands[j], prompts, N, mode=mode,
                m=m, rng=rng)
    objective = M - 2.0 * gamma * offsets
    worst = objective.max(axis=0)
    idx = int(np.argmin(worst))
    if return_report:
        return SelectionReport(idx, pairwise=M, offsets=offsets)
    return idx


def offset_tournament_power(candidates, dataset, N, a, **kwargs):
    """Convenience wrapper with gamma parameterized as N**a."""
    return offset_tournament(candidates, dataset, N, gamma=N ** a, **kwargs)
