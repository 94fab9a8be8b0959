"""Divergences and coverage quantities.

All ratio events are evaluated in log domain and use the closed comparison
log piD - log piHat >= log N.  Exact modes enumerate the response space (or
use a multinomial fast path for prefix-independent policies); Monte Carlo
modes report Hoeffding (or Wilson) confidence half-widths.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import NEG_INF, Policy, Trajectory

_PRODUCT_ENUM_LIMIT = 10 ** 6


@dataclass
class CoverageCurve:
    thresholds: np.ndarray
    values: np.ndarray
    half_widths: np.ndarray
    n_samples: int = 0

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.half_widths = np.asarray(self.half_widths, dtype=float)
        if np.any(self.thresholds < 1):
            raise ValueError("thresholds must be >= 1")
        if np.any(np.diff(self.thresholds) < 0):
            raise ValueError("thresholds must be sorted")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("N,log2N,pcov,half_width,n_samples\n")
        for N, v, hw in zip(self.thresholds, self.values, self.half_widths):
            buf.write(f"{N:g},{math.log2(N):.10g},{v:.12g},{hw:.12g},"
                      f"{self.n_samples}\n")
        return buf.getvalue()


@dataclass
class MetricReport:
    seq_kl: float | None = None
    seq_ce: float | None = None
    hellinger_sq: float | None = None
    stopped_kl: float | None = None
    stopped_kl_N: float | None = None
    sigma_star_sq: float | None = None
    coverage: CoverageCurve | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = {k: getattr(self, k) for k in
             ("seq_kl", "seq_ce", "hellinger_sq", "stopped_kl",
              "stopped_kl_N", "sigma_star_sq")}
        if self.coverage is not None:
            d["coverage"] = {
                "thresholds": self.coverage.thresholds.tolist(),
                "values": self.coverage.values.tolist(),
                "half_widths": self.coverage.half_widths.tolist(),
                "n_samples": self.coverage.n_samples,
            }
        d.update(self.extra)
        return json.dumps(d)


def default_n_grid(max_pow: int = 16) -> np.ndarray:
    return np.array([2.0 ** k for k in range(1, max_pow + 1)])


def _enumerate_weighted(piD: Policy, x):
    """Yield (y, log piD(y|x)) over the piD-positive responses."""
    stack = [((), 0.0)]
    while stack:
        prefix, lp = stack.pop()
        if len(prefix) == piD.H:
            yield prefix, lp
            continue
        p = piD.next_dist(x, prefix)
        for v in range(piD.V):
            if p[v] > 0.0:
                stack.append((prefix + (v,), lp + math.log(p[v])))


def log_ratio_atoms(piD: Policy, piHat: Policy, mu_items):
    """Exact distribution of log(piD/piHat) under mu x piD.

    Returns (ratios, probs) sorted by ratio; +inf ratios appear when piHat
    assigns zero mass to a piD-positive response.
    """
    atoms = {}
    for x, w in mu_items:
        if w == 0.0:
            continue
        pair = _product_pair(piD, piHat, x)
        if pair is not None:
            for r, pr in _product_ratio_atoms(*pair, piD.H):
                atoms[r] = atoms.get(r, 0.0) + w * pr
        else:
            for y, lpD in _enumerate_weighted(piD, x):
                lpH = piHat.logprob(Trajectory(x, y))
                r = math.inf if lpH == NEG_INF else lpD - lpH
                atoms[r] = atoms.get(r, 0.0) + w * math.exp(lpD)
    ratios = np.array(sorted(atoms))
    probs = np.array([atoms[r] for r in ratios])
    return ratios, probs


def _product_pair(piD, piHat, x):
    pD = piD.step_dist(x)
    pH = piHat.step_dist(x)
    if pD is None or pH is None:
        return None
    if math.comb(piD.H + piD.V - 1, piD.V - 1) > _PRODUCT_ENUM_LIMIT:
        return None
    return np.asarray(pD), np.asarray(pH)


def _product_ratio_atoms(pD, pH, H):
    """Multinomial enumeration of the log-ratio law for i.i.d. steps."""
    V = len(pD)
    support = [v for v in range(V) if pD[v] > 0.0]
    step_lr = np.array([math.inf if pH[v] <= 0.0 else
                        math.log(pD[v]) - math.log(pH[v]) for v in range(V)])
    logp = np.log(np.where(pD > 0, pD, 1.0))
    out = {}

    def rec(idx, remaining, counts):
        if idx == len(support) - 1:
            counts = counts + [remaining]
            lp = math.lgamma(H + 1)
            ratio = 0.0
            for v, c in zip(support, counts):
                lp += c * logp[v] - math.lgamma(c + 1)
                if c == 0:
                    continue
                if step_lr[v] == math.inf:
                    ratio = math.inf
                elif ratio != math.inf:
                    ratio += c * step_lr[v]
            out[ratio] = out.get(ratio, 0.0) + math.exp(lp)
            return
        for c in range(remaining + 1):
            rec(idx + 1, remaining - c, counts + [c])

    rec(0, H, [])
    return list(out.items())


def coverage_exact(piD: Policy, piHat: Policy, mu_items, Ns) -> CoverageCurve:
    """Exact coverage profile over thresholds Ns."""
    Ns = np.atleast_1d(np.asarray(Ns, dtype=float))
    ratios, probs = log_ratio_atoms(piD, piHat, mu_items)
    values = np.array([probs[ratios >= math.log(N) - 1e-12].sum() for N in Ns])
    return CoverageCurve(Ns, np.clip(values, 0.0, 1.0), np.zeros_like(Ns))


def coverage_mc(piD: Policy, piHat: Policy, mu_sampler, Ns, n_samples: int,
                rng, delta: float = 0.05, interval: str = "hoeffding"
                ) -> CoverageCurve:
    """MC coverage from one shared sample set (so the curve is monotone)."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    Ns = np.atleast_1d(np.asarray(Ns, dtype=float))
    lrs = np.empty(n_samples)
    for i in range(n_samples):
        x = mu_sampler(rng)
        y = piD.sample(x, rng)
        t = Trajectory(x, y)
        lpD = piD.logprob(t)
        lpH = piHat.logprob(t)
        lrs[i] = math.inf if lpH == NEG_INF else lpD - lpH
    values = np.array([(lrs >= math.log(N) - 1e-12).mean() for N in Ns])
    if interval == "hoeffding":
        hw = np.full_like(Ns, math.sqrt(math.log(2.0 / delta) / (2 * n_samples)))
    elif interval == "wilson":
        z = _norm_ppf(1 - delta / 2)
        hw = np.array([_wilson_half_width(v, n_samples, z) for v in values])
    else:
        raise ValueError(f"unknown interval {interval!r}")
    return CoverageCurve(Ns, values, hw, n_samples=n_samples)


def _norm_ppf(q):
    # Acklam rational approximation; avoids a scipy dependency for one number.
    a = [-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00]
    b = [-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01]
    c = [-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00]
    d = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00]
    plow = 0.02425
    if q < plow:
        u = math.sqrt(-2 * math.log(q))
        return (((((c[0]*u+c[1])*u+c[2])*u+c[3])*u+c[4])*u+c[5]) / \
               ((((d[0]*u+d[1])*u+d[2])*u+d[3])*u+1)
    if q > 1 - plow:
        return -_norm_ppf(1 - q)
    u = q - 0.5
    t = u * u
    return (((((a[0]*t+a[1])*t+a[2])*t+a[3])*t+a[4])*t+a[5])*u / \
           (((((b[0]*t+b[1])*t+b[2])*t+b[3])*t+b[4])*t+1)


def _wilson_half_width(p, n, z):
    denom = 1 + z * z / n
    half = z / denom * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return half


def seq_kl(piD: Policy, piHat: Policy, mu_items, mode="exact",
           n=None, rng=None, mu_sampler=None) -> float:
    """E_piD[log piD - log piHat]; +inf if piHat misses piD mass."""
    if mode == "exact":
        total = 0.0
        for x, w in mu_items:
            if w == 0.0:
                continue
            val = _kl_rec(piD, piHat, x, ())
            if val == math.inf:
                return math.inf
            total += w * val
        return total
    if mode == "mc":
        vals = np.empty(n)
        for i in range(n):
            x = mu_sampler(rng)
            t = Trajectory(x, piD.sample(x, rng))
            lpH = piHat.logprob(t)
            if lpH == NEG_INF:
                return math.inf
            vals[i] = piD.logprob(t) - lpH
        return float(vals.mean())
    raise ValueError(f"unknown mode {mode!r}")


def _kl_rec(piD, piHat, x, prefix):
    """KL via the chain rule over the piD-weighted prefix tree."""
    if len(prefix) == piD.H:
        return 0.0
    pD = piD.next_dist(x, prefix)
    pH = piHat.next_dist(x, prefix)
    total = 0.0
    for v in range(piD.V):
        if pD[v] <= 0.0:
            continue
        if pH[v] <= 0.0:
            return math.inf
        total += pD[v] * (math.log(pD[v]) - math.log(pH[v]))
        below = _kl_rec(piD, piHat, x, prefix + (v,))
        if below == math.inf:
            return math.inf
        total += pD[v] * below
    return total


def seq_ce(piD: Policy, piHat: Policy, mu_items, mode="exact",
           n=None, rng=None, mu_sampler=None) -> float:
    """E_piD[-log piHat]."""
    if mode == "exact":
        ent = _entropy(piD, mu_items)
        kl = seq_kl(piD, piHat, mu_items, mode="exact")
        return kl + ent
    if mode == "mc":
        vals = np.empty(n)
        for i in range(n):
            x = mu_sampler(rng)
            lpH = piHat.logprob(Trajectory(x, piD.sample(x, rng)))
            if lpH == NEG_INF:
                return math.inf
            vals[i] = -lpH
        return float(vals.mean())
    raise ValueError(f"unknown mode {mode!r}")


def _entropy(piD, mu_items):
    total = 0.0
    for x, w in mu_items:
        if w == 0.0:
            continue
        total += w * _entropy_rec(piD, x, ())
    return total


def _entropy_rec(piD, x, prefix):
    if len(prefix) == piD.H:
        return 0.0
    p = piD.next_dist(x, prefix)
    total = 0.0
    for v in range(piD.V):
        if p[v] > 0.0:
            total += -p[v] * math.log(p[v])
            total += p[v] * _entropy_rec(piD, x, prefix + (v,))
    return total


def hellinger_sq(piD: Policy, piHat: Policy, mu_items) -> float:
    """Squared Hellinger distance (1/2) E_x sum_y (sqrt piD - sqrt piHat)^2."""
    total = 0.0
    for x, w in mu_items:
        if w == 0.0:
            continue
        bc = _bhattacharyya_rec(piD, piHat, x, ())
        total += w * (1.0 - bc)
    return total


def _bhattacharyya_rec(piD, piHat, x, prefix):
    # 1 - D_H^2 factors over the prefix tree via sum_y sqrt(P Q).
    if len(prefix) == piD.H:
        return 1.0
    pD = piD.next_dist(x, prefix)
    pH = piHat.next_dist(x, prefix)
    total = 0.0
    for v in range(piD.V):
        if pD[v] > 0.0 and pH[v] > 0.0:
            total += math.sqrt(pD[v] * pH[v]) * \
                _bhattacharyya_rec(piD, piHat, x, prefix + (v,))
    return total


def step_kl(pD: np.ndarray, pH: np.ndarray) -> float:
    total = 0.0
    for d, h in zip(pD, pH):
        if d > 0.0:
            if h <= 0.0:
                return math.inf
            total += d * (math.log(d) - math.log(h))
    return total


def stopped_kl(piD: Policy, piHat: Policy, mu_items, N: float, mode="exact",
               n=None, rng=None, mu_sampler=None) -> float:
    """E_piD[min(log N, sum_h per-step conditional KL)]."""
    if N <= 1:
        raise ValueError("N must be > 1")
    logN = math.log(N)
    if mode == "exact":
        total = 0.0
        for x, w in mu_items:
            if w == 0.0:
                continue
            total += w * _stopped_rec(piD, piHat, x, (), 0.0, logN)
        return total
    if mode == "mc":
        vals = np.empty(n)
        for i in range(n):
            x = mu_sampler(rng)
            y = piD.sample(x, rng)
            acc = 0.0
            prefix = ()
            for v in y:
                acc += step_kl(piD.next_dist(x, prefix),
                               piHat.next_dist(x, prefix))
                if acc >= logN:
                    break
                prefix = prefix + (v,)
            vals[i] = min(logN, acc)
        return float(vals.mean())
    raise ValueError(f"unknown mode {mode!r}")


def _stopped_rec(piD, piHat, x, prefix, acc, logN):
    if acc >= logN:
        return logN
    if len(prefix) == piD.H:
        return acc
    pD = piD.next_dist(x, prefix)
    here = acc + step_kl(pD, piHat.next_dist(x, prefix))
    total = 0.0
    for v in range(piD.V):
        if pD[v] > 0.0:
            total += pD[v] * _stopped_rec(piD, piHat, x, prefix + (v,),
                                          here, logN)
    return total


def stepwise_hellinger_tail(piD: Policy, piHat: Policy, mu_items, N: float,
                            delta: float) -> float:
    """P_piD( sum_h per-step squared Hellinger >= log(N/delta) )."""
    thr = math.log(N / delta)
    total = 0.0
    for x, w in mu_items:
        if w == 0.0:
            continue
        total += w * _hell_tail_rec(piD, piHat, x, (), 0.0, thr)
    return total


def _hell_tail_rec(piD, piHat, x, prefix, acc, thr):
    if acc >= thr:
        return 1.0
    if len(prefix) == piD.H:
        return 0.0
    pD = piD.next_dist(x, prefix)
    pH = piHat.next_dist(x, prefix)
    bc = sum(math.sqrt(d * h) for d, h in zip(pD, pH))
    here = acc + (1.0 - bc)
    total = 0.0
    for v in range(piD.V):
        if pD[v] > 0.0:
            total += pD[v] * _hell_tail_rec(piD, piHat, x, prefix + (v,),
                                            here, thr)
    return total


def kl_to_cov_bound(kl: float, N: float) -> float:
    """Upper bound on Pcov_N implied by KL: kl / (log N - 1 + 1/N)."""
    if N <= math.e:
        raise ValueError("N must exceed e for a positive denominator")
    return kl / (math.log(N) - 1.0 + 1.0 / N)


def coverage_sup_log(piD: Policy, piHat: Policy, mu_items):
    """(C, log W_max) with C = sup_N Pcov_N * log N on the exact curve.

    The exact curve is piecewise constant with breakpoints at the log-ratio
    atoms, so the sup over N >= 1 is attained at an atom; this is exact.
    """
    ratios, probs = log_ratio_atoms(piD, piHat, mu_items)
    log_wmax = ratios[-1]
    C = 0.0
    tail = 0.0
    for r, p in zip(ratios[::-1], probs[::-1]):
        tail += p
        if r > 0 and r != math.inf:
            C = max(C, tail * r)
    return C, log_wmax


def empirical_pairwise_cov(piPrime: Policy, pi: Policy, dataset, N: float,
                           logp_prime=None, logp=None) -> float:
    """Fraction of dataset points with log piPrime - log pi >= log N.

    Cached per-candidate log-probs may be passed to avoid recomputation in
    tournaments.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    if logp_prime is None:
        logp_prime = np.array([piPrime.logprob(t) for t in dataset])
    if logp is None:
        logp = np.array([pi.logprob(t) for t in dataset])
    logN = math.log(N)
    with np.errstate(invalid="ignore"):
        diff = logp_prime - logp
    # -inf minus -inf: both densities zero; not a coverage failure.
    diff = np.where(np.isnan(diff), -math.inf, diff)
    return float((diff >= logN - 1e-12).mean())


def onpolicy_cov_estimate(piBar: Policy, piPrime: Policy, pi: Policy,
                          prompts, N: float, mode="exact", m=None, rng=None
                          ) -> float:
    """Average over prompts of P_{y~piBar}(log piPrime - log pi >= log N)."""
    logN = math.log(N)
    total = 0.0
    for x in prompts:
        if mode == "exact":
            p_event = 0.0
            for y, lpBar in _enumerate_weighted(piBar, x):
                t = Trajectory(x, y)
                lpP = piPrime.logprob(t)
                lpQ = pi.logprob(t)
                if lpQ == NEG_INF:
                    hit = lpP > NEG_INF
                else:
                    hit = lpP - lpQ >= logN - 1e-12
                if hit:
                    p_event += math.exp(lpBar)
            total += p_event
        elif mode == "mc":
            if m is None or m < 1:
                raise ValueError("mc mode requires m >= 1")
            ys = piBar.sample_many(x, m, rng)
            cnt = 0
            for row in ys:
                t = Trajectory(x, tuple(int(v) for v in row))
                lpP = piPrime.logprob(t)
                lpQ = pi.logprob(t)
                if lpQ == NEG_INF:
                    hit = lpP > NEG_INF
                else:
                    hit = lpP - lpQ >= logN - 1e-12
                cnt += hit
            total += cnt / m
        else:
            raise ValueError(f"unknown mode {mode!r}")
    return total / len(prompts)


def hoeffding_half_width(n: int, delta: float = 0.05) -> float:
    return math.sqrt(math.log(2.0 / delta) / (2 * n))
