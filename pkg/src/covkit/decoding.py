"""Decoding strategies: test-time-training policies and Best-of-N."""

from __future__ import annotations

import math

import numpy as np

from .core import NEG_INF, Policy, Trajectory
from .metrics import hoeffding_half_width
from .models import LinearARModel, grad_logprob_token, project_unit_ball

_TTT_CACHE_LIMIT = 200_000


class TTTPolicy(Policy):
    """Policy that takes a token gradient step after each generated token.

    The conditional at (x, prefix) is the base linear model evaluated at the
    parameter obtained by replaying token-gradient steps along the prefix,
    starting from the base theta (reset per prompt).  Replays are memoized
    per (x, prefix), so a rollout costs O(H) gradient steps total.
    """

    def __init__(self, base: LinearARModel, eta: float):
        self.base = base
        self.eta = float(eta)
        self.V = base.V
        self.H = base.H
        self._cache = {}

    def _theta_at(self, x, prefix: tuple) -> np.ndarray:
        if len(prefix) == 0 or self.eta == 0.0:
            return self.base.theta
        key = (x, prefix)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        theta = self._theta_at(x, prefix[:-1])
        model = self.base.with_theta(theta)
        g = grad_logprob_token(model, x, prefix[:-1], prefix[-1])
        theta = project_unit_ball(theta + self.eta * g)
        if len(self._cache) >= _TTT_CACHE_LIMIT:
            self._cache.clear()
        self._cache[key] = theta
        return theta

    def next_dist(self, x, prefix: tuple) -> np.ndarray:
        if len(prefix) >= self.H:
            raise ValueError("prefix length must be < H")
        return self.base.with_theta(self._theta_at(x, prefix)).next_dist(x, prefix)

    def logprob(self, traj: Trajectory) -> float:
        # Fresh incremental replay along the given trajectory.
        theta = self.base.theta
        total = 0.0
        prefix = ()
        for v in traj.y:
            model = self.base.with_theta(theta)
            p = model.next_dist(traj.x, prefix)
            if p[v] <= 0.0:
                return NEG_INF
            total += math.log(p[v])
            if self.eta != 0.0:
                g = grad_logprob_token(model, traj.x, prefix, v)
                theta = project_unit_ball(theta + self.eta * g)
            prefix = prefix + (v,)
        return total

    def sample(self, x, rng: np.random.Generator) -> tuple:
        theta = self.base.theta
        y = ()
        for _ in range(self.H):
            model = self.base.with_theta(theta)
            p = model.next_dist(x, y)
            v = int(rng.choice(self.V, p=p))
            if self.eta != 0.0:
                g = grad_logprob_token(model, x, y, v)
                theta = project_unit_ball(theta + self.eta * g)
            y = y + (v,)
        return y


def best_of_n(policy: Policy, reward, x, N: int, rng) -> tuple:
    """Draw N i.i.d. responses; return the first attaining maximal reward."""
    if N < 1:
        raise ValueError("N must be >= 1")
    draws = policy.sample_many(x, N, rng)
    best_y = None
    best_r = -1
    for row in draws:
        y = tuple(int(v) for v in row)
        r = reward(x, y)
        if r > best_r:
            best_y, best_r = y, r
            if best_r >= 1:
                break
    return best_y


def bon_regret(policy: Policy, piT: Policy, reward, mu, N: int, trials: int,
               rng, delta: float = 0.05):
    """MC estimate of E_x[r(x, piT(x)) - r(x, BoN(x))] with Hoeffding band.

    The per-trial difference lies in [-1, 1], so the half-width carries a
    range factor of 2.
    """
    if trials < 100:
        raise ValueError("trials must be >= 100")
    total = 0.0
    for _ in range(trials):
        x = mu(rng)
        y_t = piT.sample(x, rng)
        y_b = best_of_n(policy, reward, x, N, rng)
        total += reward(x, y_t) - reward(x, y_b)
    est = total / trials
    return est, 2.0 * hoeffding_half_width(trials, delta)


class AdversarialReward:
    """r(x, y) = 1 iff log piT(y|x) - log piHat(y|x) >= log(2N)."""

    def __init__(self, piT: Policy, piHat: Policy, N: float):
        self.piT = piT
        self.piHat = piHat
        self.log_thresh = math.log(2.0 * N)

    def __call__(self, x, y) -> int:
        t = Trajectory(x, y)
        lpT = self.piT.logprob(t)
        if lpT == NEG_INF:
            return 0
        lpH = self.piHat.logprob(t)
        if lpH == NEG_INF:
            return 1
        return int(lpT - lpH >= self.log_thresh - 1e-12)


def adversarial_reward(piT: Policy, piHat: Policy, N: float) -> AdversarialReward:
    return AdversarialReward(piT, piHat, N)
