import numpy as np

from covkit.models import TabularModel


def all_prefixes(V, H):
    out = [()]
    frontier = [()]
    for _ in range(H - 1):
        frontier = [p + (v,) for p in frontier for v in range(V)]
        out.extend(frontier)
    return out


def random_tabular(rng, V, H, prompts=(0,), alpha=1.0):
    """Fully specified random conditional tables (Dirichlet rows)."""
    tables = {}
    for x in prompts:
        for prefix in all_prefixes(V, H):
            tables[(x, prefix)] = rng.dirichlet(np.full(V, alpha))
    return TabularModel(tables, V=V, H=H)


def random_product(rng, V, H, prompts=(0,), alpha=1.0):
    """Random prefix-independent policy (one row per prompt)."""
    tables = {}
    for x in prompts:
        row = rng.dirichlet(np.full(V, alpha))
        for prefix in all_prefixes(V, H):
            tables[(x, prefix)] = row
    return TabularModel(tables, V=V, H=H)
