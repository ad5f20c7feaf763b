"""Level at which m-free solutions stop changing, as a function of color support."""

from dataclasses import dataclass

import numpy as np

from _config import parse
from filtered_fock import EMPTY, Filter, GridSpec
from filtered_fock.sde import (FilterSum, M_SORTS, MFreeCoefficients, probe_catalog,
                               stabilization_sweep)


@dataclass
class Config:
    """Sweep m = 1..C+1 for coefficients supported on colors 1..support."""
    seed: int = 3
    colors: int = 4
    trials: int = 3
    scale: float = 0.3


def coefficients(rng, support, scale):
    filters = [EMPTY] + [Filter.of(range(1, s + 1)) for s in range(1, support + 1)]

    def rs():
        return FilterSum(1, {V: scale * rng.normal(size=(1, 1)) for V in filters})
    return MFreeCoefficients({s: rs() for s in M_SORTS}, {s: rs() for s in M_SORTS})


def main(cfg: Config) -> None:
    g = GridSpec(1.0, 4, cfg.colors, 3, 1)
    probes = probe_catalog(g, n_fixed=3, n_random=3)
    rng = np.random.default_rng(cfg.seed)
    levels = list(range(1, cfg.colors + 1))
    for support in range(0, cfg.colors):
        for _ in range(cfg.trials):
            r = stabilization_sweep(coefficients(rng, support, cfg.scale), g, levels, probes)
            diffs = " ".join(f"{d:.1e}" for d in r.diffs[1:])
            print(f"support {support}: m* = {r.m_star}   |I_(m) - I_(m-1)| for m=2..{levels[-1]}: {diffs}")


if __name__ == "__main__":
    main(parse(Config))
