"""Fast matrix-element formula vs the defining Riemann sum as the Fock cutoff grows."""

from dataclasses import dataclass

import numpy as np

from _config import parse
from filtered_fock import ExpState, GridSpec, OneParticleVector
from filtered_fock.biprocess import random_filter, random_simple_biprocess
from filtered_fock.integrate import compare_with_oracle
from filtered_fock.processes import all_kinds


@dataclass
class Config:
    """Per-case |fast - oracle| and τ for n_max in cutoffs."""
    seed: int = 1
    cases: int = 12
    n_cells: int = 4
    cutoffs: tuple = (2, 3, 4, 5)
    norm: float = 0.9


def main(cfg: Config) -> None:
    rng = np.random.default_rng(cfg.seed)
    grids = [GridSpec(1.0, cfg.n_cells, 3, n, 2) for n in cfg.cutoffs]
    kinds = all_kinds(3)
    print(f"{'kind':<8} {'D':<8} {'E':<8} " + " ".join(f"{'err@' + str(n):>9} {'tau@' + str(n):>9}" for n in cfg.cutoffs))
    for _ in range(cfg.cases):
        D, E = random_filter(grids[0], rng), random_filter(grids[0], rng)
        kind = kinds[int(rng.integers(len(kinds)))]
        seed = int(rng.integers(1 << 31))
        coefs = [rng.normal(size=(cfg.n_cells, 3)) + 1j * rng.normal(size=(cfg.n_cells, 3)) for _ in range(2)]
        ws = [rng.normal(size=2) + 1j * rng.normal(size=2) for _ in range(2)]
        cols = []
        for g in grids:
            X = random_simple_biprocess(g, np.random.default_rng(seed), D, E)
            x, y = (ExpState(w, OneParticleVector(g, c) * (cfg.norm / OneParticleVector(g, c).norm()))
                    for w, c in zip(ws, coefs))
            r = compare_with_oracle(x, X, kind, g.horizon, y)
            cols.append(f"{r.diff:9.2e} {r.tau:9.2e}")
        print(f"{str(kind):<8} {str(D):<8} {str(E):<8} " + " ".join(cols))


if __name__ == "__main__":
    main(parse(Config))
