"""Isometry defect of a boson HP evolution under mesh halving."""

import time
from dataclasses import dataclass

import numpy as np

from _config import parse
from filtered_fock import GridSpec
from filtered_fock.sde import (evolve_and_test_unitary, hp_system, probe_catalog,
                               random_hermitian, random_unitary)


@dataclass
class Config:
    """Mesh-order study for a one-color boson generator."""
    seed: int = 1
    h0: int = 2
    nmax: int = 3
    meshes: tuple = (8, 16, 32, 64)
    probes: int = 8
    coarse_cells: int = 8


def main(cfg: Config) -> None:
    rng = np.random.default_rng(cfg.seed)
    H = random_hermitian(cfg.h0, rng)
    L = [0.5 * random_hermitian(cfg.h0, rng)]
    S = [random_unitary(cfg.h0, rng)]
    t0 = time.time()
    rep = evolve_and_test_unitary(
        lambda g: hp_system(g, H, L, S),
        [GridSpec(1.0, n, 1, cfg.nmax, cfg.h0) for n in cfg.meshes],
        lambda g: probe_catalog(g, n_fixed=cfg.probes // 2, n_random=cfg.probes - cfg.probes // 2,
                                coarse_cells=cfg.coarse_cells))
    print(f"{'cells':>6} {'isometry':>12} {'co-isometry':>12} {'picard-vs-step':>15}")
    for r in rep.rows:
        print(f"{r.n_cells:6d} {r.isometry:12.4e} {r.coisometry:12.4e} {r.picard_vs_product:15.2e}")
    print("orders:", ", ".join(f"{o:.3f}" for o in rep.orders), f"(mean {rep.order:.3f})")
    print(f"elapsed {time.time() - t0:.1f}s")


if __name__ == "__main__":
    main(parse(Config))
