"""Build objects from a parsed scenario, run its tasks and emit reports."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..biprocess import SimpleBiprocess, ampliation
from ..fock import ExpState, Filter, FockError, GridSpec, OneParticleVector
from ..integrate import compare_with_oracle
from ..ito import boson_table, mfree_table, verify_ito_formula, verify_mfree_cell, verify_mfree_ito
from ..processes import MFreeKind, ProcessKind, TIME, parse_kind, parse_mfree
from ..sde import (
    M_SORTS,
    Coefficient,
    FilterSum,
    MFreeCoefficients,
    SDESystem,
    UNITARITY_TOL,
    UnitarityCoefficients,
    adversarial_components,
    evolve_and_test_unitary,
    independence_test,
    picard_solve,
    probe_catalog,
    stabilization_sweep,
    unitarity_check,
)
from .dsl import (
    BiprocDecl,
    FilterDecl,
    InitialLine,
    MatrixDecl,
    Scenario,
    StateDecl,
    SystemDecl,
    Task,
    UDecl,
    VectorDecl,
    filter_value,
    matrix_value,
)

SCHEMA = 1
TABLE_TOL = 1e-12


def worker_count() -> int:
    """Worker cap from FILTERED_FOCK_THREADS (default 1)."""
    raw = os.environ.get("FILTERED_FOCK_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise FockError(f"FILTERED_FOCK_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise FockError(f"FILTERED_FOCK_THREADS must be a positive integer, got {raw!r}")
    return n


def _ordered_map(fn: Callable, items: list) -> list:
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------
# Environment
# --------------------------------------------------------------------------


@dataclass
class Environment:
    grid: GridSpec
    filters: dict[str, Filter] = field(default_factory=dict)
    matrices: dict[str, np.ndarray] = field(default_factory=dict)
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    us: dict[str, OneParticleVector] = field(default_factory=dict)
    states: dict[str, ExpState] = field(default_factory=dict)
    biprocs: dict[str, SimpleBiprocess] = field(default_factory=dict)
    systems: dict[str, SystemDecl] = field(default_factory=dict)

    def mat(self, expr) -> np.ndarray:
        return matrix_value(expr, self.matrices, self.grid.h0_dim)

    def filt(self, f) -> Filter:
        return filter_value(f, self.filters)


def build_environment(s: Scenario, grid: GridSpec) -> Environment:
    env = Environment(grid)
    for d in s.decls:
        if isinstance(d, FilterDecl):
            env.filters[d.name] = env.filt(d.filt)
        elif isinstance(d, MatrixDecl):
            env.matrices[d.name] = np.array(d.rows, dtype=complex)
        elif isinstance(d, VectorDecl):
            env.vectors[d.name] = np.array(d.entries, dtype=complex)
        elif isinstance(d, UDecl):
            env.us[d.name] = OneParticleVector.from_entries(grid, d.entries)
        elif isinstance(d, StateDecl):
            env.states[d.name] = ExpState(env.vectors[d.vector], env.us[d.u])
        elif isinstance(d, BiprocDecl):
            F, D = env.mat(d.left.expr), env.filt(d.left.filt)
            G, E = env.mat(d.right.expr), env.filt(d.right.filt)
            starts = d.times[:-1]
            left = tuple(ampliation(grid, t, F, V=D) for t in starts)
            right = tuple(ampliation(grid, t, G, V=E) for t in starts)
            env.biprocs[d.name] = SimpleBiprocess(grid, d.times, left, right, D, E, d.name)
        elif isinstance(d, SystemDecl):
            env.systems[d.name] = d
    return env


def _filter_sum(env: Environment, sides) -> FilterSum:
    h = env.grid.h0_dim
    out = FilterSum.zero(h)
    for sd in sides:
        out = out + FilterSum.of(env.mat(sd.expr), env.filt(sd.filt))
    return out


def build_sde(env: Environment, d: SystemDecl, grid: GridSpec | None = None) -> SDESystem:
    g = env.grid if grid is None else grid
    coefs, initial = [], {}
    for it in d.items:
        if isinstance(it, InitialLine):
            V = env.filt(it.filt)
            initial[V] = initial.get(V, 0) + env.mat(it.expr)
            continue
        kind = parse_kind(it.kind)
        for l in it.left:
            for r in it.right:
                coefs.append(Coefficient.make(g, kind, env.filt(l.filt), env.filt(r.filt),
                                              env.mat(l.expr), env.mat(r.expr)))
    return SDESystem.build(g, coefs, initial or None)


def build_mfree(env: Environment, d: SystemDecl) -> MFreeCoefficients:
    h = env.grid.h0_dim
    F, G = {}, {}
    for it in d.items:
        F[it.kind] = _filter_sum(env, it.left)
        G[it.kind] = _filter_sum(env, it.right)
    for sort in M_SORTS:
        F.setdefault(sort, FilterSum.zero(h))
        G.setdefault(sort, FilterSum.identity(h))
    return MFreeCoefficients(F, G)


# --------------------------------------------------------------------------
# Report rows
# --------------------------------------------------------------------------


def _num(x):
    if isinstance(x, (complex, np.complexfloating)):
        return [_num(x.real), _num(x.imag)]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x) or math.isinf(x):
            return str(x)
        return x
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _num(v) for k, v in x.items()}
    return x


@dataclass
class Check:
    name: str
    value: float
    bound: float
    passed: bool

    def as_dict(self) -> dict:
        return {"check": self.name, "value": _num(self.value), "bound": _num(self.bound),
                "passed": bool(self.passed)}


def _le(name: str, value: float, bound: float) -> Check:
    return Check(name, float(value), float(bound), bool(value <= bound))


@dataclass
class TaskResult:
    index: int
    kind: str
    args: tuple[str, ...]
    checks: list[Check]
    info: dict
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.passed for c in self.checks)

    def failing(self) -> list[str]:
        out = [c.name for c in self.checks if not c.passed]
        if self.error:
            out.append("error")
        return out

    def as_dict(self) -> dict:
        d = {"index": self.index, "task": self.kind, "args": list(self.args), "passed": self.passed,
             "checks": [c.as_dict() for c in self.checks], "info": _num(self.info)}
        if self.error:
            d["error"] = self.error
        return d


# --------------------------------------------------------------------------
# Tasks
# --------------------------------------------------------------------------


def _ints(text: str) -> list[int]:
    if ".." in text:
        a, b = text.split("..")
        return list(range(int(a), int(b) + 1))
    return [int(v) for v in text.split(",") if v]


def ito_table_text(calculus: str) -> str:
    """Multiplication table of the differentials, rows dX1 and columns dX2."""
    if calculus == "boson":
        kinds = [ProcessKind("ann", 1), ProcessKind("cre", 1), ProcessKind("num", 1), TIME]
        label = {"ann": "dA(k)", "cre": "dA*(k)", "num": "dN(k)", "time": "dT"}

        def cell(a, b):
            p = boson_table(a, b)
            return "0" if p.is_zero else label[p.result.sort]
    elif calculus.startswith("mfree:"):
        m = int(calculus.split(":", 1)[1])
        kinds = [MFreeKind(m, s) for s in M_SORTS]
        label = {s: MFreeKind(m, s).token for s in M_SORTS}

        def cell(a, b):
            p = mfree_table(a, b)
            return "0" if p.is_zero else f"{p.trace}·{label[p.result.sort]}"
    else:
        raise FockError(f"unknown calculus {calculus!r}; use boson or mfree:m")
    heads = [label[k.sort] for k in kinds]
    rows = [["·"] + heads] + [[label[a.sort]] + [cell(a, b) for b in kinds] for a in kinds]
    width = max(len(x) for r in rows for x in r)
    return "\n".join(" ".join(x.ljust(width) for x in r).rstrip() for r in rows) + "\n"


def _task_oracle(env, task, seed):
    X = env.biprocs[task.args[0]]
    kind = parse_kind(task.args[1])
    x, y = env.states[task.args[2]], env.states[task.args[3]]
    t = float(task.option("t", str(env.grid.horizon)))
    r = compare_with_oracle(x, X, kind, t, y)
    return [_le("|fast-oracle|", r.diff, r.tau)], {"fast": r.fast, "oracle": r.oracle,
                                                  "tau_trunc": r.tau_trunc, "roundoff": r.roundoff}


def _task_verify_ito(env, task, seed):
    X1, k1 = env.biprocs[task.args[0]], parse_kind(task.args[1])
    X2, k2 = env.biprocs[task.args[2]], parse_kind(task.args[3])
    x, y = env.states[task.args[4]], env.states[task.args[5]]
    rows = verify_ito_formula(x, X1, k1, X2, k2, y)
    checks = [_le(f"t={r.t:g}", r.diff, r.tau) for r in rows]
    return checks, {"lhs_final": rows[-1].lhs, "rhs_final": rows[-1].rhs}


def _task_mfree_ito(env, task, seed):
    X1, a1 = env.biprocs[task.args[0]], parse_mfree(task.args[1])
    X2, a2 = env.biprocs[task.args[2]], parse_mfree(task.args[3])
    x, y = env.states[task.args[4]], env.states[task.args[5]]
    trace = task.option("trace")
    if trace is not None and trace not in ("IP0", "IP1"):
        raise FockError(f"trace must be IP0 or IP1, got {trace!r}")
    rows = verify_mfree_ito(x, X1, a1, X2, a2, y, trace)
    checks = [_le(f"t={r.t:g}", r.diff, r.tau) for r in rows]
    return checks, {"remainder_final": rows[-1].remainder, "closed_final": rows[-1].closed_form}


def _task_tables(env, task, seed):
    g = env.grid
    levels = _ints(task.option("m", ",".join(str(m) for m in range(1, min(3, g.n_colors) + 1))))
    cells = [(MFreeKind(m, s1), MFreeKind(m, s2)) for m in levels for s1 in M_SORTS for s2 in M_SORTS]
    results = _ordered_map(lambda ab: verify_mfree_cell(ab[0], ab[1], g), cells)
    checks = [_le(f"{a.token} {b.token}", r.residual, TABLE_TOL) for (a, b), r in zip(cells, results)]
    return checks, {"cells": len(cells)}


def _task_ito_table(env, task, seed):
    calculus = task.option("calculus", "boson")
    return [], {"calculus": calculus, "table": ito_table_text(calculus).splitlines()}


def _probes(g: GridSpec, seed: int, n: int, coarse: int | None = None):
    return probe_catalog(g, seed=seed, n_fixed=(n + 1) // 2, n_random=n // 2, coarse_cells=coarse)


def _task_solve(env, task, seed):
    sys = build_sde(env, env.systems[task.args[0]])
    tol = float(task.option("tol", "1e-9"))
    iters = int(task.option("iters", "40"))
    t = float(task.option("t", str(env.grid.horizon)))
    probes = _probes(env.grid, seed, int(task.option("probes", "32")))
    try:
        sol, rep = picard_solve(sys, probes, t, iters, tol)
    except FockError as e:
        return [Check("bound", 1.0, 0.0, False)], {"message": str(e)}
    checks = [Check("converged", float(rep.n_iter), float(iters), rep.converged),
              Check("bound violations", float(rep.violations), 0.0, rep.violations == 0),
              _le("residual", rep.residual, 10 * tol)]
    x0 = probes[0]
    info = {"iterations": rep.n_iter, "filters": [str(V) for V in sys.filters], "l0": rep.l0,
            "kT": rep.kT, "deviations": rep.deviations,
            "first_probe_matrix_element": complex(np.vdot(x0.vec, sol.value(0)))}
    return checks, info


def _task_check_unitarity(env, task, seed):
    sys = build_sde(env, env.systems[task.args[0]])
    rep = unitarity_check(UnitarityCoefficients(sys))
    names = []
    for r in rep.rows:
        if r.name not in names:
            names.append(r.name)
    checks = [_le(n, rep.worst(n), UNITARITY_TOL) for n in names]
    return checks, {"failing": rep.failing()}


def _task_sweep_m(env, task, seed):
    coeffs = build_mfree(env, env.systems[task.args[0]])
    g = env.grid
    ms = _ints(task.option("m", ",".join(str(m) for m in range(1, g.n_colors + 1))))
    probes = _probes(g, seed, int(task.option("probes", "6")))
    rep = stabilization_sweep(coeffs, g, ms, probes)
    checks = [Check("stabilized", float(rep.m_star or 0), float(ms[-1]), rep.stabilized)]
    expect = task.option("expect")
    if expect is not None:
        checks.append(Check("m* <= expected", float(rep.m_star or math.inf), float(expect),
                            rep.m_star is not None and rep.m_star <= int(expect)))
    return checks, {"m": rep.m_values, "diffs": rep.diffs, "m_star": rep.m_star}


def _task_mesh_order(env, task, seed, scenario: Scenario | None = None):
    d = env.systems[task.args[0]]
    meshes = _ints(task.option("meshes", "8,16,32"))
    n_probes = int(task.option("probes", "6"))
    lo, hi = float(task.option("lo", "0.8")), float(task.option("hi", "1.2"))
    g0 = env.grid
    grids = [GridSpec(g0.horizon, n, g0.n_colors, g0.n_max, g0.h0_dim) for n in meshes]
    rep = evolve_and_test_unitary(lambda g: build_sde(env, d, g), grids, lambda g: _probes(g, seed, n_probes, min(meshes)))
    checks = [Check(f"order {a.n_cells}->{b.n_cells}", o, hi, lo <= o <= hi)
              for a, b, o in zip(rep.rows, rep.rows[1:], rep.orders)]
    info = {"isometry": [r.isometry for r in rep.rows], "coisometry": [r.coisometry for r in rep.rows],
            "picard_vs_product": [r.picard_vs_product for r in rep.rows]}
    return checks, info


def _task_independence(env, task, seed):
    g = env.grid
    n = int(task.option("cases", "100"))
    t = float(task.option("t", str(g.time(g.n_cells // 2))))
    rng = np.random.default_rng(seed)
    detected = 0
    for i in range(n):
        comps, order, _ = adversarial_components(g, t, rng)
        rep = independence_test(comps, order, t, g, seed=seed + i)
        detected += int(rep.applicable and not rep.all_vanish)
    return [Check("detected", float(detected), float(n), detected == n)], {"cases": n}


TASKS = {
    "oracle": _task_oracle, "verify-ito": _task_verify_ito, "mfree-ito": _task_mfree_ito,
    "tables": _task_tables, "ito-table": _task_ito_table, "solve": _task_solve,
    "check-unitarity": _task_check_unitarity, "sweep-m": _task_sweep_m,
    "mesh-order": _task_mesh_order, "independence": _task_independence,
}


@dataclass
class Report:
    scenario: str
    seed: int
    grid: GridSpec
    results: list[TaskResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def as_dict(self) -> dict:
        g = self.grid
        return {
            "schema": SCHEMA,
            "scenario": self.scenario,
            "seed": self.seed,
            "grid": {"T": g.horizon, "cells": g.n_cells, "colors": g.n_colors, "nmax": g.n_max, "h0": g.h0_dim},
            "tasks": [r.as_dict() for r in self.results],
            "summary": {"tasks": len(self.results), "passed": sum(r.passed for r in self.results),
                        "failed": sum(not r.passed for r in self.results)},
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "kind", "check", "value", "bound", "passed"])
        for r in self.results:
            for c in r.checks:
                w.writerow([r.index, r.kind, c.name, repr(float(c.value)), repr(float(c.bound)),
                            int(c.passed)])
            if r.error:
                w.writerow([r.index, r.kind, "error", "", "", 0])
        return buf.getvalue()


def run_scenario(s: Scenario, name: str = "scenario", seed: int = 0, n_max: int | None = None,
                 strict: bool = False, only: set[str] | None = None,
                 extra_tasks: list[Task] | None = None) -> Report:
    """Run tasks in order; failures are collected unless ``strict`` stops at the first."""
    grid = s.grid_spec(n_max=n_max)
    env = build_environment(s, grid)
    results = []
    tasks = [t for t in s.tasks if only is None or t.kind in only] + list(extra_tasks or [])
    for i, task in enumerate(tasks):
        try:
            checks, info = TASKS[task.kind](env, task, seed)
            res = TaskResult(i, task.kind, task.args, checks, info)
        except FockError as e:
            res = TaskResult(i, task.kind, task.args, [], {}, error=str(e))
        results.append(res)
        if strict and not res.passed:
            break
    return Report(name, seed, grid, results)
