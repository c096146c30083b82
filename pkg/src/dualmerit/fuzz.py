"""Randomised cross-check of LP duals against the brute-force clearing oracle."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .analysis import analyze
from .clearing import clear_single_period_oracle
from .lp import FEAS_TOL, STAT_TOL, build_lp, kkt_residuals, solve
from .model import Carrier, EnergyModel, GeneratorSpec, LoadSpec, SnapshotSet

PRICE_TOL = 1e-6
INJECT_ENV = "DUALMERIT_FUZZ_INJECT"  # index of an instance whose LP price is perturbed


def random_instance(seed: int, index: int) -> EnergyModel:
    """Storage-free single-snapshot market with 2-10 units and 1-3 sheddable load blocks."""
    rng = np.random.default_rng([seed, index])
    n_gen = int(rng.integers(2, 11))
    n_load = int(rng.integers(1, 4))
    gens = tuple(
        GeneratorSpec(f"g{i}", "elec", marginal_cost=float(rng.uniform(0.0, 150.0)),
                      capacity_existing=float(rng.uniform(1.0, 100.0)),
                      availability=float(rng.uniform(0.2, 1.0)) if rng.random() < 0.3 else 1.0)
        for i in range(n_gen)
    )
    loads = tuple(
        LoadSpec(f"load{j}", "elec", profile=float(rng.uniform(5.0, 250.0)),
                 shed_price=float(rng.uniform(160.0, 3000.0)))
        for j in range(n_load)
    )
    return EnergyModel(carriers=(Carrier("elec", "MWh", True),),
                       snapshots=SnapshotSet.hourly(1, weight=float(rng.uniform(0.5, 5.0))),
                       generators=gens, loads=loads)


@dataclass
class FuzzFailure:
    index: int
    seed: int
    message: str

    def __str__(self):
        return f"instance {self.index} (seed {self.seed}): {self.message}"


@dataclass
class FuzzReport:
    n: int
    seed: int
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> int:
        return self.n - len(self.failures)

    @property
    def ok(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        out = [f"{self.passed}/{self.n} passed"]
        out += [f"FAIL {f}" for f in self.failures]
        return out


def check_instance(model: EnergyModel, backend=None, inject: bool = False, tol_stat: float = STAT_TOL,
                   tol_feas: float = FEAS_TOL) -> str | None:
    """Return a failure message, or None when LP and oracle agree."""
    problem = build_lp(model)
    state = solve(problem, backend)
    if not state.optimal:
        return f"solver status {state.status}"
    lam = float(state.prices["elec"][0]) + (1.0 if inject else 0.0)
    kkt = kkt_residuals(state, problem, tol_stat, tol_feas)
    if kkt.max_stationarity > tol_stat:
        return f"stationarity residual {kkt.max_stationarity:.3e}"
    oracle = clear_single_period_oracle(analyze(state).bids)
    if abs(lam - oracle.price) > PRICE_TOL:
        return f"lp price {lam:.9g} != oracle price {oracle.price:.9g} ({oracle.flag or 'regular'})"
    return None


def run_fuzz(n: int, seed: int, backend=None, inject: int | None = None, **tols) -> FuzzReport:
    if inject is None and os.environ.get(INJECT_ENV):
        inject = int(os.environ[INJECT_ENV])
    report = FuzzReport(n, seed)
    for i in range(n):
        msg = check_instance(random_instance(seed, i), backend, inject=(i == inject), **tols)
        if msg:
            report.failures.append(FuzzFailure(i, seed, msg))
    return report
