"""Weighted LP assembly, solving, dual extraction and KKT checks.

Sign conventions used throughout the package:

* ``prices[i][t]`` is the nodal-balance dual divided by the snapshot weight,
  i.e. the cost of serving one more MW of demand for one hour. Positive
  means positive willingness to pay. The CO2 carrier therefore has a
  non-positive price, and ``co2_price = -prices[co2]``.
* ``mu_lower``/``mu_upper`` follow the textbook form of bound multipliers for
  ``h(x) <= 0`` rows: they are non-positive. Dispatch bounds are divided by
  the snapshot weight; SOC bounds are not (the weights cancel there).
* ``mu_volume`` is the scarcity rent of a generation volume limit, reported
  non-negative in currency per MWh.

With these conventions, every dispatch variable satisfies
``o - sum_i M_i * price_i + mu_lower - mu_upper = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import backends as bk
from .model import ATMOSPHERE_ID, OFFSET_ID, EnergyModel, series, validate

EXPANSION = "expansion"
DISPATCH_ONLY = "dispatch_only"
MODES = (EXPANSION, DISPATCH_ONLY)

FEAS_TOL = 1e-6
STAT_TOL = 1e-5


class LpBuildError(ValueError):
    pass


class SolverError(RuntimeError):
    """Backend crashed or gave up for numerical reasons."""

    def __init__(self, status: str, message: str):
        super().__init__(f"{status}: {message}")
        self.status = status
        self.message = message


@dataclass(frozen=True)
class RowTag:
    kind: str
    component: str
    t: int | None = None


@dataclass
class LpProblem:
    model: EnergyModel
    mode: str
    c: np.ndarray
    A_eq: sparse.csr_matrix
    b_eq: np.ndarray
    A_ub: sparse.csr_matrix
    b_ub: np.ndarray
    var_tags: list
    eq_tags: list
    ub_tags: list
    index: dict  # (kind, component) -> variable indices
    eq_rows: dict  # (kind, component) -> equality row indices
    ub_rows: dict  # (kind, component) -> inequality row indices
    capacities: dict  # component -> fixed capacity (only for non-variable capacities)

    @property
    def n_vars(self) -> int:
        return len(self.c)

    def count(self, kind: str) -> int:
        tags = self.eq_tags if kind in EQ_KINDS else self.ub_tags
        return sum(tag.kind == kind for tag in tags)


EQ_KINDS = {"nodal_balance", "cyclic", "initial"}


class _Builder:
    def __init__(self):
        self.c: list[float] = []
        self.var_tags: list[RowTag] = []
        self.index: dict = {}
        self.rows = {True: ([], [], [], [], []), False: ([], [], [], [], [])}
        self.row_index = {True: {}, False: {}}

    def var(self, kind, comp, t, cost) -> int:
        i = len(self.c)
        self.c.append(float(cost))
        self.var_tags.append(RowTag(kind, comp, t))
        self.index.setdefault((kind, comp), []).append(i)
        return i

    def row(self, eq: bool, tag: RowTag, coeffs, rhs: float) -> int:
        ri, ci, vi, b, tags = self.rows[eq]
        r = len(b)
        for col, val in coeffs:
            if val != 0.0:
                ri.append(r)
                ci.append(col)
                vi.append(float(val))
        b.append(float(rhs))
        tags.append(tag)
        self.row_index[eq].setdefault((tag.kind, tag.component), []).append(r)
        return r

    def matrix(self, eq: bool):
        ri, ci, vi, b, tags = self.rows[eq]
        A = sparse.csr_matrix((vi, (ri, ci)), shape=(len(b), len(self.c)))
        return A, np.asarray(b, dtype=float), tags


def build_lp(model: EnergyModel, mode: str = EXPANSION, fixed_capacities: dict | None = None,
             extra_demand: dict | None = None, check: bool = True) -> LpProblem:
    """Assemble the weighted LP.

    ``extra_demand`` maps ``(carrier, t)`` to an additional demand in MW and
    is how the finite-difference oracles perturb the problem.
    """
    if mode not in MODES:
        raise LpBuildError(f"unknown mode {mode!r}")
    if model.n_snapshots == 0:
        raise LpBuildError("empty snapshot set")
    if check:
        diags = validate(model)
        if diags:
            raise LpBuildError("model does not validate: " + "; ".join(map(str, diags)))
    fixed_capacities = dict(fixed_capacities or {})
    if mode == DISPATCH_ONLY:
        missing = [cid for cid in model.extendable_ids() if cid not in fixed_capacities]
        if missing:
            raise LpBuildError("dispatch_only needs fixed capacities for: " + ", ".join(missing))

    T = model.n_snapshots
    w = model.snapshots.w
    b = _Builder()
    balance: dict = {(c, t): [] for c in model.carrier_ids() for t in range(T)}
    demand = {(c, t): 0.0 for c in model.carrier_ids() for t in range(T)}
    const_caps: dict = {}

    def capacity(comp):
        """Return (variable index or None, constant capacity)."""
        if comp.extendable and mode == EXPANSION:
            i = b.var("capacity", comp.id, None, comp.capital_cost)
            lo = max(comp.capacity_min, comp.capacity_existing)
            b.row(False, RowTag("cap_lower", comp.id), [(i, -1.0)], -lo)
            if math.isfinite(comp.capacity_max):
                b.row(False, RowTag("cap_upper", comp.id), [(i, 1.0)], comp.capacity_max)
            return i, 0.0
        cap = fixed_capacities.get(comp.id, comp.capacity_existing)
        const_caps[comp.id] = float(cap)
        return None, float(cap)

    def bound_rows(kind, comp_id, x, t, avail, cap_var, cap_const):
        b.row(False, RowTag(f"{kind}_lower", comp_id, t), [(x, -1.0)], 0.0)
        if cap_var is None:
            b.row(False, RowTag(f"{kind}_upper", comp_id, t), [(x, 1.0)], avail * cap_const)
        else:
            b.row(False, RowTag(f"{kind}_upper", comp_id, t), [(x, 1.0), (cap_var, -avail)], 0.0)

    co2_carrier = model.co2.carrier if model.co2 is not None else None

    for gen in model.all_generators():
        cap_var, cap_const = capacity(gen)
        avail = series(gen.availability, T)
        xs = []
        for t in range(T):
            x = b.var("g", gen.id, t, w[t] * gen.marginal_cost)
            xs.append(x)
            bound_rows("gen", gen.id, x, t, avail[t], cap_var, cap_const)
            balance[gen.carrier, t].append((x, 1.0))
            if gen.co2_intensity:
                balance[co2_carrier, t].append((x, gen.co2_intensity))
        if gen.volume_limit is not None:
            b.row(False, RowTag("volume", gen.id), [(x, w[t]) for t, x in enumerate(xs)], gen.volume_limit)

    for conv in model.converters:
        cap_var, cap_const = capacity(conv)
        avail = series(conv.availability, T)
        coeffs = [(carrier, series(k, T)) for carrier, k in conv.ports]
        for t in range(T):
            x = b.var("f", conv.id, t, w[t] * conv.marginal_cost)
            bound_rows("conv", conv.id, x, t, avail[t], cap_var, cap_const)
            for carrier, k in coeffs:
                balance[carrier, t].append((x, k[t]))

    for store in model.all_stores():
        cap_var, cap_const = capacity(store)
        e = [b.var("e", store.id, t, 0.0) for t in range(T + 1)]
        inflow = series(store.inflow, T)
        for t in range(T):
            keep = (1.0 - store.standing_loss) ** w[t]
            # supply-positive form of -(e_t - keep * e_{t-1}) / w_t
            balance[store.carrier, t] += [(e[t + 1], -1.0 / w[t]), (e[t], keep / w[t])]
            demand[store.carrier, t] -= inflow[t]
            if store.has_inflow:
                s = b.var("spill", store.id, t, 0.0)
                b.row(False, RowTag("spill_lower", store.id, t), [(s, -1.0)], 0.0)
                balance[store.carrier, t].append((s, -1.0))
            j = t + 1
            if math.isfinite(store.soc_min):
                b.row(False, RowTag("soc_lower", store.id, j), [(e[j], -1.0)], -store.soc_min)
            if cap_var is None:
                b.row(False, RowTag("soc_upper", store.id, j), [(e[j], 1.0)], cap_const)
            else:
                b.row(False, RowTag("soc_upper", store.id, j), [(e[j], 1.0), (cap_var, -1.0)], 0.0)
        if store.cyclic:
            b.row(True, RowTag("cyclic", store.id), [(e[0], 1.0), (e[T], -1.0)], 0.0)
        else:
            b.row(True, RowTag("initial", store.id), [(e[0], 1.0)], store.initial_soc or 0.0)

    if model.co2 is not None and model.co2.offset_volume > 0:
        xs = []
        for t in range(T):
            x = b.var("offset", OFFSET_ID, t, w[t] * model.co2.offset_price)
            xs.append(x)
            b.row(False, RowTag("offset_lower", OFFSET_ID, t), [(x, -1.0)], 0.0)
            balance[co2_carrier, t].append((x, -1.0))
        b.row(False, RowTag("volume", OFFSET_ID), [(x, w[t]) for t, x in enumerate(xs)],
              model.co2.offset_volume)

    for load in model.loads:
        prof = series(load.profile, T)
        for t in range(T):
            demand[load.carrier, t] += prof[t]
    for (carrier, t), eps in (extra_demand or {}).items():
        demand[carrier, t] += eps

    for carrier in model.carrier_ids():
        for t in range(T):
            b.row(True, RowTag("nodal_balance", carrier, t), balance[carrier, t], demand[carrier, t])

    A_eq, b_eq, eq_tags = b.matrix(True)
    A_ub, b_ub, ub_tags = b.matrix(False)
    return LpProblem(
        model=model,
        mode=mode,
        c=np.asarray(b.c),
        A_eq=A_eq,
        b_eq=b_eq,
        A_ub=A_ub,
        b_ub=b_ub,
        var_tags=b.var_tags,
        eq_tags=eq_tags,
        ub_tags=ub_tags,
        index={k: np.asarray(v) for k, v in b.index.items()},
        eq_rows={k: np.asarray(v) for k, v in b.row_index[True].items()},
        ub_rows={k: np.asarray(v) for k, v in b.row_index[False].items()},
        capacities=const_caps,
    )


@dataclass
class SolvedState:
    status: str
    model: EnergyModel
    mode: str = EXPANSION
    objective: float | None = None
    dispatch: dict = field(default_factory=dict)  # generator/converter id -> (T,)
    soc: dict = field(default_factory=dict)  # store id -> (T+1,), index 0 is the initial level
    spill: dict = field(default_factory=dict)
    offset: np.ndarray | None = None
    capacities: dict = field(default_factory=dict)
    prices: dict = field(default_factory=dict)  # carrier -> (T,)
    mu_lower: dict = field(default_factory=dict)  # dispatch: (T,); stores: (T+1,), nan at 0
    mu_upper: dict = field(default_factory=dict)
    mu_volume: dict = field(default_factory=dict)
    lambda_cyc: dict = field(default_factory=dict)
    lambda_init: dict = field(default_factory=dict)
    message: str = ""
    raw: object | None = None  # BackendResult, kept for duality-gap checks

    @property
    def optimal(self) -> bool:
        return self.status == bk.OPTIMAL

    @property
    def weights(self) -> np.ndarray:
        return self.model.snapshots.w

    @property
    def co2_price(self) -> float | None:
        """Carbon price in currency/tCO2 (mean over snapshots; constant when the budget binds)."""
        if self.model.co2 is None or not self.prices:
            return None
        lam = self.prices[self.model.co2.carrier]
        return float(-np.average(lam, weights=self.weights))

    def operational_cost(self) -> float:
        model, w = self.model, self.weights
        total = 0.0
        for gen in model.all_generators():
            total += gen.marginal_cost * float(w @ self.dispatch[gen.id])
        for conv in model.converters:
            total += conv.marginal_cost * float(w @ self.dispatch[conv.id])
        if self.offset is not None:
            total += model.co2.offset_price * float(w @ self.offset)
        return total

    def emissions(self) -> float:
        """Weighted CO2 injected into the atmosphere from all flows, in t/a."""
        model, w = self.model, self.weights
        if model.co2 is None:
            return 0.0
        co2 = model.co2.carrier
        T = model.n_snapshots
        flow = np.zeros(T)
        for gen in model.all_generators():
            flow += gen.co2_intensity * self.dispatch[gen.id]
        for conv in model.converters:
            for carrier, k in conv.ports:
                if carrier == co2:
                    flow += series(k, T) * self.dispatch[conv.id]
        if self.offset is not None:
            flow -= self.offset
        return float(w @ flow)


def solve(problem: LpProblem, backend=None) -> SolvedState:
    """Solve and map every dual back to its component, descaled by snapshot weight."""
    backend = bk.get_backend(backend)
    if not getattr(backend, "returns_duals", False):
        raise SolverError("capability", f"backend {backend.name} does not return duals")
    res = backend.solve(problem.c, problem.A_ub, problem.b_ub, problem.A_eq, problem.b_eq)
    model = problem.model
    if res.status == bk.NUMERICAL_FAILURE:
        raise SolverError(res.status, res.message)
    if res.status != bk.OPTIMAL:
        return SolvedState(status=res.status, model=model, mode=problem.mode, message=res.message)

    T = model.n_snapshots
    w = model.snapshots.w
    x, y_eq, y_ub = res.x, res.y_eq, res.y_ub
    idx, eqr, ubr = problem.index, problem.eq_rows, problem.ub_rows

    def cap_value(comp_id):
        i = idx.get(("capacity", comp_id))
        return float(x[i[0]]) if i is not None else problem.capacities[comp_id]

    prices = {c: y_eq[eqr["nodal_balance", c]] / w for c in model.carrier_ids()}
    dispatch, mu_lo, mu_up, caps = {}, {}, {}, {}
    for kind, prefix, comps in (("g", "gen", model.all_generators()), ("f", "conv", model.converters)):
        for comp in comps:
            dispatch[comp.id] = x[idx[kind, comp.id]]
            mu_lo[comp.id] = y_ub[ubr[f"{prefix}_lower", comp.id]] / w
            mu_up[comp.id] = y_ub[ubr[f"{prefix}_upper", comp.id]] / w
            caps[comp.id] = cap_value(comp.id)
    mu_vol = {}
    for gen in model.all_generators():
        if ("volume", gen.id) in ubr:
            mu_vol[gen.id] = float(-y_ub[ubr["volume", gen.id][0]])

    soc, spill, lam_cyc, lam_init = {}, {}, {}, {}
    for store in model.all_stores():
        soc[store.id] = x[idx["e", store.id]]
        lo = np.full(T + 1, np.nan)
        up = np.full(T + 1, np.nan)
        lo[1:] = y_ub[ubr["soc_lower", store.id]] if ("soc_lower", store.id) in ubr else 0.0
        up[1:] = y_ub[ubr["soc_upper", store.id]]
        mu_lo[store.id], mu_up[store.id] = lo, up
        caps[store.id] = cap_value(store.id)
        if store.cyclic:
            lam_cyc[store.id] = float(-y_eq[eqr["cyclic", store.id][0]])
        else:
            lam_init[store.id] = float(-y_eq[eqr["initial", store.id][0]])
        if ("spill", store.id) in idx:
            spill[store.id] = x[idx["spill", store.id]]
    offset = x[idx["offset", OFFSET_ID]] if ("offset", OFFSET_ID) in idx else None
    if ("volume", OFFSET_ID) in ubr:
        mu_vol[OFFSET_ID] = float(-y_ub[ubr["volume", OFFSET_ID][0]])

    return SolvedState(
        status=res.status,
        model=model,
        mode=problem.mode,
        objective=res.objective,
        dispatch=dispatch,
        soc=soc,
        spill=spill,
        offset=offset,
        capacities=caps,
        prices=prices,
        mu_lower=mu_lo,
        mu_upper=mu_up,
        mu_volume=mu_vol,
        lambda_cyc=lam_cyc,
        lambda_init=lam_init,
        message=res.message,
        raw=res,
    )


def solve_model(model: EnergyModel, mode: str = EXPANSION, fixed_capacities=None, backend=None) -> SolvedState:
    return solve(build_lp(model, mode, fixed_capacities), backend)


# ---------------------------------------------------------------------------
# KKT verification


@dataclass
class KktReport:
    stationarity: dict  # (kind, component) -> residual array
    max_stationarity: float
    duality_gap: float
    relative_gap: float
    primal_infeasibility: float
    complementarity: float
    flagged: list  # (kind, component, t) with residual above tolerance
    tol_stat: float = STAT_TOL
    tol_feas: float = FEAS_TOL

    @property
    def ok(self) -> bool:
        return (self.max_stationarity <= self.tol_stat
                and self.relative_gap <= self.tol_feas
                and self.primal_infeasibility <= self.tol_feas)

    def lines(self) -> list[str]:
        return [
            f"max_stationarity_residual {self.max_stationarity:.3e} (tol {self.tol_stat:g})",
            f"duality_gap {self.duality_gap:.3e}",
            f"relative_duality_gap {self.relative_gap:.3e} (tol {self.tol_feas:g})",
            f"primal_infeasibility {self.primal_infeasibility:.3e} (tol {self.tol_feas:g})",
            f"complementarity {self.complementarity:.3e}",
            f"flagged_variables {len(self.flagged)}",
            f"status {'PASS' if self.ok else 'FAIL'}",
        ]


def kkt_residuals(state: SolvedState, problem: LpProblem, tol_stat: float = STAT_TOL,
                  tol_feas: float = FEAS_TOL) -> KktReport:
    """Stationarity residuals recomputed from the descaled duals of ``state``.

    Dispatch variables use ``o - sum M*price + mu_lower - mu_upper``; SOC
    variables use the chain relation between consecutive balance duals.
    Gap, feasibility and complementarity use the raw backend solution.
    """
    if not state.optimal:
        raise ValueError("KKT residuals need an optimal state")
    model = state.model
    T = model.n_snapshots
    lam = state.prices
    co2 = model.co2.carrier if model.co2 is not None else None
    res: dict = {}

    for gen in model.all_generators():
        r = gen.marginal_cost + state.mu_volume.get(gen.id, 0.0) - lam[gen.carrier]
        if gen.co2_intensity:
            r = r - gen.co2_intensity * lam[co2]
        res["g", gen.id] = r + state.mu_lower[gen.id] - state.mu_upper[gen.id]

    for conv in model.converters:
        r = np.full(T, conv.marginal_cost)
        for carrier, k in conv.ports:
            r = r - series(k, T) * lam[carrier]
        res["f", conv.id] = r + state.mu_lower[conv.id] - state.mu_upper[conv.id]

    w = model.snapshots.w
    for store in model.all_stores():
        p = lam[store.carrier]
        keep = (1.0 - store.standing_loss) ** w
        lo = np.nan_to_num(state.mu_lower[store.id])
        up = np.nan_to_num(state.mu_upper[store.id])
        r = np.zeros(T + 1)
        end_value = state.lambda_cyc.get(store.id, 0.0) if store.cyclic else 0.0
        nxt = np.append(keep[1:] * p[1:], end_value)  # value of e_j carried into snapshot j
        r[1:] = p - nxt + lo[1:] - up[1:]
        start = state.lambda_cyc[store.id] if store.cyclic else state.lambda_init[store.id]
        r[0] = keep[0] * p[0] - start
        res["e", store.id] = r
        if store.id in state.spill:
            # spill is a free sink: price + mu = 0 with mu <= 0 implies price >= 0
            res["spill", store.id] = np.minimum(p, 0.0)

    flagged = []
    biggest = 0.0
    for (kind, comp), r in res.items():
        a = np.abs(r)
        if a.size:
            biggest = max(biggest, float(a.max()))
        for t in np.flatnonzero(a > tol_stat):
            flagged.append((kind, comp, int(t)))

    raw = state.raw
    primal = float(problem.c @ raw.x)
    dual = float(problem.b_eq @ raw.y_eq + problem.b_ub @ raw.y_ub)
    gap = primal - dual
    slack = problem.b_ub - problem.A_ub @ raw.x
    infeas = 0.0 + max(  # + 0.0 folds -0.0
        float(np.max(-slack, initial=0.0)),
        float(np.max(np.abs(problem.A_eq @ raw.x - problem.b_eq), initial=0.0)),
    )
    comp_scale = np.maximum(1.0, np.abs(problem.b_ub))
    complementarity = float(np.max(np.abs(raw.y_ub * slack) / comp_scale, initial=0.0))
    return KktReport(
        stationarity=res,
        max_stationarity=biggest,
        duality_gap=gap,
        relative_gap=abs(gap) / max(1.0, abs(primal)),
        primal_infeasibility=infeas,
        complementarity=complementarity,
        flagged=flagged,
        tol_stat=tol_stat,
        tol_feas=tol_feas,
    )


# ---------------------------------------------------------------------------
# finite-difference oracles


@dataclass(frozen=True)
class FiniteDifference:
    forward: float
    backward: float
    epsilon: float

    @property
    def value(self) -> float:
        return self.forward

    @property
    def smooth(self) -> bool:
        return abs(self.forward - self.backward) <= 1e-6 * max(1.0, abs(self.forward))


def _objective(model, mode, fixed, backend, **kw) -> float:
    state = solve(build_lp(model, mode, fixed, **kw), backend)
    if not state.optimal:
        raise SolverError(state.status, "finite-difference solve not optimal")
    return state.objective


def lmp_finite_difference(model: EnergyModel, snapshot: int, carrier: str, epsilon: float | None = None,
                          backend=None, mode: str = EXPANSION, fixed_capacities=None) -> FiniteDifference:
    """Carrier price at one snapshot from objective differences under extra demand."""
    if epsilon is None:
        peak = sum(l.peak for l in model.loads if l.carrier == carrier)
        epsilon = 1e-3 * peak if peak > 0 else 1e-3
    w = model.snapshots.w[snapshot]
    base = _objective(model, mode, fixed_capacities, backend)
    up = _objective(model, mode, fixed_capacities, backend, extra_demand={(carrier, snapshot): epsilon})
    down = _objective(model, mode, fixed_capacities, backend, extra_demand={(carrier, snapshot): -epsilon})
    return FiniteDifference((up - base) / (w * epsilon), (base - down) / (w * epsilon), epsilon)


def co2_budget_finite_difference(model: EnergyModel, epsilon: float | None = None, backend=None,
                                 mode: str = EXPANSION, fixed_capacities=None) -> FiniteDifference:
    """Objective change per tonne of extra CO2 budget (equals minus the carbon price)."""
    from dataclasses import replace

    if model.co2 is None:
        raise ValueError("model has no CO2 policy")
    budget = model.co2.budget
    if epsilon is None:
        epsilon = max(1e-4 * abs(budget), 1e-3)
    relaxed = lambda d: replace(model, co2=replace(model.co2, budget=budget + d))  # noqa: E731
    base = _objective(model, mode, fixed_capacities, backend)
    up = _objective(relaxed(epsilon), mode, fixed_capacities, backend)
    down = _objective(relaxed(-epsilon), mode, fixed_capacities, backend)
    return FiniteDifference((up - base) / epsilon, (base - down) / epsilon, epsilon)
