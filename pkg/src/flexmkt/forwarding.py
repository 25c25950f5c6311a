"""The three grid-safe bid-forwarding methods and their shared outcome type.

* Corrective three-layer scheme: clear both market layers, then let every
  DSO buy corrective volumes against its own grid model with the
  interface flow frozen at the TSO outcome. Safe exactly when each
  correction problem is feasible.
* Bid prequalification/filtering: before the TSO layer, each DSO discards
  bids whose full remaining activation (one direction at a time, the
  corner the radial sensitivities make extremal) cannot be absorbed by
  its grid, then forwards the survivors.
* Residual-supply aggregation: each DSO clears its market for a grid of
  pinned interface flows and forwards the resulting exact step costs (or
  a dual-price surrogate); the TSO picks one step per DSO through a
  one-hot MILP. Cleared steps are grid-safe by construction.

Total cost of an outcome is always the bid procurement cost of the final
volumes; interface-price transfers cancel between layers and are not part
of it.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .clearing import (
    ClearingResult,
    PricingRule,
    _CaseProgram,
    bid_cost,
    clear_common,
    clear_dso_fixed_interface,
    clear_dso_layer1,
    clear_fragmented_layer2,
    clear_idealized_layer2,
    clear_tso_layer2,
    sensitivity,
)
from .errors import ContractError, ModelError
from .market_model import DIR_DOWN, DIR_UP, MarketCase
from .mp_solver import INF, MixedProgram, solve_lp, solve_milp
from .safety import SafetyVerdict, inefficiency, is_grid_safe

__all__ = [
    "Outcome", "Rsf", "RsfStep", "FilterResult",
    "run_sequential", "run_three_layer", "filter_bids", "run_bid_filtering",
    "build_rsf", "build_rsf_dual", "clear_tso_rsf", "run_bid_aggregation",
    "suboptimality_constant",
]


@dataclass(frozen=True)
class Outcome:
    """End-to-end result of one method on one case."""

    method: str
    status: str
    layer1: dict[int, ClearingResult]
    layer2: ClearingResult | None
    layer3: dict[int, ClearingResult]
    final_upward: dict[str, float]
    final_downward: dict[str, float]
    total_cost: float
    safety: SafetyVerdict | None
    j_common: float | None
    eta_pct: float | None
    lp_solves: int
    milp_nodes: int
    wall_ms: float
    details: dict = field(default_factory=dict)

    @property
    def safe(self) -> bool | None:
        return None if self.safety is None else self.safety.safe


def _eta(total: float, j_common: float | None) -> float | None:
    if j_common is None or not math.isfinite(total):
        return None
    return inefficiency(total, j_common).eta_pct


def _common_cost(case: MarketCase, common: ClearingResult | None) -> float | None:
    if common is None:
        common = clear_common(case)
    return common.objective if common.status == "optimal" else None


def _final_volumes(case: MarketCase, *parts: ClearingResult | None):
    up: dict[str, float] = {}
    down: dict[str, float] = {}
    for part in parts:
        if part is None:
            continue
        for bid_id, v in part.upward.items():
            up[bid_id] = up.get(bid_id, 0.0) + v
        for bid_id, v in part.downward.items():
            down[bid_id] = down.get(bid_id, 0.0) + v
    return up, down


# ---------------------------------------------------------------------------
# Plain sequential runs (practical, idealized, fragmented)
# ---------------------------------------------------------------------------

def run_sequential(case: MarketCase, pricing: PricingRule,
                   variant: str = "practical", *,
                   common: ClearingResult | None = None) -> Outcome:
    """Two-layer run without any forwarding protection.

    ``variant`` selects the TSO layer: practical (aggregated balances),
    idealized (full distribution constraints), or fragmented (no
    forwarding, interface flows frozen).
    """
    t0 = time.perf_counter()
    layer1 = {m: clear_dso_layer1(case, m, pricing) for m in case.dso_indices}
    solves = len(layer1)
    if any(r.status != "optimal" for r in layer1.values()):
        return _aborted(case, f"sequential_{variant}", "layer1_infeasible",
                        layer1, solves, t0, common)
    if variant == "practical":
        layer2 = clear_tso_layer2(case, layer1, pricing)
    elif variant == "idealized":
        layer2 = clear_idealized_layer2(case, layer1, pricing)
    elif variant == "fragmented":
        layer2 = clear_fragmented_layer2(case, layer1, pricing)
    else:
        raise ContractError(f"unknown sequential variant {variant!r}")
    solves += 1
    method = {"practical": "sequential_raw", "idealized": "idealized",
              "fragmented": "fragmented"}[variant]
    if layer2.status != "optimal":
        return _aborted(case, method, "layer2_infeasible", layer1, solves, t0, common)

    up, down = _final_volumes(case, *layer1.values(), layer2)
    total = bid_cost(case, up, down)
    j_com = _common_cost(case, common)
    verdict = is_grid_safe(case, up, down)
    return Outcome(method=method, status="ok", layer1=layer1, layer2=layer2,
                   layer3={}, final_upward=up, final_downward=down,
                   total_cost=total, safety=verdict, j_common=j_com,
                   eta_pct=_eta(total, j_com), lp_solves=solves, milp_nodes=0,
                   wall_ms=1e3 * (time.perf_counter() - t0))


def _aborted(case, method, status, layer1, solves, t0, common) -> Outcome:
    up, down = _final_volumes(case, *layer1.values())
    return Outcome(method=method, status=status, layer1=layer1, layer2=None,
                   layer3={}, final_upward=up, final_downward=down,
                   total_cost=float("nan"), safety=None,
                   j_common=_common_cost(case, common), eta_pct=None,
                   lp_solves=solves, milp_nodes=0,
                   wall_ms=1e3 * (time.perf_counter() - t0))


# ---------------------------------------------------------------------------
# Three-layer corrective scheme
# ---------------------------------------------------------------------------

def _layer3_correction(case: MarketCase, m: int, fixed_up: dict[str, float],
                       fixed_down: dict[str, float], z_value: float) -> ClearingResult:
    """Corrective DSO problem: prior volumes are constants, corrective
    volumes fill the residual boxes, the interface flow is frozen."""
    prog = _CaseProgram(case)
    zv = prog.add_z(m, z_value, z_value)
    caps = {}
    for b in case.bids_of(m):
        used = fixed_up.get(b.id, 0.0) if b.direction == DIR_UP else fixed_down.get(b.id, 0.0)
        caps[b.id] = max(0.0, b.quantity_max - used)
    prog.add_system(m, bid_caps=caps, fixed_up=fixed_up, fixed_down=fixed_down,
                    z_attach=[(case.dso(m).network.root, zv, 1.0)])
    return prog.extract(solve_lp(prog.lp))


def _layer3_violation(case: MarketCase, m: int, fixed_up: dict[str, float],
                      fixed_down: dict[str, float], z_value: float) -> float:
    """Smallest possible max line overload when the correction problem is
    infeasible (diagnostic only)."""
    prog = _CaseProgram(case)
    lp = prog.lp
    zv = prog.add_z(m, z_value, z_value)
    caps = {}
    for b in case.bids_of(m):
        used = fixed_up.get(b.id, 0.0) if b.direction == DIR_UP else fixed_down.get(b.id, 0.0)
        caps[b.id] = max(0.0, b.quantity_max - used)

    net = case.system_network(m)
    e = case.system_injections(m)
    sens = sensitivity(net)
    worst = lp.add_variable("worst", 0.0, INF, 1.0)

    up_at: dict[int, list[int]] = {}
    down_at: dict[int, list[int]] = {}
    for b in case.bids_of(m):
        var = lp.add_variable(f"{b.direction}[{b.id}]", 0.0, caps[b.id])
        (up_at if b.direction == DIR_UP else down_at).setdefault(b.bus, []).append(var)
    const: dict[int, float] = {}
    for b in case.bids_of(m):
        sign = 1.0 if b.direction == DIR_UP else -1.0
        vol = fixed_up.get(b.id, 0.0) if b.direction == DIR_UP else fixed_down.get(b.id, 0.0)
        const[b.bus] = const.get(b.bus, 0.0) + sign * vol
    p_vars = [lp.add_variable(f"p[{bus}]", -INF, INF) for bus in net.buses]
    for k, bus in enumerate(net.buses):
        coeffs: dict[int, float] = {p_vars[k]: -1.0}
        for v in up_at.get(bus, ()):
            coeffs[v] = 1.0
        for v in down_at.get(bus, ()):
            coeffs[v] = -1.0
        if bus == net.root:
            coeffs[zv] = 1.0
        lp.add_equality(coeffs, e[k] - const.get(bus, 0.0), name=f"bal[{bus}]")
    lp.add_equality({pv: 1.0 for pv in p_vars}, 0.0, name="netsum")
    for li, ln in enumerate(net.lines):
        coeffs = {p_vars[k]: sens.entries[li, k]
                  for k in range(net.n_buses) if sens.entries[li, k] != 0.0}
        lp.add_range({**coeffs, worst: -1.0}, -INF, ln.f_max, name=f"fhi[{li}]")
        lp.add_range({**coeffs, worst: +1.0}, ln.f_min, INF, name=f"flo[{li}]")
    sol = solve_lp(lp)
    return float(sol.x[worst]) if sol.status == "optimal" else float("inf")


def run_three_layer(case: MarketCase, pricing: PricingRule, *,
                    common: ClearingResult | None = None) -> Outcome:
    """Corrective scheme: Layers 1 and 2, then one correction LP per DSO.

    The outcome is grid safe iff every correction problem is feasible;
    infeasible DSOs are reported with their residual overload in MW.
    Infeasibility here is a verdict, not an exception.
    """
    t0 = time.perf_counter()
    layer1 = {m: clear_dso_layer1(case, m, pricing) for m in case.dso_indices}
    solves = len(layer1)
    if any(r.status != "optimal" for r in layer1.values()):
        return _aborted(case, "three_layer", "layer1_infeasible", layer1, solves, t0, common)
    layer2 = clear_tso_layer2(case, layer1, pricing)
    solves += 1
    if layer2.status != "optimal":
        return _aborted(case, "three_layer", "layer2_infeasible", layer1, solves, t0, common)

    layer3: dict[int, ClearingResult] = {}
    feasible: dict[int, bool] = {0: True}
    overload: dict[int, float] = {}
    for dso in case.dsos:
        m = dso.index
        fixed_up = {b.id: layer1[m].volume(b) + layer2.volume(b)
                    for b in case.bids_of(m, DIR_UP)}
        fixed_down = {b.id: layer1[m].volume(b) + layer2.volume(b)
                      for b in case.bids_of(m, DIR_DOWN)}
        z2 = layer2.interface_flows[m]
        correction = _layer3_correction(case, m, fixed_up, fixed_down, z2)
        solves += 1
        layer3[m] = correction
        feasible[m] = correction.status == "optimal"
        if not feasible[m]:
            overload[m] = _layer3_violation(case, m, fixed_up, fixed_down, z2)

    up, down = _final_volumes(case, *layer1.values(), layer2,
                              *(r for r in layer3.values() if r.status == "optimal"))
    total = bid_cost(case, up, down)
    verdict = SafetyVerdict(
        safe=all(feasible.values()),
        system_feasible=feasible,
        max_flow_violation=max(overload.values(), default=0.0),
        max_balance_residual=0.0,
        max_interface_violation=0.0,
    )
    j_com = _common_cost(case, common)
    return Outcome(method="three_layer", status="ok", layer1=layer1, layer2=layer2,
                   layer3=layer3, final_upward=up, final_downward=down,
                   total_cost=total, safety=verdict, j_common=j_com,
                   eta_pct=_eta(total, j_com), lp_solves=solves, milp_nodes=0,
                   wall_ms=1e3 * (time.perf_counter() - t0),
                   details={"layer3_overload_mw": overload})


# ---------------------------------------------------------------------------
# Bid prequalification / filtering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterResult:
    forward_up: tuple[str, ...]
    forward_down: tuple[str, ...]
    feasibility_solves: int


def _corner_feasible(case: MarketCase, m: int, layer1: ClearingResult,
                     candidates: set[str], direction: str) -> bool:
    """Feasibility of one direction's candidate set at full activation.

    Volumes of the candidate set are pinned at their full remaining
    capacity on top of the first-layer clearing, the opposite direction
    stays at its first-layer volumes, and injections plus the interface
    flow are free. Because the survivors are later cleared only partially
    and only in one direction, feasibility of this corner certifies every
    clearing the TSO layer can produce.
    """
    dso = case.dso(m)
    prog = _CaseProgram(case)
    zv = prog.add_z(m, dso.z_min, dso.z_max)
    fixed_up, fixed_down = {}, {}
    for b in case.bids_of(m):
        vol = layer1.volume(b)
        if b.direction == direction and b.id in candidates:
            vol += max(0.0, b.quantity_max - vol)
        if b.direction == DIR_UP:
            fixed_up[b.id] = vol
        else:
            fixed_down[b.id] = vol
    prog.add_system(m, fixed_up=fixed_up, fixed_down=fixed_down,
                    z_attach=[(dso.network.root, zv, 1.0)], variable_bids=False)
    return solve_lp(prog.lp).status == "optimal"


def filter_bids(case: MarketCase, m: int, layer1: ClearingResult) -> FilterResult:
    """Iterative prequalification of one DSO's remaining bids.

    Upward candidates are dropped most-expensive-first, downward
    candidates cheapest-first (ties: lowest bid id), until the full
    activation of the surviving set is feasible for the local grid.
    """
    solves = 0

    def run(direction: str) -> tuple[str, ...]:
        nonlocal solves
        bids = {b.id: b for b in case.bids_of(m, direction)}
        live = set(bids)
        while live:
            solves += 1
            if _corner_feasible(case, m, layer1, live, direction):
                break
            if direction == DIR_UP:
                worst_price = max(bids[i].price for i in live)
            else:
                worst_price = min(bids[i].price for i in live)
            victim = min(i for i in live if bids[i].price == worst_price)
            live.remove(victim)
        return tuple(sorted(live))

    return FilterResult(forward_up=run(DIR_UP), forward_down=run(DIR_DOWN),
                        feasibility_solves=solves)


def run_bid_filtering(case: MarketCase, pricing: PricingRule, *,
                      common: ClearingResult | None = None) -> Outcome:
    """Layer 1, per-DSO filtering, then the TSO layer restricted to the
    forwarded bids. Safe under price-ordering and radiality assumptions."""
    t0 = time.perf_counter()
    layer1 = {m: clear_dso_layer1(case, m, pricing) for m in case.dso_indices}
    solves = len(layer1)
    if any(r.status != "optimal" for r in layer1.values()):
        return _aborted(case, "filtering", "layer1_infeasible", layer1, solves, t0, common)

    caps: dict[str, float] = {}
    filters: dict[int, FilterResult] = {}
    for dso in case.dsos:
        m = dso.index
        filt = filter_bids(case, m, layer1[m])
        filters[m] = filt
        solves += filt.feasibility_solves
        keep = set(filt.forward_up) | set(filt.forward_down)
        for b in case.bids_of(m):
            resid = max(0.0, b.quantity_max - layer1[m].volume(b))
            caps[b.id] = resid if b.id in keep else 0.0

    layer2 = clear_tso_layer2(case, layer1, pricing, dist_bid_caps=caps)
    solves += 1
    if layer2.status != "optimal":
        return _aborted(case, "filtering", "layer2_infeasible", layer1, solves, t0, common)

    up, down = _final_volumes(case, *layer1.values(), layer2)
    total = bid_cost(case, up, down)
    j_com = _common_cost(case, common)
    verdict = is_grid_safe(case, up, down)
    return Outcome(method="filtering", status="ok", layer1=layer1, layer2=layer2,
                   layer3={}, final_upward=up, final_downward=down,
                   total_cost=total, safety=verdict, j_common=j_com,
                   eta_pct=_eta(total, j_com), lp_solves=solves, milp_nodes=0,
                   wall_ms=1e3 * (time.perf_counter() - t0),
                   details={"filters": filters})


# ---------------------------------------------------------------------------
# Residual-supply-function bid aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RsfStep:
    z: float
    cost: float          # value the TSO optimizes over
    exact_cost: float    # true local optimum at this interface flow
    clearing: ClearingResult
    price_dual: float    # shadow price of the interface pin


@dataclass(frozen=True)
class Rsf:
    """Discretized residual supply function of one DSO: strictly increasing
    interface-flow steps with their stored local clearings. ``delta`` is
    the realized largest gap between consecutive feasible steps."""

    dso_index: int
    steps: tuple[RsfStep, ...]
    delta: float
    attempts: int

    def __post_init__(self):
        zs = [s.z for s in self.steps]
        if any(b <= a for a, b in zip(zs, zs[1:])):
            raise ContractError("RSF steps must be strictly increasing")


def _rsf_steps(case: MarketCase, m: int, grid) -> list[RsfStep]:
    dso = case.dso(m)
    steps = []
    last = None
    for zhat in grid:
        zhat = float(zhat)
        if not dso.z_min - 1e-9 <= zhat <= dso.z_max + 1e-9:
            raise ContractError(f"grid value {zhat} outside interface bounds of DSO {m}")
        if last is not None and zhat <= last + 1e-12:
            continue
        last = zhat
        clearing, dual = clear_dso_fixed_interface(case, m, zhat)
        if clearing.status != "optimal":
            continue
        steps.append(RsfStep(z=zhat, cost=clearing.objective,
                             exact_cost=clearing.objective,
                             clearing=clearing, price_dual=dual))
    return steps


def _finish_rsf(m: int, steps: list[RsfStep], attempts: int) -> Rsf:
    if not steps:
        raise ModelError(f"no feasible interface flow step for DSO {m}")
    delta = max((b.z - a.z for a, b in zip(steps, steps[1:])), default=0.0)
    return Rsf(dso_index=m, steps=tuple(steps), delta=delta, attempts=attempts)


def build_rsf(case: MarketCase, m: int, grid) -> Rsf:
    """Exact residual supply function: each feasible step carries the true
    optimal local cost for that pinned interface flow."""
    grid = sorted(float(z) for z in grid)
    return _finish_rsf(m, _rsf_steps(case, m, grid), attempts=len(grid))


def build_rsf_dual(case: MarketCase, m: int, grid) -> Rsf:
    """Dual-price surrogate: anchored at the lowest feasible step's exact
    cost, then accumulated as pin shadow price times step width. Stored
    clearings still come from the exact solves."""
    grid = sorted(float(z) for z in grid)
    steps = _rsf_steps(case, m, grid)
    if steps:
        surrogate = [steps[0].cost]
        for prev, cur in zip(steps, steps[1:]):
            surrogate.append(surrogate[-1] + prev.price_dual * (cur.z - prev.z))
        steps = [replace(s, cost=c) for s, c in zip(steps, surrogate)]
    return _finish_rsf(m, steps, attempts=len(grid))


def clear_tso_rsf(case: MarketCase,
                  rsfs: dict[int, Rsf]) -> tuple[ClearingResult, dict[int, int]]:
    """TSO clearing over the forwarded steps: one binary per step, one
    one-hot group per DSO, interface flows substituted by the selected
    step values. The aggregated balance is deliberately absent; it lives
    inside the stored step clearings."""
    for m in case.dso_indices:
        if m not in rsfs:
            raise ContractError(f"missing RSF for DSO {m}")
    prog = _CaseProgram(case)
    y_vars: dict[int, list[int]] = {}
    z_attach = []
    for dso in case.dsos:
        m = dso.index
        ys = []
        for k, step in enumerate(rsfs[m].steps):
            y = prog.lp.add_variable(f"y[{m},{k}]", 0.0, 1.0, cost=step.cost)
            ys.append(y)
            if step.z != 0.0:
                z_attach.append((dso.coupling_bus, y, step.z))
        y_vars[m] = ys
    prog.add_system(0, z_attach=z_attach)
    mp = MixedProgram(prog.lp, [y_vars[m] for m in case.dso_indices])
    sol = solve_milp(mp)
    if sol.status != "optimal":
        raise ModelError(f"aggregation TSO program is {sol.status}; the TSO "
                         "cannot balance any forwarded step combination")
    selected = {}
    for m in case.dso_indices:
        chosen = max(range(len(y_vars[m])), key=lambda k: sol.x[y_vars[m][k]])
        selected[m] = chosen
    result = prog.extract(sol)
    result = replace(
        result,
        interface_flows={m: rsfs[m].steps[k].z for m, k in selected.items()},
        nodes=sol.nodes,
    )
    return result, selected


def _uniform_grid(lo: float, hi: float, max_gap: float,
                  must_include: tuple[float, ...] = ()) -> list[float]:
    if hi <= lo:
        return [lo]
    n = max(1, math.ceil((hi - lo) / max_gap))
    points = set(float(v) for v in np.linspace(lo, hi, n + 1))
    if lo < 0.0 < hi:
        points.add(0.0)
    for v in must_include:
        if lo <= v <= hi:
            points.add(float(v))
    return sorted(points)


def run_bid_aggregation(case: MarketCase, delta_bar: float,
                        refine_rounds: int = 0, variant: str = "primal", *,
                        common: ClearingResult | None = None,
                        extra_grid: dict[int, tuple[float, ...]] | None = None) -> Outcome:
    """End-to-end aggregation method.

    Uniform interface-flow grids with gap at most ``delta_bar`` (endpoints
    always included, zero included when interior) feed the residual supply
    functions; the TSO MILP picks one step per DSO; each DSO then settles
    on its stored clearing for the chosen step. Every refinement round
    re-grids a band of one realized gap around the previous selection at a
    tenth of the spacing and repeats; the previous selection stays on the
    grid, so refinement never worsens the outcome. ``extra_grid`` lets
    tests inject specific flow values (for example common-market optima).
    """
    if delta_bar <= 0.0:
        raise ContractError("delta_bar must be positive")
    if variant not in ("primal", "dual"):
        raise ContractError(f"unknown RSF variant {variant!r}")
    if refine_rounds < 0:
        raise ContractError("refine_rounds must be non-negative")
    build = build_rsf if variant == "primal" else build_rsf_dual

    t0 = time.perf_counter()
    extra = extra_grid or {}
    grids = {
        dso.index: _uniform_grid(dso.z_min, dso.z_max, delta_bar,
                                 must_include=tuple(extra.get(dso.index, ())))
        for dso in case.dsos
    }
    solves = 0
    milp_nodes = 0
    rsfs: dict[int, Rsf] = {}
    result: ClearingResult | None = None
    selected: dict[int, int] = {}
    for round_no in range(refine_rounds + 1):
        rsfs = {m: build(case, m, grids[m]) for m in case.dso_indices}
        solves += sum(r.attempts for r in rsfs.values())
        result, selected = clear_tso_rsf(case, rsfs)
        milp_nodes += result.nodes
        if round_no == refine_rounds:
            break
        for dso in case.dsos:
            m = dso.index
            rsf = rsfs[m]
            zhat = rsf.steps[selected[m]].z
            if rsf.delta <= 0.0:
                grids[m] = [zhat]
                continue
            lo = max(dso.z_min, zhat - rsf.delta)
            hi = min(dso.z_max, zhat + rsf.delta)
            grids[m] = _uniform_grid(lo, hi, rsf.delta / 10.0, must_include=(zhat,))

    chosen = {m: rsfs[m].steps[k] for m, k in selected.items()}
    up, down = _final_volumes(case, result, *(s.clearing for s in chosen.values()))
    total = bid_cost(case, up, down)
    j_com = _common_cost(case, common)
    verdict = is_grid_safe(case, up, down)
    return Outcome(method=f"aggregation_{variant}", status="ok", layer1={},
                   layer2=result, layer3={}, final_upward=up, final_downward=down,
                   total_cost=total, safety=verdict, j_common=j_com,
                   eta_pct=_eta(total, j_com), lp_solves=solves,
                   milp_nodes=milp_nodes,
                   wall_ms=1e3 * (time.perf_counter() - t0),
                   details={
                       "selected_flows": {m: s.z for m, s in chosen.items()},
                       "realized_deltas": {m: rsfs[m].delta for m in rsfs},
                       "variant": variant,
                   })


# ---------------------------------------------------------------------------
# Suboptimality constant for the aggregation bound
# ---------------------------------------------------------------------------

def _selection_structure(case: MarketCase, system: int) -> tuple[np.ndarray, np.ndarray]:
    """Balance-structure matrix [S_up | -S_down | -I] and cost vector of one
    system, ordered (upward bids, downward bids, injections)."""
    net = case.system_network(system)
    ups = case.bids_of(system, DIR_UP)
    downs = case.bids_of(system, DIR_DOWN)
    n = net.n_buses
    a = np.zeros((n, len(ups) + len(downs) + n))
    c = np.zeros(len(ups) + len(downs) + n)
    for j, b in enumerate(ups):
        a[net.bus_index[b.bus], j] = 1.0
        c[j] = b.price
    off = len(ups)
    for j, b in enumerate(downs):
        a[net.bus_index[b.bus], off + j] = -1.0
        c[off + j] = -b.price
    a[:, off + len(downs):] = -np.eye(n)
    if np.linalg.matrix_rank(a) < n:
        raise ModelError(f"balance structure of system {system} is rank deficient")
    return a, c


def _pinv_norm(case: MarketCase) -> float:
    a0, c0 = _selection_structure(case, 0)
    tn = case.transmission
    b0 = np.zeros((tn.n_buses, len(case.dsos)))
    for col, dso in enumerate(case.dsos):
        b0[tn.bus_index[dso.coupling_bus], col] = 1.0
    entries = c0 @ np.linalg.pinv(a0) @ b0
    for col, dso in enumerate(case.dsos):
        am, cm = _selection_structure(case, dso.index)
        bm = np.zeros(dso.network.n_buses)
        bm[dso.network.bus_index[dso.network.root]] = 1.0
        entries[col] += float(cm @ np.linalg.pinv(am) @ bm)
    return float(np.max(np.abs(entries))) if entries.size else 0.0


def _dso_flow_interval(case: MarketCase, m: int) -> tuple[float, float]:
    dso = case.dso(m)
    out = []
    for sense in (+1.0, -1.0):
        prog = _CaseProgram(case)
        zv = prog.add_z(m, dso.z_min, dso.z_max, sense)
        prog.add_system(m, z_attach=[(dso.network.root, zv, 1.0)], cost_scale=0.0)
        sol = solve_lp(prog.lp)
        if sol.status != "optimal":
            raise ModelError(f"DSO {m} has no feasible interface flow")
        out.append(float(sol.x[zv]))
    return out[0], out[1]


def _pinned_common_duals(case: MarketCase, zvec: dict[int, float]) -> dict[int, float] | None:
    prog = _CaseProgram(case)
    for dso in case.dsos:
        prog.add_z(dso.index, -INF, INF)
    prog.add_system(0, z_attach=[(d.coupling_bus, prog.z_vars[d.index], 1.0)
                                 for d in case.dsos])
    for dso in case.dsos:
        prog.add_system(dso.index,
                        z_attach=[(dso.network.root, prog.z_vars[dso.index], 1.0)])
    pins = {m: prog.pin_z(m, zvec[m]) for m in case.dso_indices}
    sol = solve_lp(prog.lp)
    if sol.status != "optimal":
        return None
    return {m: abs(float(sol.duals[row])) for m, row in pins.items()}


def suboptimality_constant(case: MarketCase) -> float:
    """Price sensitivity (EUR/MW) of the benchmark cost to interface flows.

    Combines the balance-structure pseudo-inverse norm with sampled shadow
    prices of pinned interface flows: per DSO, the pins are sampled at the
    corners of the feasible flow intervals and at the benchmark optimum,
    and the largest magnitudes are summed. Scales linearly with prices and
    vanishes when all bids are free. Used as the Lipschitz constant that
    converts an interface-flow grid gap into a cost gap.
    """
    if len(case.dsos) > 10:
        raise ContractError("corner sampling is limited to 10 DSOs")
    paper_norm = _pinv_norm(case)

    common = clear_common(case)
    if common.status != "optimal":
        raise ModelError("suboptimality constant requires a feasible benchmark")
    intervals = {m: _dso_flow_interval(case, m) for m in case.dso_indices}
    z_opt = dict(common.interface_flows)
    samples: list[dict[int, float]] = [z_opt]
    # Single-coordinate deviations from the benchmark optimum, then the
    # full interval corners (corners may be infeasible and get skipped).
    for m in case.dso_indices:
        for v in intervals[m]:
            samples.append({**z_opt, m: v})
    for corner in itertools.product(*([iv for iv in intervals[m]] for m in case.dso_indices)):
        samples.append(dict(zip(case.dso_indices, corner)))
    worst = {m: 0.0 for m in case.dso_indices}
    for zvec in samples:
        duals = _pinned_common_duals(case, zvec)
        if duals is None:
            continue
        for m, v in duals.items():
            worst[m] = max(worst[m], v)
    return max(paper_norm, sum(worst.values()))
