"""Market-clearing problems: DSO layer, TSO layer and its idealized and
fragmented variants, the common benchmark, and interface-pricing rules.

Every system contributes the same constraint block to a program: one
balance row per bus (upward volumes minus downward volumes minus the net
injection, plus the interface flow at the root or coupling bus, equals
the base injection), a row forcing the net injections to sum to zero so
the interface flow genuinely couples the systems, and one range row per
line limit through the injection-to-flow sensitivities. Summing a
distribution system's balance rows therefore reproduces the aggregated
balance used by the practical TSO layer.

Sign conventions: positive base injection = deficit the market must
cover; positive interface flow = power delivered toward the distribution
network; balance-row duals are EUR/MW shadow prices of the right-hand
side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ModelError
from .market_model import DIR_DOWN, DIR_UP, Bid, MarketCase
from .mp_solver import INF, LinearProgram, Solution, solve_lp
from .netmodel import Network, SensitivityMatrix, build_sensitivity

__all__ = [
    "ClearingResult", "PricingRule",
    "clear_dso_layer1", "clear_dso_fixed_interface", "clear_tso_layer2",
    "clear_idealized_layer2", "clear_fragmented_layer2", "clear_common",
    "interface_price", "layer1_feasible", "bid_cost", "remaining_caps",
]

_sens_cache: dict[Network, SensitivityMatrix] = {}


def sensitivity(network: Network) -> SensitivityMatrix:
    sens = _sens_cache.get(network)
    if sens is None:
        sens = _sens_cache[network] = build_sensitivity(network)
    return sens


@dataclass(frozen=True)
class PricingRule:
    """Interface-flow prices c_z, one per DSO, tagged by rule kind."""

    kind: str
    prices: dict[int, float]

    def price(self, m: int) -> float:
        return self.prices.get(m, 0.0)


@dataclass(frozen=True)
class ClearingResult:
    """Primal volumes, injections, interface flows, duals and status of one
    clearing problem. Volumes are keyed by bid id; injections and balance
    duals by system (0 = transmission) and then bus."""

    status: str
    objective: float
    upward: dict[str, float] = field(default_factory=dict)
    downward: dict[str, float] = field(default_factory=dict)
    injections: dict[int, np.ndarray] = field(default_factory=dict)
    interface_flows: dict[int, float] = field(default_factory=dict)
    balance_duals: dict[int, dict[int, float]] = field(default_factory=dict)
    iterations: int = 0
    nodes: int = 0

    def volume(self, bid: Bid) -> float:
        table = self.upward if bid.direction == DIR_UP else self.downward
        return table.get(bid.id, 0.0)

    def total_up(self, case: MarketCase, system: int) -> float:
        return sum(self.volume(b) for b in case.bids_of(system, DIR_UP))

    def total_down(self, case: MarketCase, system: int) -> float:
        return sum(self.volume(b) for b in case.bids_of(system, DIR_DOWN))

    def net_position(self, case: MarketCase, system: int) -> float:
        """Net flexibility position: total upward minus total downward MW.
        Its sign decides which clearing direction can be active at all in a
        TSO-layer optimum under ordered bid prices."""
        return self.total_up(case, system) - self.total_down(case, system)


def bid_cost(case: MarketCase, upward: dict[str, float],
             downward: dict[str, float]) -> float:
    """Procurement cost of a volume assignment: upward volumes are paid,
    downward volumes pay back. Interface-price transfers are excluded."""
    total = 0.0
    for b in case.bids:
        if b.direction == DIR_UP:
            total += b.price * upward.get(b.id, 0.0)
        else:
            total -= b.price * downward.get(b.id, 0.0)
    return total


def remaining_caps(case: MarketCase, system: int, result: ClearingResult) -> dict[str, float]:
    """Residual volume per bid of a system after one clearing."""
    caps = {}
    for b in case.bids_of(system):
        caps[b.id] = max(0.0, b.quantity_max - result.volume(b))
    return caps


# ---------------------------------------------------------------------------
# Program assembly
# ---------------------------------------------------------------------------

class _CaseProgram:
    """Incrementally built program over one or more system blocks."""

    def __init__(self, case: MarketCase):
        self.case = case
        self.lp = LinearProgram()
        self.up_vars: dict[str, int] = {}
        self.down_vars: dict[str, int] = {}
        self.p_vars: dict[int, list[int]] = {}
        self.z_vars: dict[int, int] = {}
        self.balance_rows: dict[int, dict[int, int]] = {}

    def add_z(self, m: int, lo: float, hi: float, cost: float = 0.0) -> int:
        zv = self.lp.add_variable(f"z[{m}]", lo, hi, cost)
        self.z_vars[m] = zv
        return zv

    def pin_z(self, m: int, value: float) -> int:
        """Pin an interface flow with an explicit row so its dual is exposed."""
        return self.lp.add_equality({self.z_vars[m]: 1.0}, value, name=f"zpin[{m}]")

    def add_system(self, system: int, *,
                   bid_caps: dict[str, float] | None = None,
                   fixed_up: dict[str, float] | None = None,
                   fixed_down: dict[str, float] | None = None,
                   z_attach: list[tuple[int, int, float]] = (),
                   cost_scale: float = 1.0,
                   variable_bids: bool = True) -> None:
        """Add one system's balance, consistency, and flow constraints.

        ``bid_caps`` limits each bid variable (defaults to its full volume);
        ``fixed_up``/``fixed_down`` are constant, already-cleared volumes
        folded into the right-hand sides; ``z_attach`` lists
        (bus, variable, coefficient) interface terms to insert into balance
        rows. With ``variable_bids=False`` the block carries constants only.
        """
        case = self.case
        net = case.system_network(system)
        e = case.system_injections(system)
        sens = sensitivity(net)
        fixed_up = fixed_up or {}
        fixed_down = fixed_down or {}

        up_at: dict[int, list[int]] = {}
        down_at: dict[int, list[int]] = {}
        if variable_bids:
            for b in case.bids_of(system):
                cap = b.quantity_max if bid_caps is None else bid_caps.get(b.id, 0.0)
                cost = cost_scale * (b.price if b.direction == DIR_UP else -b.price)
                var = self.lp.add_variable(f"{b.direction}[{b.id}]", 0.0, cap, cost)
                if b.direction == DIR_UP:
                    self.up_vars[b.id] = var
                    up_at.setdefault(b.bus, []).append(var)
                else:
                    self.down_vars[b.id] = var
                    down_at.setdefault(b.bus, []).append(var)

        const_net: dict[int, float] = {}
        for b in case.bids_of(system):
            if b.direction == DIR_UP:
                const_net[b.bus] = const_net.get(b.bus, 0.0) + fixed_up.get(b.id, 0.0)
            else:
                const_net[b.bus] = const_net.get(b.bus, 0.0) - fixed_down.get(b.id, 0.0)

        z_at: dict[int, list[tuple[int, float]]] = {}
        for bus, var, coeff in z_attach:
            z_at.setdefault(bus, []).append((var, coeff))

        p_vars = [self.lp.add_variable(f"p[{system},{b}]", -INF, INF)
                  for b in net.buses]
        self.p_vars[system] = p_vars
        rows: dict[int, int] = {}
        for k, bus in enumerate(net.buses):
            coeffs: dict[int, float] = {p_vars[k]: -1.0}
            for var in up_at.get(bus, ()):
                coeffs[var] = coeffs.get(var, 0.0) + 1.0
            for var in down_at.get(bus, ()):
                coeffs[var] = coeffs.get(var, 0.0) - 1.0
            for var, coeff in z_at.get(bus, ()):
                coeffs[var] = coeffs.get(var, 0.0) + coeff
            rhs = e[k] - const_net.get(bus, 0.0)
            rows[bus] = self.lp.add_equality(coeffs, rhs, name=f"bal[{system},{bus}]")
        self.balance_rows[system] = rows
        self.lp.add_equality({pv: 1.0 for pv in p_vars}, 0.0, name=f"netsum[{system}]")

        entries = sens.entries
        for li, ln in enumerate(net.lines):
            coeffs = {p_vars[k]: entries[li, k]
                      for k in range(net.n_buses) if entries[li, k] != 0.0}
            self.lp.add_range(coeffs, ln.f_min, ln.f_max, name=f"flow[{system},{li}]")

    def add_aggregate_balance(self, m: int, cleared_up: float, cleared_down: float) -> int:
        """Aggregated distribution balance: residual volumes plus the
        interface flow must cover the total base imbalance net of what the
        first layer already cleared."""
        case = self.case
        dso = case.dso(m)
        coeffs: dict[int, float] = {self.z_vars[m]: 1.0}
        for b in case.bids_of(m):
            var = self.up_vars.get(b.id) if b.direction == DIR_UP \
                else self.down_vars.get(b.id)
            if var is None:
                continue
            coeffs[var] = coeffs.get(var, 0.0) + (1.0 if b.direction == DIR_UP else -1.0)
        rhs = sum(dso.base_injections) - cleared_up + cleared_down
        return self.lp.add_equality(coeffs, rhs, name=f"agg[{m}]")

    def extract(self, sol: Solution) -> ClearingResult:
        if sol.status != "optimal":
            return ClearingResult(status=sol.status, objective=float("nan"),
                                  iterations=sol.iterations)
        up = {}
        for bid_id, var in self.up_vars.items():
            up[bid_id] = _clamp(sol.x[var], self.lp.var_lb[var], self.lp.var_ub[var])
        down = {}
        for bid_id, var in self.down_vars.items():
            down[bid_id] = _clamp(sol.x[var], self.lp.var_lb[var], self.lp.var_ub[var])
        injections = {
            system: np.array([sol.x[v] for v in pvars])
            for system, pvars in self.p_vars.items()
        }
        zvals = {m: float(sol.x[v]) for m, v in self.z_vars.items()}
        duals = {
            system: {bus: float(sol.duals[row]) for bus, row in rows.items()}
            for system, rows in self.balance_rows.items()
        }
        return ClearingResult(status="optimal", objective=sol.objective,
                              upward=up, downward=down, injections=injections,
                              interface_flows=zvals, balance_duals=duals,
                              iterations=sol.iterations)


def _clamp(v: float, lo: float, hi: float) -> float:
    return float(min(max(v, lo), hi))


def _tso_z_attach(prog: _CaseProgram) -> list[tuple[int, int, float]]:
    return [(dso.coupling_bus, prog.z_vars[dso.index], 1.0)
            for dso in prog.case.dsos]


# ---------------------------------------------------------------------------
# Layer 1
# ---------------------------------------------------------------------------

def clear_dso_layer1(case: MarketCase, m: int, pricing: PricingRule) -> ClearingResult:
    """Local flexibility procurement of one DSO.

    Minimizes bid cost plus the interface-flow price times the import,
    subject to nodal balances, line limits, bid boxes, and interface
    bounds.
    """
    dso = case.dso(m)
    prog = _CaseProgram(case)
    zv = prog.add_z(m, dso.z_min, dso.z_max, pricing.price(m))
    prog.add_system(m, z_attach=[(dso.network.root, zv, 1.0)])
    sol = solve_lp(prog.lp)
    return prog.extract(sol)


def clear_dso_fixed_interface(case: MarketCase, m: int,
                              z_value: float) -> tuple[ClearingResult, float]:
    """Layer-1 problem with a zero interface price and the interface bound
    replaced by a pinned flow. Returns the clearing and the pin's dual,
    which is the local marginal value of one more MW of import (the
    subgradient the dual-price residual supply function accumulates)."""
    dso = case.dso(m)
    prog = _CaseProgram(case)
    zv = prog.add_z(m, -INF, INF, 0.0)
    prog.add_system(m, z_attach=[(dso.network.root, zv, 1.0)])
    pin_row = prog.pin_z(m, z_value)
    sol = solve_lp(prog.lp)
    result = prog.extract(sol)
    dual = float(sol.duals[pin_row]) if sol.status == "optimal" else float("nan")
    return result, dual


def layer1_feasible(case: MarketCase, m: int) -> bool:
    """Phase-1 style feasibility probe of the Layer-1 problem."""
    dso = case.dso(m)
    prog = _CaseProgram(case)
    zv = prog.add_z(m, dso.z_min, dso.z_max)
    prog.add_system(m, z_attach=[(dso.network.root, zv, 1.0)], cost_scale=0.0)
    return solve_lp(prog.lp).status == "optimal"


# ---------------------------------------------------------------------------
# Layer 2 and its variants
# ---------------------------------------------------------------------------

def _layer2_program(case: MarketCase, layer1: dict[int, ClearingResult],
                    pricing: PricingRule, dist_bid_caps: dict[str, float] | None,
                    mode: str) -> tuple[_CaseProgram, Solution]:
    if mode not in ("practical", "idealized", "fragmented"):
        raise ContractError(f"unknown layer-2 mode {mode}")
    for m in case.dso_indices:
        if m not in layer1 or layer1[m].status != "optimal":
            raise ContractError(f"missing Layer-1 result for DSO {m}")

    prog = _CaseProgram(case)
    for dso in case.dsos:
        m = dso.index
        prog.add_z(m, dso.z_min, dso.z_max, 0.0)

    tso_caps = {b.id: b.quantity_max for b in case.bids_of(0)}
    caps = dict(tso_caps)
    for dso in case.dsos:
        m = dso.index
        for b in case.bids_of(m):
            if mode == "fragmented":
                caps[b.id] = 0.0
            elif dist_bid_caps is not None and b.id in dist_bid_caps:
                caps[b.id] = dist_bid_caps[b.id]
            else:
                caps[b.id] = max(0.0, b.quantity_max - layer1[m].volume(b))

    prog.add_system(0, bid_caps=caps, z_attach=_tso_z_attach(prog))

    for dso in case.dsos:
        m = dso.index
        if mode == "idealized":
            fixed_up = {b.id: layer1[m].volume(b) for b in case.bids_of(m, DIR_UP)}
            fixed_down = {b.id: layer1[m].volume(b) for b in case.bids_of(m, DIR_DOWN)}
            prog.add_system(m, bid_caps=caps, fixed_up=fixed_up, fixed_down=fixed_down,
                            z_attach=[(dso.network.root, prog.z_vars[m], 1.0)])
        else:
            for b in case.bids_of(m):
                cost = b.price if b.direction == DIR_UP else -b.price
                var = prog.lp.add_variable(f"{b.direction}[{b.id}]", 0.0, caps[b.id], cost)
                if b.direction == DIR_UP:
                    prog.up_vars[b.id] = var
                else:
                    prog.down_vars[b.id] = var
            prog.add_aggregate_balance(m, layer1[m].total_up(case, m),
                                       layer1[m].total_down(case, m))
        # Interface-flow revenue enters the TSO objective with a minus sign.
        prog.lp.set_cost(prog.z_vars[m], -pricing.price(m))
        if mode == "fragmented":
            prog.lp.fix_variable(prog.z_vars[m], layer1[m].interface_flows[m])

    sol = solve_lp(prog.lp)
    return prog, sol


def clear_tso_layer2(case: MarketCase, layer1: dict[int, ClearingResult],
                     pricing: PricingRule,
                     dist_bid_caps: dict[str, float] | None = None) -> ClearingResult:
    """Practical TSO clearing: full transmission model, aggregated
    distribution balances, residual distribution bids."""
    prog, sol = _layer2_program(case, layer1, pricing, dist_bid_caps, "practical")
    return prog.extract(sol)


def clear_idealized_layer2(case: MarketCase, layer1: dict[int, ClearingResult],
                           pricing: PricingRule,
                           dist_bid_caps: dict[str, float] | None = None) -> ClearingResult:
    """TSO clearing with full per-DSO network constraints in place of the
    aggregated balances."""
    prog, sol = _layer2_program(case, layer1, pricing, dist_bid_caps, "idealized")
    return prog.extract(sol)


def clear_fragmented_layer2(case: MarketCase, layer1: dict[int, ClearingResult],
                            pricing: PricingRule) -> ClearingResult:
    """TSO clearing with distribution volumes pinned to zero and interface
    flows frozen at their Layer-1 values."""
    prog, sol = _layer2_program(case, layer1, pricing, None, "fragmented")
    return prog.extract(sol)


# ---------------------------------------------------------------------------
# Common market
# ---------------------------------------------------------------------------

def clear_common(case: MarketCase) -> ClearingResult:
    """Single co-optimized clearing over every grid; the benchmark.

    Duals of the transmission coupling-bus balances are retained for the
    optimal interface-pricing rule.
    """
    prog = _CaseProgram(case)
    for dso in case.dsos:
        prog.add_z(dso.index, dso.z_min, dso.z_max, 0.0)
    prog.add_system(0, z_attach=_tso_z_attach(prog))
    for dso in case.dsos:
        prog.add_system(dso.index,
                        z_attach=[(dso.network.root, prog.z_vars[dso.index], 1.0)])
    sol = solve_lp(prog.lp)
    return prog.extract(sol)


# ---------------------------------------------------------------------------
# Interface pricing
# ---------------------------------------------------------------------------

def interface_price(case: MarketCase, kind: str,
                    common: ClearingResult | None = None) -> PricingRule:
    """Resolve one of the three interface-flow pricing rules.

    none: all zeros. optimal: duals of the coupling-bus balances of the
    common clearing. midpoint: per DSO, the average of its most expensive
    downward and least expensive upward bid prices.
    """
    if kind == "none":
        return PricingRule("none", {m: 0.0 for m in case.dso_indices})
    if kind == "midpoint":
        prices = {}
        for m in case.dso_indices:
            ups = [b.price for b in case.bids_of(m, DIR_UP)]
            downs = [b.price for b in case.bids_of(m, DIR_DOWN)]
            hi_down = max(downs) if downs else 0.0
            lo_up = min(ups) if ups else 0.0
            prices[m] = 0.5 * (hi_down + lo_up)
        return PricingRule("midpoint", prices)
    if kind == "optimal":
        if common is None:
            common = clear_common(case)
        if common.status != "optimal":
            raise ModelError("optimal pricing requested but the common market "
                             f"clearing is {common.status}")
        prices = {dso.index: common.balance_duals[0][dso.coupling_bus]
                  for dso in case.dsos}
        return PricingRule("optimal", prices)
    raise ContractError(f"unknown pricing kind {kind!r}")
