"""Grid-safety verification, the inefficiency metric, and the brute-force
oracle the test suite uses as an independent reference.

Grid safety is an existence statement: cleared volumes are safe when some
nodal injections and interface flows satisfy every balance, line limit,
and interface bound at once. The check therefore solves one violation-
minimization program with the volumes held constant; a zero optimum means
such a point exists. Line flows, interface bounds, and the per-system
consistency rows carry non-negative violation slacks so the verdict can
report how badly an unsafe clearing misses.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .clearing import _CaseProgram, sensitivity
from .errors import ContractError, ModelError, OracleError
from .market_model import DIR_DOWN, DIR_UP, MarketCase
from .mp_solver import INF, solve_lp

__all__ = ["SafetyVerdict", "EfficiencyReport", "OracleResult",
           "is_grid_safe", "inefficiency", "brute_force_oracle"]

_SAFE_TOL = 1e-6


@dataclass(frozen=True)
class SafetyVerdict:
    safe: bool
    system_feasible: dict[int, bool]
    max_flow_violation: float
    max_balance_residual: float
    max_interface_violation: float

    def __bool__(self) -> bool:
        return self.safe


@dataclass(frozen=True)
class EfficiencyReport:
    """Percentage excess of a method's total cost over the common optimum.

    When the benchmark cost is numerically zero the percentage is
    undefined and only the absolute gap is meaningful.
    """

    j_total: float
    j_common: float
    eta_pct: float | None
    gap: float


def inefficiency(j_total: float, j_common: float) -> EfficiencyReport:
    if not (math.isfinite(j_total) and math.isfinite(j_common)):
        raise ContractError("inefficiency requires finite cost values")
    gap = j_total - j_common
    eta = 100.0 * gap / abs(j_common) if abs(j_common) > 1e-9 else None
    return EfficiencyReport(j_total=j_total, j_common=j_common, eta_pct=eta, gap=gap)


def is_grid_safe(case: MarketCase, upward: dict[str, float],
                 downward: dict[str, float]) -> SafetyVerdict:
    """Existence check for final cleared volumes.

    Builds every system's balance block with the volumes as constants,
    leaves injections and interface flows free, and minimizes the total
    violation of line limits, interface bounds, and consistency rows.
    """
    prog = _CaseProgram(case)
    lp = prog.lp
    viol_flow: dict[int, list[int]] = {}
    viol_balance: dict[int, int] = {}
    viol_z: dict[int, int] = {}

    def add_block(system: int) -> None:
        net = case.system_network(system)
        e = case.system_injections(system)
        sens = sensitivity(net)
        const: dict[int, float] = {}
        for b in case.bids_of(system):
            vol = upward.get(b.id, 0.0) if b.direction == DIR_UP else -downward.get(b.id, 0.0)
            const[b.bus] = const.get(b.bus, 0.0) + vol
        p_vars = [lp.add_variable(f"p[{system},{bus}]", -INF, INF) for bus in net.buses]
        prog.p_vars[system] = p_vars
        z_terms: dict[int, list[tuple[int, float]]] = {}
        if system == 0:
            for dso in case.dsos:
                z_terms.setdefault(dso.coupling_bus, []).append((prog.z_vars[dso.index], 1.0))
        else:
            z_terms.setdefault(net.root, []).append((prog.z_vars[system], 1.0))
        rows = {}
        for k, bus in enumerate(net.buses):
            coeffs = {p_vars[k]: -1.0}
            for var, coeff in z_terms.get(bus, ()):
                coeffs[var] = coeff
            rows[bus] = lp.add_equality(coeffs, e[k] - const.get(bus, 0.0),
                                        name=f"bal[{system},{bus}]")
        prog.balance_rows[system] = rows
        if system != 0:
            # Distribution systems must balance internally: the consistency
            # row pins the interface flow to the aggregated volumes. The
            # transmission root is the slack toward the wider grid, so the
            # transmission block checks flows only (a balancing completion
            # by the system operator's own resources is presumed to exist).
            resid = lp.add_variable(f"resid[{system}]", -INF, INF)
            rp = lp.add_variable(f"resid+[{system}]", 0.0, INF, 1.0)
            rn = lp.add_variable(f"resid-[{system}]", 0.0, INF, 1.0)
            lp.add_equality({resid: 1.0, rp: -1.0, rn: 1.0}, 0.0,
                            name=f"split[{system}]")
            coeffs = {pv: 1.0 for pv in p_vars}
            coeffs[resid] = -1.0
            lp.add_equality(coeffs, 0.0, name=f"netsum[{system}]")
            viol_balance[system] = resid
        slacks = []
        for li, ln in enumerate(net.lines):
            v = lp.add_variable(f"vflow[{system},{li}]", 0.0, INF, 1.0)
            coeffs = {p_vars[k]: sens.entries[li, k]
                      for k in range(net.n_buses) if sens.entries[li, k] != 0.0}
            lp.add_range({**coeffs, v: -1.0}, -INF, ln.f_max, name=f"fhi[{system},{li}]")
            lp.add_range({**coeffs, v: +1.0}, ln.f_min, INF, name=f"flo[{system},{li}]")
            slacks.append(v)
        viol_flow[system] = slacks

    for dso in case.dsos:
        m = dso.index
        zv = prog.add_z(m, -INF, INF)
        v = lp.add_variable(f"vz[{m}]", 0.0, INF, 1.0)
        lp.add_range({zv: 1.0, v: -1.0}, -INF, dso.z_max, name=f"zhi[{m}]")
        lp.add_range({zv: 1.0, v: +1.0}, dso.z_min, INF, name=f"zlo[{m}]")
        viol_z[m] = v

    add_block(0)
    for dso in case.dsos:
        add_block(dso.index)

    sol = solve_lp(lp)
    if sol.status != "optimal":
        raise ModelError(f"safety check program unexpectedly {sol.status}")

    def flow_violation(system: int) -> float:
        return max((float(sol.x[v]) for v in viol_flow[system]), default=0.0)

    def balance_residual(system: int) -> float:
        if system not in viol_balance:
            return 0.0
        return abs(float(sol.x[viol_balance[system]]))

    feasible = {}
    systems = [0] + case.dso_indices
    for system in systems:
        worst = max(flow_violation(system), balance_residual(system))
        if system != 0:
            worst = max(worst, float(sol.x[viol_z[system]]))
        feasible[system] = worst <= _SAFE_TOL
    return SafetyVerdict(
        safe=all(feasible.values()),
        system_feasible=feasible,
        max_flow_violation=max(flow_violation(s) for s in systems),
        max_balance_residual=max(balance_residual(s) for s in systems),
        max_interface_violation=max((float(sol.x[v]) for v in viol_z.values()), default=0.0),
    )


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleResult:
    objective: float
    upward: dict[str, float]
    downward: dict[str, float]
    interface_flows: dict[int, float]


def brute_force_oracle(case: MarketCase, step: float) -> OracleResult:
    """Grid enumeration of the co-optimized clearing, for tests only.

    Bid volumes run over uniform grids; each distribution system's
    interface flow is then forced by its aggregate balance, and one
    transmission bid at a time plays the continuous balancer so every
    candidate point satisfies all balances exactly. Feasibility of
    injections and flows is checked by direct linear algebra, never by the
    LP solver under test. The minimum over candidates is within a
    cost-Lipschitz times step times dimension band of the true optimum.
    Deliberately unscalable; refuses instances beyond a few bids or buses.
    """
    if step <= 0.0:
        raise OracleError("step must be positive")
    n_buses = case.transmission.n_buses + sum(d.network.n_buses for d in case.dsos)
    if len(case.bids) > 6 or n_buses > 6:
        raise OracleError(
            f"oracle refuses instance with {len(case.bids)} bids / {n_buses} buses"
        )

    def volume_grid(qmax: float) -> np.ndarray:
        return np.arange(0.0, qmax + step / 2.0, step)

    # Per-DSO feasible candidates: volumes, forced interface flow, local cost.
    dso_feasible: list[list[tuple[dict[str, float], dict[str, float], float, float]]] = []
    for dso in case.dsos:
        m = dso.index
        net, e = dso.network, np.array(dso.base_injections)
        sens = sensitivity(net)
        ups = case.bids_of(m, DIR_UP)
        downs = case.bids_of(m, DIR_DOWN)
        bids = ups + downs
        grids = [volume_grid(b.quantity_max) for b in bids]
        found = []
        for combo in itertools.product(*grids):
            z = float(np.sum(e))
            per_bus = np.zeros(net.n_buses)
            for b, vol in zip(bids, combo):
                sign = 1.0 if b.direction == DIR_UP else -1.0
                z -= sign * vol
                per_bus[net.bus_index[b.bus]] += sign * vol
            if not dso.z_min - 1e-9 <= z <= dso.z_max + 1e-9:
                continue
            p = per_bus - e
            ri = net.bus_index[net.root]
            p[ri] = 0.0
            p[ri] = -float(np.sum(p))
            flows = sens.entries @ p
            lo, hi = net.flow_bounds()
            if np.any(flows < lo - 1e-9) or np.any(flows > hi + 1e-9):
                continue
            up_v = {b.id: float(v) for b, v in zip(bids, combo) if b.direction == DIR_UP}
            dn_v = {b.id: float(v) for b, v in zip(bids, combo) if b.direction == DIR_DOWN}
            cost = sum(b.price * v for b, v in zip(bids, combo)
                       if b.direction == DIR_UP) - \
                sum(b.price * v for b, v in zip(bids, combo) if b.direction == DIR_DOWN)
            found.append((up_v, dn_v, z, cost))
        if not found:
            raise ModelError(f"oracle found no feasible grid point for DSO {m}")
        dso_feasible.append(found)

    tn = case.transmission
    e0 = np.array(case.base_injections)
    sens0 = sensitivity(tn)
    lo0, hi0 = tn.flow_bounds()
    tn_bids = case.bids_of(0)
    coupling_of = {dso.index: dso.coupling_bus for dso in case.dsos}

    best: OracleResult | None = None
    for dso_combo in itertools.product(*dso_feasible) if dso_feasible else [()]:
        z_by_dso = {dso.index: entry[2] for dso, entry in zip(case.dsos, dso_combo)}
        dn_cost = sum(entry[3] for entry in dso_combo)
        need = float(np.sum(e0)) - sum(z_by_dso.values())

        for closer_idx in range(len(tn_bids)) if tn_bids else [-1]:
            others = [b for i, b in enumerate(tn_bids) if i != closer_idx]
            closer = tn_bids[closer_idx] if closer_idx >= 0 else None
            grids = [volume_grid(b.quantity_max) for b in others]
            for combo in itertools.product(*grids):
                net_vol = sum(v if b.direction == DIR_UP else -v
                              for b, v in zip(others, combo))
                residual = need - net_vol
                if closer is None:
                    if abs(residual) > 1e-9:
                        continue
                    closer_vol = 0.0
                else:
                    closer_vol = residual if closer.direction == DIR_UP else -residual
                    if not -1e-9 <= closer_vol <= closer.quantity_max + 1e-9:
                        continue
                    closer_vol = min(max(closer_vol, 0.0), closer.quantity_max)

                per_bus = np.zeros(tn.n_buses)
                cost0 = 0.0
                for b, v in list(zip(others, combo)) + ([(closer, closer_vol)] if closer else []):
                    sign = 1.0 if b.direction == DIR_UP else -1.0
                    per_bus[tn.bus_index[b.bus]] += sign * v
                    cost0 += b.price * v * sign
                for m, z in z_by_dso.items():
                    per_bus[tn.bus_index[coupling_of[m]]] += z
                p0 = per_bus - e0
                p0[tn.bus_index[tn.root]] = 0.0
                p0[tn.bus_index[tn.root]] = -float(np.sum(p0))
                flows = sens0.entries @ p0
                if np.any(flows < lo0 - 1e-9) or np.any(flows > hi0 + 1e-9):
                    continue

                total = dn_cost + cost0
                if best is None or total < best.objective - 1e-12:
                    up_all: dict[str, float] = {}
                    dn_all: dict[str, float] = {}
                    for entry in dso_combo:
                        up_all.update(entry[0])
                        dn_all.update(entry[1])
                    for b, v in list(zip(others, combo)) + ([(closer, closer_vol)] if closer else []):
                        if b.direction == DIR_UP:
                            up_all[b.id] = float(v)
                        else:
                            dn_all[b.id] = float(v)
                    best = OracleResult(objective=float(total), upward=up_all,
                                        downward=dn_all, interface_flows=dict(z_by_dso))
    if best is None:
        raise ModelError("oracle found no feasible grid point")
    return best
