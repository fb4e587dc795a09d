"""Built-in test networks.

``desk_network`` is a 13-bus system: an 11-bus, 10-branch connected tree
of 345 kV-like lines (100 MVA base) with PMUs at both ends of every tree
branch, plus two load buses and five lines that are metered at one end
only. The RQM pair sits at bus 1 of branch (1, 2), which is also the
slack (tie-line) bus.
"""
from .model import BranchSpec, ExtraLineSpec, LineParams, NetworkSpec

_TREE = [
    # from, to, r, x, b (shunt susceptance at each end)
    (1, 2, 0.00244, 0.0305, 0.145),
    (2, 3, 0.00258, 0.0322, 0.155),
    (3, 4, 0.00464, 0.0540, 0.105),
    (4, 5, 0.00180, 0.0220, 0.070),
    (2, 6, 0.00799, 0.0860, 0.225),
    (6, 7, 0.00269, 0.0302, 0.095),
    (6, 8, 0.00138, 0.0160, 0.160),
    (3, 9, 0.00901, 0.0986, 0.260),
    (9, 10, 0.00175, 0.0202, 0.200),
    (10, 11, 0.00340, 0.0405, 0.080),
]

_EXTRA = [
    (5, 12, 0.0040, 0.045, 0.10, 5),
    (8, 12, 0.0050, 0.050, 0.10, 8),
    (11, 13, 0.0040, 0.040, 0.08, 11),
    (7, 13, 0.0060, 0.060, 0.10, 7),
    (4, 10, 0.0050, 0.055, 0.20, 4),
]

# bus 3 is a generator and bus 9 a synchronous condenser; both hold their
# voltage magnitude. Every other bus is a load, so each tree line carries a
# flow that grows with the load ramp and never reverses.
_SETPOINTS = {3: 1.02, 9: 1.01}

# complex power injections, p.u. on 100 MVA (generation positive)
_INJECTIONS = {
    2: -0.60 - 0.18j,
    3: 1.00 + 0.00j,
    4: -0.70 - 0.20j,
    5: -0.50 - 0.12j,
    6: -0.60 - 0.18j,
    7: -0.50 - 0.12j,
    8: -0.50 - 0.15j,
    9: 0.00 + 0.00j,
    10: -0.50 - 0.15j,
    11: -0.60 - 0.15j,
    12: -0.36 - 0.12j,
    13: -0.30 - 0.09j,
}


def desk_network() -> NetworkSpec:
    branches = tuple(BranchSpec(p, q, LineParams(r, x, b))
                     for p, q, r, x, b in _TREE)
    extra = tuple(ExtraLineSpec(p, q, LineParams(r, x, b), metered_end=m)
                  for p, q, r, x, b, m in _EXTRA)
    return NetworkSpec(
        buses=tuple(range(1, 14)),
        branches=branches,
        rqm_branch=(1, 2),
        rqm_end=1,
        base_mva=100.0,
        base_kv=345.0,
        slack_bus=1,
        slack_voltage=1.02 + 0.0j,
        injections=dict(_INJECTIONS),
        extra_lines=extra,
        voltage_setpoints=dict(_SETPOINTS),
    )


def chain_network(n_branches=3, rqm_end=1) -> NetworkSpec:
    """Small radial chain 1-2-...-(n+1) used by tests and demos."""
    rows = _TREE[:1] + [(k, k + 1, *_TREE[k][2:]) for k in range(2, n_branches + 1)]
    branches = tuple(BranchSpec(p, q, LineParams(r, x, b))
                     for p, q, r, x, b in rows)
    buses = tuple(range(1, n_branches + 2))
    inj = {}
    for k, bus in enumerate(buses[1:]):
        inj[bus] = (-0.6 - 0.18j) if k % 2 == 0 else (0.4 + 0.05j)
    return NetworkSpec(buses=buses, branches=branches, rqm_branch=(1, 2),
                       rqm_end=rqm_end, slack_bus=1,
                       slack_voltage=1.02 + 0.0j, injections=inj)
