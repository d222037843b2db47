"""Regenerate the bundled 39-bus case files from the pypower network data.

Usage: python3 gen_case39.py   (writes case39_sg.case and case39_gfm.case next to this file)
"""
import os
import math
from pypower.api import case39

HERE = os.path.dirname(os.path.abspath(__file__))

# bus: H, xd, xd', xq, T'd0 on the 100 MVA system base
MACHINES = {
    30: (42.0, 0.1, 0.031, 0.069, 10.2),
    31: (30.3, 0.295, 0.0697, 0.282, 6.56),
    32: (35.8, 0.2495, 0.0531, 0.237, 5.7),
    33: (28.6, 0.262, 0.0436, 0.258, 5.69),
    34: (26.0, 0.67, 0.132, 0.62, 5.4),
    35: (34.8, 0.254, 0.05, 0.241, 7.3),
    36: (26.4, 0.295, 0.049, 0.292, 5.66),
    37: (24.3, 0.29, 0.057, 0.28, 6.7),
    38: (34.5, 0.2106, 0.057, 0.205, 4.79),
    39: (500.0, 0.02, 0.006, 0.019, 7.0),
}
KA, TA = 4.0, 0.05
GFM = dict(xl=0.1, ki=0.1, kd=5.0, tw=0.02, ku=1.0, kq=0.1, h=2.0, d=100.0)
V_MIN = 0.7


def fmt(x):
    return repr(float(x)) if not float(x).is_integer() else str(int(x))


def write(name, gfm_buses, load_override, scenarios):
    c = case39()
    base = c["baseMVA"]
    gen_bus = {int(g[0]) for g in c["gen"]}
    slack = int(next(b[0] for b in c["bus"] if int(b[1]) == 3))
    lines = ["voltmono-case 1", "# IEEE 39-bus system, generated by gen_case39.py", "", "[system]",
             f"name = {name}", f"base_mva = {fmt(base)}", "frequency_hz = 60", f"slack_bus = {slack}", "",
             "[buses]", "# number kind base_kv"]
    for b in c["bus"]:
        num = int(b[0])
        if num == slack:
            kind = "slack"
        elif num in gen_bus:
            kind = "device"
        elif b[2] != 0 or b[3] != 0:
            kind = "load"
        else:
            kind = "passive"
        lines.append(f"{num} {kind} {fmt(b[9])}")
    lines += ["", "[branches]", "# from to r x b tap"]
    for br in c["branch"]:
        tap = br[8] if br[8] != 0 else 1.0
        lines.append(f"{int(br[0])} {int(br[1])} {fmt(br[2])} {fmt(br[3])} {fmt(br[4])} {fmt(tap)}")
    lines += ["", "[loads]", "# bus p q model v_min (per unit on base_mva)"]
    for b in c["bus"]:
        num = int(b[0])
        p, q = b[2] / base, b[3] / base
        if num in load_override:
            p, q = load_override[num]
        if p != 0 or q != 0:
            lines.append(f"{num} {fmt(round(p, 12))} {fmt(round(q, 12))} pq {fmt(V_MIN)}")
    lines += ["", "[devices]"]
    for g in c["gen"]:
        num = int(g[0])
        p, v = g[1] / base, g[5]
        if num in gfm_buses:
            kv = " ".join(f"{k}={fmt(x)}" for k, x in GFM.items())
            lines.append(f"gfm bus={num} p={fmt(round(p, 12))} v={fmt(v)} {kv}")
        else:
            h, xd, xdp, xq, td0 = MACHINES[num]
            lines.append(
                f"sg bus={num} p={fmt(round(p, 12))} v={fmt(v)} xd={fmt(xd)} xd_p={fmt(xdp)} xq={fmt(xq)} "
                f"td0_p={fmt(td0)} ka={fmt(KA)} ta={fmt(TA)} h={fmt(h)} d={fmt(2 * h)}")
    lines.append("")
    lines += scenarios
    with open(os.path.join(HERE, f"{name}.case"), "w") as f:
        f.write("\n".join(lines).rstrip("\n") + "\n")


def scenario(name, t_end, stride, record, events):
    out = [f"[scenario {name}]", f"t_end = {fmt(t_end)}", "dt = 0.001", f"jacobian_stride = {stride}",
           "record = " + " ".join(record)]
    out += [f"event {fmt(t)} {kind}" for t, kind in events]
    return out + [""]


FAULT_BUS = 14
SG_RECORD = ["vm@14", "vm@30", "vm@39", "delta@30", "delta@39", "eq@30", "efd@30"]
GFM_RECORD = ["vm@4", "vm@30", "evir@30", "evirfd@30", "eq@34", "efd@34"]


def fault(clear):
    return [(0.1, f"fault_on bus={FAULT_BUS}"), (0.1 + clear, f"fault_off bus={FAULT_BUS}")]


SG_SCENARIOS = (
    scenario("fault_short", 3, 10, SG_RECORD, fault(0.06))
    + scenario("fault_long", 3, 10, SG_RECORD, fault(0.15))
    + scenario("vref_small", 3, 100, SG_RECORD, [(0.1, "vref_step bus=32 delta=0.01")])
)
GFM_SCENARIOS = (
    scenario("fault_short", 3, 10, GFM_RECORD, fault(0.06))
    + scenario("base", 5, 100, GFM_RECORD, [])
    + scenario("vref_raise", 5, 100, GFM_RECORD, [(1, "vref_step bus=30 delta=0.05")])
    + scenario("vref_pulse", 5, 100, GFM_RECORD,
               [(1, "vref_step bus=30 delta=0.05"), (3, "vref_step bus=30 delta=-0.05")])
    + scenario("shed_100", 2, 100, GFM_RECORD, [(0, "load_shed bus=4 dp=0 dq=100Mvar")])
    + scenario("shed_200", 2, 100, GFM_RECORD, [(0, "load_shed bus=4 dp=0 dq=200Mvar")])
)

if __name__ == "__main__":
    write("case39_sg", set(), {}, SG_SCENARIOS)
    write("case39_gfm", {30, 31, 32, 33}, {4: (5.0, 4.0)}, GFM_SCENARIOS)
