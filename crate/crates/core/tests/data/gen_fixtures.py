"""Independent reference data for the integration tests.

Usage: python3 gen_fixtures.py   (writes the fixture files next to this script)

Needs pypower, numpy, scipy and sympy. None of the code below shares logic
with the Rust implementation:
  case39_ybus.csv   admittance matrix from pypower's makeYbus
  case39_pf.csv     pypower Newton power flow (|V|, angle in degrees)
  two_bus_v.csv     two-bus network solve by dense grid search plus polish
  sg_desk.csv       synchronous machine right-hand side and partials from sympy,
                    injection from a dq-frame circuit model
"""
import os

import numpy as np
import sympy as sp
from scipy.optimize import fsolve
from pypower.api import case39, ppoption, runpf
from pypower.ext2int import ext2int
from pypower.makeYbus import makeYbus

HERE = os.path.dirname(os.path.abspath(__file__))


def write(name, header, rows):
    with open(os.path.join(HERE, name), "w") as f:
        f.write(header + "\n")
        for r in rows:
            f.write(",".join(repr(float(x)) if not isinstance(x, int) else str(x) for x in r) + "\n")


def ybus():
    ppc = ext2int(case39())
    y, _, _ = makeYbus(ppc["baseMVA"], ppc["bus"], ppc["branch"])
    y = y.tocoo()
    rows = sorted((int(i) + 1, int(k) + 1, v.real, v.imag) for i, k, v in zip(y.row, y.col, y.data))
    write("case39_ybus.csv", "from,to,re,im", rows)


def power_flow():
    res, ok = runpf(case39(), ppoption(VERBOSE=0, OUT_ALL=0, PF_TOL=1e-12))
    assert ok
    rows = [(int(b[0]), b[7], b[8]) for b in res["bus"]]
    write("case39_pf.csv", "bus,vm,va_deg", rows)


# two-bus desk case: machine at bus 0 behind the line, constant-power load at bus 1
EQ, DELTA, XDP, XQ = 1.05, 0.2, 0.3, 1.7
S_LOAD = 0.5 + 0.2j
X_LINE = 0.5


def dq_current(v, eq, delta, xdp, xq):
    """Generator current out of the machine, two-reaction circuit in the rotor frame."""
    vr = v * np.exp(-1j * (delta - np.pi / 2))
    vd, vq = vr.real, vr.imag
    i_d = (eq - vq) / xdp
    i_q = vd / xq
    return (i_d + 1j * i_q) * np.exp(1j * (delta - np.pi / 2))


def two_bus_mismatch(v1):
    # line current 0 -> 1 equals the load current, which fixes V0
    i_load = np.conj(S_LOAD / v1)
    v0 = v1 + 1j * X_LINE * i_load
    return v0, dq_current(v0, EQ, DELTA, XDP, XQ) - i_load


def two_bus():
    # the case has a second, low-voltage root near |V1| = 0.6; search the operable branch
    best = None
    for m in np.linspace(0.7, 1.3, 601):
        for a in np.linspace(-1.0, 0.6, 801):
            v1 = m * np.exp(1j * a)
            r = abs(two_bus_mismatch(v1)[1])
            if best is None or r < best[0]:
                best = (r, v1)

    def f(z):
        r = two_bus_mismatch(z[0] + 1j * z[1])[1]
        return [r.real, r.imag]

    z = fsolve(f, [best[1].real, best[1].imag], xtol=1e-13)
    v1 = z[0] + 1j * z[1]
    v0, r = two_bus_mismatch(v1)
    assert abs(r) < 1e-12, abs(r)
    write("two_bus_v.csv", "bus,re,im", [(0, v0.real, v0.imag), (1, v1.real, v1.imag)])


# machine from the SMIB desk case at a perturbed state
SG = dict(xd=1.8, xdp=0.3, xq=1.7, td0=8.0, ka=50.0, ta=0.05, h=3.5, d=7.0, wb=2 * np.pi * 60, vref=1.02, pm=0.55)
STATE = dict(delta=0.41, omega=0.003, eq=1.12, efd=1.9)
V_DESK = 0.97 * np.exp(0.13j)


def sg_desk():
    d, w, e, f, vr, vi = sp.symbols("delta omega eq efd vr vi", real=True)
    p = {k: sp.nsimplify(v) if k != "wb" else 2 * sp.pi * 60 for k, v in SG.items()}
    v = vr + sp.I * vi
    rot = sp.exp(-sp.I * (d - sp.pi / 2))
    vdq = sp.expand_complex(v * rot)
    vd, vq = sp.re(vdq), sp.im(vdq)
    i_d = (e - vq) / p["xdp"]
    i_q = vd / p["xq"]
    pe = vd * i_d + vq * i_q
    vm = sp.sqrt(vr**2 + vi**2)
    k = p["xd"] / p["xdp"]
    rhs = [
        p["wb"] * w,
        (p["pm"] - pe - p["d"] * w) / (2 * p["h"]),
        (f - k * e + (k - 1) * vq) / p["td0"],
        (p["ka"] * (p["vref"] - vm) - f) / p["ta"],
    ]
    xs = [d, w, e, f]
    subs = {d: STATE["delta"], w: STATE["omega"], e: STATE["eq"], f: STATE["efd"], vr: V_DESK.real, vi: V_DESK.imag}
    rows = []
    for r, fr in enumerate(rhs):
        val = sp.N(fr.subs(subs), 30)
        dx = [sp.N(sp.diff(fr, x).subs(subs), 30) for x in xs]
        # Wirtinger derivative with respect to V: (d/dvr - j d/dvi) / 2
        dvr = sp.N(sp.diff(fr, vr).subs(subs), 30)
        dvi = sp.N(sp.diff(fr, vi).subs(subs), 30)
        rows.append([r, float(val)] + [float(x) for x in dx] + [float(dvr) / 2, -float(dvi) / 2])
    i = dq_current(V_DESK, STATE["eq"], STATE["delta"], SG["xdp"], SG["xq"])
    g = np.conj(V_DESK) * i
    write("sg_desk.csv", "row,f,d_delta,d_omega,d_eq,d_efd,dv_re,dv_im", rows)
    with open(os.path.join(HERE, "sg_desk.csv"), "a") as fh:
        fh.write(f"g,{float(g.real)!r},{float(g.imag)!r},0,0,0,0,0\n")


if __name__ == "__main__":
    ybus()
    power_flow()
    two_bus()
    sg_desk()
