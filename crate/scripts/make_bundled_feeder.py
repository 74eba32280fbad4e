"""Regenerate data/european_lv from the pandapower copy of the European LV test feeder.

Topology, line codes and load connections come from the pandapower wheel.
Load shapes are synthetic (seeded), one-minute resolution, in kW.

usage: python3 scripts/make_bundled_feeder.py path/to/pandapower-*.whl data/european_lv
"""
import json
import os
import sys
import zipfile

import numpy as np

SEED = 20210101
MINUTES = 1440


def frame(obj, key):
    t = json.loads(obj[key]["_object"])
    return [dict(zip(t["columns"], row)) for row in t["data"]]


def synthetic_shape(rng):
    t = np.arange(MINUTES) / 60.0
    base = rng.uniform(0.15, 0.40)
    slow = np.convolve(rng.normal(0.0, 0.08, MINUTES), np.ones(60) / 60.0, mode="same")
    p = base + slow
    am = rng.uniform(0.4, 1.4)
    p += am * np.exp(-0.5 * ((t - rng.normal(7.5, 0.5)) / 0.75) ** 2)
    pm = rng.uniform(1.0, 2.8)
    p += pm * np.exp(-0.5 * ((t - rng.normal(18.5, 0.6)) / 1.4) ** 2)
    # appliance events, denser in the evening
    n_events = rng.poisson(9)
    for _ in range(n_events):
        start = int(np.clip(rng.choice([rng.normal(8, 2), rng.normal(13, 3), rng.normal(19, 2)]) * 60, 0, MINUTES - 1))
        kind = rng.integers(3)
        if kind == 0:
            dur, kw = rng.integers(3, 6), rng.uniform(2.0, 3.0)
        elif kind == 1:
            dur, kw = rng.integers(30, 61), rng.uniform(1.5, 2.5)
        else:
            dur, kw = rng.integers(45, 91), rng.uniform(0.5, 2.0)
        p[start:start + dur] += kw
    return np.clip(p, 0.05, None)


def main(whl, out):
    z = zipfile.ZipFile(whl)
    net = json.loads(z.read("pandapower/networks/IEEE_European_LV_Off_Peak_1.json"))["_object"]
    buses = frame(net, "bus")
    lines = frame(net, "line")
    loads = frame(net, "asymmetric_load")
    std = net["std_types"]["line"]
    name = {i: b["name"] for i, b in enumerate(buses)}

    os.makedirs(os.path.join(out, "Load Profiles"), exist_ok=True)

    codes = sorted({l["std_type"] for l in lines})
    with open(os.path.join(out, "LineCodes.csv"), "w") as f:
        f.write("Line Codes\n")
        f.write("Name,nphases,R1,X1,R0,X0,C1,C0,Units\n")
        for c in codes:
            s = std[c]
            f.write(f"{c},3,{s['r_ohm_per_km']:.6g},{s['x_ohm_per_km']:.6g},"
                    f"{s['r0_ohm_per_km']:.6g},{s['x0_ohm_per_km']:.6g},0,0,km\n")

    with open(os.path.join(out, "Lines.csv"), "w") as f:
        f.write("Lines\n")
        f.write("Name,Bus1,Bus2,Phases,Length,Units,LineCode\n")
        for l in lines:
            f.write(f"{l['name']},{name[l['from_bus']]},{name[l['to_bus']]},ABC,"
                    f"{l['length_km'] * 1000.0:.6g},m,{l['std_type']}\n")

    with open(os.path.join(out, "Buscoords.csv"), "w") as f:
        f.write("Bus Coordinates\n")
        f.write("Busname,x,y\n")
        for b in buses[1:]:
            x, y = json.loads(b["geo"])["coordinates"]
            f.write(f"{b['name']},{x:.3f},{y:.3f}\n")

    rng = np.random.default_rng(SEED)
    with open(os.path.join(out, "Loads.csv"), "w") as lf, \
            open(os.path.join(out, "LoadShapes.csv"), "w") as sf:
        lf.write("Loads\n")
        lf.write("Name,numPhases,Bus,phases,kV,Model,Connection,kW,PF,Yearly\n")
        sf.write("Load Shapes\n")
        sf.write("Name,npts,minterval,File,useactual,mult\n")
        for k, ld in enumerate(loads, start=1):
            phase = "A" if ld["p_a_mw"] > 0 else ("B" if ld["p_b_mw"] > 0 else "C")
            lf.write(f"{ld['name']},1,{name[ld['bus']]},{phase},0.23,1,wye,1,0.95,Shape_{k}\n")
            fname = f"Load_profile_{k}.csv"
            sf.write(f"Shape_{k},{MINUTES},1,{fname},TRUE,\n")
            p = synthetic_shape(rng)
            with open(os.path.join(out, "Load Profiles", fname), "w") as pf:
                pf.write("time,mult\n")
                for m in range(MINUTES):
                    hh, mm = divmod(m, 60)
                    pf.write(f"{hh:02d}:{mm:02d}:00,{p[m]:.4f}\n")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
