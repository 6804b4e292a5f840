"""Regenerate the bundled example cases under ``src/dpassivity/data``.

All cases are synthesized: the three-bus device gains follow the published
three-bus parameter table, while line data, loads and shunts are chosen here
(the original values are not available). The shunt of the lossy three-bus
case is tuned so the network index is -2.6769.

    python3 scripts/make_fixtures.py
"""

from dataclasses import replace
import json

import numpy as np
from scipy.optimize import brentq

from dpassivity.case import (DATA_DIR, BusRecord, CdParams, DeviceSpec, LineRecord,
                             PowerSystemCase, QdParams, Setpoints, SgParams,
                             dump_case, load_case, parse_matpower)
from dpassivity.devices import with_diagonal_level
from dpassivity.network import operating_point

SIGMA_NET_TARGET = -2.6769


def three_bus(r=0.0, x=0.1, b_shunt=0.0, cross=True):
    loads = [(0.0, 0.0), (0.0, 0.0), (0.5, 0.1)]
    buses = tuple(BusRecord(i + 1, "dynamic", 1.0, 0.0, p, q, 0.0, b_shunt)
                  for i, (p, q) in enumerate(loads))
    lines = (LineRecord(1, 2, r, x), LineRecord(2, 3, r, x), LineRecord(1, 3, r, x))
    c = 1.0 if cross else 0.0
    sg = SgParams(M=0.1607, D=0.8, T_d=6.56, x_d=0.295, x_dp=0.17, K_I=2.68,
                  K_wv=0.066 * c, K_vtheta=0.014 * c, K_vomega=1.56 * c)
    cd = CdParams(tau1=1.0, tau2=10.0, D1=0.37, D2=0.39, K_wv=0.076 * c, K_vtheta=0.076 * c)
    qd = QdParams(tau1=0.8, tau2=8.0, D1=0.37, D2=0.37, K_wv=0.078 * c, K_vtheta=0.078 * c)
    devices = {1: DeviceSpec("SG", sg, Setpoints(P_star=0.3)),
               2: DeviceSpec("CD", cd, Setpoints(P_star=0.2)),
               3: DeviceSpec("QD", qd, Setpoints(P_star=0.0))}
    return PowerSystemCase(1.0, buses, lines, devices)


def lossless_case():
    case = three_bus(cross=True)
    d = dict(case.devices)
    # faster voltage channels so a 0.1 rad kick settles within 20 s
    d[1] = replace(d[1], params=replace(d[1].params, K_E=2.0))
    d[2] = replace(d[2], params=replace(d[2].params, tau2=1.0))
    d[3] = replace(d[3], params=replace(d[3].params, tau2=0.8))
    return replace(case, devices=d, name="three_bus_lossless",
                   note="synthesized SG/CD/QD triangle with lossless lines and cross-loop control; the real load at bus 3 adds conductance after reduction")


def tight_case():
    # reactive loads only, so the reduced network stays lossless
    case = three_bus(cross=False)
    buses = tuple(replace(b, P_load=0.0, Q_load=0.1 if b.id == 3 else 0.0, B_shunt=0.5)
                  for b in case.buses)
    d = dict(case.devices)
    d[2] = replace(d[2], setpoints=Setpoints(P_star=-0.1))
    d[3] = replace(d[3], setpoints=Setpoints(P_star=-0.2))
    return replace(case, buses=buses, devices=d, name="three_bus_tight",
                   note="synthesized lossless three-bus case without cross-loop control")


def case_p(b_shunt, cross=False, levels=((1.86, 2.68), (2.68, 2.68), (3.47, 2.68))):
    """Lossy three-bus case whose ODPM diagonals equal ``levels`` (SG, CD, QD)."""
    case = three_bus(r=0.01, b_shunt=b_shunt, cross=cross)
    op = operating_point(case)
    (s1, v1), (s2, v2), (s3, v3) = levels
    d = dict(case.devices)
    d[1] = replace(d[1], params=replace(d[1].params, K_I=s1, K_E=0.0, sigma2=v1,
                                        K_vomega=0.0))
    d[2] = replace(d[2], params=with_diagonal_level(op.case.devices[2], s2, v2).params)
    d[3] = replace(d[3], params=replace(d[3].params, D1=1 / s3, D2=1 / v3))
    return replace(case, devices=d)


def weak_case(b_shunt, level=1.0):
    case = case_p(b_shunt)
    op = operating_point(case)
    d = dict(case.devices)
    for k in (1, 2, 3):
        spec = with_diagonal_level(op.case.devices[k], sigma2=level)
        d[k] = replace(d[k], params=spec.params)
    return replace(case, devices=d)


def tuned_shunt():
    f = lambda b: operating_point(case_p(b)).idpm.sigma_net - SIGMA_NET_TARGET
    return round(brentq(f, 0.0, 5.0, xtol=1e-12), 9)


def case118_assignment():
    mpc = parse_matpower((DATA_DIR / "case118.m").read_text(), "case118.m")
    gen_buses = sorted({int(r[0]) for r in mpc["gen"]})
    big = sorted(gen_buses, key=lambda b: -sum(r[1] for r in mpc["gen"] if int(r[0]) == b))
    sg_buses = sorted(big[:41])
    cd_gen = sorted(big[41:])
    load_buses = [int(r[0]) for r in mpc["bus"] if int(r[0]) not in gen_buses]
    rng = np.random.default_rng(118)
    extra = sorted(rng.choice(load_buses, size=20, replace=False).tolist())
    cd_extra, qd_extra = extra[:5], extra[5:]
    out = {"_note": "synthesized device assignment (41 SG, 18 CD, 15 QD); "
                    "gains are perturbations of the three-bus parameter table"}

    def jitter(v):
        return round(float(v * rng.uniform(0.8, 1.2)), 4)

    for b in sorted(sg_buses + cd_gen + extra):
        if b in sg_buses:
            p = {"M": jitter(0.1607), "D": jitter(0.8), "T_d": jitter(6.56),
                 "x_d": 0.295, "x_dp": 0.17, "K_I": jitter(2.68), "K_E": 2.0,
                 "K_wv": 0.066, "K_vtheta": 0.014, "K_vomega": 1.0}
            out[str(b)] = {"device_kind": "SG", "params": p}
        elif b in cd_gen or b in cd_extra:
            p = {"tau1": 1.0, "tau2": jitter(2.0), "D1": jitter(0.37), "D2": jitter(0.39),
                 "K_wv": 0.076, "K_vtheta": 0.076}
            out[str(b)] = {"device_kind": "CD", "params": p}
        else:
            p = {"tau1": 0.8, "tau2": jitter(1.6), "D1": jitter(0.37), "D2": jitter(0.37),
                 "K_wv": 0.078, "K_vtheta": 0.078}
            out[str(b)] = {"device_kind": "QD", "params": p}
    return out


def main():
    dump_case(lossless_case(), DATA_DIR / "three_bus_lossless.json")
    dump_case(tight_case(), DATA_DIR / "three_bus_tight.json")
    b = tuned_shunt()
    cp = replace(case_p(b), name="three_bus",
                 note="synthesized lossy three-bus case at the Case-P passivity indices; "
                      "bus shunts tuned for a network index of -2.6769")
    dump_case(cp, DATA_DIR / "three_bus.json")
    cq = case_p(b, cross=True, levels=((2.15, 2.68), (2.68, 2.68), (2.15, 2.68)))
    # with this network the coupling only helps for a negative angle-to-voltage gain
    cq = replace(cq, devices={k: replace(v, params=replace(v.params, K_vtheta=-v.params.K_vtheta))
                              for k, v in cq.devices.items()})
    cq = replace(cq, name="three_bus_cross",
                 note="synthesized lossy three-bus case with cross-loop control at the "
                      "Case-Q diagonal levels")
    dump_case(cq, DATA_DIR / "three_bus_cross.json")
    weak = replace(weak_case(b), name="three_bus_weak",
                   note="Case-P variant with voltage-channel levels below the network shortage")
    dump_case(weak, DATA_DIR / "three_bus_weak.json")
    (DATA_DIR / "case118_devices.json").write_text(
        json.dumps(case118_assignment(), indent=2) + "\n", encoding="utf-8")
    for name in ("three_bus_lossless", "three_bus_tight", "three_bus", "three_bus_cross", "three_bus_weak"):
        load_case(DATA_DIR / f"{name}.json")


if __name__ == "__main__":
    main()
