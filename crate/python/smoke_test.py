#!/usr/bin/env python3
"""Smoke test for the hflsim_py extension module.

Builds the cdylib with cargo, stages it as an importable module, and runs a
small end-to-end check: instance generation, JSON round trip, the formation
dynamics under every preference rule, and the two solvers.
"""

import json
import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

REPO = pathlib.Path(__file__).resolve().parents[1]


def build_and_import():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "hflsim-python"],
        cwd=REPO,
        check=True,
    )
    lib = REPO / "target" / "release" / "libhflsim_py.so"
    if not lib.exists():  # e.g. macOS
        lib = REPO / "target" / "release" / "libhflsim_py.dylib"
    stage = pathlib.Path(tempfile.mkdtemp(prefix="hflsim_py_"))
    shutil.copy2(lib, stage / "hflsim_py.so")
    sys.path.insert(0, str(stage))
    import hflsim_py

    return hflsim_py


def main():
    m = build_and_import()
    checks = 0

    def check(name, ok):
        nonlocal checks
        checks += 1
        print(f"[{'pass' if ok else 'FAIL'}] {name}")
        if not ok:
            sys.exit(1)

    inst = m.Instance.generate(seed=7, devices=12, edges=4)
    check("instance shape", inst.n_devices == 12 and inst.n_edges == 4)

    doc = json.loads(inst.to_json())
    check("instance json has the expected sections",
          {"config", "devices", "edges", "channel", "econ", "pricing"} <= set(doc))
    back = m.Instance.from_json(inst.to_json())
    check("json round trip preserves the digest", back.digest() == inst.digest())
    check("same seed reproduces the instance",
          m.Instance.generate(seed=7, devices=12, edges=4).digest() == inst.digest())

    results = {}
    for rule in ["selfish", "pareto", "altruistic", "bandwidth-only"]:
        r = m.run_formation(inst, rule, seed=3)
        results[rule] = r
        check(f"{rule}: converged", r.converged)
        check(f"{rule}: assignment covers every device", len(r.assignment) == 12)
        check(f"{rule}: bandwidth within the budget",
              all(b >= 0 for b in r.bandwidth) and sum(r.bandwidth) <= 5e6 * (1 + 1e-12))
        recomputed = m.total_utility(inst, r.assignment, r.bandwidth, r.agg_counts)
        check(f"{rule}: reported utility recomputes",
              math.isclose(recomputed, r.total_utility, rel_tol=1e-9, abs_tol=1e-9))

    alt = results["altruistic"]
    psi = [v for _, v in alt.potential_trajectory]
    check("altruistic potential strictly increases",
          all(b > a for a, b in zip(psi, psi[1:])))

    bw = m.solve_bandwidth(inst, alt.assignment, alt.agg_counts)
    check("solver bandwidth feasible",
          all(b >= 0 for b in bw) and sum(bw) <= 5e6 * (1 + 1e-12))

    rewards, counts, cloud = m.solve_pricing(inst, alt.assignment, bw)
    check("pricing returns a count for every populated edge",
          all(counts[e] is not None for e in set(alt.assignment)))
    check("rewards are nonnegative", all(c >= 0 for c in rewards))
    check("cloud utility is finite", math.isfinite(cloud))

    # Per-device utilities decompose the coalition-level total.
    total = m.total_utility(inst, alt.assignment, alt.bandwidth, alt.agg_counts)
    summed = sum(
        m.device_utility(inst, dev, alt.assignment, alt.bandwidth, alt.agg_counts)
        for dev in range(12)
    )
    check("device utilities sum to the total", math.isclose(summed, total, rel_tol=1e-9))

    print(f"ok: {checks} checks passed")


if __name__ == "__main__":
    main()
