"""Assembly-kernel benchmark: numba backend vs. pure-numpy fallback.

The backend is chosen at import time from PHASEFRAC_PURE_NUMPY, so each
side runs in its own subprocess with the flag set accordingly.
"""

from __future__ import annotations

import json
import os
import subprocess
import sys


def child(refines: int, repeats: int) -> None:
    """Time residual and system assembly in the current backend."""
    import time

    import numpy as np

    from .fem import build_dof_map
    from .kernels import NUMBA_ENABLED
    from .material import Assembler, MaterialParams
    from .mesh import build_rectangle_mesh

    mesh = build_rectangle_mesh(
        (-10.0, -10.0), (20.0, 20.0), (10, 10), global_refines=refines
    )
    dofmap = build_dof_map(mesh)
    params = MaterialParams(
        mu=0.42, lam=0.28, gc=1.0, eps=2.0 * mesh.h_min, kappa=1.0e-10,
        pressure=1.0e-3, split="spectral",
    )
    asm = Assembler(mesh, dofmap, params)
    rng = np.random.default_rng(0)
    state = 1.0e-3 * rng.standard_normal(dofmap.n_dofs)
    phi_lin = np.clip(rng.random(dofmap.n_nodes), 0.0, 1.0)

    asm.residual(state, phi_lin)  # warm-up (jit compile)
    asm.system(state, phi_lin)

    t0 = time.perf_counter()
    for _ in range(repeats):
        asm.residual(state, phi_lin)
    t_res = (time.perf_counter() - t0) / repeats

    t0 = time.perf_counter()
    for _ in range(repeats):
        asm.system(state, phi_lin)
    t_sys = (time.perf_counter() - t0) / repeats

    print(json.dumps({
        "backend": "numba" if NUMBA_ENABLED else "numpy",
        "cells": mesh.n_cells,
        "residual_s": t_res,
        "system_s": t_sys,
    }))


def _run_child(pure_numpy: bool, refines: int, repeats: int) -> dict:
    env = dict(os.environ)
    env["PHASEFRAC_PURE_NUMPY"] = "1" if pure_numpy else "0"
    code = (
        "from phasefrac.bench import child; "
        f"child({refines}, {repeats})"
    )
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True,
        check=True,
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def run_benchmark(refines: int = 4, repeats: int = 3) -> dict:
    """Run both backends on the same mesh and print a small table."""
    results = {}
    for pure in (False, True):
        r = _run_child(pure, refines, repeats)
        results[r["backend"]] = r
    cells = results["numpy"]["cells"]
    print(f"assembly benchmark: {cells} cells, {repeats} repeats")
    print(f"{'backend':<8} {'residual [ms]':>14} {'system [ms]':>14}")
    for name in ("numba", "numpy"):
        r = results[name]
        print(
            f"{name:<8} {1e3 * r['residual_s']:>14.2f} "
            f"{1e3 * r['system_s']:>14.2f}"
        )
    if results["numba"]["backend"] == "numba":
        speed = results["numpy"]["system_s"] / results["numba"]["system_s"]
        print(f"numba speedup on system assembly: {speed:.1f}x")
    return results
