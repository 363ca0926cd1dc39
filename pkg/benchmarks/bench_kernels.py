"""Compare the numba and numpy paths of the per-cell kernels.

Run with ``python3 benchmarks/bench_kernels.py [--nx 8] [--k 2] [--repeat 5]``.
Kernel inputs are taken from a real slab so the shapes match production use.
"""

import argparse
import time

import numpy as np

from sthdg import _accel, kernels
from sthdg.dofs import build_layout
from sthdg.forms import ConvectionField, local_t, prepare
from sthdg.linear_system import assemble, condense_system, facet_pattern
from sthdg.mesh import SinusoidalMotion, extrude_slab, move_mesh, triangulate_unit_square


def best_of(fn, repeat):
    fn()  # warm-up (includes JIT compilation)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def with_mode(use_numba, fn):
    saved = _accel.USE_NUMBA
    _accel.USE_NUMBA = use_numba and _accel.NUMBA_AVAILABLE
    try:
        return fn()
    finally:
        _accel.USE_NUMBA = saved


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--nx", type=int, default=8)
    parser.add_argument("--k", type=int, default=2)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    ref = triangulate_unit_square(args.nx)
    motion = SinusoidalMotion()
    slab = extrude_slab(move_mesh(ref, motion, 0.0), move_mesh(ref, motion, 0.05), 0.0, 0.05)
    ev = prepare(slab, args.k)
    layout = build_layout(slab, args.k)
    rng = np.random.default_rng(0)
    conv = ConvectionField(rng.normal(size=(layout.n_cells, 2, layout.n_u)),
                           rng.normal(size=(len(layout.q_facets), 2, layout.n_f)), layout.q_index)
    system = assemble(ev, layout, 1e-3, 6.0 * args.k ** 2, conv=conv)
    blk = max(system.blocks, key=lambda b: len(b.cells))
    grp = max(ev.groups, key=lambda g: g.size)
    w2 = grp.fw[:, 0]
    a = grp.fphi[:, 0]
    W = rng.normal(size=(len(blk.cells), blk.B.shape[2]))
    pattern = facet_pattern(system.blocks, layout.n_Wbar)
    pos = np.concatenate([p.ravel() for p in pattern.positions])
    vals = rng.normal(size=pos.size)

    def slab_condense():
        s = assemble(ev, layout, 1e-3, 6.0 * args.k ** 2, conv=conv)
        s.pattern = pattern
        return condense_system(s)

    cases = {
        "weighted_gram": lambda: kernels.weighted_gram(w2, a, a),
        "condense": lambda: kernels.condense(blk.A, blk.B, blk.C, blk.D, blk.F, blk.Fbar),
        "back_substitute": lambda: kernels.back_substitute(*kernels.condense(
            blk.A, blk.B, blk.C, blk.D, blk.F, blk.Fbar)[:2], W),
        "scatter into facet matrix": lambda: kernels.scatter_add(pattern.nnz, pos, vals),
        "convective form (batch)": lambda: local_t(grp, conv),
        "assemble + condense (slab)": slab_condense,
    }

    print(f"nx={args.nx} k={args.k} cells={slab.n_cells} numba available={_accel.NUMBA_AVAILABLE}")
    print(f"{'kernel':<30}{'numpy [ms]':>12}{'numba [ms]':>12}{'speed-up':>10}")
    for name, fn in cases.items():
        t_np = with_mode(False, lambda: best_of(fn, args.repeat))
        t_nb = with_mode(True, lambda: best_of(fn, args.repeat))
        print(f"{name:<30}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.2f}")

    ref_out = with_mode(False, cases["condense"])
    nb_out = with_mode(True, cases["condense"])
    diff = max(float(np.abs(x - y).max()) for x, y in zip(ref_out[:4], nb_out[:4]))
    print(f"max |numba - numpy| in condensation outputs: {diff:.2e}")


if __name__ == "__main__":
    main()
