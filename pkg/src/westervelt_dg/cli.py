"""``solver mesh|run|convergence|qoi --config <path>``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
Set ``WESTERVELT_DG_THREADS`` to cap the BLAS/OpenMP thread count; it must be
read before numpy is imported, so heavy imports happen inside :func:`main`.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

THREAD_ENV = "WESTERVELT_DG_THREADS"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class ConfigError(ValueError):
    pass


_NUM = {"type": "number"}
_INT = {"type": "integer"}

MESH_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "generator": {"enum": ["hex", "voronoi", "file"]},
        "size": {"type": "integer", "minimum": 1},
        "levels": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "lloyd_iters": {"type": "integer", "minimum": 0},
        "rng_seed": _INT,
        "path": {"type": "string"},
    },
}

INTEGRATOR_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "scheme": {"enum": ["newmark", "generalized_alpha"]},
        "beta_nm": _NUM,
        "gamma_nm": _NUM,
        "alpha_m": _NUM,
        "alpha_f": _NUM,
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "dt_levels": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "T": {"type": "number", "exclusiveMinimum": 0},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "kappa_max": {"type": "integer", "minimum": 1},
        "cg_tol": {"type": "number", "exclusiveMinimum": 0},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario"],
    "properties": {
        "scenario": {"enum": ["test_case_1", "test_case_2", "piecewise_material"]},
        "overrides": {"type": "object", "additionalProperties": {"type": "number"}},
        "mesh": MESH_SCHEMA,
        "p": {"type": "integer", "minimum": 0},
        "penalty": {"type": "number", "exclusiveMinimum": 0},
        "integrator": INTEGRATOR_SCHEMA,
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "energy": {"type": "boolean"},
                "step_reports": {"type": "boolean"},
                "energy_norm": {"type": "boolean"},
                "snapshots": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "stride": {"type": "integer", "minimum": 1},
                        "fields": {"type": "array", "items": {"enum": ["psi", "psidot", "pressure"]}},
                        "subgrid": {"type": "integer", "minimum": 1},
                    },
                },
            },
        },
        "qoi": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "h_levels": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "h_p": {"type": "integer", "minimum": 0},
                "p_list": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "p_mesh": {"type": "integer", "minimum": 1},
            },
        },
        "parallel_levels": {"type": "boolean"},
    },
}


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    import jsonschema

    v = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(v.iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.path) or "<root>"
        raise ConfigError(f"config error at {where}: {e.message}")


# ---------------------------------------------------------------------------


def _scenario(cfg):
    import inspect

    from .scenarios import SCENARIOS

    factory = SCENARIOS[cfg["scenario"]]
    over = cfg.get("overrides", {})
    allowed = set(inspect.signature(factory).parameters)
    for key in over:
        if key not in allowed:
            raise ConfigError(f"config error at overrides/{key}: not a parameter of {cfg['scenario']}")
    try:
        return factory(**over)
    except ValueError as exc:
        raise ConfigError(f"config error at overrides: {exc}") from exc


def _mesh_specs(cfg, n_levels=None):
    from .studies import MeshSpec

    m = cfg.get("mesh", {})
    gen = m.get("generator", "hex")
    sizes = m.get("levels") or [m.get("size", 16)]
    if n_levels is not None:
        if n_levels < 1 or n_levels > len(sizes):
            raise ConfigError(f"--levels {n_levels} outside 1..{len(sizes)}")
        sizes = sizes[:n_levels]
    return [
        MeshSpec(gen, s, m.get("lloyd_iters", 3), m.get("rng_seed", 0), m.get("path")) for s in sizes
    ]


def _integrator(cfg, scenario, mesh, p, level_index=0):
    from .studies import default_dt
    from .time_integration import IntegratorConfig

    block = dict(scenario.integrator)
    user = dict(cfg.get("integrator", {}))
    dts = user.pop("dt_levels", None)
    block.update(user)
    if dts is not None:
        if level_index >= len(dts):
            raise ConfigError("integrator/dt_levels shorter than the level list")
        block["dt"] = dts[level_index]
    block.setdefault("dt", default_dt(scenario, mesh, p))
    block.setdefault("T", scenario.T)
    try:
        return IntegratorConfig(**block)
    except ValueError as exc:
        raise ConfigError(f"config error at integrator: {exc}") from exc


def _p(cfg, args):
    return args.p if args.p is not None else cfg.get("p", 2)


# ---------------------------------------------------------------------------
# snapshots


def write_snapshot(path, mesh_file, space, name, coeffs, t):
    """Per-cell coefficient blocks in the modal basis of ``space``."""
    import numpy as np

    c = np.asarray(coeffs).reshape(space.n_cells, space.n_loc)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"snapshot 1\nmesh {mesh_file}\nfield {name}\nt {t:.17g}\n")
        fh.write(f"p {space.p}\ncells {space.n_cells} {space.n_loc}\n")
        for row in c:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def write_sampled_snapshot(path, space, name, coeffs, t, subgrid=2):
    """``x y value`` samples on a barycentric lattice of each sub-triangle."""
    import numpy as np

    lat = [(i / subgrid, j / subgrid) for i in range(subgrid + 1) for j in range(subgrid + 1 - i)]
    lat = np.array(lat)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# field {name} t {t:.17g}\nx,y,cell,value\n")
        for cell, tris in enumerate(space.mesh.sub_triangles):
            a, b, d = tris[:, 0], tris[:, 1], tris[:, 2]
            pts = a[:, None] + lat[None, :, :1] * (b - a)[:, None] + lat[None, :, 1:] * (d - a)[:, None]
            pts = pts.reshape(-1, 2)
            vals = space.evaluate_field(coeffs, np.full(len(pts), cell), pts)
            for (x, y), v in zip(pts, vals):
                fh.write(f"{x:.15e},{y:.15e},{cell},{v:.15e}\n")


class SnapshotRecorder:
    def __init__(self, out, mesh_file, space, mat, fields=("psi",), stride=100, subgrid=None):
        self.out, self.mesh_file, self.space, self.mat = out, mesh_file, space, mat
        self.fields, self.stride, self.subgrid = tuple(fields), stride, subgrid
        self.written = []

    def __call__(self, state, report):
        from .scenarios import pressure_field

        if state.step % self.stride:
            return
        for name in self.fields:
            if name == "psi":
                c = state.psi
            elif name == "psidot":
                c = state.psidot
            else:
                c = pressure_field(state.psidot, self.space, self.mat)
            path = os.path.join(self.out, f"snapshot_{name}_{state.step:07d}.txt")
            write_snapshot(path, self.mesh_file, self.space, name, c, state.t)
            if self.subgrid:
                write_sampled_snapshot(path.replace(".txt", "_sampled.csv"), self.space, name, c, state.t, self.subgrid)
            self.written.append(path)


# ---------------------------------------------------------------------------
# commands


def cmd_mesh(cfg, args):
    from .mesh import mesh_quality, write_mesh
    from .studies import build_mesh

    sc = _scenario(cfg)
    rows = []
    for i, spec in enumerate(_mesh_specs(cfg, args.levels)):
        mesh = build_mesh(spec, sc)
        path = os.path.join(args.out, f"mesh_level{i}.txt")
        write_mesh(mesh, path)
        q = mesh_quality(mesh)
        rows.append((i, mesh.n_cells, q))
        print(f"level {i}: {mesh.n_cells} cells, h_max {q.h_max:.6g} -> {path}")
    with open(os.path.join(args.out, "mesh_quality.csv"), "w", encoding="utf-8") as fh:
        fh.write("level,n_cells,h_max,h_min,h_ratio,min_area_ratio,max_vertices,flagged_cells\n")
        for i, n_cells, q in rows:
            fh.write(
                f"{i},{n_cells},{q.h_max:.15e},{q.h_min:.15e},{q.h_ratio:.15e},{float(q.area_ratio.min()):.15e},"
                f"{q.max_vertices},{len(q.flagged_cells)}\n"
            )
    return EXIT_OK


def _run_one(cfg, args, spec, level_index, write_outputs=True):
    from .analysis import write_energy_csv
    from .mesh import write_mesh
    from .studies import build_mesh, run_level, setup_level
    from .time_integration import write_step_reports

    sc = _scenario(cfg)
    p = _p(cfg, args)
    mesh = build_mesh(spec, sc)
    level = setup_level(sc, mesh, p, cfg.get("penalty"))
    icfg = _integrator(cfg, sc, mesh, p, level_index)
    outs = cfg.get("outputs", {})
    recs = []
    snap = outs.get("snapshots")
    if write_outputs and snap:
        mesh_file = os.path.join(args.out, "mesh.txt")
        write_mesh(mesh, mesh_file)
        recs.append(
            SnapshotRecorder(args.out, "mesh.txt", level.space, sc.material, snap.get("fields", ["psi"]), snap.get("stride", 100), snap.get("subgrid"))
        )
    res = run_level(
        level,
        icfg,
        energy=outs.get("energy", True),
        energy_norm=outs.get("energy_norm", sc.exact is not None),
        recorders=recs,
    )
    if write_outputs:
        if outs.get("step_reports", True):
            write_step_reports(res.run.reports, os.path.join(args.out, "steps.csv"))
        if res.energy is not None:
            write_energy_csv(res.energy, os.path.join(args.out, "energy.csv"))
    return res


def cmd_run(cfg, args):
    spec = _mesh_specs(cfg, args.levels)[-1]
    res = _run_one(cfg, args, spec, 0)
    e = res.errors
    print(f"steps {len(res.run.reports)}, max fixed-point iterations {res.run.max_fp_iters}, "
          f"max |2k psidot| {res.run.max_degeneracy:.3e}, wall {res.wall_time:.1f}s")
    if e is not None:
        with open(os.path.join(args.out, "errors.csv"), "w", encoding="utf-8") as fh:
            fh.write("t,l2_err,h1_err,jump_norm,psidot_l2_err,energy_err\n")
            en = "" if res.energy_norm_error is None else f"{res.energy_norm_error:.15e}"
            fh.write(f"{e.t:.15e},{e.l2_error:.15e},{e.h1_broken_error:.15e},{e.jump_norm:.15e},{e.psidot_l2_error:.15e},{en}\n")
        print(f"L2 error {e.l2_error:.6e}, broken H1 error {e.h1_broken_error:.6e}")
    return EXIT_OK


def _convergence_level(payload):
    cfg, args, spec, i = payload
    res = _run_one(cfg, args, spec, i, write_outputs=False)
    e = res.errors
    mesh = res.level.mesh
    return (i, mesh.n_cells, float(mesh.diameters.max()), e.l2_error, e.h1_broken_error, res.energy_norm_error)


def cmd_convergence(cfg, args):
    from .analysis import ConvergenceRow, ConvergenceTable, convergence_rates, write_convergence_csv

    sc = _scenario(cfg)
    if sc.exact is None:
        raise ConfigError("convergence needs a scenario with an exact solution (test_case_1)")
    specs = _mesh_specs(cfg, args.levels)
    payloads = [(cfg, args, s, i) for i, s in enumerate(specs)]
    if cfg.get("parallel_levels") and len(payloads) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor() as ex:
            out = list(ex.map(_convergence_level, payloads))
    else:
        out = [_convergence_level(pl) for pl in payloads]
    rows = [ConvergenceRow(i, n, h, l2, h1, en) for i, n, h, l2, h1, en in sorted(out)]
    table = convergence_rates(ConvergenceTable(rows))
    write_convergence_csv(table, os.path.join(args.out, "convergence.csv"))
    for r in table.rows:
        print(f"level {r.level}: n={r.n_elem} h={r.h_max:.4g} L2={r.l2_err:.4e} H1={r.h1_err:.4e} "
              f"rates {r.rate_l2 if r.rate_l2 is not None else '-'} {r.rate_h1 if r.rate_h1 is not None else '-'}")
    return EXIT_OK


def cmd_qoi(cfg, args):
    from .analysis import fit_qoi, write_qoi_csv
    from .studies import MeshSpec, build_mesh, qoi_sweep

    sc = _scenario(cfg)
    q = cfg.get("qoi", {})
    h_levels = q.get("h_levels", [])
    p_list = q.get("p_list", [])
    if not h_levels and not p_list:
        raise ConfigError("config error at qoi: empty sweep (give h_levels and/or p_list)")
    m = cfg.get("mesh", {})
    gen = m.get("generator", "hex")
    hp = q.get("h_p", _p(cfg, args))

    def mk(size):
        return build_mesh(MeshSpec(gen, size, m.get("lloyd_iters", 3), m.get("rng_seed", 0), m.get("path")), sc)

    cfg_p = _p(cfg, args)
    ref = None
    if h_levels:
        meshes = [mk(s) for s in h_levels]
        icfg = _integrator(cfg, sc, meshes[-1], hp)
        rows = qoi_sweep(sc, [(mm, hp) for mm in meshes], icfg, cfg.get("penalty"))
        write_qoi_csv([r[:3] for r in rows], os.path.join(args.out, "qoi_h.csv"))
        if len(rows) >= 3:
            fit = fit_qoi([(r[0], r[2]) for r in rows], hp)
            ref = fit.q1
            with open(os.path.join(args.out, "qoi_fit.csv"), "w", encoding="utf-8") as fh:
                fh.write("p,q1,q2,residual\n")
                fh.write(f"{hp},{fit.q1:.15e},{fit.q2:.15e},{fit.residual:.15e}\n")
            print(f"fit: Q(h) = {fit.q1:.10e} + {fit.q2:.10e} h^{hp + 1}")
        for r in rows:
            print(f"h={r[0]:.4g} n={r[1]} Q={r[2]:.10e}")
    if p_list:
        mesh = mk(q.get("p_mesh", m.get("size", 16)))
        icfg = _integrator(cfg, sc, mesh, max(p_list))
        rows = qoi_sweep(sc, [(mesh, p) for p in p_list], icfg, cfg.get("penalty"))
        with open(os.path.join(args.out, "qoi_p.csv"), "w", encoding="utf-8") as fh:
            fh.write("p,h,n_elem,Q,deviation\n")
            for h, n, Q, p in rows:
                dev = "" if ref is None else f"{abs(Q - ref):.15e}"
                fh.write(f"{p},{h:.15e},{n},{Q:.15e},{dev}\n")
        for h, n, Q, p in rows:
            print(f"p={p} Q={Q:.10e}" + ("" if ref is None else f" deviation {abs(Q - ref):.3e}"))
    return EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "run": cmd_run, "convergence": cmd_convergence, "qoi": cmd_qoi}


def build_parser():
    ap = argparse.ArgumentParser(prog="solver", description="DG solver for the Westervelt equation on polygonal meshes")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON study configuration")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--p", type=int, default=None, help="polynomial degree (overrides the config)")
    ap.add_argument("--levels", type=int, default=None, help="use only the first n mesh levels")
    return ap


def _apply_thread_env():
    n = os.environ.get(THREAD_ENV)
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = n


def main(argv=None) -> int:
    _apply_thread_env()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.p is not None and args.p < 0:
            raise ConfigError("--p must be non-negative")
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
