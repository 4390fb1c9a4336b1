"""Command-line driver: forward runs, reconstructions, parameter sweeps.

All experiment input comes from a JSON config document (see DEFAULTS for
the full key set and built-in values).  Every run writes its outputs
plus a manifest.json capturing the resolved configuration and content
hashes, so a rerun with the same config on the same build reproduces the
files byte for byte.

Exit codes: 0 success, 2 config error, 3 solver/mesh/quadrature error,
4 reconstruction failure.
"""

import argparse
import copy
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    MeshError,
    QuadratureError,
    ReconstructionError,
    SolverError,
)
from .forward import add_noise, boundary_restrict, solve_background, solve_subdiffusion
from .fracmath import TimeGrid
from .greenfn import fit_green_coeffs
from .locate_one import default_segments, locate_one_inclusion
from .locate_multi import (
    build_data_matrix,
    peak_extract,
    scan_indicator,
    select_truncation,
    source_configuration,
)
from .measure import (
    KernelProbe,
    OracleKernelProbe,
    measurement_boundary,
    measurement_interior,
)
from .mesh import Inclusion, InclusionSet, build_mesh

CONFIG_VERSION = 1

DEFAULTS = {
    "config_version": CONFIG_VERSION,
    "alpha": 0.5,
    "t_final": 1.0,
    "gamma0": 1.0,
    "time_steps": 128,
    "series_terms": 3,
    "mesh": {"h_far": 0.15, "h_near": None},
    "inclusions": [],
    "background": {"direction": [1.0, 0.0]},
    "noise": {"sigma": 0.0, "seed": 0},
    "probe": {"tol": 1e-4, "distance": 2.0, "source_angle": 40.0, "kind": None},
    "sources": {"kind": "full", "n": None, "radius": 2.0},
    "scan": {
        "region": [-0.7, 0.7, -0.7, 0.7],
        "resolution": 101,
        "tau": 1e-3,
        "k": None,
        "peaks": 1,
        "min_separation": 0.1,
    },
    "sweep": {"parameter": "eps", "values": [], "algorithm": "one"},
    "output_dir": "fracloc-out",
}


def _merge_section(name, base, override):
    merged = dict(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {name}.{key}")
        merged[key] = val
    return merged


def load_config(path):
    """Read a JSON config, check its version, fill in defaults."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a JSON object")
    version = raw.get("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(
            f"config version {version} not supported (expected {CONFIG_VERSION})"
        )
    cfg = copy.deepcopy(DEFAULTS)
    for key, val in raw.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key}")
        if isinstance(DEFAULTS[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {key} must be an object")
            cfg[key] = _merge_section(key, DEFAULTS[key], val)
        else:
            cfg[key] = val
    return cfg


def _inclusion_set(cfg):
    items = []
    for spec in cfg["inclusions"]:
        aspect = float(spec.get("aspect", 1.0))
        items.append(
            Inclusion(
                center=tuple(spec["center"]),
                eps=float(spec["eps"]),
                gamma=float(spec["gamma"]),
                shape="disk" if aspect == 1.0 else "ellipse",
                aspect=aspect,
            )
        )
    return InclusionSet(items=tuple(items), gamma0=float(cfg["gamma0"]))


def _build_setting(cfg):
    incs = _inclusion_set(cfg)
    h_far = float(cfg["mesh"]["h_far"])
    h_near = cfg["mesh"]["h_near"]
    if h_near is None:
        h_near = min((i.eps for i in incs.items), default=h_far * 4.0) / 4.0
        h_near = min(h_near, h_far)
    mesh = build_mesh(incs, h_far, float(h_near))
    grid = TimeGrid(int(cfg["time_steps"]), float(cfg["t_final"]))
    coeffs = fit_green_coeffs(float(cfg["alpha"]))
    return incs, mesh, grid, coeffs


def _linear_pair(cfg, incs, mesh, grid, direction, noise_seed=None):
    """Perturbed and background traces for a linear background b.x."""
    a = np.asarray(direction, dtype=float)
    alpha = float(cfg["alpha"])
    gamma0 = float(cfg["gamma0"])

    def u0(p):
        return p @ a

    def g(p, t, nrm):
        return gamma0 * (nrm @ a)

    U = solve_background(mesh, alpha, None, u0, g, grid)
    if not incs.items:
        return None, U
    u = solve_subdiffusion(mesh, alpha, incs, None, u0, g, grid)
    tr = boundary_restrict(u)
    sigma = float(cfg["noise"]["sigma"])
    if sigma > 0.0:
        tr = add_noise(tr, sigma, noise_seed)
    return tr, U


def _write_csv(path, header, rows):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{float(v):.17g}" for v in row) + "\n")


def _write_manifest(out_dir, command, cfg, files):
    hashes = {}
    for name in files:
        digest = hashlib.sha256((out_dir / name).read_bytes()).hexdigest()
        hashes[name] = digest
    manifest = {
        "command": command,
        "fracloc_version": __version__,
        "config": cfg,
        "outputs": hashes,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_forward(cfg, out_dir, jobs=1):
    incs, mesh, grid, _ = _build_setting(cfg)
    tr_u, U = _linear_pair(
        cfg, incs, mesh, grid, cfg["background"]["direction"],
        noise_seed=int(cfg["noise"]["seed"]),
    )
    files = ["mesh.txt", "background_trace.csv", "background_field.csv"]
    mesh.save(out_dir / "mesh.txt")
    boundary_restrict(U).to_csv(out_dir / "background_trace.csv")
    U.to_csv(out_dir / "background_field.csv")
    if tr_u is not None:
        tr_u.to_csv(out_dir / "solution_trace.csv")
        files.append("solution_trace.csv")
    return files


def _locate_one_run(cfg, incs, mesh, grid, coeffs):
    children = np.random.SeedSequence(int(cfg["noise"]["seed"])).spawn(2)
    diffs = []
    for child, direction in zip(children, ([1.0, 0.0], [0.0, 1.0])):
        tr, U = _linear_pair(cfg, incs, mesh, grid, direction, noise_seed=child)
        if tr is None:
            raise ConfigError("locate-one needs at least one inclusion in the config")
        diffs.append(tr.diff(boundary_restrict(U)))
    segments = default_segments(distance=float(cfg["probe"]["distance"]))
    return locate_one_inclusion(
        diffs,
        coeffs,
        segments=segments,
        n_terms=int(cfg["series_terms"]),
        tol=float(cfg["probe"]["tol"]),
        gamma0=float(cfg["gamma0"]),
    )


def _center_error(rec_point, incs):
    if len(incs.items) != 1:
        return float("nan")
    return float(np.linalg.norm(rec_point - np.array(incs.items[0].center)))


def cmd_locate_one(cfg, out_dir, jobs=1):
    incs, mesh, grid, coeffs = _build_setting(cfg)
    rec = _locate_one_run(cfg, incs, mesh, grid, coeffs)
    err = _center_error(rec.P, incs)
    _write_csv(
        out_dir / "reconstruction.csv",
        "Px,Py,P1x,P1y,P2x,P2y,rho0,err",
        [list(rec.P) + list(rec.P1) + list(rec.P2) + [rec.rho0, err]],
    )
    return ["reconstruction.csv"]


def _locate_multi_run(cfg, incs, mesh, grid, coeffs, jobs):
    src_cfg = cfg["sources"]
    sources = source_configuration(
        src_cfg["kind"],
        n=src_cfg["n"],
        radius=float(src_cfg["radius"]),
    )
    data = build_data_matrix(
        sources,
        incs,
        float(cfg["alpha"]),
        coeffs,
        mesh,
        grid,
        n_terms=int(cfg["series_terms"]),
        gamma0=float(cfg["gamma0"]),
        sigma=float(cfg["noise"]["sigma"]),
        seed=int(cfg["noise"]["seed"]),
    )
    scan_cfg = cfg["scan"]
    k = scan_cfg["k"]
    if k is None:
        k = select_truncation(data.singular_values, float(scan_cfg["tau"]))
    igrid = scan_indicator(
        data,
        sources,
        float(cfg["alpha"]),
        coeffs,
        region=tuple(scan_cfg["region"]),
        resolution=int(scan_cfg["resolution"]),
        k=int(k),
        n_terms=int(cfg["series_terms"]),
        t_final=float(cfg["t_final"]),
        gamma0=float(cfg["gamma0"]),
        jobs=jobs,
    )
    peaks = peak_extract(
        igrid, int(scan_cfg["peaks"]), min_separation=float(scan_cfg["min_separation"])
    )
    return sources, data, igrid, peaks


def _nearest_center(p, incs):
    if not incs.items:
        return float("nan")
    return min(np.linalg.norm(p - np.array(i.center)) for i in incs.items)


def cmd_locate_multi(cfg, out_dir, jobs=1):
    incs, mesh, grid, coeffs = _build_setting(cfg)
    sources, data, igrid, peaks = _locate_multi_run(cfg, incs, mesh, grid, coeffs, jobs)
    np.savetxt(out_dir / "data_matrix.csv", data.B, delimiter=",", fmt="%.17g")
    _write_csv(
        out_dir / "singular_values.csv",
        "index,value",
        [(j + 1, s) for j, s in enumerate(data.singular_values)],
    )
    igrid.to_csv(out_dir / "w_grid.csv")
    _write_csv(
        out_dir / "peaks.csv",
        "x,y,err",
        [[p[0], p[1], _nearest_center(p, incs)] for p in peaks],
    )
    return ["data_matrix.csv", "singular_values.csv", "w_grid.csv", "peaks.csv"]


def cmd_oracle_check(cfg, out_dir, jobs=1):
    """Boundary vs interior route for the measurement functional.

    Always runs on noiseless traces; the two routes evaluate the same
    continuum quantity, so their relative difference reports the
    discretization quality of the pipeline.
    """
    incs, mesh, grid, coeffs = _build_setting(cfg)
    if not incs.items:
        raise ConfigError("oracle-check needs at least one inclusion in the config")
    alpha = float(cfg["alpha"])
    gamma0 = float(cfg["gamma0"])
    angle = np.deg2rad(float(cfg["probe"]["source_angle"]))
    radius = float(cfg["probe"]["distance"])
    src = (radius * np.cos(angle), radius * np.sin(angle))
    kind = cfg["probe"]["kind"]
    if kind is None:
        kind = "exact" if alpha == 0.5 else "series"
    if kind == "exact":
        probe = OracleKernelProbe(
            d=2, alpha=alpha, source=src, t_final=grid.t_final, gamma0=gamma0
        )
    elif kind == "series":
        probe = KernelProbe(
            coeffs=coeffs,
            d=2,
            n_terms=int(cfg["series_terms"]),
            source=src,
            t_final=grid.t_final,
            gamma0=gamma0,
        )
    else:
        raise ConfigError(f"probe kind must be 'exact' or 'series', got {kind!r}")
    rows = []
    for label, direction in (("U1", [1.0, 0.0]), ("U2", [0.0, 1.0])):
        a = np.asarray(direction, dtype=float)

        def u0(p, a=a):
            return p @ a

        def g(p, t, nrm, a=a):
            return gamma0 * (nrm @ a)

        u = solve_subdiffusion(mesh, alpha, incs, None, u0, g, grid)
        U = solve_background(mesh, alpha, None, u0, g, grid)
        diff = boundary_restrict(u).diff(boundary_restrict(U))
        via_boundary = measurement_boundary(diff, probe.normal_derivative, gamma0).value
        via_interior = measurement_interior(u, probe.gradient, incs).value
        denom = max(abs(via_boundary), abs(via_interior))
        rel = abs(via_boundary - via_interior) / denom if denom > 0 else 0.0
        rows.append((label, via_boundary, via_interior, rel))
    with open(out_dir / "equivalence.csv", "w", encoding="ascii") as fh:
        fh.write("background,boundary,interior,rel_diff\n")
        for label, b, i, r in rows:
            fh.write(f"{label},{b:.17g},{i:.17g},{r:.17g}\n")
    return ["equivalence.csv"]


def _apply_sweep_value(cfg, parameter, value):
    swept = copy.deepcopy(cfg)
    if parameter == "eps":
        for spec in swept["inclusions"]:
            spec["eps"] = float(value)
        swept["mesh"]["h_near"] = None
    elif parameter == "sigma":
        swept["noise"]["sigma"] = float(value)
    elif parameter == "aspect":
        for spec in swept["inclusions"]:
            spec["aspect"] = float(value)
    else:
        raise ConfigError(
            f"sweep parameter must be eps, sigma or aspect, got {parameter!r}"
        )
    return swept


def cmd_sweep(cfg, out_dir, jobs=1):
    sweep = cfg["sweep"]
    values = sweep["values"]
    if not values:
        raise ConfigError("sweep.values is empty")
    algorithm = sweep["algorithm"]
    if algorithm not in ("one", "multi"):
        raise ConfigError(f"sweep.algorithm must be 'one' or 'multi', got {algorithm!r}")
    rows = []
    for value in values:
        swept = _apply_sweep_value(cfg, sweep["parameter"], value)
        incs, mesh, grid, coeffs = _build_setting(swept)
        if algorithm == "one":
            rec = _locate_one_run(swept, incs, mesh, grid, coeffs)
            rows.append((value, _center_error(rec.P, incs), rec.rho0))
        else:
            _, _, _, peaks = _locate_multi_run(swept, incs, mesh, grid, coeffs, jobs)
            worst = max(_nearest_center(p, incs) for p in peaks)
            rows.append((value, worst, float(len(peaks))))
    header = (
        "value,err,rho0" if algorithm == "one" else "value,max_err,peaks_found"
    )
    _write_csv(out_dir / "sweep.csv", header, rows)
    return ["sweep.csv"]


COMMANDS = {
    "forward": cmd_forward,
    "locate-one": cmd_locate_one,
    "locate-multi": cmd_locate_multi,
    "oracle-check": cmd_oracle_check,
    "sweep": cmd_sweep,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fracloc",
        description="Locate small conductivity inclusions in a subdiffusion model.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to a JSON config")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--seed", type=int, default=None, help="noise seed override")
    parser.add_argument("--jobs", type=int, default=1, help="worker pool width")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["noise"]["seed"] = args.seed
        if args.out is not None:
            cfg["output_dir"] = args.out
        if args.jobs < 1:
            raise ConfigError(f"--jobs must be at least 1, got {args.jobs}")
        out_dir = Path(cfg["output_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](cfg, out_dir, jobs=args.jobs)
        _write_manifest(out_dir, args.command, cfg, files)
    except ConfigError as exc:
        print(f"fracloc: config error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, MeshError, QuadratureError) as exc:
        print(f"fracloc: solver error: {exc}", file=sys.stderr)
        return 3
    except ReconstructionError as exc:
        print(f"fracloc: reconstruction failed: {exc}", file=sys.stderr)
        return 4
    for name in files + ["manifest.json"]:
        print(out_dir / name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
