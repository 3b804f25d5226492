"""Manifest-driven command line harness.

A manifest is a JSON file naming a model, a graph, a protocol and its
threshold, a disturbance, and integration settings.  Running one produces
three artifacts in an output directory: design.json (every designed
constant, numerics echoed bit-exactly), trajectory.csv (the recorded run)
and summary.json (per-agent settling and gain-flatness verdicts).  The
bundled manifests under cohsync/manifests cover both protocols on the
fractal, circulant and disconnected benchmark networks.

Exit codes are a stable contract: 0 all checks passed, 1 a property
failed (including integration blow-up), 2 the configuration or the design
itself was rejected.
"""

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import verification
from .agents import AgentModel
from .collab import CollabDesign, design_collab
from .graphs import (
    DirectedWeightedGraph,
    format_edge_list,
    generate_circulant,
    generate_disconnected_composite,
    generate_vicsek_fractal,
    read_edge_list,
)
from .linalg import SolverError
from .noncollab import NoncollabDesign, design_noncollab
from .simulate import (
    DisturbanceSpec,
    SimConfig,
    gain_flatness,
    settling_metric,
    settling_report,
    simulate,
    write_trajectory_csv,
)

OUT_ROOT_ENV = "COHSYNC_OUT_ROOT"
SETTLING_WINDOW = 5.0
FLATNESS_FRACTION = 0.1
FLATNESS_TOL = 1e-2

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2

_PROTOCOLS = ("noncollaborative", "collaborative")
_TOP_KEYS = {
    "name",
    "protocol",
    "model",
    "graph",
    "disturbance",
    "delta",
    "d",
    "dt",
    "t_end",
    "seed",
    "record_stride",
    "rho0",
    "alpha0",
    "overrides",
    "out_dir",
}


@dataclass
class ExperimentManifest:
    """Parsed and validated experiment description."""

    name: str
    protocol: str
    model: AgentModel
    graph: DirectedWeightedGraph
    delta: float | None
    d: float | None
    disturbance: DisturbanceSpec
    dt: float
    t_end: float
    seed: int
    record_stride: int
    rho0: float
    alpha0: float
    overrides: dict
    out_dir: str | None
    raw: dict


def _matrix(data, key, context):
    try:
        M = np.array(data, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{context}: field '{key}' is not a numeric matrix: {exc}") from None
    if M.ndim != 2 or not np.all(np.isfinite(M)):
        raise ValueError(f"{context}: field '{key}' must be a finite 2-D matrix")
    return M


def _model_from_spec(spec, base_dir, context):
    if not isinstance(spec, dict):
        raise ValueError(f"{context}: 'model' must be an object")
    if "file" in spec:
        path = Path(base_dir) / str(spec["file"])
        if not path.is_file():
            raise ValueError(f"{context}: model file not found: {path}")
        with open(path) as fh:
            spec = json.load(fh)
    missing = [k for k in ("A", "B", "C") if k not in spec]
    if missing:
        raise ValueError(f"{context}: model is missing {missing}")
    E = _matrix(spec["E"], "E", context) if spec.get("E") is not None else None
    return AgentModel(
        _matrix(spec["A"], "A", context),
        _matrix(spec["B"], "B", context),
        _matrix(spec["C"], "C", context),
        E,
    )


def _graph_from_spec(spec, base_dir, context):
    if not isinstance(spec, dict):
        raise ValueError(f"{context}: 'graph' must be an object")
    if "edge_list" in spec:
        path = Path(base_dir) / str(spec["edge_list"])
        if not path.is_file():
            raise ValueError(f"{context}: edge list file not found: {path}")
        return read_edge_list(path.read_text())
    generator = spec.get("generator")
    if generator == "vicsek":
        return generate_vicsek_fractal(
            int(spec.get("generation", 1)), directed=bool(spec.get("directed", True))
        )
    if generator == "circulant":
        return generate_circulant(
            int(spec["n_nodes"]),
            offsets=tuple(spec.get("offsets", (1, 2))),
            directed=bool(spec.get("directed", True)),
        )
    if generator == "disconnected":
        return generate_disconnected_composite(
            component_sizes=tuple(spec.get("component_sizes", (8, 8, 8))),
            seed=int(spec.get("seed", 0)),
        )
    raise ValueError(
        f"{context}: graph needs 'edge_list' or a generator in "
        "{'vicsek', 'circulant', 'disconnected'}"
    )


def _disturbance_from_spec(spec, context):
    if spec is None:
        return DisturbanceSpec(kind="zero")
    if not isinstance(spec, dict):
        raise ValueError(f"{context}: 'disturbance' must be an object")
    kind = spec.get("kind", "zero")
    times = np.asarray(spec["times"], dtype=float) if "times" in spec else None
    values = np.asarray(spec["values"], dtype=float) if "values" in spec else None
    return DisturbanceSpec(kind=kind, width=int(spec.get("width", 1)), times=times, values=values)


def manifest_from_dict(data, base_dir=".") -> ExperimentManifest:
    if not isinstance(data, dict):
        raise ValueError("manifest must be a JSON object")
    name = str(data.get("name", "")).strip()
    context = f"manifest '{name}'" if name else "manifest"
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        raise ValueError(f"{context}: unknown fields {unknown}")
    if not name:
        raise ValueError("manifest: 'name' is required")
    protocol = data.get("protocol")
    if protocol not in _PROTOCOLS:
        raise ValueError(f"{context}: 'protocol' must be one of {_PROTOCOLS}")
    if "model" not in data or "graph" not in data:
        raise ValueError(f"{context}: 'model' and 'graph' are required")
    delta = None if data.get("delta") is None else float(data["delta"])
    d = None if data.get("d") is None else float(data["d"])
    if delta is None and d is None:
        raise ValueError(f"{context}: provide 'delta', 'd', or both")
    overrides_spec = data.get("overrides") or {}
    if overrides_spec and protocol != "noncollaborative":
        raise ValueError(f"{context}: 'overrides' apply to the noncollaborative design only")
    bad = sorted(set(overrides_spec) - {"S", "T", "H1"})
    if bad:
        raise ValueError(f"{context}: unknown override fields {bad}")
    overrides = {k: _matrix(v, k, context) for k, v in overrides_spec.items()}
    dt = float(data.get("dt", 1e-3))
    t_end = float(data.get("t_end", 30.0))
    rho0 = float(data.get("rho0", 0.0))
    alpha0 = float(data.get("alpha0", 0.0))
    if rho0 < 0.0 or alpha0 < 0.0:
        raise ValueError(f"{context}: initial gains must be nonnegative")
    if alpha0 != 0.0 and protocol != "collaborative":
        raise ValueError(f"{context}: 'alpha0' applies to the collaborative protocol only")
    return ExperimentManifest(
        name=name,
        protocol=protocol,
        model=_model_from_spec(data["model"], base_dir, context),
        graph=_graph_from_spec(data["graph"], base_dir, context),
        delta=delta,
        d=d,
        disturbance=_disturbance_from_spec(data.get("disturbance"), context),
        dt=dt,
        t_end=t_end,
        seed=int(data.get("seed", 0)),
        record_stride=int(data.get("record_stride", 1)),
        rho0=rho0,
        alpha0=alpha0,
        overrides=overrides,
        out_dir=data.get("out_dir"),
        raw=data,
    )


def load_manifest(path) -> ExperimentManifest:
    path = Path(path)
    with open(path) as fh:
        data = json.load(fh)
    return manifest_from_dict(data, base_dir=path.parent)


def bundled_manifest_names() -> list[str]:
    root = resources.files("cohsync").joinpath("manifests")
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def load_bundled_manifest(name: str) -> ExperimentManifest:
    entry = resources.files("cohsync").joinpath("manifests").joinpath(f"{name}.json")
    with resources.as_file(entry) as path:
        return load_manifest(path)


def _resolve_manifest(arg: str) -> ExperimentManifest:
    path = Path(arg)
    if path.is_file():
        return load_manifest(path)
    name = arg[: -len(".json")] if arg.endswith(".json") else arg
    if name in bundled_manifest_names():
        return load_bundled_manifest(name)
    raise ValueError(
        f"no manifest file '{arg}' and no bundled manifest of that name; "
        f"bundled: {', '.join(bundled_manifest_names())}"
    )


# ---------------------------------------------------------------------------
# experiment runner


def build_design(manifest: ExperimentManifest):
    if manifest.protocol == "noncollaborative":
        return design_noncollab(
            manifest.model,
            delta=manifest.delta,
            d_override=manifest.d,
            s_override=manifest.overrides.get("S"),
            t_override=manifest.overrides.get("T"),
            h1_override=manifest.overrides.get("H1"),
        )
    return design_collab(manifest.model, delta=manifest.delta, d_override=manifest.d)


def _listify(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def design_payload(manifest: ExperimentManifest, design) -> dict:
    payload = {
        "name": manifest.name,
        "protocol": manifest.protocol,
        "d": float(design.d),
        "delta": float(design.delta),
    }
    if isinstance(design, NoncollabDesign):
        payload.update(
            {
                "delta_1": float(design.delta_1),
                "delta_bar": float(design.delta_bar),
                "lambda_min_p": float(design.lambda_min_p),
                "cs_norm": float(design.cs_norm),
                "S": design.transform.S.tolist(),
                "T": design.transform.T.tolist(),
                "H1": design.H1.tolist(),
                "P": design.P.tolist(),
                "gain_row": design.gain_row.tolist(),
                "kernel": design.kernel.tolist(),
            }
        )
    else:
        payload.update(
            {
                "eta": float(design.eta),
                "epsilon": float(design.epsilon),
                "Q": design.Q.tolist(),
                "QCt": design.QCt.tolist(),
            }
        )
    payload["manifest"] = manifest.raw
    return payload


@dataclass
class ExperimentResult:
    passed: bool
    out_dir: Path
    summary: dict
    design_path: Path
    trajectory_path: Path
    summary_path: Path


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


def run_experiment(manifest: ExperimentManifest, out_dir) -> ExperimentResult:
    """Design, simulate, and judge one manifest; writes the three artifacts.

    Raises SolverError from the design phase (assumption or solver
    failures) before any artifact is written; a blow-up during integration
    leaves design.json in place, which is intentional: the design was fine,
    the run was not.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    design = build_design(manifest)
    design_path = out_dir / "design.json"
    _write_json(design_path, design_payload(manifest, design))

    run = simulate(
        SimConfig(
            model=manifest.model,
            graph=manifest.graph,
            design=design,
            disturbance=manifest.disturbance,
            dt=manifest.dt,
            t_end=manifest.t_end,
            seed=manifest.seed,
            record_stride=manifest.record_stride,
            initial_rho=manifest.rho0,
            initial_alpha=manifest.alpha0,
        )
    )
    trajectory_path = out_dir / "trajectory.csv"
    write_trajectory_csv(run, trajectory_path)

    threshold = 2.0 * float(design.d)
    times = settling_report(run, threshold, SETTLING_WINDOW)
    flat = gain_flatness(run, FLATNESS_FRACTION)
    metric = settling_metric(run)
    agents = []
    for i in range(run.n_agents):
        settled = times[i] is not None
        entry = {
            "agent": int(run.agent_indices[i]),
            "settling_time": times[i],
            "final_rho": float(run.rho[-1, i]),
            "rho_flatness": float(flat["rho"][i]),
        }
        flat_ok = flat["rho"][i] < FLATNESS_TOL
        if run.alpha is not None:
            entry["final_alpha"] = float(run.alpha[-1, i])
            entry["alpha_flatness"] = float(flat["alpha"][i])
            flat_ok = flat_ok and flat["alpha"][i] < FLATNESS_TOL
        window = run.times >= (times[i] if settled else run.times[0])
        entry["max_coherency_after_settling"] = float(np.max(run.coherency_norm[window, i]))
        entry["max_metric_after_settling"] = float(np.max(metric[window, i]))
        entry["pass"] = bool(settled and flat_ok)
        agents.append(entry)
    all_pass = all(a["pass"] for a in agents)
    summary = {
        "name": manifest.name,
        "protocol": manifest.protocol,
        "n_agents": run.n_agents,
        "d": float(design.d),
        "delta": float(design.delta),
        "settling_threshold": threshold,
        "trailing_window": SETTLING_WINDOW,
        "flatness_fraction": FLATNESS_FRACTION,
        "flatness_tolerance": FLATNESS_TOL,
        "samples": int(run.times.shape[0]),
        "warnings": list(run.warnings),
        "all_pass": all_pass,
        "agents": agents,
    }
    summary_path = out_dir / "summary.json"
    _write_json(summary_path, summary)
    return ExperimentResult(
        passed=all_pass,
        out_dir=out_dir,
        summary=summary,
        design_path=design_path,
        trajectory_path=trajectory_path,
        summary_path=summary_path,
    )


def _demo_collab_model() -> AgentModel:
    return load_bundled_manifest("col-vicsek-n5").model


def run_verification_suite(seed: int = 0, self_test: bool = False):
    """All theory checks plus solver oracle equivalences; returns (text, ok)."""
    text, ok, _ = verification.run_suite(
        seed=seed, demo_model=_demo_collab_model(), self_test=self_test
    )
    return text, ok


# ---------------------------------------------------------------------------
# argparse plumbing


def _default_out_dir(name: str, explicit=None, manifest_dir=None) -> Path:
    if explicit:
        return Path(explicit)
    if manifest_dir:
        return Path(manifest_dir)
    root = os.environ.get(OUT_ROOT_ENV, "cohsync-out")
    return Path(root) / name


def _apply_cli_overrides(manifest: ExperimentManifest, args) -> ExperimentManifest:
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.dt is not None:
        updates["dt"] = args.dt
    if args.t_end is not None:
        updates["t_end"] = args.t_end
    return dataclasses.replace(manifest, **updates) if updates else manifest


def _cmd_design(args) -> int:
    try:
        manifest = _resolve_manifest(args.manifest)
        design = build_design(manifest)
        out_dir = _default_out_dir(manifest.name, args.out, manifest.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "design.json", design_payload(manifest, design))
    except (ValueError, OSError, json.JSONDecodeError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"design written: {out_dir / 'design.json'}")
    print(f"protocol: {manifest.protocol}")
    print(f"d = {design.d!r}")
    print(f"delta = {design.delta!r}")
    if isinstance(design, NoncollabDesign):
        print(f"delta_1 = {design.delta_1!r}")
        print(f"lambda_min(P) = {design.lambda_min_p!r}")
    else:
        print(f"eta = {design.eta!r}")
        print(f"epsilon = {design.epsilon!r}")
    return EXIT_PASS


def _cmd_simulate(args) -> int:
    try:
        manifest = _apply_cli_overrides(_resolve_manifest(args.manifest), args)
        out_dir = _default_out_dir(manifest.name, args.out, manifest.out_dir)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_experiment(manifest, out_dir)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        text = str(exc)
        if "non-finite" in text:
            print(f"error: simulation blew up: {text}", file=sys.stderr)
            return EXIT_FAIL
        print(f"error: design failed: {text}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"design written: {result.design_path}")
    print(f"trajectory written: {result.trajectory_path}")
    print(f"summary written: {result.summary_path}")
    if not result.passed:
        failing = [a["agent"] for a in result.summary["agents"] if not a["pass"]]
        print(f"result: FAIL (agents {failing})")
        return EXIT_FAIL
    print("result: PASS")
    return EXIT_PASS


def _cmd_graph(args) -> int:
    try:
        manifest = _resolve_manifest(args.manifest)
        text = format_edge_list(manifest.graph)
        if args.out:
            out_dir = Path(args.out)
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "graph.txt").write_text(text)
            print(f"graph written: {out_dir / 'graph.txt'}")
        else:
            sys.stdout.write(text)
    except (ValueError, OSError, json.JSONDecodeError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_PASS


def _cmd_verify(args) -> int:
    try:
        text, ok = run_verification_suite(seed=args.seed or 0, self_test=args.self_test)
        out_dir = _default_out_dir("verify", args.out, None)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.txt").write_text(text)
    except (ValueError, OSError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(text)
    print(f"report written: {out_dir / 'report.txt'}")
    return EXIT_PASS if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cohsync",
        description="Design, simulate and verify adaptive output-synchronization protocols.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_sim_flags=False):
        p.add_argument("--manifest", required=True, help="manifest file or bundled manifest name")
        p.add_argument("--out", default=None, help="output directory")
        if with_sim_flags:
            p.add_argument("--seed", type=int, default=None, help="override manifest seed")
            p.add_argument("--dt", type=float, default=None, help="override integration step")
            p.add_argument("--t-end", type=float, default=None, help="override run length")

    p_design = sub.add_parser("design", help="compute and dump the protocol constants")
    add_common(p_design)
    p_design.set_defaults(func=_cmd_design)

    p_sim = sub.add_parser("simulate", help="run a manifest end to end")
    add_common(p_sim, with_sim_flags=True)
    p_sim.set_defaults(func=_cmd_simulate)

    p_graph = sub.add_parser("graph", help="emit the manifest's communication graph")
    add_common(p_graph)
    p_graph.set_defaults(func=_cmd_graph)

    p_verify = sub.add_parser("verify", help="run the theory verification suites")
    p_verify.add_argument("--seed", type=int, default=0, help="suite seed")
    p_verify.add_argument("--out", default=None, help="output directory")
    p_verify.add_argument(
        "--self-test",
        action="store_true",
        help="also run the corrupted-solution negative control",
    )
    p_verify.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
