"""Command-line front end.

Every command writes ``result.json`` and ``manifest.json`` into ``--out``;
flow-based commands also write ``trace.csv``.  Exit codes: 0 success,
1 I/O or input error, 2 spectral/design failure (gap, conjugate split,
not Hurwitz, not stabilizable), 3 non-convergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .errors import Diverged, NoConvergence, NonFinite, OjaError, ShapeMismatch
from .flow import FlowConfig, integrate_flow
from .io import load_system, read_matrix, sha256_file, write_bode, write_csv, write_json
from .linalg import StiefelPoint, eig_ordered
from .lowrank import design_feedback, design_observer
from .modred import (
    LtiSystem,
    bode_grid,
    dc_gain,
    dual_pair,
    eval_transfer,
    reduced_model,
    slow_fast_reduce,
)
from .subspace import (
    dominant_subspace,
    expand_subspace,
    reduce_subspace_recursive,
    reduce_subspace_schur,
    svd_extract,
)

ZERO_RTOL = 1e-6

EXAMPLE_A = np.array([[1.0, 1.0, 2.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
EXAMPLE_B = np.array([[0.0], [0.0], [1.0]])
EXAMPLE_C = np.array([[1.0, 0.0, 0.0]])
PSI = np.column_stack([[1.0, 0.0, 0.0], np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0), np.array([1.0, 2.0, -2.0]) / 3.0])


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _config(args) -> FlowConfig:
    return FlowConfig(
        epsilon=args.eps,
        shift_a=args.shift,
        step_h=args.step,
        t_max=args.tmax,
        integrator=args.integrator,
        tol_invariance=args.tol,
        seed=args.seed,
    )


class Run:
    """Collects inputs/outputs of one command and writes the manifest."""

    def __init__(self, args, cfg: FlowConfig | None):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: list[Path] = []
        self.outputs: list[str] = []

    def input(self, path) -> Path:
        path = Path(path)
        self.inputs.append(path)
        return path

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def json(self, name: str, obj) -> None:
        write_json(self.path(name), obj)

    def finish(self) -> None:
        manifest = {
            "command": self.args.command,
            "inputs": [{"path": str(p), "sha256": sha256_file(p)} for p in self.inputs],
            "config": dataclasses.asdict(self.cfg) if self.cfg is not None else None,
            "outputs": sorted(set(self.outputs)) + ["manifest.json"],
            "version": _version(),
            "seed": self.args.seed,
        }
        write_json(self.out / "manifest.json", manifest)


def _read_matrix_input(run: Run, path) -> np.ndarray:
    return read_matrix(run.input(path))


def _subspace_payload(res) -> dict:
    payload = res.to_dict()
    if res.trace is not None:
        payload["shift_a"] = res.trace.shift_a
        payload["step_h"] = res.trace.step_h
        payload["rate_estimate"] = res.trace.rate_estimate
        payload["t_final"] = float(res.trace.times[-1])
    return payload


def _emit_subspace(run: Run, res) -> None:
    run.json("result.json", _subspace_payload(res))
    if res.trace is not None:
        res.trace.to_csv(run.path("trace.csv"))
    eig = ", ".join(f"{z.real:.10g}" + (f"{z.imag:+.10g}j" if z.imag else "") for z in res.eigenvalues)
    print(f"r={res.r} eigenvalues [{eig}] invariance residual {res.invariance_residual:.3e}")


def cmd_extract(args, run: Run) -> None:
    A = _read_matrix_input(run, args.matrix)
    _emit_subspace(run, dominant_subspace(A, args.r, run.cfg))


def _start_basis(run: Run, A, r: int, basis_file):
    if basis_file is not None:
        return StiefelPoint(_read_matrix_input(run, basis_file))
    return dominant_subspace(A, r, run.cfg).basis


def cmd_expand(args, run: Run) -> None:
    A = _read_matrix_input(run, args.matrix)
    U = _start_basis(run, A, args.r, args.basis)
    _emit_subspace(run, expand_subspace(A, U, args.ell, run.cfg))


def cmd_reduce_dim(args, run: Run) -> None:
    A = _read_matrix_input(run, args.matrix)
    U = _start_basis(run, A, args.r, args.basis)
    if args.method == "schur":
        res = reduce_subspace_schur(A, U, args.to)
    else:
        res = reduce_subspace_recursive(A, U, args.to, run.cfg)
    _emit_subspace(run, res)


def _load_system(run: Run, path) -> LtiSystem:
    sys_, paths = load_system(path)
    if Path(path).suffix.lower() == ".json":
        run.input(path)
    for p in paths.values():
        run.input(p)
    return sys_


def cmd_reduce(args, run: Run) -> None:
    sys_ = _load_system(run, args.system)
    cfg = run.cfg
    if args.slow_fast:
        sf = slow_fast_reduce(sys_, args.r, cfg)
        payload = {
            "kind": "slow_fast",
            "r": args.r,
            "A_s": sf.A_s,
            "B_s": sf.B_s,
            "C_s": sf.C_s,
            "D_s": sf.D_s,
            "fast_block": sf.fast_block,
            "separation_ratio": sf.separation_ratio,
            "dc_gain": sf.dc_gain(),
            "dc_gain_full": dc_gain(sys_),
        }
        run.json("result.json", payload)
        models, labels = [sys_, sf.as_system()], ["full", "slow_fast"]
        print(f"slow model r={args.r}, timescale ratio {sf.separation_ratio:.4g}")
    else:
        pair = dual_pair(sys_.A, args.r, cfg)
        model = reduced_model(sys_, pair, args.model)
        payload = model.to_dict()
        payload["coupling_condition"] = pair.coupling_condition
        payload["eigenvalues"] = eig_ordered(model.A).eigenvalues
        run.json("result.json", payload)
        models, labels = [sys_, model], ["full", args.model]
        print(f"{args.model} model r={args.r}, coupling condition {pair.coupling_condition:.4g}")
    if args.bode is not None:
        w_min, w_max, npts = args.bode
        responses = bode_grid(models, w_min, w_max, int(npts), jobs=args.jobs, labels=labels)
        scale = float(np.nanmax(np.abs(responses[0].values))) if responses[0].values.size else 0.0
        for resp in responses:
            peak = float(np.nanmax(np.abs(resp.values))) if (~resp.pole_flags).any() else 0.0
            zero = resp.is_zero or peak <= ZERO_RTOL * scale
            write_bode(run.path(f"bode_{resp.label}.csv"), resp, {"zero_transfer_function": zero})
            run.outputs.append(f"bode_{resp.label}.json")
            if zero:
                print(f"{resp.label}: zero transfer function")


def cmd_stabilize(args, run: Run) -> None:
    sys_ = _load_system(run, args.system)
    pair = dual_pair(sys_.A, args.r, run.cfg)
    mode = "both" if args.mode is None else args.mode
    design = None
    if mode in ("feedback", "both"):
        design = design_feedback(sys_, pair)
    if mode in ("observer", "both"):
        obs = design_observer(sys_, pair)
        design = obs if design is None else design.merge(obs)
    run.json("result.json", design.to_dict())
    print(f"feedback abscissa {design.closed_loop_feedback_abscissa}")
    print(f"observer abscissa {design.closed_loop_observer_abscissa}")


def cmd_svd(args, run: Run) -> None:
    A = _read_matrix_input(run, args.matrix)
    U, V, sigma = svd_extract(A, args.r, run.cfg)
    resid = float(np.linalg.norm(A @ V.matrix - U.matrix * sigma))
    run.json("result.json", {"U": U.matrix, "V": V.matrix, "sigma": sigma, "residual": resid})
    print("sigma [" + ", ".join(f"{s:.10g}" for s in sigma) + "]")


def _series_trace(A, U0, cfg, reference=None):
    """Trace of a figure run; a divergence keeps its partial trace."""
    try:
        return integrate_flow(A, U0, cfg, reference=reference)
    except Diverged as exc:
        return exc.trace


def _stiefel_bundle(run: Run, name: str, U0, runs: dict[str, FlowConfig]) -> dict:
    traces = {label: _series_trace(EXAMPLE_A, U0, cfg) for label, cfg in runs.items()}
    grid = max((tr.times for tr in traces.values()), key=len)
    cols = []
    for tr in traces.values():
        col = np.full(len(grid), np.nan)
        col[: len(tr.stiefel_residuals)] = tr.stiefel_residuals
        cols.append(col)
    write_csv(run.path(f"{name}.csv"), ["t"] + list(traces), np.column_stack([grid] + cols))
    return {
        label: {"config": dataclasses.asdict(cfg), "final_stiefel_residual": float(traces[label].stiefel_residuals[-1])}
        for label, cfg in runs.items()
    }


def _repro(args, run: Run) -> None:
    fid = args.figure
    euler = FlowConfig(integrator="euler", step_h=0.1, t_max=10.0, stop_on_convergence=False, seed=args.seed)
    if fid in ("fig2", "fig3"):
        v = PSI[:, 1] + PSI[:, 2]
        U0 = (v / np.linalg.norm(v))[:, None] * (1.0 if fid == "fig2" else 1.1)
        runs = {"unshifted": euler.with_(shift_a=0.0), "a2": euler.with_(shift_a=2.0), "a4": euler.with_(shift_a=4.0)}
        if fid == "fig2":
            runs = {"normalized": euler.with_(shift_a=0.0, retract_every=1), **runs}
        summary = _stiefel_bundle(run, fid, U0, runs)
    elif fid == "fig4":
        v = PSI.sum(axis=1)
        U0 = (v / np.linalg.norm(v))[:, None]
        cfg = euler.with_(shift_a=2.0, t_max=20.0)
        tr = integrate_flow(EXAMPLE_A, U0, cfg, reference=PSI[:, :1])
        d = tr.projector_distances
        write_csv(run.path("fig4.csv"), ["t", "projector_distance", "bound"], np.column_stack([tr.times, d, 0.7 * np.exp(-tr.times)]))
        sel = (tr.times >= 5) & (tr.times <= 15)
        slope = float(np.polyfit(tr.times[sel], np.log(d[sel]), 1)[0])
        summary = {"config": dataclasses.asdict(cfg), "log_slope_5_15": slope, "final_distance": float(d[-1])}
    elif fid == "fig5":
        sys_ = LtiSystem(EXAMPLE_A, EXAMPLE_B, EXAMPLE_C)
        pair = dual_pair(EXAMPLE_A, 2, run.cfg)
        models = [sys_, reduced_model(sys_, pair, "ctrl"), reduced_model(sys_, pair, "minimal")]
        labels = ["full", "ctrl", "minimal"]
        for resp in bode_grid(models, 1e-2, 1e2, 200, jobs=args.jobs, labels=labels):
            write_bode(run.path(f"fig5_{resp.label}.csv"), resp)
            run.outputs.append(f"fig5_{resp.label}.json")
        summary = {
            "s=2": {lab: eval_transfer(mdl, 2.0)[0, 0] for lab, mdl in zip(labels, models)},
            "coupling_condition": pair.coupling_condition,
        }
    elif fid == "ex1":
        A = np.diag([1.0, -1.0])
        cfg = FlowConfig(integrator="euler", step_h=0.01, t_max=10.0, shift_a=0.0, stop_on_convergence=False, seed=args.seed)
        tr = _series_trace(A, np.array([[0.0], [1.5]]), cfg)
        tr.to_csv(run.path("ex1.csv"))
        summary = {"config": dataclasses.asdict(cfg), "steps": len(tr.times) - 1, "final_stiefel_residual": float(tr.stiefel_residuals[-1])}
    else:  # pragma: no cover - argparse restricts the choices
        raise ValueError(fid)
    run.json("result.json", {"figure": fid, "summary": summary})
    print(f"{fid}: wrote {', '.join(n for n in run.outputs if n != 'result.json')}")


COMMANDS = {
    "extract": cmd_extract,
    "expand": cmd_expand,
    "reduce-dim": cmd_reduce_dim,
    "reduce": cmd_reduce,
    "stabilize": cmd_stabilize,
    "svd": cmd_svd,
    "repro": _repro,
}


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1 so that 2 stays reserved for spectral failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("flow options")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--eps", type=float, default=1.0, help="time constant epsilon in (0, 1]")
    g.add_argument("--shift", type=float, default=None, help="spectral shift a (default: automatic)")
    g.add_argument("--step", type=float, default=None, help="integrator step h (default: automatic)")
    g.add_argument("--tmax", type=float, default=200.0)
    g.add_argument("--integrator", choices=("rk4", "euler"), default="rk4")
    g.add_argument("--tol", type=float, default=1e-7, help="invariance residual tolerance")
    g.add_argument("--out", default="ojasub-out", help="output directory")
    g.add_argument("--jobs", type=int, default=1)

    parser = _Parser(prog="ojasub", description="Dominant invariant subspaces by shifted Oja flows.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="dominant r-dimensional invariant subspace")
    p.add_argument("matrix")
    p.add_argument("-r", type=int, required=True)

    p = sub.add_parser("expand", parents=[common], help="grow an r-dominant basis by ell columns")
    p.add_argument("matrix")
    p.add_argument("-r", type=int, required=True)
    p.add_argument("-l", "--ell", type=int, required=True)
    p.add_argument("--basis", help="existing r-dominant basis (n x r); extracted when omitted")

    p = sub.add_parser("reduce-dim", parents=[common], help="shrink an r-dominant basis")
    p.add_argument("matrix")
    p.add_argument("-r", type=int, required=True)
    p.add_argument("--to", type=int, required=True)
    p.add_argument("--method", choices=("schur", "recursive"), default="schur")
    p.add_argument("--basis")

    p = sub.add_parser("reduce", parents=[common], help="reduced-order LTI model")
    p.add_argument("system", help="directory with A/B/C files or a JSON manifest")
    p.add_argument("-r", type=int, required=True)
    p.add_argument("--model", choices=("obs", "ctrl", "minimal"), default="minimal")
    p.add_argument("--bode", nargs=3, type=float, metavar=("WMIN", "WMAX", "NPTS"))
    p.add_argument("--slow-fast", action="store_true")

    p = sub.add_parser("stabilize", parents=[common], help="low-rank observer/feedback design")
    p.add_argument("system")
    p.add_argument("-r", type=int, required=True)
    m = p.add_mutually_exclusive_group()
    m.add_argument("--observer", dest="mode", action="store_const", const="observer")
    m.add_argument("--feedback", dest="mode", action="store_const", const="feedback")
    m.add_argument("--both", dest="mode", action="store_const", const="both")

    p = sub.add_parser("svd", parents=[common], help="leading singular triplets")
    p.add_argument("matrix")
    p.add_argument("-r", type=int, required=True)

    p = sub.add_parser("repro", parents=[common], help="regenerate figure/example data")
    p.add_argument("figure", choices=("fig2", "fig3", "fig4", "fig5", "ex1"))
    return parser


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (NoConvergence, Diverged)):
        return 3
    if isinstance(exc, (OSError, ShapeMismatch, NonFinite)):
        return 1
    if isinstance(exc, OjaError):
        return 2
    if isinstance(exc, ValueError):
        return 1
    raise exc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        run = Run(args, cfg)
        COMMANDS[args.command](args, run)
        run.finish()
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        code = exit_code(exc)
        print(f"error: {type(exc).__name__}: {exc}".splitlines()[0], file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
