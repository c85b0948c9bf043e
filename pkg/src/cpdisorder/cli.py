"""Command-line entry points.

Subcommands: ``regime``, ``solve``, ``boundary``, ``simulate``, ``filter``,
``evaluate``.  Every command is a pure function of its inputs and the seed;
re-running reproduces byte-identical files apart from the ``timestamp`` field
recorded in each JSON header.  Outputs are plain CSV/JSON for downstream
plotting; no plots are produced here.

Exit codes: 0 success, 2 invalid input, 3 solver invariant violation, 4 I/O
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DisorderError, InvalidParamsError, SolverInvariantError
from .filtering import evolve_filter, export_trajectory_csv
from .flow import REGION_NAMES, region_spec
from .model import (
    ModelParams,
    Statistic,
    classify_regime,
    initial_statistic,
    load_params,
    params_digest,
)
from .policy import (
    AdvantageExitStop,
    GridBoundaryStop,
    ImmediateStop,
    PolicySpec,
    PosteriorThresholdStop,
    StagedLadderStop,
    bayes_risk_physical,
    bayes_risk_reference,
    compare_policies,
)
from .simulate import read_paths_jsonl, sample_path_physical, sample_path_reference, write_paths_jsonl
from .solve import (
    DEFAULT_EPSILON_FACTOR,
    ValueGrid,
    default_grid_spec,
    extract_boundary,
    interpolate,
    load_value_grid,
    save_value_grid,
    value_iteration,
)

_EXIT_OK = 0
_EXIT_INVALID = 2
_EXIT_SOLVER = 3
_EXIT_IO = 4

_OUT_ENV = "CPDISORDER_OUT"


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(_OUT_ENV) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _header(params: ModelParams, args, **extra) -> dict:
    head = {
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "params": params.to_dict(),
        "params_digest": params_digest(params),
        "seed": getattr(args, "seed", None),
    }
    head.update(extra)
    return head


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, default=float)
        fh.write("\n")


def _grid_spec_from_args(params: ModelParams, args):
    return default_grid_spec(params, n0=args.grid_n, n1=args.grid_n,
                             phi_max=args.phi_max)


def cmd_regime(args) -> int:
    params = load_params(args.params)
    regime = classify_regime(params)
    spec = region_spec(params)
    applicable = []
    for name in REGION_NAMES:
        from .flow import _REGION_REGIMES

        if regime.tag in _REGION_REGIMES[name]:
            applicable.append(name)
    report = {
        "regime": regime.tag,
        "xi": regime.xi,
        "corner": spec.corner,
        "hull_sum_cap": spec.xi if regime.tag in ("R4", "R5") else None,
        "mean_reversion": spec.mean_reversion,
        "closed_form_regions": applicable,
        "cost_threshold": params.cost_threshold,
    }
    print(f"regime {regime.tag}  xi={regime.xi}  corner={spec.corner}  "
          f"mean_reversion={spec.mean_reversion}  regions={','.join(applicable) or '-'}")
    out = _out_dir(args)
    _write_json(out / "regime.json", {**_header(params, args), **report})
    return _EXIT_OK


def cmd_solve(args) -> int:
    params = load_params(args.params)
    spec = _grid_spec_from_args(params, args)
    grids = value_iteration(params, params.marks, spec, n_max=args.n_max,
                            target_err=args.target_err)
    out = _out_dir(args)
    grid_dir = out / "grids"
    grid_dir.mkdir(exist_ok=True)
    sup_deltas = []
    prev = None
    for g in grids:
        if prev is not None:
            sup_deltas.append(float(np.max(np.abs(g.values - prev))))
        prev = g.values
        save_value_grid(g, str(grid_dir / f"v_{g.iteration:03d}.csv"),
                        str(grid_dir / f"v_{g.iteration:03d}.json"))
    with open(out / "convergence.csv", "w", encoding="utf-8") as fh:
        fh.write("iteration,sup_delta,error_bound\n")
        for k, g in enumerate(grids):
            delta = sup_deltas[k - 1] if k >= 1 else float(np.max(np.abs(g.values)))
            fh.write(f"{g.iteration},{float(delta)!r},{float(g.error_bound)!r}\n")
    _write_json(out / "solve.json", _header(
        params, args, grid={"phi_max": spec.phi_max, "n0": spec.n0, "n1": spec.n1,
                            "time_step": spec.time_step, "horizon_tol": spec.horizon_tol},
        iterations=len(grids), final_error_bound=grids[-1].error_bound))
    print(f"solved {len(grids)} iterations; final error bound {grids[-1].error_bound:.3e}")
    return _EXIT_OK


def _load_grid_dir(grid_dir: Path) -> list[ValueGrid]:
    grids = []
    for json_path in sorted(grid_dir.glob("v_*.json")):
        csv_path = json_path.with_suffix(".csv")
        if not csv_path.exists():
            raise FileNotFoundError(f"missing grid data file {csv_path}")
        grids.append(load_value_grid(str(csv_path), str(json_path)))
    if not grids:
        raise FileNotFoundError(f"no solved grids found under {grid_dir}")
    return grids


def cmd_boundary(args) -> int:
    params = load_params(args.params)
    grids = _load_grid_dir(Path(args.grids))
    eps = args.epsilon if args.epsilon is not None else DEFAULT_EPSILON_FACTOR / params.c
    out = _out_dir(args)
    for g in grids:
        b = extract_boundary(g, eps)
        with open(out / f"boundary_{g.iteration:03d}.csv", "w", encoding="utf-8") as fh:
            fh.write("phi0,gamma\n")
            for p0, gam in zip(b.phi0, b.gamma):
                fh.write(f"{float(p0)!r},{float(gam)!r}\n")
    regime = classify_regime(params)
    xi = regime.xi if regime.xi is not None else float("inf")
    level = params.cost_threshold
    with open(out / "boundary_closed_form.csv", "w", encoding="utf-8") as fh:
        fh.write("phi0,gamma_line\n")
        for p0 in grids[-1].spec.axis0():
            if p0 >= xi:
                fh.write(f"{float(p0)!r},{float(max(level - p0, 0.0))!r}\n")
    _write_json(out / "boundary.json", _header(params, args, epsilon=eps,
                                               iterations=len(grids), xi=regime.xi))
    print(f"wrote {len(grids)} boundary curves (epsilon {eps:.3e})")
    return _EXIT_OK


def cmd_simulate(args) -> int:
    params = load_params(args.params)
    sampler = sample_path_reference if args.reference else sample_path_physical
    records = [sampler(params, args.horizon, args.seed, replication=i)
               for i in range(args.n_paths)]
    out = _out_dir(args)
    write_paths_jsonl(records, str(out / "paths.jsonl"))
    _write_json(out / "simulate.json", _header(
        params, args, n_paths=args.n_paths, horizon=args.horizon,
        measure="reference" if args.reference else "physical"))
    print(f"wrote {len(records)} paths to {out / 'paths.jsonl'}")
    return _EXIT_OK


def cmd_filter(args) -> int:
    params = load_params(args.params)
    records = read_paths_jsonl(args.paths)
    out = _out_dir(args)
    init = initial_statistic(params)
    for i, rec in enumerate(records):
        traj = evolve_filter(params, params.marks, rec, init)
        export_trajectory_csv(traj, str(out / f"trajectory_{i:06d}.csv"), args.spacing)
    _write_json(out / "filter.json", _header(params, args, n_paths=len(records),
                                             spacing=args.spacing))
    print(f"filtered {len(records)} paths")
    return _EXIT_OK


def _build_policies(args, params: ModelParams) -> list[PolicySpec]:
    policies: list[PolicySpec] = []
    grids: list[ValueGrid] | None = None
    for name in args.policy:
        if name == "immediate":
            policies.append(ImmediateStop())
        elif name == "advantage-exit":
            policies.append(AdvantageExitStop())
        elif name == "grid-boundary":
            if grids is None:
                grids = _load_grid_dir(Path(args.grids))
            final = grids[-1]
            if final.error_bound > 1e-3 / params.c:
                print(f"warning: grid error bound {final.error_bound:.3e} is loose; "
                      "the rule may be far from optimal", file=sys.stderr)
            policies.append(GridBoundaryStop(final, args.epsilon))
        elif name == "staged":
            if grids is None:
                grids = _load_grid_dir(Path(args.grids))
            policies.append(StagedLadderStop(tuple(grids[:args.stages]), args.epsilon))
        elif name.startswith("posterior:"):
            policies.append(PosteriorThresholdStop(float(name.split(":", 1)[1])))
        else:
            raise InvalidParamsError([f"unknown policy {name!r}"])
    return policies


def cmd_evaluate(args) -> int:
    params = load_params(args.params)
    policies = _build_policies(args, params)
    out = _out_dir(args)
    reports = []
    for pol in policies:
        est_p = bayes_risk_physical(pol, params, params.marks, args.horizon,
                                    args.n_paths, args.seed)
        reports.append(est_p.to_dict(pol, params, args.horizon, args.seed))
        if args.reference_check:
            est_r = bayes_risk_reference(pol, params, params.marks, args.horizon,
                                         args.n_paths, args.seed + 1)
            reports.append(est_r.to_dict(pol, params, args.horizon, args.seed + 1))
        print(f"{pol.label():>28}: risk {est_p.estimate:.5f} +- {est_p.stderr:.5f} "
              f"(censored {est_p.censored_fraction:.4%})")
    payload = _header(params, args, reports=reports,
                      horizon=args.horizon, n_paths=args.n_paths)
    if len(policies) > 1:
        comp = compare_policies(policies, params, params.marks, args.horizon,
                                args.n_paths, args.seed)
        payload["comparison"] = comp.to_dict()
    for pol in policies:
        if isinstance(pol, GridBoundaryStop):
            v0 = interpolate(pol.grid, initial_statistic(params))
            identity = (1.0 - params.pi) + params.c * (1.0 - params.pi) * v0
            payload["value_identity"] = {
                "grid_value_at_init": v0,
                "predicted_risk": identity,
                "grid_error_bound": pol.grid.error_bound,
            }
            print(f"value-function identity: predicted risk {identity:.5f}")
            break
    _write_json(out / "evaluate.json", payload)
    return _EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpdisorder",
        description="Quickest-detection toolkit for compound Poisson observations "
                    "whose arrival rate jumps up at a hidden change time.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, grid=False, mc=False):
        p.add_argument("--params", required=True, help="JSON parameter file")
        p.add_argument("--out", default=None,
                       help=f"output directory (default $%s or .)" % _OUT_ENV)
        p.add_argument("--seed", type=int, default=0)
        if grid:
            p.add_argument("--grid-n", type=int, default=96, help="nodes per axis")
            p.add_argument("--phi-max", type=float, default=None, help="state truncation bound")
        if mc:
            p.add_argument("--n-paths", type=int, default=10000)
            p.add_argument("--horizon", type=float, default=50.0)

    p = sub.add_parser("regime", help="classify parameters and report closed-form geometry")
    common(p)
    p.set_defaults(func=cmd_regime)

    p = sub.add_parser("solve", help="run value iteration and write the grid ladder")
    common(p, grid=True)
    p.add_argument("--n-max", type=int, default=60)
    p.add_argument("--target-err", type=float, default=1e-6)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("boundary", help="extract stop-boundary curves from solved grids")
    common(p)
    p.add_argument("--grids", required=True, help="directory with v_*.csv/json from solve")
    p.add_argument("--epsilon", type=float, default=None)
    p.set_defaults(func=cmd_boundary)

    p = sub.add_parser("simulate", help="write simulated observation paths as JSON lines")
    common(p, mc=True)
    p.add_argument("--reference", action="store_true",
                   help="simulate under the no-change reference law")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("filter", help="run the filter over stored paths, write CSV trajectories")
    common(p)
    p.add_argument("--paths", required=True, help="paths.jsonl from simulate")
    p.add_argument("--spacing", type=float, default=0.1)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("evaluate", help="Monte Carlo Bayes risk of one or more stopping rules")
    common(p, mc=True)
    p.add_argument("--policy", action="append", required=True,
                   help="immediate | advantage-exit | grid-boundary | staged | posterior:P")
    p.add_argument("--grids", default=None, help="grid directory for grid-based rules")
    p.add_argument("--stages", type=int, default=5, help="ladder height for the staged rule")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--reference-check", action="store_true",
                   help="also run the reference-measure estimator")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except InvalidParamsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_INVALID
    except SolverInvariantError as exc:
        print(f"solver invariant violation: {exc}", file=sys.stderr)
        return _EXIT_SOLVER
    except (OSError, FileNotFoundError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return _EXIT_IO
    except DisorderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
