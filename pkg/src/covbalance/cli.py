"""Command-line client for the design service.

Subcommands build the same request models the HTTP endpoints accept and
either invoke the handlers in process (default) or POST them to a running
server (``--server http://host:port``). File handling stays client-side:
covariate CSVs in, assignment CSVs, report JSON and the online state
document out. State files are rewritten atomically.

Exit codes: 0 success, 1 data/domain errors, 2 usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
from pathlib import Path

import httpx
from fastapi import HTTPException

from .errors import CovbalanceError
from .service import app as service
from .service.schemas import (
    CovariateTable,
    DesignRequest,
    DesignResponse,
    GaParams,
    OnlineAssignRequest,
    OnlineInitRequest,
    OnlineResponse,
    PcaParams,
    SimulateRequest,
    SimulateResponse,
)
from .stateio import read_covariates_csv, write_assignments_csv

_ROUTES = {
    DesignRequest: ("/design", DesignResponse, service.run_design),
    OnlineInitRequest: ("/online/init", OnlineResponse, service.run_online_init),
    OnlineAssignRequest: ("/online/assign", OnlineResponse, service.run_online_assign),
    SimulateRequest: ("/simulate", SimulateResponse, service.run_simulate),
}


def _dispatch(request, server: str | None):
    path, response_model, handler = _ROUTES[type(request)]
    if server is None:
        return handler(request)
    reply = httpx.post(
        server.rstrip("/") + path, json=request.model_dump(), timeout=None
    )
    if reply.status_code != 200:
        raise CovbalanceError(f"server returned {reply.status_code}: {reply.text}")
    return response_model.model_validate(reply.json())


def _covariate_table(path: str) -> CovariateTable:
    table, _ = read_covariates_csv(path)
    return CovariateTable(unit_ids=list(table.unit_ids), values=table.values.tolist())


def _ga_params(args) -> GaParams:
    return GaParams(
        population=args.pop,
        elites=args.elites,
        iterations=args.iters,
        stall_window=args.stall,
    )


def _pca_params(args) -> PcaParams | None:
    if args.pca_q is not None and args.pca_var is not None:
        raise CovbalanceError("--pca-q and --pca-var are mutually exclusive")
    if args.pca_q is not None:
        return PcaParams(components=args.pca_q)
    if args.pca_var is not None:
        return PcaParams(variance_fraction=args.pca_var)
    return None


def _add_ga_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--pop", type=int, default=100, help="GA population size")
    parser.add_argument("--elites", type=int, default=20, help="elites kept per generation")
    parser.add_argument("--iters", type=int, default=300, help="GA generations")
    parser.add_argument(
        "--stall", type=int, default=None, help="stop after this many stalled generations"
    )


def _add_common_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=0, help="random seed")
    parser.add_argument(
        "--server", default=None, help="base URL of a running service (default: in-process)"
    )


def _write_assignments(path: str, response, append: bool = False):
    rows = [(row.unit_id, row.group, row.treatment) for row in response.assignments]
    write_assignments_csv(path, rows, append=append)


def _write_json(path: str, payload: dict):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _cmd_design(args) -> int:
    request = DesignRequest(
        covariates=_covariate_table(args.input),
        groups=args.groups,
        seed=args.seed,
        ga=_ga_params(args),
        pca=_pca_params(args),
        shrinkage_weight=args.shrinkage_weight,
    )
    response = _dispatch(request, args.server)
    _write_assignments(args.out_assignments, response)
    _write_json(args.out_report, response.report.model_dump())
    sizes: dict[int, int] = {}
    for row in response.assignments:
        sizes[row.group] = sizes.get(row.group, 0) + 1
    print(
        f"designed {len(response.assignments)} units into {args.groups} groups "
        f"{tuple(sizes[g] for g in sorted(sizes))}; criterion {response.report.criterion:.6g}"
    )
    return 0


def _cmd_init(args) -> int:
    request = OnlineInitRequest(
        covariates=_covariate_table(args.input),
        groups=args.groups,
        seed=args.seed,
        ga=_ga_params(args),
        pca=_pca_params(args),
        freeze_bandwidth=args.freeze_bandwidth,
        balance="batch" if args.balance == "off" else args.balance,
        shrinkage_weight=args.shrinkage_weight,
    )
    response = _dispatch(request, args.server)
    _atomic_state_write(args.state, response.state)
    if args.out_assignments:
        _write_assignments(args.out_assignments, response)
    print(
        f"initialized experiment with {len(response.assignments)} units; "
        f"cumulative sizes {tuple(response.group_sizes)}"
    )
    return 0


def _cmd_assign(args) -> int:
    try:
        document = json.loads(Path(args.state).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise CovbalanceError(f"{args.state}: not valid JSON ({err})") from None
    request = OnlineAssignRequest(state=document, batch=_covariate_table(args.batch))
    response = _dispatch(request, args.server)
    _atomic_state_write(args.state, response.state)
    _write_assignments(args.out_assignments, response, append=args.append)
    print(
        f"assigned {len(response.assignments)} units; cumulative sizes "
        f"{tuple(response.group_sizes)}; criterion {response.criterion:.6g}"
    )
    return 0


def _atomic_state_write(path: str, document: dict):
    target = Path(path)
    fd, tmp_name = tempfile.mkstemp(
        prefix=target.name + ".", suffix=".tmp", dir=target.parent
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(document, handle, indent=1)
            handle.write("\n")
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _cmd_simulate(args) -> int:
    request = SimulateRequest(
        scenario=args.scenario,
        groups=args.groups,
        sample_size=args.n,
        replicates=args.replicates,
        noise_sd=args.sigma,
        seed=args.seed,
        ga=_ga_params(args) if args.pop is not None else None,
        initial_size=args.n0,
        batch_size=args.batch_size,
    )
    response = _dispatch(request, args.server)
    with open(args.out_csv, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["replicate", "method", "metric", "value"])
        for row in response.rows:
            writer.writerow(
                [row["replicate"], row["method"], row["metric"], repr(row["value"])]
            )
    _write_json(
        args.out_json,
        {
            "schema_version": response.schema_version,
            "config": response.config,
            "summary": response.summary,
        },
    )
    print(
        f"simulated {args.replicates} replicates of {args.scenario}; "
        f"wrote {len(response.rows)} rows"
    )
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run(service.app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covbalance",
        description="Covariate-balanced A/B(/n) designs: offline, online and simulated.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    design = sub.add_parser("design", help="partition a covariate CSV offline")
    design.add_argument("--input", required=True, help="covariate CSV (unit_id + columns)")
    design.add_argument("--groups", type=int, required=True, help="number of groups L")
    _add_ga_flags(design)
    design.add_argument("--pca-q", type=int, default=None, help="reduce to q components")
    design.add_argument(
        "--pca-var", type=float, default=None, help="reduce to this variance fraction"
    )
    design.add_argument(
        "--shrinkage-weight", type=float, default=None, help="fix the shrinkage weight"
    )
    design.add_argument("--out-assignments", required=True, help="assignment CSV to write")
    design.add_argument("--out-report", required=True, help="report JSON to write")
    _add_common_flags(design)
    design.set_defaults(func=_cmd_design)

    init = sub.add_parser("init", help="start an online experiment from a first batch")
    init.add_argument("--input", required=True, help="first-batch covariate CSV")
    init.add_argument("--groups", type=int, required=True, help="number of groups L")
    _add_ga_flags(init)
    init.add_argument("--pca-q", type=int, default=None, help="reduce to q components")
    init.add_argument(
        "--pca-var", type=float, default=None, help="reduce to this variance fraction"
    )
    init.add_argument(
        "--shrinkage-weight", type=float, default=None, help="fix the shrinkage weight"
    )
    init.add_argument(
        "--freeze-bandwidth",
        action="store_true",
        help="keep the initial bandwidth; later batches only extend the gram",
    )
    init.add_argument(
        "--balance",
        choices=("strict", "off"),
        default="strict",
        help="strict: cumulative sizes within 1; off: balance within each batch only",
    )
    init.add_argument("--state", required=True, help="state JSON to create")
    init.add_argument("--out-assignments", default=None, help="assignment CSV to write")
    _add_common_flags(init)
    init.set_defaults(func=_cmd_init)

    assign = sub.add_parser("assign", help="assign one incoming batch")
    assign.add_argument("--state", required=True, help="state JSON (rewritten atomically)")
    assign.add_argument("--batch", required=True, help="batch covariate CSV")
    assign.add_argument("--out-assignments", required=True, help="assignment CSV to write")
    assign.add_argument(
        "--append", action="store_true", help="append to an existing assignment CSV"
    )
    _add_common_flags(assign)
    assign.set_defaults(func=_cmd_assign)

    simulate = sub.add_parser("simulate", help="replicate a comparison scenario")
    simulate.add_argument(
        "--scenario",
        required=True,
        choices=("case1", "case2", "logistic", "highdim"),
    )
    simulate.add_argument("--groups", type=int, default=2)
    simulate.add_argument("--n", type=int, default=200, help="units per replicate")
    simulate.add_argument("--replicates", type=int, default=30)
    simulate.add_argument("--sigma", type=float, default=1.0, help="noise sd")
    simulate.add_argument("--pop", type=int, default=None, help="GA population size")
    simulate.add_argument("--elites", type=int, default=12)
    simulate.add_argument("--iters", type=int, default=150)
    simulate.add_argument("--stall", type=int, default=None)
    simulate.add_argument("--n0", type=int, default=None, help="online: first batch size")
    simulate.add_argument("--batch-size", type=int, default=None, help="online: batch size")
    simulate.add_argument("--out-csv", required=True, help="per-replicate rows CSV")
    simulate.add_argument("--out-json", required=True, help="summary JSON")
    _add_common_flags(simulate)
    simulate.set_defaults(func=_cmd_simulate)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HTTPException as err:
        print(f"error: {err.detail}", file=sys.stderr)
        return 1
    except CovbalanceError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
