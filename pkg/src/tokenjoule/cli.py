"""Command-line entry point.

Exit status: 0 on success, 1 on a runtime failure, 2 on a usage or
configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

import httpx

from . import __version__
from .config import ToolConfig, load_config
from .errors import (
    ConfigError,
    DomainError,
    InsufficientDataError,
    IntegrityError,
    ParseError,
    PersistenceError,
    TokenjouleError,
)
from .estimator import DEFAULT_SUSTAINED_FACTOR
from .fixtures import FIXTURE_PREFIX, select_fixture
from .fleet import load_catalog
from .metrics import ExperimentSummary
from .orchestrator import RunConfig, RunStore, execute_experiment
from .prompts import coverage, generate_suite, load_suite, serialize_suite
from .report import (
    Experiment,
    Unavailable,
    build_report,
    emit_estimate_table,
    emit_match_table,
    select_local_basis,
    write_report,
)

log = logging.getLogger("tokenjoule")

OK, FAILURE, USAGE = 0, 1, 2
_USAGE_ERRORS = (ConfigError, ParseError, IntegrityError, PersistenceError, DomainError)


class UsageError(TokenjouleError):
    pass


def _out(args) -> Path:
    return Path(args.output_dir) if args.output_dir else args.tool_config.output_dir


def _catalog(args):
    path = getattr(args, "catalog", None) or args.tool_config.catalog
    return load_catalog(path)


# -- experiment lookup ------------------------------------------------------


def resolve_experiments(ids: Sequence[str], store: RunStore) -> list[Experiment]:
    """Resolve ids to summaries; bundled dataset ids start with ``published``."""
    found: dict[str, Experiment] = {}
    for ident in ids:
        if ident == FIXTURE_PREFIX or ident.startswith(FIXTURE_PREFIX + "/"):
            matches = select_fixture(ident)
            if not matches:
                raise UsageError(f"no bundled experiment matches {ident!r}")
            found.update((e.id, e) for e in matches)
            continue
        if not store.exists(ident):
            raise UsageError(f"experiment {ident!r} not found under {store.root}")
        try:
            found[ident] = store.summary(ident)
        except InsufficientDataError as exc:
            header, _ = store.load(ident)
            found[ident] = Unavailable(ident, header["model"], header["kind"], header.get("gpu"), str(exc))
    return list(found.values())


def _align_models(local: list[ExperimentSummary], api: list[Experiment], allow: bool) -> list[ExperimentSummary]:
    local_models = sorted({e.model for e in local})
    missing = sorted({e.model for e in api} - set(local_models))
    if not missing:
        return local
    msg = f"API model(s) {', '.join(missing)} have no local experiment (local: {', '.join(local_models)})"
    if not allow:
        raise UsageError(msg + "; pass --allow-model-mismatch to proceed")
    if len(local_models) != 1:
        raise UsageError(msg + "; cannot pair models when several local models are given")
    log.warning("%s; proceeding with %s as the local basis", msg, local_models[0])
    return local + [dataclasses.replace(e, model=m) for m in missing for e in local]


# -- subcommands ------------------------------------------------------------


def cmd_suite(args) -> int:
    if args.action == "generate":
        suite = generate_suite(seed=args.seed, count=args.count)
        target = Path(args.out or args.tool_config.suite or "suite.jsonl")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(serialize_suite(suite))
        print(f"wrote {len(suite)} prompts to {target} (checksum {suite.checksum})")
        return OK
    path = args.path or args.tool_config.suite
    if path is None:
        raise UsageError("no suite file given")
    suite = load_suite(Path(path))
    combos = coverage(suite)
    print(f"{path}: {len(suite)} prompts, {len(combos)} category/length combinations, checksum {suite.checksum}")
    return OK


def _probe(base_url: str, timeout: float = 5.0) -> None:
    try:
        httpx.get(base_url, timeout=timeout)
    except httpx.HTTPError as exc:
        raise TokenjouleError(f"endpoint {base_url} is unreachable: {exc}") from None


def cmd_run(args) -> int:
    cfg: ToolConfig = args.tool_config
    section = cfg.endpoint(args.endpoint)
    is_local = section.endpoint.deployment_kind == "local"
    sampler = cfg.build_sampler() if is_local else None
    if is_local and section.gpu is None:
        log.warning("local endpoint %s names no GPU; TDP bounds will be unavailable", section.name)
    suite_path = args.suite or cfg.suite
    if suite_path is None:
        raise UsageError("no suite file configured")
    suite = load_suite(Path(suite_path))
    config = RunConfig(
        suite_ref=suite.checksum,
        endpoint=section.endpoint,
        passes=args.passes or section.passes or cfg.passes,
        batch_size=args.batch_size or section.batch_size or cfg.batch_size,
        schedule=section.schedule,
        sampler=sampler,
        gpu=section.gpu,
        count_prompt_tokens=section.count_prompt_tokens,
        model_label=section.model,
    )
    if not args.no_probe:
        _probe(section.endpoint.base_url)
    store = RunStore(_out(args))
    print(f"experiment {config.experiment_id} ({section.name}, {config.passes} passes)")

    def report_pass(run) -> None:
        status = "valid" if run.valid else f"invalid: {run.invalid_reason}"
        energy = "" if run.energy is None else f", E={run.energy.energy_wh:.3f} Wh"
        print(f"  pass {run.run_index}: T={run.total_wall_time_s:.2f} s, tokens={run.total_tokens}{energy} ({status})")

    runs = execute_experiment(suite, config, store=store, resume=args.resume, force=args.force, on_pass=report_pass)
    valid = sum(r.valid for r in runs)
    print(f"{valid}/{len(runs)} valid passes logged to {store.log_path(config.experiment_id)}")
    return OK if valid >= 1 else FAILURE


def cmd_estimate(args) -> int:
    store = RunStore(_out(args))
    catalog = _catalog(args)
    local = [e for e in resolve_experiments(args.local, store) if e.kind == "local"]
    api = [e for e in resolve_experiments(args.api, store) if e.kind != "local"]
    if not local:
        raise UsageError("no local experiment among --local ids")
    if not api:
        raise UsageError("no API experiment among --api ids")
    unusable = [e for e in local if isinstance(e, Unavailable)]
    for e in unusable:
        log.warning("local experiment %s skipped: %s", e.id, e.reason)
    local = _align_models([e for e in local if not isinstance(e, Unavailable)], api, args.allow_model_mismatch)

    basis = select_local_basis(local + [e for e in api if not isinstance(e, Unavailable)], args.basis_gpu)
    if args.basis_gpu is not None and not basis:
        raise UsageError(f"no local experiment on {args.basis_gpu}")
    estimate = emit_estimate_table(api, basis, catalog, args.sustained_factor)
    match = emit_match_table(local + api, catalog)

    out = _out(args) / "reports"
    out.mkdir(parents=True, exist_ok=True)
    for table in (estimate, match):
        (out / f"{table.name}.csv").write_text(table.to_csv(), encoding="utf-8")
        (out / f"{table.name}.md").write_text(table.to_markdown(), encoding="utf-8")
    print(f"sustained factor: {args.sustained_factor:g}")
    print(estimate.to_markdown())
    print(match.to_markdown())
    return OK


def cmd_report(args) -> int:
    if not args.ids:
        raise UsageError("report needs at least one experiment id")
    store = RunStore(_out(args))
    experiments = resolve_experiments(args.ids, store)
    bundle = build_report(
        experiments,
        _catalog(args),
        sustained_factor=args.sustained_factor,
        basis_gpu=args.basis_gpu,
    )
    for path in write_report(bundle, _out(args)):
        print(path)
    return OK


def cmd_catalog(args) -> int:
    catalog = _catalog(args)
    print(catalog.to_csv(), end="")
    return OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tokenjoule", description="Energy benchmarking for LLM inference.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("--output-dir", help="directory for run logs, traces and reports")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    suite = sub.add_parser("suite", help="generate or validate a prompt suite")
    suite_sub = suite.add_subparsers(dest="action", required=True)
    gen = suite_sub.add_parser("generate")
    gen.add_argument("--out", help="suite file to write (default: config suite path or suite.jsonl)")
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument("--count", type=int, default=100)
    val = suite_sub.add_parser("validate")
    val.add_argument("path", nargs="?")
    suite.set_defaults(func=cmd_suite)

    run = sub.add_parser("run", help="run an experiment against one configured endpoint")
    run.add_argument("endpoint", help="endpoint section name from the config")
    run.add_argument("--suite", help="override the configured suite file")
    run.add_argument("--passes", type=int)
    run.add_argument("--batch-size", type=int)
    mode = run.add_mutually_exclusive_group()
    mode.add_argument("--resume", action="store_true", help="continue a partial experiment")
    mode.add_argument("--force", action="store_true", help="overwrite an existing experiment")
    run.add_argument("--no-probe", action="store_true", help="skip the endpoint reachability check")
    run.set_defaults(func=cmd_run)

    def add_estimation_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--sustained-factor", type=float, default=DEFAULT_SUSTAINED_FACTOR)
        p.add_argument("--basis-gpu", help="local GPU used as the estimation basis")
        p.add_argument("--catalog", help="GPU catalog CSV (default: bundled)")

    est = sub.add_parser("estimate", help="estimate API energy from local measurements")
    est.add_argument("--local", nargs="+", required=True, metavar="ID")
    est.add_argument("--api", nargs="+", required=True, metavar="ID")
    est.add_argument("--allow-model-mismatch", action="store_true")
    add_estimation_flags(est)
    est.set_defaults(func=cmd_estimate)

    rep = sub.add_parser("report", help="write all tables for a set of experiments")
    rep.add_argument("ids", nargs="*", metavar="ID")
    add_estimation_flags(rep)
    rep.set_defaults(func=cmd_report)

    cat = sub.add_parser("catalog", help="print the GPU catalog")
    cat.add_argument("--catalog", help="GPU catalog CSV (default: bundled)")
    cat.set_defaults(func=cmd_catalog)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code not in (0, None) else OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.tool_config = load_config(args.config)
        return args.func(args)
    except (UsageError, *_USAGE_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except TokenjouleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILURE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILURE


if __name__ == "__main__":
    sys.exit(main())
