"""Command-line entry point.

Every command accepts ``--seed``, ``--config`` and ``--out``. The config file
is TOML or JSON with optional sections ``synth``, ``predict``, ``evaluate``
and ``tools``; command-line flags win over config values.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import tempfile
from pathlib import Path
from typing import Any, Sequence

from pulse.dataset import dumps, load_dataset

log = logging.getLogger("pulse")

CONFIG_SECTIONS = ("synth", "predict", "evaluate", "tools")
PREDICT_KEYS = ("k", "memory_budget", "concurrency_limit", "folds", "users")
EVALUATE_KEYS = ("B", "confidence_edges")
TOOLS_KEYS = ("max_raw_events", "min_baseline_days")


class CliError(Exception):
    pass


def load_config(path: str | None) -> dict[str, dict[str, Any]]:
    if path is None:
        return {}
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}") from None
    if p.suffix == ".toml":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        try:
            cfg = tomllib.loads(raw.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise CliError(f"bad TOML in {path}: {exc}") from None
    else:
        try:
            cfg = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CliError(f"bad JSON in {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise CliError("config must be a table/object")
    unknown = sorted(set(cfg) - set(CONFIG_SECTIONS))
    if unknown:
        raise CliError(f"unknown config sections: {unknown}")
    for section, allowed in (("predict", PREDICT_KEYS), ("evaluate", EVALUATE_KEYS), ("tools", TOOLS_KEYS)):
        extra = sorted(set(cfg.get(section, {})) - set(allowed))
        if extra:
            raise CliError(f"unknown keys in [{section}]: {extra}")
    return cfg


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _emit(obj: Any) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# -- commands -----------------------------------------------------------------


def cmd_synth(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    from pulse.synth import GeneratorConfig, generate_cohort, write_cohort

    opts = dict(cfg.get("synth", {}))
    opts["seed"] = args.seed if args.seed is not None else opts.get("seed", 0)
    if args.users is not None:
        opts["n_users"] = args.users
    if args.days is not None:
        opts["n_days"] = args.days
    gen = GeneratorConfig.from_mapping(opts)
    out = Path(args.out or "cohort")
    sums = write_cohort(out, generate_cohort(gen))
    _emit({"out": str(out), "checksums": sums})
    return 0


def _store(data: str):
    from pulse.timestore import ingest

    ds = load_dataset(data)
    return ds, ingest(ds.profiles, ds.events, ds.entries)


def cmd_ingest(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    from pulse.model import validate_dataset

    ds = load_dataset(args.data)
    report = validate_dataset(ds.profiles, ds.events, ds.entries)
    body = report.to_json()
    if report.ok:
        from pulse.timestore import ingest

        store = ingest(ds.profiles, ds.events, ds.entries)
        body["stored_users"] = len(store.user_ids)
    if args.out:
        Path(args.out).write_text(dumps(body) + "\n", encoding="utf-8")
    _emit({k: body[k] for k in ("n_users", "ok", "ordering_violations", "platform_violations", "orphan_users")})
    return 0 if report.ok else 1


def _backend(args: argparse.Namespace):
    from pulse.agent.backends import RemoteBackend, ScriptedBackend
    from pulse.agent.policies import ReferenceRulePolicy, StructuredBaselinePolicy

    if args.backend == "remote":
        return RemoteBackend()
    policy = ReferenceRulePolicy() if args.policy == "reference" else StructuredBaselinePolicy()
    return ScriptedBackend(policy, seed=args.seed or 0)


def cmd_predict(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    from pulse.agent.runtime import RunCondition
    from pulse.evalkit.factorial import fold_indices, run_condition
    from pulse.evalkit.rows import write_rows
    from pulse.memory import MemoryLog
    from pulse.server import subprocess_tools
    from pulse.tools import Toolbox

    pc = cfg.get("predict", {})
    tc = cfg.get("tools", {})
    seed = args.seed if args.seed is not None else 0
    try:
        cond = RunCondition(args.arch, args.modality)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    _, store = _store(args.data)
    users = args.users.split(",") if args.users else pc.get("users") or store.user_ids
    unknown = sorted(set(users) - set(store.user_ids))
    if unknown:
        raise CliError(f"unknown users: {unknown}")
    indices = fold_indices(store, users, args.folds or pc.get("folds", 5), seed) if len(store.user_ids) > 1 else {}
    memory = MemoryLog(args.memory_dir) if args.memory_dir else MemoryLog()
    backend = _backend(args)
    kwargs: dict[str, Any] = {}
    for key in ("k", "memory_budget"):
        if key in pc:
            kwargs[key] = pc[key]
    with tempfile.TemporaryDirectory() as tmp:
        if args.tool_transport == "subprocess":
            paths = {}
            for i, index in enumerate({id(v): v for v in indices.values()}.values()):
                p = Path(tmp) / f"fold{i}.json"
                index.save(p)
                paths.update({u: p for u, v in indices.items() if v is index})
            kwargs["tools_factory"] = subprocess_tools(args.data, paths)
        else:
            kwargs["tools_factory"] = lambda ctx, idx: Toolbox(ctx, idx, **tc)
        rows, aborted = run_condition(
            store,
            cond,
            backend,
            users,
            indices.get,
            concurrency_limit=args.concurrency or pc.get("concurrency_limit", 5),
            memory=memory,
            **kwargs,
        )
    out = Path(args.out or f"rows-{cond.name}.jsonl")
    write_rows(out, rows)
    _emit({"out": str(out), "rows": len(rows), "aborted": aborted, "sha256": sha256_file(out)})
    return 0 if not aborted else 1


def cmd_evaluate(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    from pulse.evalkit.analytics import DEFAULT_EDGES
    from pulse.evalkit.factorial import build_report, validate_report
    from pulse.evalkit.rows import read_rows

    ec = cfg.get("evaluate", {})
    rows = [r for path in args.rows for r in read_rows(path)]
    if not rows:
        raise CliError("no rows to evaluate")
    report = build_report(
        rows,
        B=args.B or ec.get("B", 10_000),
        seed=args.seed if args.seed is not None else 0,
        edges=ec.get("confidence_edges", DEFAULT_EDGES),
    )
    validate_report(report)
    out = Path(args.out or "report.json")
    out.write_text(dumps(report) + "\n", encoding="utf-8")
    _emit({"out": str(out), "conditions": list(report["conditions"]), "sha256": sha256_file(out)})
    return 0


def cmd_report(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    from pulse.evalkit.factorial import render_markdown, validate_report

    report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    validate_report(report)
    md = render_markdown(report)
    if args.out:
        Path(args.out).write_text(md, encoding="utf-8")
        _emit({"out": args.out, "sha256": sha256_file(Path(args.out))})
    else:
        sys.stdout.write(md)
    return 0


def cmd_serve_tools(args: argparse.Namespace, cfg: dict[str, Any]) -> int:
    from pulse.server import serve_tools

    return serve_tools(args.data, args.user, args.ema, peer_index_path=args.peer_index)


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--config", default=None, help="TOML or JSON config file")
    common.add_argument("--out", default=None, help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pulse", description="Sensing-based affect prediction toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    p.add_argument("--users", type=int, default=None)
    p.add_argument("--days", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="validate and load a dataset")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("predict", parents=[common], help="run one condition and write EvalRows")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", choices=("structured", "agentic"), required=True)
    p.add_argument("--modality", choices=("sensing_only", "multimodal", "diary_only"), required=True)
    p.add_argument("--backend", choices=("scripted", "remote"), default="scripted")
    p.add_argument("--policy", choices=("reference", "baseline"), default="reference")
    p.add_argument("--users", default=None, help="comma-separated user ids")
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--concurrency", type=int, default=None)
    p.add_argument("--tool-transport", choices=("inprocess", "subprocess"), default="inprocess")
    p.add_argument("--memory-dir", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="metrics and comparisons over EvalRows")
    p.add_argument("--rows", nargs="+", required=True)
    p.add_argument("--B", type=int, default=None, help="bootstrap resamples")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="render a report as markdown tables")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve-tools", parents=[common], help="stdio JSON-RPC tool server")
    p.add_argument("--data", default=None)
    p.add_argument("--peer-index", default=None)
    p.add_argument("--user", default=None)
    p.add_argument("--ema", default=None, help="EMA timestamp (ISO 8601)")
    p.set_defaults(func=cmd_serve_tools)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except CliError as exc:
        print(f"pulse: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"pulse: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
