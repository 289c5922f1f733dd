"""Command-line entry point: ``coplan <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import harness
from .config import load_config
from .mockserver import MODES, MockSettings, make_server
from .planner import BACKENDS, BackendConfig
from .scenario import Scenario
from .sft import build_sft_record, export_jsonl

log = logging.getLogger("coplan")


def _scenario_files(path: Path) -> List[Path]:
    if path.is_dir():
        return sorted(path.glob("*.json"))
    return [path]


def _load_scenario(path: Path) -> Scenario:
    return Scenario.from_json(path.read_text(encoding="utf-8"))


def _backend(args, base: BackendConfig) -> BackendConfig:
    from dataclasses import replace

    kw = {}
    if getattr(args, "backend", None):
        kw["kind"] = args.backend
    if getattr(args, "endpoint", None):
        kw["endpoint"] = args.endpoint
    if getattr(args, "timeout", None):
        kw["timeout"] = args.timeout
    return replace(base, **kw)


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.profile == "suite":
        scenarios = harness.generate_suite(args.count or 50, args.seed)
    else:
        scenarios = [
            harness.generate_scenario(harness.ScenarioProfile.parse(args.profile, seed=args.seed + i))
            for i in range(args.count or 1)
        ]
    for sc in scenarios:
        (out / f"{sc.scenario_id}.json").write_text(sc.to_json(), encoding="utf-8")
    print(f"wrote {len(scenarios)} scenario(s) to {out}")
    return 0


def cmd_run(args) -> int:
    stage_cfg, backend_cfg = load_config(args.config)
    backend_cfg = _backend(args, backend_cfg)
    src = Path(args.scenario)
    files = _scenario_files(src)
    if not files:
        print(f"no scenarios under {src}", file=sys.stderr)
        return 1
    out = Path(args.out)
    many = src.is_dir()
    if many:
        out.mkdir(parents=True, exist_ok=True)
    for f in files:
        result = harness.run_pipeline(_load_scenario(f), backend_cfg, stage_cfg)
        target = out / f"{result.scenario_id}.run.json" if many else out
        target.write_text(result.to_json(), encoding="utf-8")
        flag = " (fallback)" if result.fallback else ""
        print(f"{result.scenario_id}: backend={result.backend}{flag} total={result.latency_ms['total']:.1f} ms")
        for err in result.errors:
            print(f"  error: {err}")
    return 0


def cmd_eval(args) -> int:
    stage_cfg, backend_cfg = load_config(args.config)
    files = sorted(Path(args.runs).glob("*.json"))
    results = [harness.RunResult.from_json(f.read_text(encoding="utf-8")) for f in files]
    if not results:
        print(f"no run files under {args.runs}", file=sys.stderr)
        return 1
    gt = {r.scenario_id: harness.ground_truth_plan(r.scenario, stage_cfg, backend_cfg) for r in results}
    report = harness.evaluate(results, gt)
    report_path = Path(args.report)
    report_path.write_text(report.to_json(), encoding="utf-8")
    report_path.with_suffix(".csv").write_text(report.to_csv(), encoding="utf-8")
    s = report.summary
    fmt = lambda v: "n/a" if v is None else f"{v:.3f}"  # noqa: E731
    print(f"scenarios={s['n']} skipped={report.skipped}")
    print(f"collision={fmt(s['collision_rate'])} baseline={fmt(s['baseline_collision_rate'])} "
          f"crr={fmt(s['crr'])} mcd={fmt(s['mcd'])} vpq={fmt(s['vpq'])} miou={fmt(s['miou'])}")
    return 0


def cmd_export_sft(args) -> int:
    stage_cfg, backend_cfg = load_config(args.config)
    records = []
    for f in _scenario_files(Path(args.scenarios)):
        sc = _load_scenario(f)
        result = harness.run_pipeline(sc, BackendConfig(kind="null"), stage_cfg)
        safe = harness.ground_truth_plan(sc, stage_cfg, backend_cfg)
        records.append(build_sft_record(result.ctx, (result.text_prompt, result.visual), safe))
    n = export_jsonl(records, args.out)
    print(f"wrote {n} record(s) to {args.out}")
    return 0


def cmd_plot(args) -> int:
    result = harness.RunResult.from_json(Path(args.run).read_text(encoding="utf-8"))
    path = harness.emit_plot(result, args.out)
    print(f"wrote {path}")
    return 0


def cmd_bench(args) -> int:
    stage_cfg, backend_cfg = load_config(args.config)
    backend_cfg = _backend(args, backend_cfg)
    stats = harness.bench(_load_scenario(Path(args.scenario)), backend_cfg, stage_cfg, reps=args.reps)
    if args.json:
        print(json.dumps(stats, indent=1))
        return 0
    print(f"backend={stats['backend']} reps={stats['reps']}")
    for stage, ms in stats["stages_ms"].items():
        print(f"  {stage:<12} {ms:8.3f} ms")
    print(f"  {'end-to-end':<12} {stats['end_to_end_ms']:8.3f} ms")
    return 0


def cmd_serve_mock(args) -> int:
    server = make_server(MockSettings(args.mode, args.delay), args.host, args.port)
    print(f"mock planner on http://{server.server_address[0]}:{server.server_address[1]} mode={args.mode}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coplan", description="Roadside-assisted hazard-aware planning harness.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write synthetic scenarios")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--profile", default="suite",
                   help="'suite' or location/weather/time_of_day[/density[/hazard_prob]]")
    g.add_argument("--count", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run the pipeline on a scenario file or directory")
    r.add_argument("--scenario", required=True)
    r.add_argument("--backend", choices=BACKENDS)
    r.add_argument("--endpoint")
    r.add_argument("--timeout", type=float)
    r.add_argument("--config")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="score run files against ground-truth plans")
    e.add_argument("--runs", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--config")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-sft", help="write fine-tuning records as JSONL")
    x.add_argument("--scenarios", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--config")
    x.set_defaults(func=cmd_export_sft)

    pl = sub.add_parser("plot", help="render a run as PGM (or colour PPM)")
    pl.add_argument("--run", required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)

    b = sub.add_parser("bench", help="median per-stage latency")
    b.add_argument("--scenario", required=True)
    b.add_argument("--reps", type=int, default=30)
    b.add_argument("--backend", choices=BACKENDS, default="geometric")
    b.add_argument("--endpoint")
    b.add_argument("--config")
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_bench)

    m = sub.add_parser("serve-mock", help="serve the bundled mock inference endpoint")
    m.add_argument("--mode", choices=MODES, default="zero")
    m.add_argument("--delay", type=float, default=2.0)
    m.add_argument("--host", default="127.0.0.1")
    m.add_argument("--port", type=int, default=8765)
    m.set_defaults(func=cmd_serve_mock)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
