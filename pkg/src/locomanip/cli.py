"""Operator CLI: generate scenarios, run single episodes or suites, grade
trajectories, and fit shoulder-offset tables.

Exit codes: 0 success, 1 runtime failure, 2 usage error (including missing
input files). LOCO_LOG_LEVEL in {error, info, debug} controls logging.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .brain import BrainParams
from .episode import grade_clearance, run_episode
from .errors import LocomanipError
from .fileio import atomic_write_text, load_waypoints_csv
from .kinematics import LegModel, default_leg, load_kinematics
from .protocol import ExternalServiceProvider, FileMockChannel, RemoteChannel
from .reach import fit_offset_model
from .scenario import DIFFICULTIES, FAMILIES, Scenario, generate_scenario

log = logging.getLogger("locomanip")

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _setup_logging() -> None:
    level = os.environ.get("LOCO_LOG_LEVEL", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    logging.basicConfig(
        level=levels.get(level, logging.ERROR),
        format="%(levelname)s %(name)s: %(message)s")


def _require_file(path: str, parser: argparse.ArgumentParser) -> Path:
    p = Path(path)
    if not p.is_file():
        parser.exit(USAGE_ERROR, f"error: input file not found: {path}\n")
    return p


def _provider_factory(args, parser):
    if args.provider == "oracle":
        return None  # run_episode defaults to the oracle
    if args.provider == "mock":
        if not args.mock_responses:
            parser.exit(USAGE_ERROR,
                        "error: --provider mock requires --mock-responses\n")
        path = _require_file(args.mock_responses, parser)

        def factory(view, _path=path):
            return ExternalServiceProvider(FileMockChannel(_path))
        return factory
    if args.provider == "remote":
        if not args.endpoint:
            parser.exit(USAGE_ERROR,
                        "error: --provider remote requires --endpoint\n")

        def factory(view, _url=args.endpoint):
            return ExternalServiceProvider(RemoteChannel(_url))
        return factory
    parser.exit(USAGE_ERROR, f"error: unknown provider {args.provider}\n")


def _scenario_name(family: str, difficulty: str, k: int) -> str:
    return f"scenario_{family}_{difficulty}_{k}.json"


def cmd_generate(args, parser) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        scn = generate_scenario(args.family, args.difficulty, args.seed + k)
        path = out / _scenario_name(args.family, args.difficulty, k)
        atomic_write_text(path, scn.to_json())
        print(path)
    return 0


def cmd_run(args, parser) -> int:
    path = _require_file(args.scenario, parser)
    scn = Scenario.load(path)
    factory = _provider_factory(args, parser)
    report = run_episode(scn, provider_factory=factory)
    sys.stdout.write(report.to_json())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / f"report_{path.stem}.json", report.to_json())
    return 0


def _suite_entries(args, parser):
    families = FAMILIES if args.family == "all" else (args.family,)
    difficulties = DIFFICULTIES if args.difficulty == "both" else (args.difficulty,)
    if args.count <= 0:
        parser.exit(USAGE_ERROR, "error: --count must be positive\n")
    return [(f, d) for f in families for d in difficulties]


def _run_suite_episode(task):
    family, difficulty, k, seed = task
    scn = generate_scenario(family, difficulty, seed + k)
    report = run_episode(scn)
    return scn.to_json(), report


def cmd_suite(args, parser) -> int:
    if args.provider != "oracle":
        parser.exit(USAGE_ERROR,
                    "error: suites support the oracle provider only\n")
    entries = _suite_entries(args, parser)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(f, d, k, args.seed)
             for f, d in entries for k in range(args.count)]

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_suite_episode, tasks))
    else:
        results = [_run_suite_episode(t) for t in tasks]

    episode_rows = []
    summary: dict[tuple[str, str], list[int]] = {}
    for (family, difficulty, k, _), (scn_json, report) in zip(tasks, results):
        atomic_write_text(out / _scenario_name(family, difficulty, k), scn_json)
        atomic_write_text(out / f"report_{family}_{difficulty}_{k}.json",
                          report.canonical_json())
        episode_rows.append([
            family, difficulty, str(report.seed), str(int(report.success)),
            str(int(report.collision)), str(report.decisions),
            str(report.sim_steps),
            "" if report.min_clearance is None else repr(report.min_clearance),
            report.clearance_grade or "", report.abort_reason,
        ])
        acc = summary.setdefault((family, difficulty), [0, 0, 0])
        acc[0] += 1
        acc[1] += int(report.success)
        acc[2] += int(report.collision)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["family", "difficulty", "seed", "success", "collision",
                     "decisions", "sim_steps", "min_clearance",
                     "clearance_grade", "abort_reason"])
    writer.writerows(episode_rows)
    atomic_write_text(out / "episodes.csv", buf.getvalue())

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["family", "difficulty", "episodes", "successes",
                     "success_rate", "collisions"])
    for (family, difficulty), (n, ok, coll) in sorted(summary.items()):
        writer.writerow([family, difficulty, str(n), str(ok),
                         repr(ok / n), str(coll)])
    atomic_write_text(out / "summary.csv", buf.getvalue())
    sys.stdout.write((out / "summary.csv").read_text())
    # Unsuccessful episodes are data, not tool failures: still exit 0.
    return 0


def cmd_grade(args, parser) -> int:
    traj_path = _require_file(args.trajectory, parser)
    scn_path = _require_file(args.scenario, parser)
    traj = load_waypoints_csv(traj_path)
    if not traj:
        parser.exit(USAGE_ERROR, "error: trajectory CSV has no points\n")
    scn = Scenario.load(scn_path)
    grade = grade_clearance(traj, scn)
    payload = json.dumps({"category": grade.category,
                          "min_clearance": grade.min_clearance},
                         sort_keys=True, indent=2) + "\n"
    sys.stdout.write(payload)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(args.out, payload)
    return 0


def cmd_fit_offsets(args, parser) -> int:
    if args.leg_model:
        model = load_kinematics(_require_file(args.leg_model, parser))
        if not isinstance(model, LegModel):
            parser.exit(USAGE_ERROR,
                        "error: kinematics file does not describe a leg\n")
    else:
        model = default_leg()
    table = fit_offset_model(model, args.z0, args.samples)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(args.out)
    print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="locomanip",
        description="Loco-manipulation planning toolkit and benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_provider_flags(p):
        p.add_argument("--provider", choices=("oracle", "mock", "remote"),
                       default="oracle")
        p.add_argument("--endpoint", help="remote decision-service URL")
        p.add_argument("--mock-responses",
                       help="canned-response JSON for the mock provider")

    p = sub.add_parser("generate", help="generate scenario files")
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--difficulty", choices=DIFFICULTIES, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run one episode from a scenario file")
    p.add_argument("scenario")
    add_provider_flags(p)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run a seeded benchmark suite")
    p.add_argument("--family", choices=FAMILIES + ("all",), required=True)
    p.add_argument("--difficulty", choices=DIFFICULTIES + ("both",),
                   required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    add_provider_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("grade", help="grade a trajectory CSV against a scenario")
    p.add_argument("trajectory")
    p.add_argument("scenario")
    p.add_argument("--out")
    p.set_defaults(func=cmd_grade)

    p = sub.add_parser("fit-offsets", help="sample the leg model into an offset table")
    p.add_argument("--leg-model", help="leg kinematics JSON (default: built-in)")
    p.add_argument("--z0", type=float, default=0.72)
    p.add_argument("--samples", type=int, default=41)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_offsets)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except LocomanipError as exc:
        log.error("%s", exc)
        sys.stderr.write(f"error: {exc}\n")
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
