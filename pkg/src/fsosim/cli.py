"""Command-line entry point: provisioning runs, simulations, and detector replay.

Exit codes are a stable contract: 0 on success, 1 on input errors (bad files,
bad flags, malformed traces), and 2 when a scenario is infeasible (wavelength
bound violated or a demand cannot be routed).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from .detection import (ACK, CENTRALIZED, DATA, IN_NETWORK, SEQ_MOD, SYNACK,
                        DetectorConfig, FlowDetector, detection_metrics,
                        read_packet_csv, write_detection_csv)
from .engine import POLICIES, provision_for, run, write_per_flow_csv, write_summary_csv
from .errors import (ConfigurationError, ContractError, FeasibilityError,
                     InfeasibleDemandError, SimulationError, TraceFormatError)
from .flowclass import ELEPHANT, MICE
from .traffic import ScenarioConfig

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2


def _load_scenario(path: str) -> ScenarioConfig:
    try:
        return ScenarioConfig.from_file(path)
    except FileNotFoundError:
        raise _InputError(f"scenario file not found: {path}")
    except json.JSONDecodeError as exc:
        raise _InputError(f"scenario {path} is not valid JSON: {exc.msg} at line {exc.lineno}")
    except (TypeError, ConfigurationError) as exc:
        raise _InputError(f"scenario {path}: {exc}")


class _InputError(Exception):
    pass


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _write_manifest(outdir: Path, scenario_path: str, policies, seeds, files) -> None:
    manifest = {
        "scenario": scenario_path,
        "policies": list(policies),
        "seeds": list(seeds),
        "created_unix": time.time(),
        "files": [{"path": str(p.relative_to(outdir)), "sha256": _sha256(p)}
                  for p in sorted(files)],
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def cmd_provision(args) -> int:
    scenario = _load_scenario(args.scenario)
    if args.k_paths:
        scenario.k_paths = args.k_paths
    flows = scenario.build_flows()
    result = provision_for(scenario, flows, "fg-fso", scenario.seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    table_path = outdir / "lightpaths.json"
    table_path.write_text(result.to_json())
    summary_lines = ["pair      class     wavelength  intensity  capacity_bps  path"]
    for key, lp in sorted(result.lightpaths.items(), key=lambda kv: kv[1].lightpath_id):
        summary_lines.append(
            f"{lp.src}->{lp.dst:<4} {lp.flow_class:<9} {lp.wavelength:<10} "
            f"{max(lp.hop_intensities):<10.4g} {lp.capacity_bps:<13.6g} "
            f"{'-'.join(str(n) for n in lp.path)}")
    (outdir / "lightpaths.txt").write_text("\n".join(summary_lines) + "\n")
    print(f"provisioned {len(result.lightpaths)} lightpaths -> {table_path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario = _load_scenario(args.scenario)
    if args.k_paths:
        scenario.k_paths = args.k_paths
    if not args.policy:
        raise _InputError("at least one --policy is required")
    for policy in args.policy:
        if policy not in POLICIES:
            raise _InputError(
                f"unknown policy {policy!r}; valid names: {', '.join(POLICIES)}")
    seeds = args.seed or [scenario.seed]
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    reports = []
    files = []
    for policy in args.policy:
        for seed in seeds:
            report = run(scenario, policy, seed)
            reports.append(report)
            path = outdir / f"flows_{policy}_seed{seed}.csv"
            write_per_flow_csv(path, report)
            files.append(path)
    summary_path = outdir / "summary.csv"
    write_summary_csv(summary_path, reports)
    files.append(summary_path)
    _write_manifest(outdir, args.scenario, args.policy, seeds, files)
    print(f"wrote {len(files)} CSVs and manifest.json -> {outdir}")
    return EXIT_OK


def cmd_detect_replay(args) -> int:
    try:
        events = read_packet_csv(args.trace)
    except FileNotFoundError:
        raise _InputError(f"trace file not found: {args.trace}")
    except TraceFormatError as exc:
        raise _InputError(str(exc))
    config = DetectorConfig(
        mode=args.mode,
        threshold_bytes=args.threshold_bytes,
        ack_sample_rate=args.ack_sample_rate,
        stop_useless_notifications=not args.no_stop_useless,
        preclassify_enabled=not args.no_preclassify,
    )
    detector = FlowDetector(config)
    detector.observe_all(events)
    truth = _ground_truth(events, args.threshold_bytes)
    metrics = detection_metrics(detector, truth)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for key in sorted(truth, key=lambda k: k.flow_id()):
        record = detector.records.get(key)
        rows.append({
            "flow_id": key.flow_id(),
            "true_class": truth[key],
            "detected_class": record.result_class if record else MICE,
            "detect_ts_ns": record.classified_ts_ns if record and record.classified_ts_ns else "",
            "notifications": record.notifications if record else 0,
        })
    write_detection_csv(outdir / "detection.csv", rows)
    overhead = {
        "packets_total": metrics.events_seen,
        "packets_captured": metrics.packets_captured,
        "notifications_sent": metrics.notifications_sent,
        "flows": metrics.flow_count,
        "true_negatives": metrics.true_negatives,
        "false_positives": metrics.false_positives,
    }
    (outdir / "overhead.json").write_text(json.dumps(overhead, indent=2))
    print(f"replayed {metrics.events_seen} packets over {metrics.flow_count} flows "
          f"-> {outdir / 'detection.csv'}")
    return EXIT_OK


def _ground_truth(events, threshold_bytes: int) -> dict:
    """True classes recovered from the full trace: acknowledged bytes vs threshold.

    Uses every ACK (unsampled), falling back to summed data payloads for flows
    whose trace carries no ACKs.
    """
    isns = {}
    acked = {}
    data_bytes = {}
    for event in events:
        if event.flags == SYNACK:
            isns.setdefault(event.key().reversed(), event.ack)
        elif event.flags == ACK:
            key = event.key().reversed()
            if key in isns:
                bytes_acked = (event.ack - isns[key]) % SEQ_MOD
                acked[key] = max(acked.get(key, 0), bytes_acked)
        elif event.flags == DATA:
            key = event.key()
            data_bytes[key] = data_bytes.get(key, 0) + event.payload_len
    truth = {}
    for key in isns:
        size = acked.get(key, data_bytes.get(key, 0))
        if size == 0 and key not in acked and key not in data_bytes:
            continue  # pure control direction, nothing transferred
        truth[key] = ELEPHANT if size > threshold_bytes else MICE
    return truth


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fsosim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("provision", help="run lightpath provisioning for a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-paths", type=int, default=0)
    p.set_defaults(func=cmd_provision)

    p = sub.add_parser("simulate", help="simulate a scenario under one or more policies")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policy", action="append", default=[])
    p.add_argument("--seed", action="append", type=int, default=[])
    p.add_argument("--out", required=True)
    p.add_argument("--k-paths", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect-replay", help="replay a packet trace through the detector")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=(IN_NETWORK, CENTRALIZED), default=IN_NETWORK)
    p.add_argument("--threshold-bytes", type=int, default=1 << 20)
    p.add_argument("--ack-sample-rate", type=int, default=100)
    p.add_argument("--no-stop-useless", action="store_true")
    p.add_argument("--no-preclassify", action="store_true")
    p.set_defaults(func=cmd_detect_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FeasibilityError, InfeasibleDemandError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigurationError, ContractError, TraceFormatError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
