"""Command line front end: run, evaluate, synth, dump-state.

The activity log is a CSV with header ``id,date,user,pc,activity``.  Runs
write line-delimited JSON: one alert per line and one record per scored
event, with sorted keys so identical runs produce identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from typing import Iterator, Sequence

from . import evaluation, synth
from .engine import Event
from .errors import FlowdetectError, InputError
from .pipeline import Pipeline, PipelineConfig
from .windowing import DEFAULT_DATE_FORMAT

REQUIRED_COLUMNS = ("id", "date", "user", "pc", "activity")


@dataclass
class IngestStats:
    rows: int = 0
    malformed: int = 0
    filtered: int = 0


def ingest(
    path: str,
    activity_filter: str | None = None,
    stats: IngestStats | None = None,
) -> Iterator[Event]:
    """Yield ``e(user, date, id)`` events from an activity log.

    Rows with an empty id, date or user are counted and skipped; rows not
    matching ``activity_filter`` are counted separately.
    """
    stats = stats if stats is not None else IngestStats()
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or not set(REQUIRED_COLUMNS) <= set(reader.fieldnames):
            raise InputError(
                f"{path}: expected columns {','.join(REQUIRED_COLUMNS)}, "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            stats.rows += 1
            event_id, when, user = row.get("id"), row.get("date"), row.get("user")
            if not event_id or not when or not user:
                stats.malformed += 1
                continue
            if activity_filter is not None and row.get("activity") != activity_filter:
                stats.filtered += 1
                continue
            yield Event("e", (user, when, event_id))


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    if getattr(args, "date_format", None):
        config.date_format = args.date_format
    if getattr(args, "activity_filter", None):
        config.activity_filter = args.activity_filter
    return config


def _jsonl(record: dict) -> str:
    return json.dumps(record, sort_keys=True) + "\n"


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args)
    pipeline = Pipeline(config)
    stats = IngestStats()
    alerts_out = open(args.alerts_out, "w", encoding="utf-8") if args.alerts_out else None
    scores_out = open(args.scores_out, "w", encoding="utf-8") if args.scores_out else None
    try:
        for event in ingest(args.input, config.activity_filter, stats):
            fresh = pipeline.process_event(event)
            if alerts_out:
                for alert in fresh:
                    alerts_out.write(
                        _jsonl(
                            {
                                "eventId": alert.event_id,
                                "userId": alert.user_id,
                                "eventDate": alert.event_date,
                                "votes": alert.votes,
                            }
                        )
                    )
            scored = pipeline.drain_scores()
            if scores_out:
                for record in scored:
                    scores_out.write(_jsonl(record.to_record()))
    finally:
        if alerts_out:
            alerts_out.close()
        if scores_out:
            scores_out.close()
    c = pipeline.counters
    print(
        f"events={c.events} users={pipeline.user_count} alerts={c.alerts} "
        f"retrains={c.retrains} skipped_dates={c.skipped_dates} "
        f"malformed_rows={stats.malformed} filtered_rows={stats.filtered}"
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    report = evaluation.evaluate_files(args.input, args.labels, args.field)
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    events = synth.generate(
        n_users=args.users,
        n_weeks=args.weeks,
        anomaly_rate=args.rate,
        seed=args.seed,
        profile=args.profile,
    )
    written = synth.write_events(events, args.events_out)
    synth.write_labels(events, args.labels_out)
    anomalies = sum(e.label for e in events)
    print(f"events={written} anomalies={anomalies} users={args.users} weeks={args.weeks}")
    return 0


def cmd_dump_state(args: argparse.Namespace) -> int:
    config = _load_config(args)
    pipeline = Pipeline(config)
    stats = IngestStats()
    for event in ingest(args.input, config.activity_filter, stats):
        pipeline.process_event(event)
    text = pipeline.dump()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowdetect",
        description="Per-user anomaly detection over activity logs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="process a log and write alerts and scores")
    run.add_argument("--input", required=True, help="activity log CSV")
    run.add_argument("--config", help="JSON pipeline configuration")
    run.add_argument("--alerts-out", help="alerts output, one JSON object per line")
    run.add_argument("--scores-out", help="scored events output, one JSON object per line")
    run.add_argument("--activity-filter", help="keep only rows with this activity value")
    run.add_argument("--date-format", help=f"timestamp layout (default {DEFAULT_DATE_FORMAT!r})")
    run.set_defaults(handler=cmd_run)

    ev = sub.add_parser("evaluate", help="compare a scores file against labels")
    ev.add_argument("--input", required=True, help="scores file from a run")
    ev.add_argument("--labels", required=True, help="CSV with columns id,label")
    ev.add_argument(
        "--field",
        default="votes",
        help="score to sweep for the ROC: votes or a detector name",
    )
    ev.set_defaults(handler=cmd_evaluate)

    sy = sub.add_parser("synth", help="generate a labelled synthetic activity log")
    sy.add_argument("--users", type=int, default=50)
    sy.add_argument("--weeks", type=int, default=26)
    sy.add_argument("--rate", type=float, default=0.05, help="anomaly fraction of all events")
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--profile", default="shift", choices=synth.PROFILES)
    sy.add_argument("--events-out", required=True)
    sy.add_argument("--labels-out", required=True)
    sy.set_defaults(handler=cmd_synth)

    dump = sub.add_parser("dump-state", help="run a log and print the final machine state")
    dump.add_argument("--input", required=True, help="activity log CSV")
    dump.add_argument("--config", help="JSON pipeline configuration")
    dump.add_argument("--activity-filter")
    dump.add_argument("--date-format")
    dump.add_argument("--out", help="write the state here instead of stdout")
    dump.set_defaults(handler=cmd_dump_state)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (FlowdetectError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
