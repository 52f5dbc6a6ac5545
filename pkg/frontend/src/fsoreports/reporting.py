"""Chart generation over simulator CSV outputs.

Each report spec names input CSVs, a chart kind, grouping columns, and an
output image.  The exact numbers plotted are always written next to the image
as a sidecar CSV, so chart contents can be diffed and recomputed
independently.  Aggregation is pure group-by arithmetic over the inputs; the
tool knows nothing about the simulator beyond its CSV column names.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
import pandas as pd

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

CHART_KINDS = ("accuracy-bars", "speed-bars", "overhead-series",
               "throughput-bars", "fct-cdf")

# per-flow simulator CSVs and detector replay CSVs name these columns differently
COLUMN_ALIASES = {
    "class_true": "true_class",
    "class_detected": "detected_class",
    "detect_ns": "detect_ts_ns",
}

PNG_METADATA = {"Software": "fsoreports"}


@dataclass
class ReportSpec:
    """One chart request: inputs, kind, grouping, output image path."""

    kind: str
    inputs: list
    out: str
    group_by: list = field(default_factory=list)
    filter: dict = field(default_factory=dict)
    title: str = ""

    def __post_init__(self):
        if self.kind not in CHART_KINDS:
            raise ValueError(f"unknown chart kind {self.kind!r}; valid: {', '.join(CHART_KINDS)}")
        if not self.inputs:
            raise ValueError("a report spec needs at least one input CSV")

    @classmethod
    def from_json(cls, text: str) -> "ReportSpec":
        return cls(**json.loads(text))

    @classmethod
    def from_file(cls, path) -> "ReportSpec":
        with open(path) as handle:
            return cls.from_json(handle.read())

    def sidecar_path(self) -> Path:
        return Path(self.out).with_suffix(".csv")


def load_inputs(spec: ReportSpec) -> pd.DataFrame:
    """Concatenate the input CSVs with normalized column names and a source label."""
    frames = []
    for path in spec.inputs:
        # round_trip float parsing keeps sidecar numbers reproducible from the
        # raw CSVs with plain python arithmetic
        frame = pd.read_csv(path, float_precision="round_trip")
        frame = frame.rename(columns=COLUMN_ALIASES)
        frame["source"] = Path(path).stem
        frames.append(frame)
    data = pd.concat(frames, ignore_index=True)
    for column, value in spec.filter.items():
        column = COLUMN_ALIASES.get(column, column)
        _require_columns(data, [column], spec.kind)
        data = data[data[column] == value]
    if data.empty:
        raise ValueError("inputs contain no rows after filtering; nothing to plot")
    return data


def _require_columns(data: pd.DataFrame, columns, kind: str) -> None:
    for column in columns:
        if column not in data.columns:
            raise ValueError(f"{kind}: required column {column!r} missing from inputs")


def _group_columns(spec: ReportSpec, default) -> list:
    return list(spec.group_by) if spec.group_by else list(default)


def _grouped(data: pd.DataFrame, columns):
    """Deterministically ordered (key, subframe) pairs; warns on empty groups."""
    pairs = []
    for key, frame in data.groupby(columns, dropna=False, sort=True):
        if not isinstance(key, tuple):
            key = (key,)
        if frame.empty:
            warnings.warn(f"group {key} is empty and will be omitted")
            continue
        pairs.append((key, frame))
    return pairs


def aggregate(spec: ReportSpec, data: pd.DataFrame) -> pd.DataFrame:
    """The numbers a chart will show, as one tidy frame (also the sidecar)."""
    kind = spec.kind
    if kind == "accuracy-bars":
        groups = _group_columns(spec, ("source",))
        _require_columns(data, groups + ["true_class", "detected_class"], kind)
        classified = data[data["detected_class"].notna() & (data["detected_class"] != "")]
        if classified.empty:
            raise ValueError("accuracy-bars: no rows carry a detected class")
        rows = []
        for key, frame in _grouped(classified, groups):
            matches = (frame["true_class"] == frame["detected_class"]).sum()
            rows.append(dict(zip(groups, key))
                        | {"flows": len(frame), "accuracy": matches / len(frame)})
        return pd.DataFrame(rows)

    if kind == "speed-bars":
        groups = _group_columns(spec, ("policy",))
        _require_columns(data, groups + ["detect_ts_ns"], kind)
        detected = data[pd.to_numeric(data["detect_ts_ns"], errors="coerce").notna()].copy()
        if detected.empty:
            raise ValueError("speed-bars: no rows carry a detection timestamp")
        detected["detect_ts_ns"] = detected["detect_ts_ns"].astype("int64")
        if "start_ns" in detected.columns:
            latency = detected["detect_ts_ns"] - detected["start_ns"].astype("int64")
        else:
            latency = detected["detect_ts_ns"]
        detected["latency_ns"] = latency
        rows = []
        for key, frame in _grouped(detected, groups):
            values = frame["latency_ns"].tolist()
            # plain left-fold mean so sidecars are reproducible independently
            rows.append(dict(zip(groups, key))
                        | {"flows": len(values),
                           "mean_detect_latency_ns": sum(values) / len(values)})
        return pd.DataFrame(rows)

    if kind == "overhead-series":
        groups = _group_columns(spec, ("source",))
        _require_columns(data, groups + ["detect_ts_ns", "notifications"], kind)
        detected = data[pd.to_numeric(data["detect_ts_ns"], errors="coerce").notna()].copy()
        if detected.empty:
            raise ValueError("overhead-series: no rows carry a detection timestamp")
        detected["detect_ts_ns"] = detected["detect_ts_ns"].astype("int64")
        rows = []
        for key, frame in _grouped(detected, groups):
            ordered = frame.sort_values(["detect_ts_ns", "notifications"], kind="mergesort")
            running = 0
            for _, record in ordered.iterrows():
                running += int(record["notifications"])
                rows.append(dict(zip(groups, key))
                            | {"detect_ts_ns": int(record["detect_ts_ns"]),
                               "cumulative_notifications": running})
        return pd.DataFrame(rows)

    if kind == "throughput-bars":
        groups = _group_columns(spec, ("policy", "flow_class"))
        _require_columns(data, groups + ["throughput_bps"], kind)
        rows = []
        for key, frame in _grouped(data, groups):
            values = frame["throughput_bps"].tolist()
            rows.append(dict(zip(groups, key))
                        | {"runs": len(values),
                           "mean_throughput_bps": sum(values) / len(values)})
        return pd.DataFrame(rows)

    # fct-cdf
    groups = _group_columns(spec, ("policy",))
    _require_columns(data, groups + ["fct_ns"], kind)
    rows = []
    for key, frame in _grouped(data, groups):
        values = sorted(frame["fct_ns"].astype("int64"))
        for rank, value in enumerate(values, start=1):
            rows.append(dict(zip(groups, key))
                        | {"fct_ns": int(value), "cdf": rank / len(values)})
    return pd.DataFrame(rows)


def _draw(spec: ReportSpec, table: pd.DataFrame) -> plt.Figure:
    kind = spec.kind
    fig, axis = plt.subplots(figsize=(7, 4.2))
    if kind in ("accuracy-bars", "speed-bars", "throughput-bars"):
        value_column = {"accuracy-bars": "accuracy",
                        "speed-bars": "mean_detect_latency_ns",
                        "throughput-bars": "mean_throughput_bps"}[kind]
        label_columns = [c for c in table.columns
                         if c not in (value_column, "flows", "runs")]
        labels = table[label_columns].astype(str).agg("/".join, axis=1)
        axis.bar(labels, table[value_column], color="tab:blue", edgecolor="black")
        axis.set_ylabel(value_column.replace("_", " "))
        axis.tick_params(axis="x", rotation=30)
    elif kind == "overhead-series":
        group_columns = [c for c in table.columns
                         if c not in ("detect_ts_ns", "cumulative_notifications")]
        for key, frame in table.groupby(group_columns, sort=True):
            label = "/".join(str(part) for part in (key if isinstance(key, tuple) else (key,)))
            axis.step(frame["detect_ts_ns"] / 1e6, frame["cumulative_notifications"],
                      where="post", label=label)
        axis.set_xlabel("time (ms)")
        axis.set_ylabel("cumulative notifications")
        axis.legend(fontsize=8)
    else:  # fct-cdf
        group_columns = [c for c in table.columns if c not in ("fct_ns", "cdf")]
        for key, frame in table.groupby(group_columns, sort=True):
            label = "/".join(str(part) for part in (key if isinstance(key, tuple) else (key,)))
            axis.step(frame["fct_ns"] / 1e6, frame["cdf"], where="post", label=label)
        axis.set_xlabel("flow completion time (ms)")
        axis.set_ylabel("fraction of flows")
        axis.set_ylim(0, 1.02)
        axis.legend(fontsize=8)
    axis.set_title(spec.title or spec.kind)
    axis.grid(True, alpha=0.3)
    fig.tight_layout()
    return fig


def render(spec: ReportSpec) -> pd.DataFrame:
    """Produce the image and its sidecar CSV; returns the aggregated table.

    Aggregation failures surface before anything is written, so a failed
    render never leaves a partial image behind.
    """
    data = load_inputs(spec)
    table = aggregate(spec, data)
    out = Path(spec.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    figure = _draw(spec, table)
    try:
        if out.suffix.lower() == ".png":
            figure.savefig(out, metadata=dict(PNG_METADATA))
        else:
            figure.savefig(out)
    finally:
        plt.close(figure)
    table.to_csv(spec.sidecar_path(), index=False)
    return table
