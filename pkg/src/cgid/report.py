"""Report emission and parsing.

A run produces three artifacts, all byte-deterministic for a fixed seed:

* ``report.jsonl`` - one JSON record per line: a ``config`` record followed
  by one ``metric`` record per stage per metric.
* ``report.tsv`` - flat table, one row per (seed, stage), columns
  method, ood_ratio, stage, A_IND, F_IND, A_OOD, F_OOD, A_ALL, F_ALL,
  Loss, Gain, seed.
* ``dumps/`` - per-stage feature dumps in the embedding corpus format with
  predicted and true labels appended.

Wall-clock timings go to the run log, never into report files.
"""

import json
import os
from dataclasses import dataclass, field

from .errors import ComparisonError, IngestionError

TABULAR_COLUMNS = ["method", "ood_ratio", "stage", "A_IND", "F_IND", "A_OOD",
                   "F_OOD", "A_ALL", "F_ALL", "Loss", "Gain", "seed"]

_METRIC_FIELDS = {
    "A_IND": "a_ind", "F_IND": "f_ind", "A_OOD": "a_ood", "F_OOD": "f_ood",
    "A_ALL": "a_all", "F_ALL": "f_all", "Loss": "loss", "Gain": "gain",
}


@dataclass
class StageReport:
    method: str
    ood_ratio: float
    seed: int
    stage: int
    a_ind: float
    f_ind: float
    a_ood: float = None  # undefined at stage 0
    f_ood: float = None
    a_all: float = None
    f_all: float = None
    loss: float = None
    gain: float = None
    compactness: dict = field(default_factory=dict)  # class-set index -> value
    k_est: int = None
    k_true: int = None
    wall_clock: float = field(default=None, compare=False)

    def metric_items(self):
        for column, attr in _METRIC_FIELDS.items():
            value = getattr(self, attr)
            if value is not None:
                yield column, float(value)
        for idx in sorted(self.compactness):
            yield f"compactness.{idx}", float(self.compactness[idx])
        if self.k_est is not None:
            yield "K_est", float(self.k_est)
        if self.k_true is not None:
            yield "K_true", float(self.k_true)


def _fmt(value):
    return "" if value is None else f"{value:.6f}"


def emit_report(reports, out_dir, config=None, feature_dumps=None):
    """Write report.jsonl, report.tsv, and optional dumps/ under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    jsonl_path = os.path.join(out_dir, "report.jsonl")
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"record": "config", "config": config or {}},
                            sort_keys=True) + "\n")
        for rep in reports:
            base = {
                "record": "metric",
                "method": rep.method,
                "ood_ratio": rep.ood_ratio,
                "seed": rep.seed,
                "stage": rep.stage,
            }
            for name, value in rep.metric_items():
                fh.write(json.dumps({**base, "metric": name, "value": value},
                                    sort_keys=True) + "\n")

    tsv_path = os.path.join(out_dir, "report.tsv")
    with open(tsv_path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(TABULAR_COLUMNS) + "\n")
        for rep in reports:
            row = [rep.method, f"{rep.ood_ratio:g}", str(rep.stage),
                   _fmt(rep.a_ind), _fmt(rep.f_ind), _fmt(rep.a_ood),
                   _fmt(rep.f_ood), _fmt(rep.a_all), _fmt(rep.f_all),
                   _fmt(rep.loss), _fmt(rep.gain), str(rep.seed)]
            fh.write("\t".join(row) + "\n")

    if feature_dumps:
        dump_dir = os.path.join(out_dir, "dumps")
        os.makedirs(dump_dir, exist_ok=True)
        for (seed, stage), (split_tags, true_labels, feats, preds) in \
                sorted(feature_dumps.items()):
            path = os.path.join(dump_dir, f"features_seed{seed}_stage{stage}.tsv")
            with open(path, "w", encoding="utf-8") as fh:
                for i in range(len(true_labels)):
                    floats = " ".join(repr(float(v)) for v in feats[i])
                    fh.write(f"{split_tags[i]}\t{true_labels[i]}\t{floats}"
                             f"\t{preds[i]}\t{true_labels[i]}\n")
    return jsonl_path, tsv_path


def parse_report(path):
    """Read report.jsonl back into (config, [StageReport])."""
    config = None
    rows = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise IngestionError("invalid JSON record", lineno) from None
            kind = rec.get("record")
            if kind == "config":
                config = rec.get("config")
            elif kind == "metric":
                key = (rec["seed"], rec["stage"])
                rep = rows.get(key)
                if rep is None:
                    rep = StageReport(method=rec["method"],
                                      ood_ratio=rec["ood_ratio"],
                                      seed=rec["seed"], stage=rec["stage"],
                                      a_ind=None, f_ind=None)
                    rows[key] = rep
                name, value = rec["metric"], rec["value"]
                if name in _METRIC_FIELDS:
                    setattr(rep, _METRIC_FIELDS[name], value)
                elif name.startswith("compactness."):
                    rep.compactness[int(name.split(".", 1)[1])] = value
                elif name == "K_est":
                    rep.k_est = int(value)
                elif name == "K_true":
                    rep.k_true = int(value)
                else:
                    raise IngestionError(f"unknown metric {name!r}", lineno)
            else:
                raise IngestionError(f"unknown record type {kind!r}", lineno)
    reports = [rows[k] for k in sorted(rows)]
    return config, reports


def _median(values):
    values = sorted(values)
    n = len(values)
    mid = n // 2
    return values[mid] if n % 2 else 0.5 * (values[mid - 1] + values[mid])


def compare_reports(paths):
    """Side-by-side per-method medians of the final-stage metrics.

    All reports must share the data/split configuration and the seed set;
    only method-specific settings may differ.
    """
    if not paths:
        raise ComparisonError("no reports given")
    per_method = {}
    fingerprints = {}
    for path in paths:
        config, reports = parse_report(path)
        if not reports:
            raise ComparisonError(f"{path} has no stage records")
        shared = {k: config.get(k) for k in ("data", "split")} if config else {}
        method = reports[0].method
        seeds = tuple(sorted({r.seed for r in reports}))
        fingerprints[path] = (json.dumps(shared, sort_keys=True), seeds)
        per_method.setdefault(method, []).extend(reports)
    baseline = next(iter(fingerprints.values()))
    for path, fp in fingerprints.items():
        if fp != baseline:
            raise ComparisonError(
                f"{path} has a different data source or seed set"
            )

    table_rows = []
    metric_names = ["A_IND", "F_IND", "A_OOD", "F_OOD", "A_ALL", "F_ALL",
                    "Loss", "Gain"]
    for method in sorted(per_method):
        reports = per_method[method]
        final = max(r.stage for r in reports)
        last = [r for r in reports if r.stage == final]
        row = {"method": method, "stage": final}
        for name in metric_names:
            attr = _METRIC_FIELDS[name]
            vals = [getattr(r, attr) for r in last
                    if getattr(r, attr) is not None]
            row[name] = _median(vals) if vals else None
        table_rows.append(row)

    header = ["method", "stage"] + metric_names
    lines = ["\t".join(header)]
    for row in table_rows:
        lines.append("\t".join(
            [row["method"], str(row["stage"])]
            + [_fmt(row[name]) for name in metric_names]
        ))
    return table_rows, "\n".join(lines) + "\n"
