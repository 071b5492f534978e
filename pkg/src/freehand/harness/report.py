"""CSV tables and line plots from sweep and ablation results.

Table cells are ``mean±std`` with both numbers written by ``repr`` so the
loader recovers them exactly. Header lines start with ``#``.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path
from typing import Iterable

import numpy as np

from ..reconstruct import METRIC_NAMES
from . import plotting
from .ablation import AblationReport
from .sweep import POOLING_RULE, SweepResult

FORMATS = ("csv", "png")
PM = "±"
# full-scale reference numbers (real forearm data); not reproducible at desk scale
REFERENCE_ROWS = {"M=100 best eps_acc": (4.01, 4.01), "M=100 best eps_drift": (7.24, 8.33), "M=2 eps_acc": (22.75, None)}


class ReportError(OSError):
    pass


def _cell(mean: float, std: float) -> str:
    return f"{float(mean)!r}{PM}{float(std)!r}"


def _parse_cell(text: str) -> tuple[float, float]:
    m, s = text.split(PM)
    return float(m), float(s)


def _writable_dir(path: str | Path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create report directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ReportError(f"report directory {out} is not writable")
    return out


def write_table(path: Path, header: dict, rows: list[dict[str, tuple[float, float]]], keys: list) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as f:
        for k, v in header.items():
            f.write(f"# {k}: {v}\n")
        w = csv.writer(f)
        w.writerow(["M", *METRIC_NAMES])
        for key, row in zip(keys, rows):
            w.writerow([key] + [_cell(*row[m]) for m in METRIC_NAMES])
    return path


def load_table(path: str | Path) -> tuple[dict[str, str], dict[int, dict[str, tuple[float, float]]]]:
    header, body = {}, []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.startswith("# "):
                k, _, v = line[2:].rstrip("\n").partition(": ")
                header[k] = v
            else:
                body.append(line)
    table = {}
    for r in csv.DictReader(body):
        table[int(r["M"])] = {m: _parse_cell(r[m]) for m in METRIC_NAMES}
    return header, table


def _header(provenance: dict, extra: dict | None = None) -> dict:
    out = {k: provenance.get(k, "unrecorded") for k in ("seed", "tasks", "normalisation")}
    out.update({k: v for k, v in provenance.items() if k not in out})
    out.update(extra or {})
    return out


def _sweep_outputs(res: SweepResult, out: Path, formats, provenance) -> list[Path]:
    paths = []
    Ms = res.Ms()
    if "csv" in formats:
        best = [{m: v[:2] for m, v in res.best_over_tasks(M).items()} for M in Ms]
        mean = [res.mean_over_tasks(M) for M in Ms]
        ref = {f"reference {k}": str(m) if s is None else f"{m}{PM}{s}" for k, (m, s) in REFERENCE_ROWS.items()}
        paths.append(write_table(out / "table_best.csv", _header(provenance, {"aggregation": "best task per metric", **ref}), best, Ms))
        paths.append(write_table(out / "table_mean.csv", _header(provenance, {"aggregation": "mean and std over tasks"}), mean, Ms))
        with open(out / "sweep_rows.csv", "w", newline="", encoding="utf-8") as f:
            for k, v in _header(provenance, {"stride": res.stride, "gap_mode": res.gap_mode}).items():
                f.write(f"# {k}: {v}\n")
            w = csv.writer(f)
            w.writerow(["model", "M", "i", "j", "past", "future", "interval", "n_scans", *METRIC_NAMES])
            for r in res.rows:
                w.writerow([r.model, r.M, r.i, r.j, r.past, r.future, r.interval, r.n_scans]
                           + [_cell(r.mean[m], r.std[m]) for m in METRIC_NAMES])
        paths.append(out / "sweep_rows.csv")
    if "png" in formats:
        for metric in METRIC_NAMES:
            for by in ("past", "future"):
                fig, ax = plotting.figure()
                for M in Ms:
                    sub = SweepResult(res.rows_for(M))
                    x, y, _ = sub.pooled(by, metric)
                    ax.plot(x, y, "o-", label=f"M={M}")
                if len(Ms) > 1:
                    x, y, _ = res.pooled(by, metric)
                    ax.plot(x, y, "k--", label="pooled")
                ax.set_xlabel(f"{by} frames")
                ax.set_ylabel(plotting.LABELS[metric])
                ax.legend()
                path = out / f"{metric}_vs_{by}.png"
                plotting.save(fig, path)
                paths.append(path)
    return paths


def _ablation_outputs(rep: AblationReport, out: Path, formats, provenance) -> list[Path]:
    paths = []
    names = list(dict.fromkeys(r.arm.name for r in rep.results))
    if "csv" in formats:
        with open(out / "ablation_arms.csv", "w", newline="", encoding="utf-8") as f:
            for k, v in _header(provenance, {"factor": rep.spec.factor, "test_scans": len(rep.test_ids)}).items():
                f.write(f"# {k}: {v}\n")
            w = csv.writer(f)
            w.writerow(["arm", "seed", "n_train", *METRIC_NAMES])
            for r in rep.results:
                w.writerow([r.arm.name, r.seed, r.n_train] + [_cell(r.report.mean(m), r.report.std(m)) for m in METRIC_NAMES])
        with open(out / "ablation_comparisons.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["arm", "metric", "baseline_median", "arm_median", "relative_change", "effect_size", "p_value", "note"])
            for c in rep.comparisons:
                w.writerow([c.arm, c.metric, repr(c.baseline_median), repr(c.arm_median), repr(c.relative_change),
                            repr(c.effect_size), "" if c.p_value is None else repr(c.p_value), c.note])
        paths += [out / "ablation_arms.csv", out / "ablation_comparisons.csv"]
    if "png" in formats:
        for metric in METRIC_NAMES:
            fig, ax = plotting.figure()
            has_sweep = all(r.sweep is not None and r.sweep.rows for r in rep.results)
            for k, name in enumerate(names):
                rows = [r for r in rep.results if r.arm.name == name]
                if has_sweep:
                    curves = [r.sweep.pooled("past", metric) for r in rows]
                    x = curves[0][0]
                    ax.plot(x, np.median([c[1] for c in curves], axis=0), "o-", label=name)
                else:
                    vals = [r.value(metric) for r in rows]
                    ax.bar(k, np.median(vals), color=plotting.colors[k % len(plotting.colors)], alpha=0.7)
                    ax.plot([k] * len(vals), vals, "k.", ms=4)
            if has_sweep:
                ax.set_xlabel("past frames")
                ax.legend()
            else:
                ax.set_xticks(range(len(names)), names, rotation=20, ha="right")
            ax.set_ylabel(plotting.LABELS[metric])
            path = out / f"ablation_{metric}.png"
            plotting.save(fig, path)
            paths.append(path)
    return paths


def emit_report(results, out_dir: str | Path, formats: Iterable[str] = FORMATS, provenance: dict | None = None) -> list[Path]:
    """Write tables and plots for one or more sweep or ablation results."""
    formats = [f.strip() for f in formats]
    bad = set(formats) - set(FORMATS)
    if bad:
        raise ValueError(f"unknown report formats {sorted(bad)}; choose from {FORMATS}")
    items = results if isinstance(results, (list, tuple)) else [results]
    if not items or any(isinstance(r, SweepResult) and not r.rows for r in items):
        raise ValueError("nothing to report")
    out = _writable_dir(out_dir)
    provenance = {**(provenance or {}), "pooling": POOLING_RULE}
    paths = []
    for k, item in enumerate(items):
        sub = out if len(items) == 1 else _writable_dir(out / f"part{k}")
        if isinstance(item, SweepResult):
            paths += _sweep_outputs(item, sub, formats, provenance)
        elif isinstance(item, AblationReport):
            paths += _ablation_outputs(item, sub, formats, provenance)
        else:
            raise TypeError(f"cannot report {type(item).__name__}")
    with open(out / "report_index.json", "w", encoding="utf-8") as f:
        json.dump({"files": [str(p.relative_to(out)) for p in paths], "provenance": {k: str(v) for k, v in provenance.items()}}, f, indent=1)
    return paths
