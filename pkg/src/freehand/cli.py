"""Command-line entry points.

    freehand synth --config corpus.json --out DIR
    freehand train --config train.json [--data-root DIR] [--out DIR]
    freehand reconstruct --scan DIR --model CKPT --M 16 --istar 9 --jstar 16 --out traj.csv
    freehand eval --data-root DIR --model CKPT --out results/eval
    freehand sweep --data-root DIR --model NAME=CKPT ... --out results/
    freehand ablate --spec spec.json
    freehand report --in results/ --format csv,png
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("freehand")


def _load_json(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _write_run(out_dir: Path, command: str, config: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run.json", "w", encoding="utf-8") as f:
        json.dump({"command": command, "version": __version__, "config": config}, f, indent=1, default=str)


def cmd_synth(args) -> int:
    from .synth import CorpusConfig, generate_corpus

    cfg = CorpusConfig.from_json(_load_json(args.config)) if args.config else CorpusConfig()
    scans, split = generate_corpus(cfg, args.out)
    print(f"wrote {len(scans)} scans to {args.out} (train {len(split.train)}, val {len(split.val)}, test {len(split.test)})")
    return 0


def cmd_train(args) -> int:
    from .dataio import Dataset
    from .harness import ExperimentConfig, run_training

    raw = _load_json(args.config)
    data_root = args.data_root or raw.pop("data_root", None)
    out = Path(args.out or raw.pop("out", "runs/train"))
    raw.pop("data_root", None)
    raw.pop("out", None)
    if data_root is None:
        raise SystemExit("no data root: pass --data-root or set data_root in the config")
    cfg = ExperimentConfig.from_json(raw)
    ds = Dataset(data_root)
    _write_run(out, "train", {"data_root": str(data_root), **cfg.to_json()})
    model, tlog = run_training(cfg, ds.part("train"), ds.part("val"), out)
    print(f"best epoch {tlog.best_epoch}; checkpoint {out / 'best.pt'}; log {out / 'train_log.csv'}")
    return 0


def cmd_reconstruct(args) -> int:
    from .backends import SequenceModel
    from .dataio import load_scan
    from .reconstruct import chain

    model = SequenceModel.load(args.model)
    if args.M is not None and args.M != model.M:
        raise SystemExit(f"--M {args.M} does not match the checkpoint (M={model.M})")
    main = (args.istar, args.jstar) if args.istar is not None else model.tasks.main
    if main not in model.tasks.pairs:
        raise SystemExit(f"task {main} was not trained by this model")
    traj = chain(load_scan(args.scan), model, main, args.gap_mode)
    traj.save_csv(args.out)
    print(f"wrote {len(traj)} frames to {args.out} ({int(traj.interpolated.sum())} interpolated)")
    return 0


def _main_arg(args, model):
    return (args.istar, args.jstar) if args.istar is not None else model.tasks.main


def cmd_eval(args) -> int:
    from .backends import SequenceModel
    from .dataio import Dataset
    from .reconstruct import evaluate

    model = SequenceModel.load(args.model)
    ds = Dataset(args.data_root)
    report = evaluate(ds.part(args.part), model, _main_arg(args, model), args.stride, args.voxel_mm, args.gap_mode)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    jpath, cpath = report.save(args.out)
    for m, v in report.summary().items():
        print(f"{m}: {v['mean']:.4f} ± {v['std']:.4f}")
    print(f"wrote {jpath} and {cpath}")
    return 0


def cmd_sweep(args) -> int:
    from .backends import SequenceModel
    from .dataio import Dataset
    from .harness import run_sweep

    models, seeds, norms = {}, {}, set()
    for item in args.model:
        name, _, path = item.partition("=")
        models[name] = SequenceModel.load(path)
        exp = Path(path).parent / "experiment.json"
        if exp.exists():
            train_cfg = _load_json(exp).get("train", {})
            seeds[name] = train_cfg.get("seed")
            norms.add(train_cfg.get("normalisation", "realised"))
    grid = None
    if args.grid:
        grid = [(r["model"], (r["i"], r["j"])) for r in _load_json(args.grid)["rows"]]
    ds = Dataset(args.data_root)
    res = run_sweep(models, ds.part(args.part), grid, args.stride, args.voxel_mm, args.gap_mode)
    out = Path(args.out)
    _write_run(out, "sweep", {"data_root": args.data_root, "models": args.model, "grid": args.grid, "stride": args.stride})
    provenance = {
        "seed": "; ".join(f"{n}: {seeds.get(n, 'unrecorded')}" for n in models),
        "tasks": "; ".join(f"{n}: " + " ".join(f"{i}-{j}" for i, j in m.tasks.pairs) for n, m in models.items()),
        "normalisation": ", ".join(sorted(norms)) or "unrecorded",
    }
    with open(out / "sweep.json", "w", encoding="utf-8") as f:
        json.dump({"provenance": provenance, "result": res.to_json()}, f, indent=1)
    print(f"{len(res.rows)} rows ({len(res.skipped)} skipped) -> {out / 'sweep.json'}")
    return 0


def cmd_ablate(args) -> int:
    from .dataio import Dataset
    from .harness import AblationSpec, ExperimentConfig, run_ablation

    raw = _load_json(args.spec)
    ds = Dataset(args.data_root or raw["data_root"])
    out = Path(args.out or raw.get("out", "runs/ablation"))
    spec = AblationSpec.from_json(raw["ablation"])
    base = ExperimentConfig.from_json(raw["experiment"])
    test = ds.part("test")
    if raw.get("test_protocols"):
        test = [s for s in test if s.meta.protocol in raw["test_protocols"]]
    _write_run(out, "ablate", raw)
    rep = run_ablation(spec, base, ds.part("train"), ds.part("val"), test, out,
                       [tuple(p) for p in raw.get("sweep_pairs", [])] or None, raw.get("stride", 1))
    for c in rep.comparisons:
        if c.metric == "eps_acc":
            print(f"{c.arm}: eps_acc median {c.arm_median:.3f} vs baseline {c.baseline_median:.3f} "
                  f"({100 * c.relative_change:+.1f}%, d={c.effect_size:.2f}, p={c.p_value})")
    print(f"wrote {out / 'ablation.json'}")
    return 0


def cmd_report(args) -> int:
    from .harness.ablation import AblationReport
    from .harness.report import emit_report
    from .harness.sweep import SweepResult

    src = Path(args.input)
    out = Path(args.out) if args.out else src / "report"
    formats = args.format.split(",")
    written = []
    for path in sorted(src.rglob("sweep.json")):
        data = _load_json(path)
        written += emit_report(SweepResult.from_json(data["result"]), out / path.parent.relative_to(src), formats, data.get("provenance"))
    for path in sorted(src.rglob("ablation.json")):
        data = _load_json(path)
        rep = AblationReport.from_json(data)
        run = path.parent / "run.json"
        exp = _load_json(run)["config"].get("experiment", {}) if run.exists() else {}
        provenance = {"seed": data["spec"]["seeds"], "tasks": exp.get("main", "unrecorded"),
                      "normalisation": exp.get("train", {}).get("normalisation", "realised")}
        written += emit_report(rep, out / path.parent.relative_to(src), formats, provenance)
    if not written:
        raise SystemExit(f"no sweep.json or ablation.json under {src}")
    print(f"wrote {len(written)} files under {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freehand", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic tracked-scan corpus")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train one model")
    s.add_argument("--config", required=True)
    s.add_argument("--data-root")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("reconstruct", help="chain predictions over one scan")
    s.add_argument("--scan", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--M", type=int)
    s.add_argument("--istar", type=int)
    s.add_argument("--jstar", type=int)
    s.add_argument("--gap-mode", default="auxiliary", choices=["auxiliary", "interpolate"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    def eval_opts(s):
        s.add_argument("--data-root", required=True)
        s.add_argument("--part", default="test", choices=["train", "val", "test"])
        s.add_argument("--stride", type=int, default=1)
        s.add_argument("--voxel-mm", type=float, default=1.0)
        s.add_argument("--gap-mode", default="auxiliary", choices=["auxiliary", "interpolate"])
        s.add_argument("--out", required=True)

    s = sub.add_parser("eval", help="metrics of one model on a split part")
    s.add_argument("--model", required=True)
    s.add_argument("--istar", type=int)
    s.add_argument("--jstar", type=int)
    eval_opts(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="evaluate models over (M, i*, j*) rows")
    s.add_argument("--model", action="append", required=True, metavar="NAME=CKPT")
    s.add_argument("--grid", help="JSON with rows of {model, i, j}; default every learned pair")
    eval_opts(s)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("ablate", help="train and compare reduced-training-set arms")
    s.add_argument("--spec", required=True)
    s.add_argument("--data-root")
    s.add_argument("--out")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("report", help="tables and plots from sweep/ablation results")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--format", default="csv,png")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
