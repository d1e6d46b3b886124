"""``watch`` command line.

Options come from flags or from one JSON config file (``--config``) holding a
section per command; flags win. ``WATCH_OUTPUT_ROOT`` sets where outputs go
when ``--out`` is omitted. Failures print one JSON object to stderr and exit
with the error's status code; successful runs write ``run_metadata.json``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .datamodel import Dataset, SiteSeries, TimeAxis, load_dataset, load_scores, save_dataset, save_scores
from .errors import ValidationError, WatchError
from .eval import (
    EvalConfig,
    GAP_MARGINS,
    EvalReport,
    format_gap_table,
    format_macro_table,
    format_report_table,
    macro_average,
    recall_curve_csv,
    recall_suite,
)
from .features import N_FEATURES, extract_handcrafted, read_patch
from .normalize import CalendarStats, normalize_dataset
from .pipeline import METHODS, ensure_normalized, grid_groups, pool_groups, score_dataset
from .sscd import SscdConfig, SscdModelBundle, train_sscd
from .synth import SynthSpec, generate_dataset
from .ted import TedConfig
from .variation import feature_variation
from .ws import WsConfig, WsModel, train_ws_on

log = logging.getLogger("watchcd")

# per-command defaults, applied after config-file merging so that "unset" is detectable
_TED = {"distance": "l2", "window": 3, "first_month_policy": "zero"}
DEFAULTS = {
    "ingest-rasters": {"origin_year": 2017, "origin_month": 1, "length": 96},
    "normalize": {"population": "all", "epsilon": 1e-6},
    "score": dict(_TED),
    "eval": {"K": 12, "margins": "0-6"},
    "global": {**_TED, "pool": "max", "score_field": "probability"},
}


def _default_out(command: str) -> Path:
    return Path(os.environ.get("WATCH_OUTPUT_ROOT", "watch_out")) / command


def _parse_margins(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(m) for m in text)
    out = []
    try:
        for part in str(text).split(","):
            if "-" in part:
                a, b = part.split("-")
                out += range(int(a), int(b) + 1)
            elif part.strip():
                out.append(int(part))
    except ValueError:
        raise ValidationError(f"margins must look like 0-6 or 0,1,3, got {text!r}") from None
    return tuple(out)


def _parse_window(text):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return int(text[0]), int(text[1])
    try:
        a, b = str(text).split(":")
        return int(a), int(b)
    except ValueError:
        raise ValidationError(f"evaluation window must be START:STOP, got {text!r}") from None


def _write_metadata(out_dir: Path, command: str, options: dict, seed=None) -> None:
    import torch

    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = json.dumps(options, sort_keys=True, default=str)
    doc = {
        "command": command,
        "config": json.loads(cfg),
        "config_hash": hashlib.sha256(cfg.encode()).hexdigest(),
        "seed": seed,
        "kernel_backend": kernels.BACKEND,
        "versions": {
            "watchcd": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "torch": torch.__version__,
        },
    }
    (out_dir / "run_metadata.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_stats(path) -> CalendarStats | None:
    return CalendarStats.load(path) if path else None


def _normalized(manifest, stats_path) -> Dataset:
    return ensure_normalized(load_dataset(manifest), _load_stats(stats_path))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(o: dict) -> None:
    if not o.get("spec"):
        raise ValidationError("--spec is required")
    spec = SynthSpec.from_file(o["spec"])
    if o.get("seed") is not None:
        spec = SynthSpec.from_dict({**spec.__dict__, "seed": int(o["seed"])})
    out = Path(o["out"])
    save_dataset(generate_dataset(spec), out)
    _write_metadata(out, "synth", o, spec.seed)


def cmd_ingest_rasters(o: dict) -> None:
    src = Path(o["in"])
    if not src.is_dir():
        raise ValidationError(f"input directory not found: {src}")
    axis = TimeAxis(int(o["origin_year"]), int(o["origin_month"]), int(o["length"]))
    feats: dict[str, dict[int, np.ndarray]] = {}
    for path in sorted(src.glob("*.wtp")):
        patch = read_patch(path)
        if not 0 <= patch.month < axis.length:
            raise ValidationError(f"{path}: month {patch.month} outside the axis")
        feats.setdefault(patch.site_id, {})[patch.month] = extract_handcrafted(patch)
    if not feats:
        raise ValidationError(f"no .wtp patch files in {src}")
    series = {}
    for sid in sorted(feats):
        values = np.full((axis.length, N_FEATURES), np.nan)
        avail = np.zeros(axis.length, dtype=bool)
        for t, v in feats[sid].items():
            values[t] = np.float32(v)
            avail[t] = True
        series[sid] = SiteSeries(sid, values, avail, axis)
    manifest = Path(o["out"])
    out_dir = manifest.parent if manifest.suffix == ".json" else manifest
    name = manifest.name if manifest.suffix == ".json" else "manifest.json"
    save_dataset(Dataset(series, {}, axis), out_dir, name)
    _write_metadata(out_dir, "ingest-rasters", o)


def cmd_normalize(o: dict) -> None:
    ds = load_dataset(o["manifest"])
    stats = _load_stats(o.get("stats"))
    nd, stats = normalize_dataset(ds, stats, o["population"], float(o["epsilon"]))
    out = Path(o["out"])
    save_dataset(nd, out)
    stats.save(out / "stats.wcs")
    _write_metadata(out, "normalize", o)


def cmd_train(o: dict) -> None:
    method = o.get("method")
    nd = _normalized(o["manifest"], o.get("stats"))
    fp = nd.meta.get("stats_fingerprint")
    out = Path(o["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    seed = int(o["seed"]) if o.get("seed") is not None else 0
    overrides = {k: v for k, v in (o.get("params") or {}).items()}
    if method == "sscd":
        cfg = SscdConfig.from_dict({**overrides, "seed": seed})
        train_sscd(nd, cfg, fp).save(out)
    elif method == "ws":
        cfg = WsConfig(**{**overrides, "seed": seed})
        train_ws_on(nd, cfg, fp).save(out)
    else:
        raise ValidationError(f"train supports sscd and ws, got {method!r}")
    _write_metadata(out.parent, "train", o, seed)


def cmd_score(o: dict) -> None:
    method = o.get("method")
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}")
    nd = _normalized(o["manifest"], o.get("stats"))
    fp = nd.meta.get("stats_fingerprint")
    kwargs = {}
    if method == "ted":
        kwargs["ted_config"] = TedConfig(int(o["window"]), o["distance"], o["first_month_policy"])
    elif not o.get("model"):
        raise ValidationError(f"--model is required for {method}")
    elif method == "sscd":
        kwargs["bundle"] = SscdModelBundle.load(o["model"], fp)
    else:
        kwargs["ws_model"] = WsModel.load(o["model"], fp)
    out = Path(o["out"])
    save_scores(score_dataset(nd, method, **kwargs), out)
    _write_metadata(out, "score", o)


def _parse_score_arg(arg: str) -> tuple[str, str, str]:
    """``method/embedding=DIR``, ``method=DIR`` or a bare ``DIR``."""
    if "=" in arg:
        label, path = arg.split("=", 1)
    else:
        label, path = "", arg
    method, _, emb = label.partition("/")
    if not method:
        tags = {s.scorer_tag for s in load_scores(path).values()}
        method = tags.pop().split("-")[0] if len(tags) == 1 else "scores"
    return method, emb or "default", path


def cmd_eval(o: dict) -> None:
    ds = load_dataset(o["manifest"])
    labels = ds.labels
    if o.get("split"):
        keep = set(ds.split(o["split"]))
        labels = {k: v for k, v in labels.items() if k in keep}
    cfg = EvalConfig(int(o["K"]), _parse_margins(o["margins"]), _parse_window(o.get("eval_window")))
    reports: dict[str, dict[str, EvalReport]] = {}
    for arg in o.get("scores") or []:
        method, emb, path = _parse_score_arg(arg)
        reports.setdefault(method, {})[emb] = recall_suite(load_scores(path), labels, cfg)
    if not reports:
        raise ValidationError("--scores is required")
    _emit_tables(reports, Path(o["out"]))
    _write_metadata(Path(o["out"]), "eval", o)


def _emit_tables(reports: dict[str, dict[str, EvalReport]], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(format_report_table(reports))
    doc = {m: {e: r.to_dict() for e, r in sorted(v.items())} for m, v in sorted(reports.items())}
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (out / "recall_vs_margin.csv").write_text(recall_curve_csv(reports))
    lines = ["method,embedding,site_id,event_month,margin,hit_sym,hit_pos,hit_neg,topk"]
    for m in sorted(reports):
        for e in sorted(reports[m]):
            rep = reports[m][e]
            for h in rep.hits:
                for j, mg in enumerate(rep.margins):
                    lines.append(f"{m},{e},{h.site_id},{h.event_month},{mg},{h.sym[j]},{h.pos[j]},{h.neg[j]},"
                                 + " ".join(map(str, h.topk)))
    (out / "hits.csv").write_text("\n".join(lines) + "\n")
    if all(set(GAP_MARGINS) <= set(r.margins) for v in reports.values() for r in v.values()):
        (out / "directional_gap.txt").write_text(format_gap_table(reports))
    try:
        (out / "macro.txt").write_text(format_macro_table(macro_average(reports)))
    except ValidationError:
        pass



def cmd_report(o: dict) -> None:
    reports: dict[str, dict[str, EvalReport]] = {}
    for path in o.get("reports") or []:
        doc = json.loads(Path(path).read_text())
        for method, by_emb in doc.items():
            for emb, rep in by_emb.items():
                reports.setdefault(method, {})[emb] = EvalReport.from_dict(rep)
    if not reports:
        raise ValidationError("--reports is required")
    out = Path(o["out"])
    _emit_tables(reports, out)
    _write_metadata(out, "report", o)


def cmd_global(o: dict) -> None:
    if not o.get("stats"):
        raise ValidationError("global inference needs the frozen --stats file")
    ds = load_dataset(o["manifest"])
    nd = ensure_normalized(ds, CalendarStats.load(o["stats"]))
    fp = nd.meta.get("stats_fingerprint")
    methods = o.get("methods") or [o.get("method") or "ted"]
    models = dict(zip(methods, o.get("models") or [None] * len(methods)))
    groups = grid_groups(nd)
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    for method in methods:
        kwargs = {}
        if method == "ted":
            kwargs["ted_config"] = TedConfig(int(o["window"]), o["distance"], o["first_month_policy"])
        elif method not in METHODS:
            raise ValidationError(f"unknown method {method!r}")
        elif not models.get(method):
            raise ValidationError(f"--model is required for {method}")
        elif method == "sscd":
            kwargs["bundle"] = SscdModelBundle.load(models[method], fp)
        else:
            kwargs["ws_model"] = WsModel.load(models[method], fp)
        scores = {s.site_id: s for s in score_dataset(nd, method, **kwargs)}
        pooled = pool_groups(scores, groups, o["pool"], o["score_field"])
        mdir = out / method
        mdir.mkdir(parents=True, exist_ok=True)
        save_scores(scores.values(), mdir / "grids")
        for site, series in pooled.items():
            lines = ["t,pooled,pooled_score"]
            lines += [f"{t},{a!r},{b!r}" for t, (a, b) in
                      enumerate(zip(series["pooled"].tolist(), series["pooled_score"].tolist()))]
            (mdir / f"{site}.csv").write_text("\n".join(lines) + "\n")
    _write_metadata(out, "global", o)


def cmd_feature_variation(o: dict) -> None:
    ds = load_dataset(o["manifest"])
    var = feature_variation(ds, bool(o.get("per_month_scaling")))
    out = Path(o["out"])
    path = out if out.suffix == ".csv" else out / "feature_variation.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["t,year,month,variation"]
    lines += [f"{t},{ds.axis.year_of(t)},{ds.axis.calendar_month(t)},{v!r}" for t, v in enumerate(var.tolist())]
    path.write_text("\n".join(lines) + "\n")
    _write_metadata(path.parent, "feature-variation", o)


COMMANDS = {
    "synth": cmd_synth,
    "ingest-rasters": cmd_ingest_rasters,
    "normalize": cmd_normalize,
    "train": cmd_train,
    "score": cmd_score,
    "eval": cmd_eval,
    "global": cmd_global,
    "feature-variation": cmd_feature_variation,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="watch", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file with one section per command")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--spec")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)

    s = sub.add_parser("ingest-rasters", help="handcrafted features from patch files")
    s.add_argument("--in", dest="in")
    s.add_argument("--out")
    s.add_argument("--origin-year", type=int)
    s.add_argument("--origin-month", type=int)
    s.add_argument("--length", type=int)

    s = sub.add_parser("normalize", help="impute and apply two-stage normalization")
    s.add_argument("--manifest")
    s.add_argument("--out")
    s.add_argument("--population", choices=["all", "train"])
    s.add_argument("--stats", help="apply these frozen stats instead of fitting")
    s.add_argument("--epsilon", type=float)

    s = sub.add_parser("train", help="train an SSCD bundle or a WS model")
    s.add_argument("--method", choices=["sscd", "ws"])
    s.add_argument("--manifest")
    s.add_argument("--stats")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--param", action="append", default=None, metavar="KEY=VALUE",
                   help="config override, value parsed as JSON (repeatable)")

    s = sub.add_parser("score", help="score every site with one method")
    s.add_argument("--method", choices=list(METHODS))
    s.add_argument("--manifest")
    s.add_argument("--stats")
    s.add_argument("--model")
    s.add_argument("--distance", choices=["l2", "cosine"])
    s.add_argument("--window", type=int)
    s.add_argument("--first-month-policy", choices=["zero", "copy_next"])
    s.add_argument("--out")

    s = sub.add_parser("eval", help="recall tables from score directories")
    s.add_argument("--manifest")
    s.add_argument("--scores", action="append", default=None, metavar="[METHOD[/EMB]=]DIR")
    s.add_argument("--out")
    s.add_argument("-K", type=int, dest="K")
    s.add_argument("--margins")
    s.add_argument("--window", dest="eval_window", help="START:STOP month indices")
    s.add_argument("--split", choices=["train", "val", "test"])

    s = sub.add_parser("global", help="multi-grid inference with frozen stats and pooling")
    s.add_argument("--manifest")
    s.add_argument("--stats")
    s.add_argument("--method", action="append", dest="methods", choices=list(METHODS), default=None)
    s.add_argument("--model", action="append", dest="models", default=None,
                   help="model file per non-TED --method, in order")
    s.add_argument("--pool", choices=["max", "mean"])
    s.add_argument("--score-field", choices=["probability", "raw"])
    s.add_argument("--distance", choices=["l2", "cosine"])
    s.add_argument("--window", type=int)
    s.add_argument("--first-month-policy", choices=["zero", "copy_next"])
    s.add_argument("--out")

    s = sub.add_parser("feature-variation", help="per-month cross-site feature variation")
    s.add_argument("--manifest")
    s.add_argument("--out")
    s.add_argument("--per-month-scaling", action="store_true", default=None)

    s = sub.add_parser("report", help="re-render tables from eval report.json files")
    s.add_argument("--reports", nargs="+")
    s.add_argument("--out")
    return p


def resolve_options(args: argparse.Namespace) -> dict:
    opts = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        opts.update(doc.get(args.command, {}))
    for k, v in vars(args).items():
        if k in ("config", "verbose", "command"):
            continue
        if v is not None:
            opts[k] = v
    for k, v in DEFAULTS.get(args.command, {}).items():
        opts.setdefault(k, v)
    if args.command == "global":
        models = opts.get("models") or []
        methods = opts.get("methods") or ["ted"]
        non_ted = [m for m in methods if m != "ted"]
        if models and len(models) != len(non_ted):
            raise ValidationError("give one --model per non-TED --method")
        opts["models"] = None
        if models:
            it = iter(models)
            opts["models"] = [None if m == "ted" else next(it) for m in methods]
    if args.command == "train":
        params = {}
        for item in opts.pop("param", None) or []:
            key, _, val = item.partition("=")
            params[key.replace("-", "_")] = json.loads(val)
        opts["params"] = {**opts.get("params", {}), **params}
    if "out" not in opts:
        opts["out"] = str(_default_out(args.command))
    return opts


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve_options(args)
        required = {"normalize": ["manifest"], "train": ["manifest", "method"], "score": ["manifest", "method"],
                    "eval": ["manifest"], "global": ["manifest"], "feature-variation": ["manifest"],
                    "ingest-rasters": ["in"]}
        missing = [k for k in required.get(args.command, []) if not opts.get(k)]
        if missing:
            raise ValidationError(f"missing required option(s): {', '.join('--' + m for m in missing)}")
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[args.command](opts)
    except WatchError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return exc.exit_status
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(json.dumps({"error": "bad_input", "message": f"{type(exc).__name__}: {exc}"}), file=sys.stderr)
        return 9
    return 0


if __name__ == "__main__":
    sys.exit(main())
