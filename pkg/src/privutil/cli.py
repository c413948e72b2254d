"""Command-line pipeline: generate -> sweep -> optimize -> hetero -> report.

Every stage reads and writes plain CSV plus a ``<output>.manifest`` file
holding the parameters needed to reproduce it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .core import PrivacySetting, RngSeedPlan
from .dataio import (
    SchemaError,
    SyntheticSpec,
    check_header,
    format_cell,
    generate_synthetic,
    load_csv,
    load_grid,
    load_results,
    read_manifest,
    save_csv,
    save_grid,
    save_results,
    write_manifest,
)
from .hetero import enumerate_histograms, heatmap_rows, heatmap_tables, simulate_many, units_for_step
from .mechanisms import DEFAULT_SINE_VALUES, CombinationMode, SettingGrid, generate_laplace_grid, generate_sine_grid
from .metrics import NormalizationConstants, ObjectiveWeights, iqr, percentile
from .optimizer import (
    BinSpec,
    HardConstraint,
    apply_hard_constraint,
    bin_settings,
    export_trajectory,
    select_per_bin,
)
from .sweep import (
    RECORD_COLUMNS,
    SubsetSchedule,
    assemble_tradeoffs,
    default_schedule,
    emit_cdf,
    evaluate_grid,
    evaluate_setting,
    record_from_row,
    record_to_row,
)

log = logging.getLogger("privutil")

THREADS_ENV = "PRIVUTIL_THREADS"
DEFAULT_MAX_SETTINGS = 200


class CliError(Exception):
    """Fatal, user-facing pipeline error."""


class UsageError(CliError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"error: usage: {message}\n")
        raise SystemExit(2)


def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _floats(text: str, n: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def _triple(text: str) -> tuple[float, ...]:
    return _floats(text, 3)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest_path(out) -> Path:
    return Path(str(out) + ".manifest")


# -- generate -----------------------------------------------------------------


def cmd_generate(args) -> None:
    spec = SyntheticSpec(
        n_users=args.users,
        n_days=args.days,
        slots_per_day=args.slots,
        missing_rate=args.missing_rate,
        zero_rate=args.zero_rate,
    )
    dataset = generate_synthetic(spec, args.seed)
    save_csv(args.out, dataset)
    write_manifest(_manifest_path(args.out), {
        "command": "generate", "version": __version__, "seed": args.seed,
        "users": spec.n_users, "days": spec.n_days, "slots_per_day": spec.slots_per_day,
        "base_load": spec.base_load, "user_scale_spread": spec.user_scale_spread,
        "noise_cv": spec.noise_cv, "missing_rate": spec.missing_rate, "zero_rate": spec.zero_rate,
    })
    print(f"wrote {spec.n_users * spec.n_days * spec.slots_per_day} cells to {args.out}")


# -- sweep --------------------------------------------------------------------


def build_grid(args) -> SettingGrid:
    parts = [p.strip() for p in args.grid.split(",") if p.strip()]
    if not parts:
        raise CliError("--grid needs at least one of laplace, sine, none, custom:<file>")
    grid = SettingGrid(())
    for part in parts:
        if part == "laplace":
            g = generate_laplace_grid(args.b_start, args.b_step, args.b_end)
        elif part == "sine":
            values = DEFAULT_SINE_VALUES if args.sine_values is None else args.sine_values
            g = generate_sine_grid(values, args.n_coeffs, args.combination)
        elif part == "none":
            g = SettingGrid((PrivacySetting.nomask(),))
        elif part.startswith("custom:"):
            g = load_grid(part[len("custom:"):])
        else:
            raise CliError(f"unknown grid {part!r}")
        if not args.full and part != "none":
            g = g.thinned(args.max_settings)
        grid = grid + g
    return grid


def parse_schedule(text: str, n_users: int, reps: int) -> SubsetSchedule:
    if text == "default":
        return default_schedule(n_users, reps)
    if text.startswith("sizes:"):
        try:
            sizes = tuple(int(s) for s in text[len("sizes:"):].split(",") if s.strip())
        except ValueError:
            raise CliError(f"bad schedule {text!r}") from None
        return SubsetSchedule(sizes, reps)
    raise CliError(f"--schedule must be 'default' or 'sizes:<n1,n2,...>', got {text!r}")


def _read_partial_records(path: Path) -> list:
    """Valid records from an interrupted sweep; malformed rows are dropped."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        check_header(header, RECORD_COLUMNS, str(path))
        for row in reader:
            if len(row) != len(RECORD_COLUMNS):
                continue
            try:
                out.append(record_from_row(dict(zip(RECORD_COLUMNS, row))))
            except (ValueError, KeyError):
                continue
    return out


def cmd_sweep(args) -> None:
    dataset = load_csv(args.data, args.slots_per_period)
    grid = build_grid(args)
    schedule = parse_schedule(args.schedule, dataset.n_users, args.reps)
    plan = RngSeedPlan(args.seed)
    out = Path(args.out)
    manifest = {
        "command": "sweep", "version": __version__, "data_sha256": _sha256(args.data),
        "slots_per_period": dataset.slots_per_period, "seed": args.seed, "grid": args.grid,
        "b_start": args.b_start, "b_step": args.b_step, "b_end": args.b_end,
        "sine_values": " ".join(format(v, ".17g") for v in (args.sine_values or DEFAULT_SINE_VALUES)),
        "n_coeffs": args.n_coeffs, "combination": args.combination, "full": args.full,
        "max_settings": args.max_settings, "settings": len(grid),
        "schedule": " ".join(str(s) for s in schedule.sizes), "reps": args.reps,
    }

    existing = []
    if out.exists():
        if args.resume:
            mpath = _manifest_path(out)
            if mpath.exists() and read_manifest(mpath) != {k: format_cell(v) for k, v in manifest.items()}:
                raise CliError(f"{out}: existing manifest differs from this sweep; refusing to resume")
            existing = _read_partial_records(out)
        elif not args.overwrite:
            raise CliError(f"{out} exists; pass --resume to continue it or --overwrite to replace it")
    write_manifest(_manifest_path(out), manifest)
    if args.grid_out:
        save_grid(args.grid_out, grid)
    have = {r.key for r in existing}
    grid_ids = {s.id for s in grid}

    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for rec in existing:
            writer.writerow(record_to_row(rec))
        fh.flush()

        def sink(batch):
            for rec in batch:
                writer.writerow(record_to_row(rec))
            fh.flush()

        new = evaluate_grid(
            grid, dataset, schedule, args.reps, plan, args.threads,
            skip=have.__contains__ if have else None, sink=sink,
        )

    order = {s.id: i for i, s in enumerate(grid)}
    records = [r for r in existing if r.setting_id in grid_ids] + new
    records.sort(key=lambda r: (order[r.setting_id], r.subset_index, r.repetition_index))
    tmp = out.with_name(out.name + ".tmp")
    save_results(tmp, "records", (dict(zip(RECORD_COLUMNS, record_to_row(r))) for r in records))
    os.replace(tmp, out)
    print(f"{len(grid)} settings, {len(new)} new records ({len(records)} total) -> {out}")


# -- optimize -----------------------------------------------------------------


def load_records(path):
    return [record_from_row(r) for r in load_results(path, "records")]


def cmd_optimize(args) -> None:
    try:
        spec = BinSpec(args.bin_width, args.omega)
        weights = ObjectiveWeights(args.alpha, args.gamma)
        hc = HardConstraint(args.max_mean_e, args.max_std_e, per_record=not args.per_setting_constraint)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    records = load_records(args.records)
    outcome = apply_hard_constraint(records, hc)
    out_norm = args.out_norm or str(Path(args.out_bins).with_suffix("")) + ".norm.csv"
    if outcome.norm is None:
        save_results(args.out_bins, "bins", [])
        save_results(args.out_trajectory, "trajectory", [])
        save_results(out_norm, "norm", [])
        print("all settings were eliminated by the hard constraint; outputs are empty", file=sys.stderr)
    else:
        tradeoffs = assemble_tradeoffs(outcome.records, weights, outcome.norm)
        binned = bin_settings(tradeoffs, spec)
        results = select_per_bin(binned, tradeoffs, spec.omega, spec.bin_width)
        save_results(args.out_bins, "bins", [r.to_row() for r in results])
        save_results(args.out_trajectory, "trajectory", export_trajectory(tradeoffs, args.resolution))
        norm_row = dict(zip(NormalizationConstants.field_names(), _norm_values(outcome.norm)))
        save_results(out_norm, "norm", [norm_row])
        print(f"{len(outcome.survivors)} of {len({r.setting_id for r in records})} settings pass the hard constraint")
        for name, value in norm_row.items():
            print(f"{name}={value:.17g}")
        for r in results:
            print(f"bin {r.bin_index} [{r.bin_range[0]:.3g}, {r.bin_range[1]:.3g}): {r.winner or '-'}")
    write_manifest(_manifest_path(args.out_bins), {
        "command": "optimize", "version": __version__, "records_sha256": _sha256(args.records),
        "alpha": ",".join(map(str, weights.alpha)), "gamma": ",".join(map(str, weights.gamma)),
        "bin_width": spec.bin_width, "omega": spec.omega, "max_mean_e": hc.max_mean_E,
        "max_std_e": hc.max_std_E, "per_record": hc.per_record, "resolution": args.resolution,
    })


def _norm_values(norm: NormalizationConstants):
    return [getattr(norm, f) for f in NormalizationConstants.field_names()]


# -- hetero -------------------------------------------------------------------


def resolve_palette(spec: str, grid_path: str | None, add_nomask: bool) -> list[PrivacySetting]:
    known = load_grid(grid_path).by_id() if grid_path else {}
    path = Path(spec)
    if path.is_file():
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "setting_id" not in reader.fieldnames:
                raise SchemaError(f"{path}: palette file needs a setting_id column")
            ids = [row["setting_id"] for row in reader if row["setting_id"]]
        if add_nomask and "none" not in ids:
            ids.append("none")
    else:
        ids = [s.strip() for s in spec.split(",") if s.strip()]
    palette = []
    for sid in ids:
        if sid in known:
            palette.append(known[sid])
            continue
        try:
            palette.append(PrivacySetting.from_id(sid))
        except ValueError:
            raise CliError(f"palette references unknown setting id {sid!r}") from None
    if not palette:
        raise CliError("empty palette")
    return palette


def _load_norm(path) -> NormalizationConstants:
    rows = load_results(path, "norm")
    if len(rows) != 1:
        raise CliError(f"{path}: expected exactly one row of normalization constants")
    return NormalizationConstants(**rows[0])


def cmd_hetero(args) -> None:
    try:
        units = units_for_step(args.step)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    dataset = load_csv(args.data, args.slots_per_period)
    palette = resolve_palette(args.palette, args.grid, not args.no_nomask)
    plan = RngSeedPlan(args.seed)
    weights = ObjectiveWeights(args.alpha, args.gamma)
    if args.norm:
        norm = _load_norm(args.norm)
    else:
        full = SubsetSchedule((dataset.n_users,), args.reps)
        recs = [r for s in palette for r in evaluate_setting(s, dataset, full, args.reps, plan)]
        norm = NormalizationConstants.from_stats([r.local_stats for r in recs], [r.global_stats for r in recs])
    hists = enumerate_histograms(palette, Fraction(1, units))
    results = simulate_many(
        hists, dataset, args.reps, plan, weights, norm, threads=args.threads,
        resample_assignment=args.resample,
    )
    save_results(args.out_heatmaps, "heatmap", heatmap_rows(heatmap_tables(results)))
    out_log = args.out_log or str(Path(args.out_heatmaps).with_suffix("")) + ".log.csv"
    log_rows = []
    for res in results:
        for rep, r in enumerate(res.reps):
            log_rows.append({
                "histogram_id": res.histogram.id, "dominant_setting": res.dominant,
                "dominant_share": res.histogram.dominant_share, "repetition": rep,
                "system_utility": r.system_utility,
                "privacy_median": percentile(r.user_privacy, 50), "privacy_iqr": iqr(r.user_privacy),
                "mean_E": r.global_stats.mean, "std_E": r.global_stats.std, "entropy_E": r.global_stats.entropy,
            })
    save_results(out_log, "hetero_log", log_rows)
    write_manifest(_manifest_path(args.out_heatmaps), {
        "command": "hetero", "version": __version__, "data_sha256": _sha256(args.data),
        "palette": " ".join(s.id for s in palette), "step": f"1/{units}", "reps": args.reps,
        "seed": args.seed, "alpha": ",".join(map(str, weights.alpha)),
        "gamma": ",".join(map(str, weights.gamma)), "resample": args.resample,
        "norm": " ".join(format(v, ".17g") for v in _norm_values(norm)),
    })
    print(f"{len(hists)} histograms x {args.reps} reps over {len(palette)} settings -> {args.out_heatmaps}")


# -- report -------------------------------------------------------------------

CDF_METRICS = {
    "local_mean": lambda r: r.local_stats.mean,
    "local_std": lambda r: r.local_stats.std,
    "local_entropy": lambda r: r.local_stats.entropy,
    "global_mean": lambda r: r.global_stats.mean,
    "global_std": lambda r: r.global_stats.std,
    "global_entropy": lambda r: r.global_stats.entropy,
}


def cmd_report(args) -> None:
    if not (args.records or args.trajectory or args.heatmaps):
        raise UsageError("report needs at least one of --records, --trajectory, --heatmaps")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if args.records:
        records = load_records(args.records)
        mechanisms = sorted({r.mechanism.value for r in records})
        for name, getter in CDF_METRICS.items():
            rows = []
            for mech in mechanisms:
                values = [getter(r) for r in records if r.mechanism.value == mech]
                rows += [{"mechanism": mech, "x": x, "F": f} for x, f in emit_cdf(values, args.points)]
            path = out_dir / f"cdf_{name}.csv"
            save_results(path, "cdf", rows)
            written.append(path)
    if args.trajectory:
        path = out_dir / "trajectory_bands.csv"
        save_results(path, "trajectory", load_results(args.trajectory, "trajectory"))
        written.append(path)
    if args.heatmaps:
        rows = load_results(args.heatmaps, "heatmap")
        for metric in ("privacy", "utility"):
            for stat in ("median", "iqr"):
                path = out_dir / f"heatmap_{metric}_{stat}.csv"
                _write_heatmap_matrix(path, [r for r in rows if r["metric"] == metric and r["statistic"] == stat])
                written.append(path)
    write_manifest(out_dir / "report.manifest", {
        "command": "report", "version": __version__, "points": args.points,
        "records_sha256": _sha256(args.records) if args.records else None,
        "trajectory_sha256": _sha256(args.trajectory) if args.trajectory else None,
        "heatmaps_sha256": _sha256(args.heatmaps) if args.heatmaps else None,
    })
    for path in written:
        print(path)


def _write_heatmap_matrix(path, rows) -> None:
    """Rows: dominant share (descending, homogeneous case first); columns: dominant setting."""
    settings = list(dict.fromkeys(r["dominant_setting"] for r in rows))
    shares = sorted({r["dominant_share"] for r in rows}, reverse=True)
    cell = {(r["dominant_share"], r["dominant_setting"]): r["value"] for r in rows}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dominant_share", *settings])
        for share in shares:
            values = [cell.get((share, s)) for s in settings]
            writer.writerow([format_cell(share), *(format_cell(v) for v in values)])


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="privutil", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic smart-meter dataset")
    g.add_argument("--users", type=_positive_int, default=500)
    g.add_argument("--days", type=_positive_int, default=30)
    g.add_argument("--slots", type=_positive_int, default=48, help="slots per day")
    g.add_argument("--missing-rate", type=float, default=0.1)
    g.add_argument("--zero-rate", type=float, default=0.001)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("sweep", help="evaluate a grid of privacy settings")
    s.add_argument("--data", required=True)
    s.add_argument("--slots-per-period", type=_positive_int, default=48)
    s.add_argument("--grid", default="laplace,sine",
                   help="comma list of laplace, sine, none, custom:<grid.csv>")
    s.add_argument("--b-start", type=float, default=0.001)
    s.add_argument("--b-step", type=float, default=0.001)
    s.add_argument("--b-end", type=float, default=10.0)
    s.add_argument("--sine-values", type=_floats, default=None)
    s.add_argument("--n-coeffs", type=_positive_int, default=5)
    s.add_argument("--combination", choices=[m.value for m in CombinationMode], default="multiset")
    s.add_argument("--max-settings", type=int, default=DEFAULT_MAX_SETTINGS,
                   help="evenly thin each generated grid to this many settings unless --full")
    s.add_argument("--full", action="store_true", help="evaluate complete grids")
    s.add_argument("--reps", type=_positive_int, default=5)
    s.add_argument("--schedule", default="default")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=_positive_int, default=_default_threads())
    s.add_argument("--out", required=True)
    s.add_argument("--grid-out", default=None, help="also write the evaluated grid here")
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--resume", action="store_true")
    mode.add_argument("--overwrite", action="store_true")
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("optimize", help="select per-bin optimal settings")
    o.add_argument("--records", required=True)
    o.add_argument("--alpha", type=_triple, default=(0.2, 0.4, 0.4))
    o.add_argument("--gamma", type=_triple, default=(0.6, 0.2, 0.2))
    o.add_argument("--bin-width", type=float, default=0.2)
    o.add_argument("--omega", type=float, default=0.1)
    o.add_argument("--max-mean-e", type=float, default=0.1)
    o.add_argument("--max-std-e", type=float, default=0.1)
    o.add_argument("--per-setting-constraint", action="store_true",
                   help="test the hard constraint on per-setting averages instead of every record")
    o.add_argument("--resolution", type=int, default=101)
    o.add_argument("--out-bins", required=True)
    o.add_argument("--out-trajectory", required=True)
    o.add_argument("--out-norm", default=None)
    o.set_defaults(func=cmd_optimize)

    h = sub.add_parser("hetero", help="simulate heterogeneous setting adoption")
    h.add_argument("--data", required=True)
    h.add_argument("--slots-per-period", type=_positive_int, default=48)
    h.add_argument("--palette", required=True, help="bins/palette CSV with setting_id, or comma list of ids")
    h.add_argument("--grid", default=None, help="grid CSV used to resolve palette ids")
    h.add_argument("--no-nomask", action="store_true",
                   help="do not append the no-mask setting to a palette read from a file")
    h.add_argument("--step", type=float, default=0.125)
    h.add_argument("--reps", type=_positive_int, default=5)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--alpha", type=_triple, default=(0.2, 0.4, 0.4))
    h.add_argument("--gamma", type=_triple, default=(0.6, 0.2, 0.2))
    h.add_argument("--norm", default=None, help="normalization constants CSV from optimize")
    h.add_argument("--resample", action="store_true", help="redraw the user assignment every repetition")
    h.add_argument("--threads", type=_positive_int, default=_default_threads())
    h.add_argument("--out-heatmaps", required=True)
    h.add_argument("--out-log", default=None)
    h.set_defaults(func=cmd_hetero)

    r = sub.add_parser("report", help="plot-ready CSV for CDFs, trajectories and heatmaps")
    r.add_argument("--records")
    r.add_argument("--trajectory")
    r.add_argument("--heatmaps")
    r.add_argument("--points", type=_positive_int, default=100)
    r.add_argument("--out-dir", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"error: usage: {exc}\n")
        return 2
    except (CliError, ValueError, OSError) as exc:
        msg = str(exc).replace("\n", " ")
        sys.stderr.write(f"error: {type(exc).__name__}: {msg}\n")
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
