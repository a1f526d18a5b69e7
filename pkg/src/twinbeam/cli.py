"""Command-line pipelines: simulate, analyze, fit, predict.

Every command is a pure function of (input files, configuration, seed):
rerunning with the same inputs writes byte-identical files.  Each output
directory receives a ``manifest.json`` listing the produced files with
SHA-256 checksums.  Exit codes are stable: 0 success, 2 input or
validation error, 3 empty-result condition, 4 fit failure.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .analysis import (
    CountHistogram,
    bin_events,
    bootstrap_std,
    cell_histograms,
    filter_cells,
    pooled_counts_histogram,
    sum_histograms,
    write_cell_stats,
)
from .config import (
    ConfigError,
    analysis_params,
    cell_grid,
    config_digest,
    default_config,
    hom_config,
    load_config,
    source_config,
)
from .distributions import multimode_pmf, poisson_pmf, thermal_pmf
from .fitting import (
    FitFailureError,
    fit_degeneracy,
    fit_gaussian_dip,
    propagate_visibility_uncertainty,
)
from .simulate import (
    GENERATOR_ID,
    correlation_scan,
    derive_shot_seed,
    read_event_table,
    simulate_counting_run,
    simulate_hom_run,
    write_event_table,
    write_hom_events,
)

EXIT_INPUT_ERROR = 2
EXIT_EMPTY_RESULT = 3
EXIT_FIT_FAILURE = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_manifest(out_dir: Path, doc: dict, seed: int, files, stamp: bool) -> Path:
    manifest = {
        "tool": "twinbeam",
        "version": __version__,
        "seed": seed,
        "config_digest": config_digest(doc),
        "generator": GENERATOR_ID,
        # A wall-clock stamp breaks byte-identical reruns; opt in with --stamp.
        "timestamp": (
            datetime.datetime.now(datetime.timezone.utc).isoformat() if stamp else None
        ),
        "files": [
            {"name": f.name, "sha256": _sha256(f), "bytes": f.stat().st_size}
            for f in sorted(files)
        ],
    }
    path = out_dir / "manifest.json"
    _write_json(path, manifest)
    return path


def _load_config_or_fail(path: str) -> dict:
    try:
        return load_config(path)
    except (ConfigError, OSError) as exc:
        _fail(EXIT_INPUT_ERROR, str(exc))


def _prepare_out(out: str) -> Path:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


_COMMON_OPTIONS = [
    click.option(
        "--config",
        "config_path",
        type=click.Path(exists=False),
        required=True,
        help="Run configuration (JSON).",
    ),
    click.option("--out", required=True, help="Output directory."),
    click.option(
        "--seed", type=int, default=None, help="Master seed override (else from config)."
    ),
    click.option(
        "--stamp/--no-stamp",
        default=False,
        help="Record wall-clock time in the manifest (breaks byte reproducibility).",
    ),
]


def _with_common_options(fn):
    for option in reversed(_COMMON_OPTIONS):
        fn = option(fn)
    return fn


@click.group()
@click.version_option(version=__version__)
def main():
    """Twin-beam source simulation and counting-statistics analysis."""


@main.command("print-config")
def print_config():
    """Print the default configuration document."""
    click.echo(json.dumps(default_config(), indent=2))


@main.command("simulate-source")
@_with_common_options
def cmd_simulate_source(config_path, out, seed, stamp):
    """Generate a counting run and write its event table."""
    doc = _load_config_or_fail(config_path)
    out_dir = _prepare_out(out)
    config = source_config(doc, seed)
    table = simulate_counting_run(config)
    events_csv = out_dir / "events.csv"
    events_meta = out_dir / "events.meta.json"
    write_event_table(table, events_csv, events_meta)
    _write_manifest(out_dir, doc, config.master_seed, [events_csv, events_meta], stamp)
    click.echo(
        f"wrote {table.n_shots} shots, "
        f"{int(table.counts_per_shot().sum())} detected atoms -> {events_csv}"
    )


def _histogram_csv(path: Path, hist, err, overlays: dict) -> None:
    probs = hist.probabilities
    names = list(overlays)
    with open(path, "w") as fh:
        fh.write("n,occurrences,probability,err" + "".join(f",{n}" for n in names) + "\n")
        for n, occ in enumerate(hist.occurrences):
            row = [str(n), str(int(occ)), repr(float(probs[n])), repr(float(err[n]))]
            row += [repr(float(overlays[name][n])) for name in names]
            fh.write(",".join(row) + "\n")


def _model_column(pmf, width: int) -> np.ndarray:
    column = np.zeros(width)
    take = min(width, len(pmf.probs))
    column[:take] = pmf.probs[:take]
    return column


@main.command("analyze-counts")
@click.option("--events", "events_path", required=True, help="Event-table CSV.")
@click.option(
    "--meta",
    "meta_path",
    default=None,
    help="Event-table sidecar JSON (default: <events>.meta.json next to the CSV).",
)
@_with_common_options
def cmd_analyze_counts(events_path, meta_path, config_path, out, seed, stamp):
    """Bin, histogram, filter and fit a counting run."""
    doc = _load_config_or_fail(config_path)
    out_dir = _prepare_out(out)
    if meta_path is None:
        meta_path = str(Path(events_path).with_suffix("")) + ".meta.json"
    try:
        table = read_event_table(events_path, meta_path)
    except (OSError, ValueError, KeyError) as exc:
        _fail(EXIT_INPUT_ERROR, str(exc))
    params = analysis_params(doc)
    master = doc["master_seed"] if seed is None else seed
    resamples = params["bootstrap_resamples"]

    grid = cell_grid(doc)
    binned = bin_events(table, grid)
    stats = cell_histograms(binned)
    selection = filter_cells(stats, params["min_mean"])
    write_cell_stats(out_dir / "cell_stats.csv", stats, selection)
    if selection.is_empty:
        _write_manifest(out_dir, doc, master, [out_dir / "cell_stats.csv"], stamp)
        _fail(
            EXIT_EMPTY_RESULT,
            f"no cells reach the mean threshold {params['min_mean']}",
        )

    kept_flat = [
        np.ravel_multi_index(c.index, grid.counts_per_axis) for c in selection.kept
    ]
    kept_counts = binned.counts[:, kept_flat]

    # Per-cell histograms summed over the kept cells, with overlays at the
    # measured average mean.
    summed = sum_histograms(selection)
    width = len(summed.occurrences)
    summed_err = bootstrap_std(
        kept_counts,
        lambda rows: np.bincount(rows.ravel(), minlength=width)[:width] / rows.size,
        resamples=resamples,
        seed=derive_shot_seed(master, 2**40),
    )
    mean_single = selection.average_mean
    _histogram_csv(
        out_dir / "summed_histogram.csv",
        summed,
        summed_err,
        {
            "thermal": _model_column(thermal_pmf(mean_single, width - 1), width),
            "poisson": _model_column(poisson_pmf(mean_single, width - 1), width),
        },
    )

    # Shot-wise pooled counts over the same cells, fit for the mode count.
    pooled = pooled_counts_histogram(selection, binned)
    pooled_width = len(pooled.occurrences) + 5
    pooled_occ = np.concatenate([pooled.occurrences, np.zeros(5, dtype=int)])
    pooled_err = bootstrap_std(
        kept_counts,
        lambda rows: np.bincount(rows.sum(axis=1), minlength=pooled_width)[
            :pooled_width
        ]
        / len(rows),
        resamples=resamples,
        seed=derive_shot_seed(master, 2**40 + 1),
    )
    try:
        fit = fit_degeneracy(
            pooled,
            fixed_mean=pooled.mean,
            bootstrap_resamples=min(200, resamples),
            seed=derive_shot_seed(master, 2**40 + 2) % 2**63,
        )
    except FitFailureError as exc:
        _fail(EXIT_FIT_FAILURE, f"degeneracy fit failed: {exc}")
    padded = CountHistogram(occurrences=pooled_occ, total_shots=pooled.total_shots)
    _histogram_csv(
        out_dir / "pooled_histogram.csv",
        padded,
        pooled_err,
        {
            "thermal": _model_column(thermal_pmf(pooled.mean, pooled_width - 1), pooled_width),
            "poisson": _model_column(poisson_pmf(pooled.mean, pooled_width - 1), pooled_width),
            "multimode": _model_column(
                multimode_pmf(pooled.mean, fit.degeneracy, pooled_width - 1),
                pooled_width,
            ),
        },
    )
    _write_json(
        out_dir / "degeneracy_fit.json",
        {
            **fit.to_dict(),
            "kept_cells": len(selection),
            "average_cell_mean": selection.average_mean,
            "pooled_mean": pooled.mean,
            "input_digest": _sha256(Path(events_path)),
        },
    )
    files = [
        out_dir / "cell_stats.csv",
        out_dir / "summed_histogram.csv",
        out_dir / "pooled_histogram.csv",
        out_dir / "degeneracy_fit.json",
    ]
    _write_manifest(out_dir, doc, master, files, stamp)
    click.echo(
        f"kept {len(selection)}/{grid.n_cells} cells, average mean "
        f"{selection.average_mean:.4f}, pooled mean {pooled.mean:.3f}, "
        f"fitted mode count {fit.degeneracy:.2f} +/- {fit.std_err:.2f}"
    )


@main.command("simulate-hom")
@_with_common_options
def cmd_simulate_hom(config_path, out, seed, stamp):
    """Scan the splitter time and write the cross-correlation curve."""
    doc = _load_config_or_fail(config_path)
    out_dir = _prepare_out(out)
    config = hom_config(doc, seed)
    run = simulate_hom_run(config)
    events_csv = out_dir / "hom_events.csv"
    events_meta = out_dir / "hom_events.meta.json"
    write_hom_events(run, events_csv, events_meta)
    resamples = analysis_params(doc)["bootstrap_resamples"]
    points = correlation_scan(run, resamples=resamples)
    scan_csv = out_dir / "hom_scan.csv"
    with open(scan_csv, "w") as fh:
        fh.write("t2_us,corr,err\n")
        for t2, corr, err in points:
            fh.write(f"{float(t2)!r},{float(corr)!r},{float(err)!r}\n")
    _write_manifest(
        out_dir, doc, config.master_seed, [events_csv, events_meta, scan_csv], stamp
    )
    click.echo(f"wrote {len(points)} scan points -> {scan_csv}")


def _read_scan_csv(path: str):
    points = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if lineno == 1:
                if line != "t2_us,corr,err":
                    raise ValueError(f"{path}:1: unexpected header {line!r}")
                continue
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                points.append(tuple(float(p) for p in parts))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return points


@main.command("fit-dip")
@click.argument("scan_csv", type=click.Path(exists=False))
@click.option("--nu", type=float, default=None, help="Mean occupation for a predicted-visibility comparison row.")
@click.option("--nu-std", type=float, default=0.0, help="Uncertainty on --nu.")
@click.option("--out", required=True, help="Output directory.")
@click.option("--stamp/--no-stamp", default=False)
def cmd_fit_dip(scan_csv, nu, nu_std, out, stamp):
    """Fit the Gaussian dip in a correlation scan."""
    out_dir = _prepare_out(out)
    try:
        points = _read_scan_csv(scan_csv)
    except (OSError, ValueError) as exc:
        _fail(EXIT_INPUT_ERROR, str(exc))
    if len(points) < 5:
        _fail(EXIT_INPUT_ERROR, f"need at least 5 scan points, got {len(points)}")
    try:
        fit = fit_gaussian_dip(points)
    except FitFailureError as exc:
        _fail(EXIT_FIT_FAILURE, f"dip fit did not converge: {exc} {exc.diagnostics}")
    except ValueError as exc:
        _fail(EXIT_INPUT_ERROR, str(exc))

    payload = {**fit.to_dict(), "input_digest": _sha256(Path(scan_csv))}
    if nu is not None:
        prediction = propagate_visibility_uncertainty(nu, nu_std)
        payload["comparison"] = {
            "nu": nu,
            "nu_std": nu_std,
            "v_predicted": prediction.v_pred,
            "v_predicted_err": prediction.v_std,
            "v_observed": fit.visibility,
            "v_observed_err": fit.visibility_err,
        }
        click.echo("nu            V_pred        V_obs")
        click.echo(
            f"{nu:.3g} +/- {nu_std:.2g}   "
            f"{prediction.v_pred:.2f} +/- {prediction.v_std:.2f}   "
            f"{fit.visibility:.2f} +/- {fit.visibility_err:.2f}"
        )
    _write_json(out_dir / "dip_fit.json", payload)
    ts = np.array(sorted(p[0] for p in points))
    t_dense = np.linspace(ts.min(), ts.max(), 200)
    curve = fit.model(t_dense)
    curve_csv = out_dir / "fitted_curve.csv"
    with open(curve_csv, "w") as fh:
        fh.write("t2_us,corr_fit\n")
        for tt, cc in zip(t_dense, curve):
            fh.write(f"{float(tt)!r},{float(cc)!r}\n")
    _write_manifest(
        out_dir,
        {"scan_digest": payload["input_digest"]},
        0,
        [out_dir / "dip_fit.json", curve_csv],
        stamp,
    )
    click.echo(
        f"V = {fit.visibility:.4f} +/- {fit.visibility_err:.4f}, "
        f"t0 = {fit.t0:.2f} us, sigma = {fit.sigma:.2f} us, "
        f"baseline = {fit.baseline:.4g}"
    )


@main.command("predict-visibility")
@click.option("--nu", type=float, default=None, help="Mean occupation (overrides config).")
@click.option("--nu-std", type=float, default=None, help="Uncertainty on nu (overrides config).")
@click.option("--config", "config_path", default=None, help="Run configuration (JSON).")
@click.option("--out", required=True, help="Output directory.")
@click.option("--stamp/--no-stamp", default=False)
def cmd_predict_visibility(nu, nu_std, config_path, out, stamp):
    """Evaluate the predicted visibility with propagated uncertainty."""
    doc = {"master_seed": 0}
    if config_path is not None:
        doc = _load_config_or_fail(config_path)
    section = doc.get("visibility", {})
    if nu is None:
        nu = section.get("nu")
    if nu_std is None:
        nu_std = section.get("nu_std", 0.0)
    if nu is None:
        _fail(EXIT_INPUT_ERROR, "provide --nu or a visibility section in the config")
    out_dir = _prepare_out(out)
    try:
        prediction = propagate_visibility_uncertainty(nu, nu_std)
    except ValueError as exc:
        _fail(EXIT_INPUT_ERROR, str(exc))
    _write_json(out_dir / "visibility_prediction.json", prediction.to_dict())
    _write_manifest(
        out_dir, doc, doc.get("master_seed", 0), [out_dir / "visibility_prediction.json"], stamp
    )
    click.echo("nu            V_pred")
    click.echo(
        f"{nu:.3g} +/- {nu_std:.2g}   {prediction.v_pred:.2f} +/- {prediction.v_std:.2f}"
    )


if __name__ == "__main__":
    main()
