"""Operator CLI: generate traces, detect, merge snapshots, evaluate, bench.

Exit codes: 0 success, 2 usage or configuration error, 3 malformed data,
4 candidate-buffer overflow during restore.
"""

from __future__ import annotations

import csv
import functools
import ipaddress
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from dhsa import dhg, dhla, ingest
from dhsa._kernels import available_backends, get_backend
from dhsa.engine import DetectionEngine, WindowConfig, WindowResult, WindowSession, split_pairs
from dhsa.errors import CapacityError, ConfigError, DataError

_EXIT_CODES = {ConfigError: 2, DataError: 3, CapacityError: 4}


def dotted(host: int) -> str:
    return str(ipaddress.ip_address(host))


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, DataError, CapacityError) as exc:
            wrapped = click.ClickException(str(exc))
            for cls, code in _EXIT_CODES.items():
                if isinstance(exc, cls):
                    wrapped.exit_code = code
                    break
            raise wrapped from exc

    return wrapper


def sketch_options(fn):
    opts = [
        click.option("--g", "g", default=1024, show_default=True, help="Bits per estimator."),
        click.option("--r", "r", default=5, show_default=True, help="Estimator arrays."),
        click.option("--alpha", default=6, show_default=True, help="Key block stride in bits."),
        click.option("--k", "k", default=14, show_default=True, help="log2 estimators per array."),
        click.option("--seed-dh0", default=dhg.DEFAULT_SEED_DH0, show_default=False,
                      help="Seed of the candidate-side hash."),
        click.option("--seed-h1", default=dhg.DEFAULT_SEED_H1, show_default=False,
                      help="Seed of the opposite-side hash."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def window_options(fn):
    opts = [
        click.option("--theta", default=1024, show_default=True, help="Super point threshold."),
        click.option("--window-secs", default=300, show_default=True, help="Window length."),
        click.option("--workers", default=1, show_default=True, help="Update/restore workers."),
        click.option("--batch", default=65536, show_default=True, help="Pairs per batch."),
        click.option("--direction", type=click.Choice(["src", "dst", "both"]), default="src",
                      show_default=True, help="Which address is the candidate."),
        click.option("--max-candidates", default=dhla.DEFAULT_MAX_CANDIDATES, show_default=True,
                      help="Per-stage partial-key buffer capacity."),
        click.option("--backend", type=click.Choice(["auto", "compiled", "python"]),
                      default="auto", show_default=True, help="Kernel backend."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _apply_config(ctx, config_path, values: dict) -> dict:
    """Fill defaulted options from a JSON config file; explicit flags win."""
    if not config_path:
        return values
    with open(config_path) as fh:
        data = json.load(fh)
    unknown = set(data) - set(values)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for name, val in data.items():
        source = ctx.get_parameter_source(name)
        if source is None or source.name == "DEFAULT":
            values[name] = val
    return values


def _params(v) -> dhg.DhgParams:
    return dhg.DhgParams(
        r=v["r"], g=v["g"], k=v["k"], alpha=v["alpha"],
        seed_dh0=v["seed_dh0"], seed_h1=v["seed_h1"],
    )


def _window_config(v) -> WindowConfig:
    return WindowConfig(
        dhg=_params(v),
        window_seconds=v["window_secs"],
        theta=v["theta"],
        workers=v["workers"],
        batch_pairs=v["batch"],
        direction=v["direction"],
        max_candidates=v["max_candidates"],
    )


def _write_report(results, out, fmt):
    if fmt == "json":
        doc = {
            "windows": [
                {
                    "window_id": res.window_id,
                    "pairs": res.pairs,
                    "dropped": res.dropped,
                    "superpoints": [
                        {
                            "host": dotted(rep.host),
                            "estimate": rep.estimate,
                            "saturated": rep.saturated,
                        }
                        for rep in res.reports
                    ],
                }
                for res in results
            ]
        }
        _dump(out, doc)
    else:
        with _open_out(out) as fh:
            w = csv.writer(fh)
            w.writerow(["window_id", "host", "estimate", "saturated"])
            for res in results:
                for rep in res.reports:
                    w.writerow([res.window_id, dotted(rep.host), f"{rep.estimate:.3f}",
                                int(rep.saturated)])


def _dump(out, doc):
    text = json.dumps(doc, indent=2)
    if out == "-":
        click.echo(text)
    else:
        Path(out).write_text(text + "\n")


class _StdoutCtx:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        return False


def _open_out(out):
    return _StdoutCtx() if out == "-" else open(out, "w", newline="")


@click.group()
def main():
    """Super point detection from IP-pair traces with a fixed-memory sketch."""


@main.command()
@click.option("--out", required=True, help="Trace output path (.ippr).")
@click.option("--truth-out", default=None, help="Ground-truth sidecar path (JSON).")
@click.option("--seed", default=1, show_default=True)
@click.option("--background-hosts", default=0, show_default=True)
@click.option("--background-card-max", default=256, show_default=True)
@click.option("--background-zipf", default=1.5, show_default=True)
@click.option("--supers", default=0, show_default=True, help="Planted super points.")
@click.option("--super-card-min", default=2048, show_default=True)
@click.option("--super-card-max", default=8192, show_default=True)
@click.option("--dup", default=1, show_default=True, help="Packets per flow.")
@click.option("--windows", default=1, show_default=True)
@click.option("--start-ts", default=0, show_default=True)
@click.option("--window-secs", default=300, show_default=True)
@_handle_errors
def generate(out, truth_out, seed, background_hosts, background_card_max, background_zipf,
             supers, super_card_min, super_card_max, dup, windows, start_ts, window_secs):
    """Write a synthetic trace plus its exact ground truth."""
    all_records = []
    truth_windows = []
    for w in range(windows):
        cfg = ingest.GeneratorConfig(
            background_hosts=background_hosts,
            background_max_cardinality=background_card_max,
            background_zipf=background_zipf,
            superpoints=supers,
            super_cardinality=(super_card_min, super_card_max),
            duplicate_factor=dup,
            start_ts=start_ts + w * window_secs,
            window_seconds=window_secs,
        )
        records, truth = ingest.generate_trace(cfg, seed + w)
        all_records.append(records)
        truth_windows.append(
            {
                "window_id": (start_ts + w * window_secs) // window_secs,
                "counts": {dotted(h): c for h, c in sorted(truth.items())},
            }
        )
    records = np.concatenate(all_records) if all_records else np.empty(0, ingest.TRACE_DTYPE)
    ingest.write_trace(out, records)
    sidecar = {
        "version": 1,
        "direction": "src",
        "window_seconds": window_secs,
        "windows": truth_windows,
    }
    Path(truth_out or out + ".truth.json").write_text(json.dumps(sidecar) + "\n")
    click.echo(f"wrote {len(records)} records to {out}")


@main.command()
@click.option("--input", "input_path", required=True, help="IPPR trace to scan.")
@click.option("--out", default="-", show_default=True, help="Report path or - for stdout.")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json",
              show_default=True)
@click.option("--save-sketch", default=None, help="Directory for per-window snapshots.")
@click.option("--config", "config_path", default=None, help="JSON config file (flags win).")
@sketch_options
@window_options
@click.pass_context
@_handle_errors
def detect(ctx, input_path, out, fmt, save_sketch, config_path, **values):
    """Detect super points per window of a trace."""
    values = _apply_config(ctx, config_path, values)
    cfg = _window_config(values)
    records = ingest.read_trace(input_path)
    on_sealed = None
    if save_sketch:
        snapdir = Path(save_sketch)
        snapdir.mkdir(parents=True, exist_ok=True)

        def on_sealed(sketch):
            dhla.write_snapshot(sketch, str(snapdir / f"window_{sketch.window_id}.dhla"))

    engine = DetectionEngine(cfg, backend=values["backend"])
    results = engine.run(records, on_sealed=on_sealed)
    _write_report(results, out, fmt)


@main.command()
@click.argument("snapshots", nargs=-1, required=True)
@click.option("--out", required=True, help="Merged snapshot path.")
@click.option("--report", default=None, help="Also restore and write a report here.")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json",
              show_default=True)
@click.option("--theta", default=1024, show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--max-candidates", default=dhla.DEFAULT_MAX_CANDIDATES, show_default=True)
@_handle_errors
def merge(snapshots, out, report, fmt, theta, workers, max_candidates):
    """OR together sketch snapshots from different vantage points."""
    merged = dhla.read_snapshot(snapshots[0])
    for path in snapshots[1:]:
        merged = dhla.merge(merged, dhla.read_snapshot(path))
    dhla.write_snapshot(merged, out)
    click.echo(f"merged {len(snapshots)} snapshots into {out}")
    if report:
        reports = merged.restore_superpoints(theta, max_candidates=max_candidates,
                                             workers=workers)
        res = WindowResult(merged.window_id, reports, 0, 0)
        _write_report([res], report, fmt)


@main.command()
@click.option("--input", "input_path", required=True, help="IPPR trace to scan.")
@click.option("--truth", "truth_path", default=None,
              help="Ground-truth sidecar; omit to run the exact oracle.")
@click.option("--out", default="-", show_default=True)
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json",
              show_default=True)
@click.option("--config", "config_path", default=None, help="JSON config file (flags win).")
@sketch_options
@window_options
@click.pass_context
@_handle_errors
def evaluate(ctx, input_path, truth_path, out, fmt, config_path, **values):
    """Detect, then score each window against exact ground truth."""
    values = _apply_config(ctx, config_path, values)
    cfg = _window_config(values)
    records = ingest.read_trace(input_path)
    engine = DetectionEngine(cfg, backend=values["backend"])
    results = engine.run(records)

    truth_by_window = {}
    if truth_path:
        sidecar = json.loads(Path(truth_path).read_text())
        if sidecar.get("direction") != cfg.direction:
            raise ConfigError(
                f"truth sidecar was generated for direction "
                f"{sidecar.get('direction')!r}, detection ran with {cfg.direction!r}"
            )
        for w in sidecar["windows"]:
            truth_by_window[int(w["window_id"])] = {
                int(ipaddress.ip_address(h)): c for h, c in w["counts"].items()
            }
    else:
        wins = records["ts"].astype(np.int64) // cfg.window_seconds
        for wid in np.unique(wins):
            truth_by_window[int(wid)] = ingest.exact_oracle(
                records[wins == wid], cfg.direction
            )

    rows = []
    for res in results:
        metrics = ingest.evaluate(res.reports, truth_by_window.get(res.window_id, {}),
                                  cfg.theta)
        rows.append({"window_id": res.window_id, **metrics.as_dict()})
    if fmt == "json":
        _dump(out, {"windows": rows})
    else:
        with _open_out(out) as fh:
            w = csv.writer(fh)
            header = ["window_id", "N", "N_reported", "N_false_pos", "N_false_neg",
                      "fpr", "fnr", "tfr", "mean_rel_err"]
            w.writerow(header)
            for row in rows:
                w.writerow(["undefined" if row[h] is None else row[h] for h in header])


@main.command()
@click.option("--input", "input_path", default=None, help="IPPR trace to replay.")
@click.option("--pairs", default=2_000_000, show_default=True,
              help="Synthetic load size if no trace given.")
@click.option("--workers", "worker_list", default="1", show_default=True,
              help="Comma-separated worker counts.")
@click.option("--backend", type=click.Choice(["auto", "compiled", "python", "both"]),
              default="both", show_default=True)
@click.option("--theta", default=1024, show_default=True)
@click.option("--seed", default=1, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text",
              show_default=True)
@sketch_options
@_handle_errors
def bench(input_path, pairs, worker_list, backend, theta, seed, fmt, **values):
    """Measure update throughput and restore time per backend and worker count."""
    params = _params(values)
    if input_path:
        records = ingest.read_trace(input_path)
        cand, opp = split_pairs(records, "src")
    else:
        mixed = dhg.mix64_many(np.arange(pairs, dtype=np.uint64) ^ np.uint64(seed))
        cand = (mixed >> np.uint64(32)).astype(np.uint32)
        opp = (mixed & np.uint64(0xFFFFFFFF)).astype(np.uint32)

    if backend == "both":
        backends = list(available_backends())
    elif backend == "auto":
        backends = [get_backend("auto").name]
    else:
        backends = [get_backend(backend).name]
    workers = [int(x) for x in worker_list.split(",")]

    rows = []
    reference = None
    for bk in backends:
        for nw in workers:
            cfg = WindowConfig(dhg=params, workers=nw, theta=theta)
            pool = ThreadPoolExecutor(max_workers=nw) if nw > 1 else None
            session = WindowSession(cfg, 0, bk, pool)
            t0 = time.perf_counter()
            session.feed_batch(cand, opp)
            session.seal()
            update_secs = time.perf_counter() - t0
            if pool is not None:
                pool.shutdown()
            t0 = time.perf_counter()
            n_reports = len(session.restore())
            restore_secs = time.perf_counter() - t0
            digest = session.sketch.bits.tobytes()
            if reference is None:
                reference = digest
            rows.append(
                {
                    "backend": bk,
                    "workers": nw,
                    "pairs": len(cand),
                    "update_pairs_per_sec": len(cand) / update_secs,
                    "update_secs": update_secs,
                    "restore_secs": restore_secs,
                    "reports": n_reports,
                    "memory_bytes": session.sketch.memory_bytes,
                    "deterministic": digest == reference,
                }
            )
    if fmt == "json":
        click.echo(json.dumps(rows, indent=2))
    else:
        click.echo(f"memory_bytes={params.sketch_bytes} (r*2^k*g/8, fixed)")
        for row in rows:
            click.echo(
                f"backend={row['backend']:<8} workers={row['workers']:<2} "
                f"update={row['update_pairs_per_sec'] / 1e6:8.2f} Mpairs/s "
                f"restore={row['restore_secs'] * 1e3:7.1f} ms "
                f"identical_sketch={row['deterministic']}"
            )


if __name__ == "__main__":
    main()
