"""
Command-line client for the experiment service.

Subcommands mirror the service endpoints (`analyze`, `simulate`,
`sweep-rate`, `cdf`); by default the service runs in-process, or point
`--server` at a running instance (`dharq serve`). Results are written as
CSV with a `#`-prefixed fingerprint line, or mirrored to JSON with
`--json`. A flat key=value config file can preload any flag; explicit
flags win.

Exit status: 0 when every requested row computed, 1 when any row failed
(failing rows are listed on stderr), 2 for usage errors.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import io
import json
import sys
from pathlib import Path

import httpx


class CliError(Exception):
    pass


def _parse_grid(text: str) -> list[float]:
    """SNR grids: 'start:stop:step' (stop inclusive) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"grid must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise argparse.ArgumentTypeError("grid step must be positive")
        grid = []
        value = start
        while value <= stop + 1e-9:
            grid.append(round(value, 9))
            value += step
        if not grid:
            raise argparse.ArgumentTypeError(f"empty grid {text!r}")
        return grid
    return [float(p) for p in text.split(",") if p.strip()]


def _parse_int_list(text: str) -> list[int]:
    values = [int(p) for p in text.split(",") if p.strip()]
    if not values:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list, got {text!r}")
    return values


def _parse_protocols(text: str) -> list[str]:
    values = [p.strip() for p in text.split(",") if p.strip()]
    if not values:
        raise argparse.ArgumentTypeError("at least one protocol is required")
    allowed = {"dharq", "harq", "fixed"}
    for v in values:
        if v not in allowed:
            raise argparse.ArgumentTypeError(f"unknown protocol {v!r} (choose from {sorted(allowed)})")
    return values


def _load_config(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file; flags override it")
    parser.add_argument("--k", type=int, help="information bits per packet (default 32)")
    parser.add_argument("--n", type=int, help="mini-slot symbols; timeslot is 2n (default 32)")
    parser.add_argument("--L", type=int, help="slots between deadlines (default 2)")
    parser.add_argument("--m", type=_parse_int_list, help="credit caps, comma list (default 1)")
    parser.add_argument("--protocols", type=_parse_protocols,
                        help="comma list from dharq,harq,fixed (default all)")
    parser.add_argument("--scheme", choices=["cc", "ir"], help="combining scheme (default cc)")
    parser.add_argument("--mode", choices=["verbatim", "normal"],
                        help="rate-penalty convention (default normal)")
    parser.add_argument("--samples", type=int, help="fading-average sample count (default 1e6)")
    parser.add_argument("--avg-seed", type=int, help="fading-average seed")
    parser.add_argument("--workers", type=int, help="parallel grid workers (default 1)")
    parser.add_argument("--server", help="base URL of a running service; default runs in-process")
    parser.add_argument("--cache", help="epsilon cache path (in-process and serve only)")
    parser.add_argument("--out", help="output CSV path; default stdout")
    parser.add_argument("--json", action="store_true", help="also mirror output as JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dharq", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="analytic PER/throughput over an SNR grid")
    _add_common(p)
    p.add_argument("--snr-db", type=_parse_grid, help="start:stop:step or comma list (default 0:20:1)")

    p = sub.add_parser("simulate", help="Monte Carlo sweep with analytic comparison columns")
    _add_common(p)
    p.add_argument("--snr-db", type=_parse_grid, help="start:stop:step or comma list")
    p.add_argument("--packets", type=int, help="packets per grid point (default 100000)")
    p.add_argument("--warmup", type=int, help="discarded leading packets (default 1000)")
    p.add_argument("--seed", type=int, help="simulation seed (default 1)")
    p.add_argument("--replicas", type=int, help="independent fading streams to merge (default 1)")

    p = sub.add_parser("sweep-rate", help="PER/throughput frontier over k at fixed SNR")
    _add_common(p)
    p.add_argument("--k-list", type=_parse_int_list, help="comma list of k values (default 8..64 step 8)")
    p.add_argument("--snr-db", type=float, help="single SNR in dB (default 10)")

    p = sub.add_parser("cdf", help="empirical CDF of per-packet conditional error")
    _add_common(p)
    p.add_argument("--snr-db", type=_parse_grid, help="start:stop:step or comma list")
    p.add_argument("--realizations", type=int, help="post-warmup packets per point (default 10000)")
    p.add_argument("--seed", type=int, help="simulation seed (default 1)")
    p.add_argument("--warmup", type=int, help="discarded leading packets (default 1000)")
    p.add_argument("--stat", choices=["cap", "termination"],
                   help="conditional error at the budget cap or at the stopping attempt")
    p.add_argument("--max-points", type=int, help="quantile points per curve (default 10000)")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--cache", help="epsilon cache path")
    return parser


_CONFIG_PARSERS = {
    "k": int, "n": int, "L": int, "m": _parse_int_list,
    "protocols": _parse_protocols, "scheme": str, "mode": str,
    "samples": int, "avg_seed": int, "workers": int,
    "server": str, "cache": str, "out": str,
    "snr_db": _parse_grid, "packets": int, "warmup": int, "seed": int,
    "replicas": int, "k_list": _parse_int_list, "realizations": int,
    "stat": str, "max_points": int,
}


def _effective(args: argparse.Namespace, key: str, default=None):
    value = getattr(args, key, None)
    if value is not None:
        return value
    config = getattr(args, "_config_values", {})
    if key in config:
        return _CONFIG_PARSERS[key](config[key])
    return default


def _common_payload(args: argparse.Namespace) -> dict:
    return {
        "k": _effective(args, "k", 32),
        "n": _effective(args, "n", 32),
        "L": _effective(args, "L", 2),
        "m": _effective(args, "m", [1]),
        "protocols": _effective(args, "protocols", ["dharq", "harq", "fixed"]),
        "scheme": _effective(args, "scheme", "cc"),
        "mode": _effective(args, "mode", "normal"),
        "avg_samples": _effective(args, "samples", 1_000_000),
        "avg_seed": _effective(args, "avg_seed", 123456789),
        "workers": _effective(args, "workers", 1),
    }


def _build_payload(args: argparse.Namespace) -> tuple[str, dict]:
    payload = _common_payload(args)
    if args.command == "analyze":
        payload["snr_db"] = _effective(args, "snr_db", _parse_grid("0:20:1"))
        return "/analyze", payload
    if args.command == "simulate":
        grid = _effective(args, "snr_db")
        if grid is None:
            raise CliError("simulate requires --snr-db")
        payload.update(
            snr_db=grid,
            packets=_effective(args, "packets", 100_000),
            warmup=_effective(args, "warmup", 1_000),
            seed=_effective(args, "seed", 1),
            replicas=_effective(args, "replicas", 1),
        )
        return "/simulate", payload
    if args.command == "sweep-rate":
        payload.update(
            k_list=_effective(args, "k_list", list(range(8, 65, 8))),
            snr_db=_effective(args, "snr_db", 10.0),
        )
        payload.pop("k")
        return "/sweep-rate", payload
    if args.command == "cdf":
        grid = _effective(args, "snr_db")
        if grid is None:
            raise CliError("cdf requires --snr-db")
        payload.update(
            snr_db=grid,
            realizations=_effective(args, "realizations", 10_000),
            seed=_effective(args, "seed", 1),
            warmup=_effective(args, "warmup", 1_000),
            stat=_effective(args, "stat", "cap"),
            max_points=_effective(args, "max_points", 10_000),
        )
        return "/cdf", payload
    raise CliError(f"unknown command {args.command!r}")


def _post(server: str | None, cache: str | None, path: str, payload: dict) -> dict:
    async def go() -> dict:
        if server:
            client = httpx.AsyncClient(base_url=server, timeout=None)
        else:
            from .service.app import create_app

            app = create_app(cache)
            client = httpx.AsyncClient(
                transport=httpx.ASGITransport(app=app), base_url="http://dharq.internal", timeout=None
            )
        async with client:
            response = await client.post(path, json=payload)
            if response.status_code != 200:
                raise CliError(f"service returned {response.status_code}: {response.text}")
            return response.json()

    return asyncio.run(go())


def _render_csv(response: dict) -> str:
    buffer = io.StringIO()
    buffer.write(f"# {response['fingerprint']}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    columns = response["columns"]
    writer.writerow(columns)
    for row in response["rows"]:
        writer.writerow([row.get(col, "") for col in columns])
    return buffer.getvalue()


def _emit(args: argparse.Namespace, response: dict) -> None:
    out = _effective(args, "out")
    as_json = bool(getattr(args, "json", False))
    csv_text = _render_csv(response)
    json_text = json.dumps(response, indent=2, sort_keys=True) + "\n"
    if out:
        out_path = Path(out)
        out_path.write_text(csv_text, encoding="utf-8")
        if as_json:
            out_path.with_suffix(".json").write_text(json_text, encoding="utf-8")
    else:
        sys.stdout.write(json_text if as_json else csv_text)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service.app import create_app

        uvicorn.run(create_app(args.cache), host=args.host, port=args.port)
        return 0

    config_path = getattr(args, "config", None)
    try:
        args._config_values = _load_config(config_path) if config_path else {}
        path, payload = _build_payload(args)
        response = _post(_effective(args, "server"), _effective(args, "cache"), path, payload)
    except (CliError, OSError, httpx.HTTPError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, CliError) else 1

    _emit(args, response)
    failures = response.get("failures", [])
    if failures:
        for row in failures:
            print(f"failed row: {row}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
