"""Command line client for the experiment service.

The CLI never computes anything itself: it posts to the HTTP service and
formats responses. By default the app is mounted in-process, so no server
needs to be running; --server points the identical client at a remote
instance. File I/O (records, CSV log) stays on the client side either way.
"""

from __future__ import annotations

import json
from pathlib import Path

import click
import httpx

from amalab.experiments import CSV_HEADER, canonical_record_bytes, record_filename


def _client(server: str | None) -> httpx.Client:
    if server is not None:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        # the stock testclient import warns about its httpx pairing
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from amalab.service import app

    # in-process ASGI mount: the same request path without a socket
    return TestClient(app, raise_server_exceptions=False)


def _post(client: httpx.Client, path: str, payload: dict) -> dict:
    resp = client.post(path, json=payload)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except Exception:
            detail = resp.text
        if not isinstance(detail, str):
            detail = json.dumps(detail, indent=2)
        raise click.ClickException(f"{path} returned {resp.status_code}:\n{detail}")
    return resp.json()


def _load_config(config_file: Path, seed: int | None) -> dict:
    cfg = json.loads(config_file.read_text())
    if not isinstance(cfg, dict):
        raise click.ClickException("config file must hold a JSON object")
    if seed is not None:
        cfg = {**cfg, "seed": seed}
    return cfg


@click.group()
def main() -> None:
    """Search, evaluate and audit dynamic affine-maximizer mechanisms."""


@main.command()
@click.argument(
    "config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option(
    "--out",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path("results"),
    show_default=True,
    help="Directory for the record JSON and the results.csv log.",
)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--server", default=None, help="Service URL; default runs in-process.")
def run(
    config_file: Path, seed: int | None, out: Path, threads: int, server: str | None
) -> None:
    """Run one experiment config; write its record and append a CSV row."""
    cfg = _load_config(config_file, seed)
    with _client(server) as client:
        payload = _post(client, "/run", {"config": cfg, "threads": threads})
    record = payload["record"]
    out.mkdir(parents=True, exist_ok=True)
    record_path = out / record_filename(record)
    record_path.write_bytes(canonical_record_bytes(record))
    csv_path = out / "results.csv"
    fresh = not csv_path.exists()
    with csv_path.open("a") as fh:
        if fresh:
            fh.write(CSV_HEADER + "\n")
        fh.write(payload["csv_row"] + "\n")
    click.echo(CSV_HEADER)
    click.echo(payload["csv_row"])
    click.echo(f"record: {record_path}")
    if record["status"] != "ok":
        raise click.ClickException(
            f"run FAILED: worst IC gain {record['audit']['worst_ic_gain']:g} "
            "exceeds tolerance"
        )


@main.command()
@click.argument(
    "result_files",
    nargs=-1,
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
)
@click.option("--server", default=None, help="Service URL; default runs in-process.")
def compare(result_files: tuple[Path, ...], server: str | None) -> None:
    """Tabulate result records against their VCG baseline record."""
    records = [json.loads(path.read_text()) for path in result_files]
    with _client(server) as client:
        payload = _post(client, "/compare", {"records": records})
    click.echo(payload["table"])


@main.command()
@click.argument(
    "config_file", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--min-misreports", type=int, default=1000, show_default=True)
@click.option("--trials", type=int, default=5, show_default=True)
@click.option("--ir-profiles", type=int, default=1000, show_default=True)
@click.option("--server", default=None, help="Service URL; default runs in-process.")
def audit(
    config_file: Path,
    seed: int | None,
    threads: int,
    min_misreports: int,
    trials: int,
    ir_profiles: int,
    server: str | None,
) -> None:
    """Deep incentive audit of the mechanism a config selects.

    Exits nonzero when either the incentive-compatibility or the
    individual-rationality check fails.
    """
    cfg = _load_config(config_file, seed)
    with _client(server) as client:
        payload = _post(
            client,
            "/audit",
            {
                "config": cfg,
                "threads": threads,
                "min_misreports": min_misreports,
                "trials": trials,
                "ir_profiles": ir_profiles,
            },
        )
    report = payload["report"]
    click.echo(
        f"{report['env']} n={report['n']} m={report['m']} "
        f"method={report['method']} seed={report['seed']}"
    )
    ic_verdict = "PASS" if report["ic_pass"] else "FAIL"
    ir_verdict = "PASS" if report["ir_pass"] else "FAIL"
    click.echo(
        f"IC: worst gain {report['worst_ic_gain']:.3e} over "
        f"{report['misreports']} misreports on {report['profiles']} profiles "
        f"({report['tied_profiles']} with ties) -> {ic_verdict}"
    )
    click.echo(
        f"IR: min truthful utility {report['min_ir_utility']:.3e} over "
        f"{report['ir_profiles']} profiles -> {ir_verdict}"
    )
    if not (report["ic_pass"] and report["ir_pass"]):
        raise SystemExit(1)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host: str, port: int) -> None:
    """Start the HTTP service."""
    import uvicorn

    uvicorn.run("amalab.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
