"""``sky`` command line.  Every option can also be set as ``SKY_<OPTION>``."""

from __future__ import annotations

import logging
import sys
import threading

import click

from .. import paillier as ph
from ..keyholder import KeyHolder
from ..skyline import encrypt_points
from ..transport import FrameServer, ProtocolError, TcpConnection
from . import files, roles
from .datasets import DISTRIBUTIONS, DatasetSpec, gen_dataset, generate, read_csv


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}")


def _addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise click.BadParameter(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def _points(data: str, columns: str | None, n: int, m: int, d: int, seed: int) -> list[tuple[int, ...]]:
    if data in DISTRIBUTIONS:
        return [tuple(r) for r in generate(DatasetSpec(data, n, m, d, seed)).tolist()]
    _, rows = read_csv(data, columns.split(",") if columns else None)
    return rows


protocol_opt = click.option("--protocol", type=click.Choice(roles.PROTOCOLS, case_sensitive=False), default="FSSP", show_default=True)
partitions_opt = click.option("--partitions", default=1, show_default=True, help="1 = unpartitioned, 0 = use the load model")
workers_opt = click.option("--workers", default=1, show_default=True)
lazy_opt = click.option("--lazy/--no-lazy", default=False, show_default=True)


@click.group(context_settings={"auto_envvar_prefix": "SKY", "show_default": True})
@click.option("--log-level", default="WARNING", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
@click.option("--log-file", type=click.Path(dir_okay=False), default=None)
def main(log_level, log_file):
    """Secure dynamic skyline queries over Paillier-encrypted data."""
    logging.basicConfig(level=log_level.upper(), filename=log_file, format="%(asctime)s %(name)s %(levelname)s %(message)s")


@main.command()
@click.option("--bits", default=512, type=click.Choice(["512", "1024", "2048"]))
@click.option("--out", default="sky", help="writes OUT.pub and OUT.key")
@click.option("--show", is_flag=True, help="also print the public key in hex")
def keygen(bits, out, show):
    """Generate a Paillier key pair."""
    pub, key = files.write_keypair(out, ph.keygen(int(bits)))
    click.echo(f"{pub}\n{key}")
    if show:
        click.echo(files.key_text(pub))


@main.command("gen-data")
@click.option("--distribution", type=click.Choice(DISTRIBUTIONS, case_sensitive=False), default="INDE")
@click.option("--n", default=1000)
@click.option("--m", default=2)
@click.option("--d", default=8)
@click.option("--seed", default=0)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def gen_data(distribution, n, m, d, seed, out):
    """Write a synthetic integer dataset as CSV."""
    gen_dataset(DatasetSpec(distribution.upper(), n, m, d, seed), out)
    click.echo(out)


@main.command()
@click.option("--pub", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False), help="CSV with a header row")
@click.option("--columns", default=None, help="comma-separated column names to keep")
@click.option("--d", default=8)
@click.option("--l", default=20)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def encrypt(pub, data, columns, d, l, out):
    """Data owner: encrypt a CSV dataset for C1."""
    pk = files.read_public_key(pub)
    _, rows = read_csv(data, columns.split(",") if columns else None)
    bad = [v for r in rows for v in r if not 0 <= v < 2**d]
    if bad:
        raise click.ClickException(f"value {bad[0]} outside [0, 2^{d})")
    files.write_encrypted_dataset(out, pk, encrypt_points(pk, rows, d), d, l)
    click.echo(f"{len(rows)} records -> {out}")


@main.command("serve-c2")
@click.option("--key", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=7002)
@click.option("--threads", default=8, help="concurrent sessions served per connection")
def serve_c2(key, host, port, threads):
    """Key holder: answer C1's blinded requests."""
    handler = KeyHolder(files.read_private_key(key))
    with FrameServer((host, port), handler, threads) as srv:
        click.echo(f"C2 listening on {host}:{srv.port}")
        srv.serve_forever()


@main.command("serve-c1")
@click.option("--pub", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False), help="encrypted dataset file")
@click.option("--c2", "c2_addr", default="127.0.0.1:7002")
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=7001)
@click.option("--kappa", default=80)
@click.option("--threads", default=8)
def serve_c1(pub, data, c2_addr, host, port, kappa, threads):
    """Data server: run queries against C2 over the encrypted dataset."""
    pk = files.read_public_key(pub)
    ds = files.read_encrypted_dataset(data, pk)
    c2 = _LazyConnection(_addr(c2_addr))
    defaults = roles.QueryConfig(l=ds.l, kappa=kappa)
    service = roles.C1Service(pk, ds.rows, ds.d, c2.channel, defaults)
    with FrameServer((host, port), service, threads) as srv:
        click.echo(f"C1 listening on {host}:{srv.port} with {ds.n} records")
        try:
            srv.serve_forever()
        finally:
            c2.close()


class _LazyConnection:
    """One multiplexed connection to C2, opened on first use and reopened if it drops."""

    def __init__(self, addr: tuple[str, int]):
        self.addr = addr
        self.conn: TcpConnection | None = None
        self._lock = threading.Lock()

    def channel(self):
        with self._lock:
            if self.conn is None or self.conn.closed:
                self.conn = TcpConnection(*self.addr)
            return self.conn.channel()

    def close(self):
        if self.conn is not None:
            self.conn.close()


@main.command()
@click.option("--pub", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--q", "query", required=True, help="query point, e.g. 41,125")
@click.option("--d", default=8)
@click.option("--c1", "c1_addr", default="127.0.0.1:7001")
@click.option("--c2", "c2_addr", default="127.0.0.1:7002")
@protocol_opt
@partitions_opt
@workers_opt
@lazy_opt
def query(pub, query, d, c1_addr, c2_addr, protocol, partitions, workers, lazy):
    """Client: submit an encrypted query and print the skyline."""
    pk = files.read_public_key(pub)
    cfg = roles.QueryConfig(protocol, partitions=partitions, workers=workers, lazy=lazy)
    try:
        result = roles.remote_query(pk, _ints(query), d, _addr(c1_addr), _addr(c2_addr), cfg)
    except ProtocolError as exc:
        click.echo(f"protocol error: {exc}", err=True)
        sys.exit(roles.EXIT_PROTOCOL)
    except OSError as exc:
        raise click.ClickException(f"cannot reach a server: {exc}")
    for t in sorted(result):
        click.echo(",".join(map(str, t)))


@main.command()
@click.option("--data", default="INDE", help="CSV path or one of " + "/".join(DISTRIBUTIONS))
@click.option("--columns", default=None)
@click.option("--n", default=32)
@click.option("--m", default=2)
@click.option("--d", default=8)
@click.option("--seed", default=0)
@click.option("--q", "query", required=True)
@click.option("--bits", default=512)
@click.option("--l", default=20)
@protocol_opt
@partitions_opt
@workers_opt
@lazy_opt
def verify(data, columns, n, m, d, seed, query, bits, l, protocol, partitions, workers, lazy):
    """Run the secure query in-process and compare with the plaintext skyline."""
    pts = _points(data, columns, n, m, d, seed)
    cfg = roles.QueryConfig(protocol, l, partitions=partitions, workers=workers, lazy=lazy, seed=seed)
    report = roles.verify(pts, _ints(query), cfg, d=d, key_bits=bits)
    click.echo(report.summary())
    sys.exit(report.exit_code)


@main.command()
@click.option("--n", "ns", default="100,200,400")
@click.option("--m", "ms", default="2")
@click.option("--K", "Ks", default="512")
@click.option("--partitions", default="1")
@click.option("--lazy", "lazies", default="0", help="comma-separated 0/1")
@click.option("--workers", default="1")
@click.option("--protocol", "protocols", default="FSSP")
@click.option("--distribution", type=click.Choice(DISTRIBUTIONS, case_sensitive=False), default="INDE")
@click.option("--d", default=8)
@click.option("--l", default=20)
@click.option("--seed", default=0)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def bench(ns, ms, Ks, partitions, lazies, workers, protocols, distribution, d, l, seed, out):
    """Sweep a parameter grid and write one CSV row per cell."""
    recs = roles.bench(
        _ints(ns), _ints(ms), _ints(Ks), _ints(partitions), [bool(v) for v in _ints(lazies)], _ints(workers),
        [p.strip().upper() for p in protocols.split(",")], distribution.upper(), d, l, seed, out,
    )
    failed = sum(1 for r in recs if r.k < 0)
    click.echo(f"{len(recs)} cells -> {out}" + (f" ({failed} failed)" if failed else ""))


if __name__ == "__main__":
    main()
