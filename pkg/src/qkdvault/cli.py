"""``qkdvault`` command line: simulate, sweep, serve, keytool.

Exit codes: 0 success, 2 usage, 3 key exhausted or unavailable,
4 session aborted, 5 I/O (including a busy port).

Defaults can come from a config file (``--config PATH``) holding one
``key = value`` pair per line; see :func:`load_config`. ``QKDVAULT_SEED`` in
the environment replaces the built-in seed default. Explicit flags win over
the config file, which wins over the environment.
"""
from __future__ import annotations

import argparse
import ast
import configparser
import json
import os
import secrets
import signal
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .adversary import from_name
from .bb84.auth import AuthSecret
from .bb84.session import (
    DEFAULT_QBER_THRESHOLD,
    DEFAULT_SAMPLE_SIZE,
    DEFAULT_SECURITY_MARGIN,
    WORKED_EXAMPLE,
    SessionParams,
    Status,
    describe_sift,
    generate_raw,
    run_session,
    sift,
)
from .bench import KINDS, ExperimentSpec, run_experiment, summary_row, trial_seed, write_csv
from .channel import ChannelConfig
from .errors import KeyExhaustedError, PoolCorruptError, QkdVaultError, WrongKeyError
from .keystore import KeyPool
from .qotp import CipherText, PlainText, decrypt, encrypt

EXIT_OK, EXIT_USAGE, EXIT_KEY, EXIT_ABORT, EXIT_IO = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _env_seed() -> int:
    raw = os.environ.get("QKDVAULT_SEED")
    if raw is None:
        return 0
    try:
        return int(raw, 0)
    except ValueError:
        raise UsageError(f"QKDVAULT_SEED must be an integer, got {raw!r}") from None


def _value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        low = text.lower()
        if low in ("true", "false"):
            return low == "true"
        return text


def load_config(path) -> Dict[str, object]:
    """Parse ``key = value`` lines. ``#`` starts a comment line.

    Values are Python literals (``10000``, ``0.05``, ``"intercept"``, ``[5, 19]``),
    ``true``/``false``, or bare strings. Dashes in keys become underscores,
    so ``sample-sizes`` and ``sample_sizes`` are the same key.
    """
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",))
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        parser.read_string("[qkdvault]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"bad config file {path}: {exc}") from exc
    return {k.replace("-", "_"): _value(v) for k, v in parser["qkdvault"].items()}


def _floats(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser(seed_default: int = 0) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qkdvault", description="BB84 key distribution and OTP vault toolkit.")
    p.add_argument("--version", action="version", version=f"qkdvault {__version__}")
    p.add_argument("--config", metavar="PATH", help="key = value file supplying flag defaults")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run BB84 sessions and print a summary")
    s.add_argument("--n", type=int, default=10000, help="photons sent per session")
    s.add_argument("--seed", type=int, default=seed_default)
    s.add_argument("--flip", type=float, default=0.0, help="channel bit-flip probability")
    s.add_argument("--loss", type=float, default=0.0, help="photon loss probability")
    s.add_argument("--adversary", choices=("none", "intercept", "mitm"), default="none")
    s.add_argument("--fraction", type=float, default=1.0, help="tapped fraction for intercept")
    s.add_argument("--sample", type=int, default=DEFAULT_SAMPLE_SIZE, help="QBER sample size")
    s.add_argument("--threshold", type=float, default=DEFAULT_QBER_THRESHOLD, help="abort when QBER exceeds this")
    s.add_argument("--margin", type=int, default=DEFAULT_SECURITY_MARGIN, help="privacy amplification margin")
    s.add_argument("--authenticated", action="store_true", help="tag classical messages with a seeded secret")
    s.add_argument("--trials", type=int, default=1, help="run this many sessions and print status counts")
    s.add_argument("--transcript", metavar="PATH", help="write the classical transcript as NDJSON")
    s.add_argument("--summary-csv", metavar="PATH", help="write one summary row per session")
    s.add_argument("--script-table2", action="store_true", help="replay the 8-photon worked example")
    s.add_argument("--json", action="store_true", help="print the summary as JSON")

    w = sub.add_parser("sweep", help="run a Monte Carlo experiment grid and write CSV")
    w.add_argument("kind", choices=KINDS)
    w.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    w.add_argument("--trials", type=int, default=100)
    w.add_argument("--seed", type=int, default=seed_default)
    w.add_argument("--sample-sizes", type=_ints, help="comma list (detection_sweep)")
    w.add_argument("--fractions", type=_floats, help="comma list (detection_sweep, qber_sweep, session_demo)")
    w.add_argument("--flips", type=_floats, help="comma list (qber_sweep, session_demo)")
    w.add_argument("--ns", type=_ints, help="comma list of photon counts (sifting_yield)")
    w.add_argument("--users", type=_ints, help="comma list of concurrent users (scalability)")
    w.add_argument("--photons", type=int, help="photons per session")
    w.add_argument("--workers", type=int, help="worker threads (scalability)")
    w.add_argument("--adversary", help="comma list of adversaries (session_demo)")
    w.add_argument("--loss", type=_floats, help="comma list (session_demo)")

    v = sub.add_parser("serve", help="run the vault HTTP service")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8084)
    v.add_argument("--data-dir", help="directory for persistent key pools")

    k = sub.add_parser("keytool", help="local pool: deposit, status, encrypt, decrypt")
    ksub = k.add_subparsers(dest="action", required=True)
    ks = ksub.add_parser("pool-status", help="print available bits")
    ks.add_argument("--pool", required=True)
    kd = ksub.add_parser("deposit", help="run sessions and deposit BITS bits of final key")
    kd.add_argument("--pool", required=True)
    kd.add_argument("--bits", type=int, required=True)
    kd.add_argument("--photons", type=int, default=8192, help="photons per session")
    kd.add_argument("--flip", type=float, default=0.0)
    kd.add_argument("--seed", type=int, help="session seed base (default: random)")
    for name, helptext in (("encrypt", "one-time-pad encrypt a file"), ("decrypt", "decrypt a QOTP1 file")):
        kx = ksub.add_parser(name, help=helptext)
        kx.add_argument("--pool", required=True)
        kx.add_argument("--in", dest="infile", required=True)
        kx.add_argument("--out", dest="outfile", required=True)
    return p


def _apply_config(parser: argparse.ArgumentParser, config: Dict[str, object]) -> None:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for child in action.choices.values():
                _apply_config(child, config)
    known = {a.dest for a in parser._actions}
    parser.set_defaults(**{k: v for k, v in config.items() if k in known})


def parse_args(argv: Optional[List[str]]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    early, _ = pre.parse_known_args(argv)
    parser = build_parser(_env_seed())
    if early.config:
        _apply_config(parser, load_config(early.config))
    return parser.parse_args(argv)


# -- commands ---------------------------------------------------------------


def _out(text: str) -> None:
    sys.stdout.write(text + "\n")


def cmd_simulate(args) -> int:
    if args.script_table2:
        params = SessionParams(len(WORKED_EXAMPLE.alice_bits), sample_size=0, seed=args.seed)
        alice, bob, record = generate_raw(params, ChannelConfig(), script=WORKED_EXAMPLE)
        a, _, kept = sift(alice, bob, record)
        _out(describe_sift(kept, a))
        return EXIT_OK
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    try:
        strategy = from_name(args.adversary, args.fraction, authenticated=args.authenticated)
        runs = []
        for i in range(args.trials):
            seed = args.seed if args.trials == 1 else trial_seed(args.seed, i)
            params = SessionParams(args.n, args.sample, args.threshold, args.margin, seed)
            channel = ChannelConfig(args.flip, args.loss, seed)
            auth = AuthSecret.generate(_auth_rng(seed)) if args.authenticated else None
            runs.append((seed, run_session(params, channel, strategy, auth)))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    if args.summary_csv:
        rows = [summary_row(r, s, args.n, strategy, args.fraction, args.flip, args.loss) for s, r in runs]
        _write_text(args.summary_csv, lambda fp: write_csv(rows, "session_demo", fp))
    if args.trials == 1:
        seed, result = runs[0]
        if args.transcript:
            _write_text(args.transcript, result.transcript.write)
        out = dict(result.summary(), seed=seed, session_id=result.session_id,
                   disclosed_bits=result.disclosed_bits, detail=result.detail)
        if args.json:
            _out(json.dumps(out, sort_keys=True))
        else:
            for key in ("status", "sifted_length", "qber", "disclosed_bits", "final_length", "session_id", "detail"):
                if out[key] != "":
                    _out(f"{key}: {out[key]}")
        return EXIT_OK if result.established else EXIT_ABORT

    counts = {s.value: 0 for s in Status}
    for _, r in runs:
        counts[r.status.value] += 1
    aborted = args.trials - counts[Status.ESTABLISHED.value]
    out = dict(counts, trials=args.trials, abort_fraction=aborted / args.trials)
    if args.json:
        _out(json.dumps(out, sort_keys=True))
    else:
        for key, val in out.items():
            _out(f"{key}: {val}")
    return EXIT_OK


def _auth_rng(seed: int):
    import numpy as np

    return np.random.default_rng(np.random.SeedSequence([seed, 0xA07]))


def _write_text(path: str, writer) -> None:
    if path == "-":
        writer(sys.stdout)
        return
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer(fp)


def cmd_sweep(args) -> int:
    grid = {
        "sample_size": args.sample_sizes,
        "fraction": args.fractions,
        "flip": args.flips,
        "n": args.ns,
        "concurrent_users": args.users,
        "photons": [args.photons] if args.photons else None,
        "workers": [args.workers] if args.workers else None,
        "adversary": args.adversary.split(",") if args.adversary else None,
        "loss": args.loss,
    }
    try:
        spec = ExperimentSpec(args.kind, {k: v for k, v in grid.items() if v is not None}, args.trials, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.out == "-":
        write_csv(run_experiment(spec), args.kind, sys.stdout)
        return EXIT_OK
    # open first so an unwritable path fails before the experiment runs
    with open(args.out, "w", encoding="utf-8", newline="") as fp:
        rows = run_experiment(spec)
        write_csv(rows, args.kind, fp)
    _out(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .vault.http import make_server
    from .vault.service import VaultService

    try:
        server = make_server(VaultService(args.data_dir), args.host, args.port)
    except OSError as exc:
        sys.stderr.write(f"qkdvault: startup error: cannot bind {args.host}:{args.port}: {exc.strerror or exc}\n")
        return EXIT_IO

    def stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, stop)
    host, port = server.server_address[:2]
    _out(f"listening on http://{host}:{port}")
    sys.stdout.flush()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    _out("shut down")
    return EXIT_OK


def cmd_keytool(args) -> int:
    if args.action == "pool-status":
        pool = KeyPool.load(args.pool)
        _out(f"available: {pool.total_available}")
        _out(f"deposited: {pool.total_deposited}")
        _out(f"consumed: {pool.total_consumed}")
        return EXIT_OK
    if args.action == "deposit":
        return _deposit(args)
    if args.action == "encrypt":
        data = Path(args.infile).read_bytes()
        pool = KeyPool.load(args.pool)
        key = pool.consume(8 * len(data))
        cipher = encrypt(PlainText.from_bytes(data), key)
        Path(args.outfile).write_bytes(cipher.to_file_bytes())
        _out(f"key_id: {cipher.key_id.hex()}")
        return EXIT_OK
    cipher = CipherText.from_file_bytes(Path(args.infile).read_bytes())
    pool = KeyPool.load(args.pool)
    plain = decrypt(cipher, pool.material(cipher.key_id))
    Path(args.outfile).write_bytes(plain.to_bytes())
    return EXIT_OK


def _deposit(args) -> int:
    if args.bits < 0:
        raise UsageError("--bits must be non-negative")
    try:
        channel_flip = ChannelConfig(args.flip).flip_probability
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    pool = KeyPool.open(args.pool)
    seen = {seg.origin for seg in pool.segments}
    base = secrets.randbits(63) if args.seed is None else args.seed
    need, i, failures = args.bits, 0, 0
    while need > 0:
        seed = trial_seed(base, i)
        i += 1
        result = run_session(SessionParams(args.photons, seed=seed), ChannelConfig(channel_flip, 0.0, seed))
        if not result.established or result.session_id in seen:
            failures += 1
            if failures > 100:
                raise QkdVaultError("too many sessions failed to establish a key; check --photons and --flip")
            continue
        seen.add(result.session_id)
        take = result.final_key[:need]
        pool.deposit_bits(take, origin=result.session_id)
        need -= len(take)
    _out(f"deposited: {args.bits}")
    _out(f"available: {pool.total_available}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "serve": cmd_serve, "keytool": cmd_keytool}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except UsageError as exc:
        sys.stderr.write(f"qkdvault: usage error: {exc}\n")
        return EXIT_USAGE
    except (KeyExhaustedError, WrongKeyError) as exc:
        sys.stderr.write(f"qkdvault: key error: {exc}\n")
        return EXIT_KEY
    except (OSError, PoolCorruptError, ValueError) as exc:
        sys.stderr.write(f"qkdvault: I/O error: {exc}\n")
        return EXIT_IO
    except QkdVaultError as exc:
        sys.stderr.write(f"qkdvault: error: {exc}\n")
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
