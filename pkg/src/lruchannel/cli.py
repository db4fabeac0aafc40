"""Command-line experiment runner.

Every subcommand writes CSV (stdout or ``--output``) preceded by ``#`` lines
holding the schema version, the seed and the effective configuration.
Exit codes: 0 ok, 1 usage error, 2 I/O error, 3 the experiment itself failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from typing import Sequence

from . import __version__
from .cache import CacheGeometry, Policy
from .channels import (ChannelConfig, NoiseModel, Protocol, ScheduleMode, ScheduleModel,
                       random_message, run_covert_channel, sweep)
from .evaluation import SYNTHETIC, TraceFormatError, miss_rate, read_trace, runlength_filter
from .plcache import Variant, pl_attack_demo
from .plru import AccessSequence, InitCondition, WarmupModel, eviction_table
from .rng import derive_seed
from .timing import PROFILES
from .transient import ChannelKind, Gadget, recover_secret

SCHEMA = "lruchannel-csv v1"
EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FAILED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ExperimentFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- argument helpers ---------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    """Comma list with optional ranges, e.g. ``1-4,8``."""
    out = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            elif part:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}")
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _choice_list(enum):
    def parse(text: str):
        try:
            return [enum(t.strip()) for t in text.split(",") if t.strip()]
        except ValueError:
            names = ", ".join(e.value for e in enum)
            raise argparse.ArgumentTypeError(f"invalid value in {text!r}; choose from {names}")
    parse.__name__ = enum.__name__.lower() + " list"
    return parse


def _bits(text: str) -> str:
    if not text or set(text) - {"0", "1"}:
        raise argparse.ArgumentTypeError(f"not a bit string: {text!r}")
    return text


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _enum(enum):
    def parse(text: str):
        try:
            return enum(text)
        except ValueError:
            names = ", ".join(e.value for e in enum)
            raise argparse.ArgumentTypeError(f"invalid choice {text!r}; choose from {names}")
    parse.__name__ = enum.__name__.lower()
    return parse


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes (does not change results)")
    p.add_argument("-o", "--output", help="CSV path (default stdout)")
    p.add_argument("--config", help="key=value file; flags given on the command line win")


def _channel_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ways", type=int, default=8)
    p.add_argument("--sets", type=int, default=64)
    p.add_argument("--target-set", type=int, default=0)
    p.add_argument("--policy", type=_enum(Policy), default=Policy.LRU)
    p.add_argument("--mode", type=_enum(ScheduleMode), default=ScheduleMode.IDEAL)
    p.add_argument("--quantum", type=int, default=100_000)
    p.add_argument("--access-cost", type=int, default=50)
    p.add_argument("--switch-accesses", type=int, default=1)
    p.add_argument("--noise-rate", type=float, default=0.0, help="accesses per 1000 cycles")
    p.add_argument("--noise-tags", type=int, default=16)
    p.add_argument("--profile", choices=sorted(PROFILES), default="intel")
    p.add_argument("--jitter", type=int, default=None)
    p.add_argument("--max-run", type=int, default=16, help="run-length filter limit")
    p.add_argument("--bits", type=int, default=128, help="random message length")
    p.add_argument("--message", type=_bits, help="explicit message instead of a random one")


def build_parser() -> argparse.ArgumentParser:
    root = _Parser(prog="lruchannel", description=__doc__.splitlines()[0])
    root.add_argument("--version", action="version", version=__version__)
    sub = root.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("plru-table", help="eviction probability of line 0 (Monte-Carlo)")
    _common(p)
    p.add_argument("--policies", type=_choice_list(Policy), default=[Policy.LRU, Policy.TREE_PLRU, Policy.BIT_PLRU])
    p.add_argument("--sequences", type=_choice_list(AccessSequence), default=list(AccessSequence))
    p.add_argument("--inits", type=_choice_list(InitCondition), default=list(InitCondition))
    p.add_argument("--rows", type=_int_list, default=[1, 2, 3, 8], help="iterations to report")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--bit-rule", choices=["clear", "keep"], default="clear",
                   help="Bit-PLRU saturation: clear every bit, or keep the accessed one")
    d = WarmupModel()
    p.add_argument("--prefix-length", type=int, default=d.prefix_length)
    p.add_argument("--other-prob", type=float, default=d.other_prob)
    p.add_argument("--stream-length", type=int, default=d.stream_length)
    p.add_argument("--insert-prob", type=float, default=d.insert_prob)
    p.add_argument("--seq2-prob", type=float, default=d.seq2_slot_prob)

    ch = sub.add_parser("channel", help="covert-channel runs and sweeps")
    chs = ch.add_subparsers(dest="action", parser_class=_Parser)
    chs.required = True
    p = chs.add_parser("run", help="one or more runs of a single configuration")
    _common(p)
    _channel_args(p)
    p.add_argument("--protocol", type=_enum(Protocol), default=Protocol.SHARED)
    p.add_argument("--d", type=int, default=None, help="default: N (shared) or N/2")
    p.add_argument("--ts", type=int, default=6000)
    p.add_argument("--tr", type=int, default=600)
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--silent", action="store_true", help="sender never accesses (all-zero message)")
    p.add_argument("--trace", action="store_true", help="emit per-probe latencies instead of a summary")
    p = chs.add_parser("sweep", help="error rate over a Ts x Tr x d grid")
    _common(p)
    _channel_args(p)
    p.add_argument("--protocols", type=_choice_list(Protocol), default=list(Protocol))
    p.add_argument("--d", type=_int_list, default=[1, 2, 3, 4, 5, 6, 7, 8])
    p.add_argument("--ts", type=_int_list, default=[4500, 6000, 12000, 30000])
    p.add_argument("--tr", type=_int_list, default=[600, 1000, 3000])
    p.add_argument("--repetitions", type=int, default=30)

    p = sub.add_parser("plcache", help="locked-line attack against the PL cache variants")
    _common(p)
    p.add_argument("--variant", type=_enum(Variant), default=Variant.ORIGINAL)
    p.add_argument("--policy", type=_enum(Policy), default=Policy.LRU)
    p.add_argument("--ways", type=int, default=8)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--decode-order", type=_int_list, default=None,
                   help="explicit receiver decode lines, e.g. 2,3,4,1,5,6,7")
    p.add_argument("--message", type=_bits, default="01" * 16)
    p.add_argument("--rounds", type=int, default=1, help="probes per message bit")
    p.add_argument("--profile", choices=sorted(PROFILES), default="intel")

    p = sub.add_parser("spectre", help="recover a secret through a bounds-check-bypass gadget")
    _common(p)
    p.add_argument("--secret", default="The Magic Words!")
    p.add_argument("--secret-hex", default=None)
    p.add_argument("--channel", type=_enum(ChannelKind), default=ChannelKind.LRU_SHARED)
    p.add_argument("--repetitions", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.0, help="per-set chance of a stray access per trigger")
    p.add_argument("--policy", type=_enum(Policy), default=Policy.LRU)
    p.add_argument("--ways", type=int, default=8)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--profile", choices=sorted(PROFILES), default="intel")

    p = sub.add_parser("missrate", help="trace-driven miss rate per replacement policy")
    _common(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--trace", help="file with one hex address per line")
    src.add_argument("--synthetic", choices=sorted(SYNTHETIC), default=None)
    p.add_argument("--policies", type=_choice_list(Policy),
                   default=[Policy.TREE_PLRU, Policy.FIFO, Policy.RANDOM])
    p.add_argument("--ways", type=int, default=8)
    p.add_argument("--sets", type=int, default=64)
    p.add_argument("--line-size", type=int, default=64)
    return root


# --- config files ----------------------------------------------------------------------


def read_config(path: str) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _leaf_parser(root: argparse.ArgumentParser, ns: argparse.Namespace) -> argparse.ArgumentParser:
    p = root
    for dest in ("command", "action"):
        name = getattr(ns, dest, None)
        if name is None:
            break
        sub = next(a for a in p._actions if isinstance(a, argparse._SubParsersAction))
        p = sub.choices[name]
    return p


def _apply_config(parser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, text in values.items():
        a = actions.get(key)
        if a is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(a, argparse._StoreTrueAction):
            defaults[key] = text.lower() in ("1", "true", "yes", "on")
            continue
        try:
            v = a.type(text) if a.type else text
        except (argparse.ArgumentTypeError, ValueError) as e:
            raise UsageError(f"config {key}: {e}")
        if a.choices is not None and v not in a.choices:
            raise UsageError(f"config {key}: invalid choice {text!r}")
        defaults[key] = v
    parser.set_defaults(**defaults)


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    root = build_parser()
    ns = root.parse_args(argv)
    if ns.config:
        try:
            values = read_config(ns.config)
        except OSError as e:
            raise OSError(f"cannot read config {ns.config}: {e.strerror}") from e
        _apply_config(_leaf_parser(root, ns), values)
        ns = root.parse_args(argv)
    return ns


# --- output -------------------------------------------------------------------------------


_NOT_ECHOED = {"output", "jobs", "config", "command", "action"}


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    if isinstance(v, bool):
        return "1" if v else "0"
    if hasattr(v, "value"):
        return str(v.value)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return "" if v is None else str(v)


def render_csv(ns: argparse.Namespace, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    command = ns.command + (f" {ns.action}" if getattr(ns, "action", None) else "")
    buf.write(f"# {SCHEMA}\n# version: {__version__}\n# command: {command}\n# seed: {ns.seed}\n")
    cfg = "; ".join(f"{k}={_fmt(v)}" for k, v in sorted(vars(ns).items())
                    if k not in _NOT_ECHOED and k != "seed")
    buf.write(f"# config: {cfg}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


# --- subcommands ------------------------------------------------------------------------------


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise UsageError(msg)


def cmd_plru_table(ns):
    _check(ns.trials >= 1, "--trials must be >= 1")
    _check(min(ns.rows) >= 1, "--rows must be positive")
    model = WarmupModel(ns.prefix_length, ns.other_prob, 2, ns.stream_length,
                        ns.insert_prob, 8, ns.seq2_prob)
    rows = eviction_table(ns.policies, ns.sequences, ns.inits, ns.rows, ns.trials, ns.seed,
                  ns.jobs, model, keep_accessed=ns.bit_rule == "keep")
    header = ["policy", "init", "sequence", "iteration", "trials", "p", "stderr"]
    return header, [(r.policy, r.init, r.sequence, r.iteration, r.trials, r.p, r.stderr)
                    for r in rows]


def _latency(ns):
    prof = PROFILES[ns.profile]
    if getattr(ns, "jitter", None) is not None:
        from dataclasses import replace
        prof = replace(prof, jitter=ns.jitter)
    return prof


def _schedule(ns, ts, tr):
    return ScheduleModel(ns.mode, ts, tr, ns.quantum, ns.access_cost, ns.switch_accesses)


def cmd_channel_run(ns):
    d = ns.d if ns.d is not None else (ns.ways if ns.protocol is Protocol.SHARED else ns.ways // 2)
    cfg = ChannelConfig(ns.protocol, ns.ways, d, ns.target_set, ns.policy, _latency(ns), ns.sets)
    sched = _schedule(ns, ns.ts, ns.tr)
    noise = NoiseModel(ns.noise_rate, ns.noise_tags)
    msg = "0" * ns.bits if ns.silent else (ns.message or random_message(ns.bits, ns.seed))
    _check(ns.repeat >= 1, "--repeat must be >= 1")
    runs = [run_covert_channel(cfg, sched, noise, msg, derive_seed(ns.seed, "run", r))
            for r in range(ns.repeat)]
    if ns.trace:
        header = ["run", "time", "window", "sent", "cycles", "classified", "decoded"]
        rows = [(i, p.time, p.window, p.sent, p.cycles, p.classified, p.decoded)
                for i, run in enumerate(runs) for p in run.trace]
        return header, rows
    header = ["run", "protocol", "policy", "d", "mode", "ts", "tr", "noise_rate", "sent_bits",
              "received_bits", "edit_distance", "error_rate", "filtered_bits", "flagged",
              "sender_misses"]
    rows = []
    for i, run in enumerate(runs):
        filt = runlength_filter(run.received, ns.max_run)
        rows.append((i, cfg.protocol, cfg.policy, d, sched.mode, sched.ts, sched.tr,
                     noise.rate, len(run.sent), len(run.received), run.edit_distance,
                     run.error_rate, filt.discarded_bits, filt.discarded_bits > 0,
                     run.sender_misses))
    return header, rows


def cmd_channel_sweep(ns):
    _check(ns.repetitions >= 1, "--repetitions must be >= 1")
    lat = _latency(ns)
    configs = []
    for proto in ns.protocols:
        top = ns.ways + 1 if proto is Protocol.SHARED else ns.ways
        for d in ns.d:
            if d <= top:
                configs.append(ChannelConfig(proto, ns.ways, d, ns.target_set, ns.policy, lat, ns.sets))
    _check(bool(configs), "no valid (protocol, d) combination")
    scheds = [_schedule(ns, ts, tr) for ts in ns.ts for tr in ns.tr]
    rows = sweep(configs, scheds, NoiseModel(ns.noise_rate, ns.noise_tags), ns.repetitions,
                 ns.bits, ns.seed, ns.jobs, ns.max_run, ns.message)
    header = ["protocol", "policy", "d", "mode", "ts", "tr", "quantum", "noise_rate",
              "repetitions", "error_rate", "bits_per_kcycle", "effective_bits_per_kcycle",
              "filtered_bits", "sender_misses"]
    return header, [(r.protocol, r.policy, r.d, r.mode, r.ts, r.tr, r.quantum, r.noise_rate,
                     r.repetitions, r.error_rate, r.bits_per_kcycle,
                     r.effective_bits_per_kcycle, r.filtered_bits, r.sender_misses)
                    for r in rows]


def cmd_plcache(ns):
    cfg = ChannelConfig(Protocol.NO_SHARED, ns.ways, ns.d, 0, ns.policy, PROFILES[ns.profile])
    _check(ns.rounds >= 1, "--rounds must be >= 1")
    pts = pl_attack_demo(ns.variant, ns.message, cfg, ns.seed, ns.decode_order, ns.rounds)
    header = ["time", "bit", "variant", "sent", "cycles", "classified", "decoded"]
    return header, [(p.index, p.window, ns.variant, p.sent, p.cycles, p.classified, p.decoded)
                    for p in pts]


def cmd_spectre(ns):
    if ns.secret_hex is not None:
        try:
            secret = bytes.fromhex(ns.secret_hex)
        except ValueError:
            raise UsageError("--secret-hex is not valid hex")
    else:
        secret = ns.secret.encode("latin-1", errors="strict")
    _check(ns.repetitions >= 1, "--repetitions must be >= 1")
    rep = recover_secret(Gadget(secret), ns.channel, ns.repetitions, ns.ways, ns.d,
                         ns.policy, ns.seed, ns.noise, PROFILES[ns.profile])
    header = ["index", "secret", "recovered", "residue_set", "quotient_set", "status"]
    rows = []
    for i, (true, got, (r, q)) in enumerate(zip(secret, rep.recovered, rep.details)):
        status = "ok" if got == true else ("unresolved" if got is None else "wrong")
        rows.append((i, true, got, r, q, status))
    failed = len(rep.unresolved) > 0
    return header, rows, failed


def cmd_missrate(ns):
    try:
        geometry = CacheGeometry(ns.sets, ns.ways, ns.line_size)
    except ValueError as e:
        raise UsageError(str(e))
    if ns.trace:
        trace = read_trace(ns.trace)
        trace_id = ns.trace
    else:
        kind = ns.synthetic or "cyclic"
        trace = SYNTHETIC[kind](geometry, derive_seed(ns.seed, "trace"))
        trace_id = f"synthetic:{kind}"
    _check(bool(trace), "trace is empty")
    header = ["trace", "policy", "accesses", "hits", "misses", "compulsory", "miss_rate"]
    rows = []
    for pol in ns.policies:
        r = miss_rate(trace, geometry, pol, seed=derive_seed(ns.seed, "policy", pol.value),
                      trace_id=trace_id)
        rows.append((r.trace_id, r.policy, r.accesses, r.hits, r.misses, r.compulsory, r.miss_rate))
    return header, rows


COMMANDS = {
    ("plru-table", None): cmd_plru_table,
    ("channel", "run"): cmd_channel_run,
    ("channel", "sweep"): cmd_channel_sweep,
    ("plcache", None): cmd_plcache,
    ("spectre", None): cmd_spectre,
    ("missrate", None): cmd_missrate,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = parse_args(argv)
        if ns.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        result = COMMANDS[(ns.command, getattr(ns, "action", None))](ns)
        failed = False
        if len(result) == 3:
            header, rows, failed = result
        else:
            header, rows = result
        text = render_csv(ns, header, rows)
        if ns.output:
            with open(ns.output, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        if failed:
            print("lruchannel: experiment failed (see status column)", file=sys.stderr)
            return EXIT_FAILED
        return EXIT_OK
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except TraceFormatError as e:
        print(f"lruchannel: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        where = f" {e.filename}" if getattr(e, "filename", None) else ""
        print(f"lruchannel: I/O error:{where} {e.strerror or e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"lruchannel: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
