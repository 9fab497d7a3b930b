"""Command-line entry point.

Every flag may also come from a ``key=value`` file given with ``--config``
(dashes or underscores in keys) or from an ``RSCW_<KEY>`` environment
variable.  Precedence: flag, then environment, then file.  The NPE
subcommands read machine parameters (``mau_count``, ``mau_width``,
``register_file_size``, ``clock_hz``, ``mem_latency``) from the same file.

Exit status: 0 on success, 2 on usage errors, 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .code import build_code
from .noise import NoiseParams, generate_batch, preset, read_dataset, write_dataset

log = logging.getLogger("rscw")

NPE_KEYS = {"mau_count", "mau_width", "register_file_size", "clock_hz", "mem_latency"}


class UsageError(Exception):
    pass


def read_kv(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


# --- parser ------------------------------------------------------------------


def _noise_flags(p: argparse.ArgumentParser, need_T: bool = True) -> None:
    p.add_argument("--L", type=int)
    if need_T:
        p.add_argument("--T", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--preset", choices=["standard", "reweighted", "google"], default="standard")
    p.add_argument("--model", default="circuit")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key=value file of defaults")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    ap = argparse.ArgumentParser(prog="rscw", description="Surface-code decoder workbench",
                                 parents=[common])
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help):
        return sub.add_parser(name, help=help, parents=[common])

    p = add("sample", help="simulate labelled syndrome samples")
    _noise_flags(p)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--out", required=False)

    p = add("train", help="train and quantise the two per-type networks")
    p.add_argument("--data", help="dataset file (otherwise samples are simulated)")
    _noise_flags(p)
    p.add_argument("--samples", type=int, default=200000)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--activation", choices=["relu", "leaky"], default="relu")
    p.add_argument("--calibration", type=int, default=10000)
    p.add_argument("--float", action="store_true", help="also save float weights")
    p.add_argument("--out", help="output prefix: PREFIX.X.mtlw, PREFIX.Z.mtlw, PREFIX.log.csv")

    p = add("decode", help="decode a dataset and report head accuracies")
    p.add_argument("--data")
    _decoder_flags(p)
    p.add_argument("--out", help="per-sample CSV")

    p = add("bench-ler", help="logical error rate by trajectories")
    _noise_flags(p)
    _decoder_flags(p)
    p.add_argument("--trajectories", type=int, default=400)
    p.add_argument("--allow-few", action="store_true")
    p.add_argument("--max-cycles", type=int, default=10**6)
    p.add_argument("--out", help="summary CSV (stdout when omitted)")
    p.add_argument("--raw", help="per-trajectory CSV")

    p = add("hamming", help="syndrome Hamming-weight histogram")
    _noise_flags(p)
    p.add_argument("--samples", type=int, default=10**5)
    p.add_argument("--statistic", choices=["events", "raw"], default="events")
    p.add_argument("--out")

    p = add("npe-compile", help="compile quantised weights for the engine")
    p.add_argument("--weights")
    p.add_argument("--out")

    p = add("npe-sim", help="run the cycle-level engine model")
    p.add_argument("--weights")
    p.add_argument("--program")
    p.add_argument("--inputs", type=int, default=1, help="number of random inputs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", action="store_true")
    p.add_argument("--trace")
    p.add_argument("--out", help="logits CSV (stdout when omitted)")
    p.add_argument("--sm-period", type=float, help="round period in seconds for the pipelined latency")

    p = add("allocate", help="distribute MAUs across layers")
    p.add_argument("--M", help="comma-separated multiply counts")
    p.add_argument("--alpha", help="comma-separated multiplicities (default all 1)")
    p.add_argument("--L", type=int, help="use the default network for this distance")
    p.add_argument("--C", type=int)
    p.add_argument("--out")

    p = add("export-lut", help="build the L=3 lookup table decoder")
    p.add_argument("--T", type=int, default=3)
    p.add_argument("--p", type=float)
    p.add_argument("--preset", choices=["standard", "reweighted", "google"], default="standard")
    p.add_argument("--model", default="circuit")
    p.add_argument("--samples", type=int, default=10**6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    return ap


def _decoder_flags(p) -> None:
    p.add_argument("--decoder", choices=["mtlnd", "mwpm", "lut", "none"], default="mwpm")
    p.add_argument("--weights-x")
    p.add_argument("--weights-z")
    p.add_argument("--lut")


def _apply_defaults(ap: argparse.ArgumentParser, argv: list) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    args = ap.parse_args(argv)
    sub = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction))
    sp = sub.choices[args.command]
    dests = {a.dest: a for a in sp._actions}
    explicit = _explicit_dests(sp, argv)
    # keys match case-insensitively (RSCW_L and l= both set --L)
    canon = {d.lower(): d for d in dests} | {k: k for k in NPE_KEYS}
    values = read_kv(known.config) if known.config else {}
    values = {canon.get(k.lower(), k): v for k, v in values.items()}
    env = {k[5:].lower(): v for k, v in os.environ.items() if k.startswith("RSCW_")}
    env = {canon[k]: v for k, v in env.items() if k in canon}
    unknown = set(values) - set(dests) - NPE_KEYS - {"config", "verbose"}
    if unknown:
        raise UsageError(f"unknown setting(s) for {args.command}: {sorted(unknown)}")
    # the environment is shared by all subcommands, so foreign keys are ignored
    values.update(env)
    args.npe = {}
    for k, v in values.items():
        if k in NPE_KEYS:
            args.npe[k] = v
            continue
        if k in ("config", "verbose"):
            continue
        if k in explicit:
            continue
        a = dests[k]
        if isinstance(a, argparse._StoreTrueAction):
            setattr(args, k, v.lower() in ("1", "true", "yes", "on"))
        else:
            conv = a.type or str
            try:
                val = conv(v)
            except ValueError as e:
                raise UsageError(f"bad value for {k}: {v!r}") from e
            if a.choices and val not in a.choices:
                raise UsageError(f"{k} must be one of {list(a.choices)}")
            setattr(args, k, val)
    return args


def _explicit_dests(sp, argv) -> set:
    flags = {}
    for a in sp._actions:
        for s in a.option_strings:
            flags[s] = a.dest
    out = set()
    for tok in argv:
        name = tok.split("=", 1)[0]
        if name in flags:
            out.add(flags[name])
    return out


# --- helpers -----------------------------------------------------------------


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _params(args) -> NoiseParams:
    if args.model not in ("circuit", "phenomenological"):
        raise UsageError(f"unknown noise model {args.model!r}")
    if args.preset == "standard":
        _need(args, "p")
    return preset(args.preset, args.p, args.model)


def _open_out(path):
    return open(path, "w", newline="") if path else contextlib.nullcontext(sys.stdout)


def _load_weights(path):
    from .neural import load_weights

    with open(path, "rb") as fh:
        return load_weights(fh)


def _make_decoder(args, code, T):
    from .decoders import IdentityDecoder, LookupTable, LutDecoder, MtlndDecoder, MwpmDecoder

    if args.decoder == "mwpm":
        return MwpmDecoder(code)
    if args.decoder == "none":
        return IdentityDecoder(code)
    if args.decoder == "lut":
        _need(args, "lut")
        lut = LookupTable.from_bytes(Path(args.lut).read_bytes())
        return LutDecoder(code, lut)
    _need(args, "weights_x", "weights_z")
    nets = {"X": _load_weights(args.weights_x), "Z": _load_weights(args.weights_z)}
    for t, (spec, _) in nets.items():
        if spec.T != T:
            raise UsageError(f"weights for {t} expect T={spec.T}, not {T}")
    return MtlndDecoder(code, nets)


def _npe_config(args):
    from .npe import NpeConfig

    return NpeConfig.from_mapping(args.npe)


# --- commands ----------------------------------------------------------------


def cmd_sample(args) -> int:
    _need(args, "L", "T", "out")
    code = build_code(args.L)
    params = _params(args)
    batch = generate_batch(code, params, args.T, args.samples, args.seed)
    with open(args.out, "wb") as fh:
        write_dataset(fh, code, params, args.T, batch)
    print(f"wrote {len(batch)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .neural import default_spec, encode_syndromes, quantize, save_weights
    from .training import TrainConfig, train_both, write_log

    _need(args, "out")
    if args.data:
        with open(args.data, "rb") as fh:
            L, T, params, batch = read_dataset(fh)
        code = build_code(L)
    else:
        _need(args, "L", "T")
        L, T = args.L, args.T
        code = build_code(L)
        params = _params(args)
        batch = generate_batch(code, params, T, args.samples, args.seed)
    spec = default_spec(L, T, args.activation)
    cfg = TrainConfig(batch_size=args.batch_size, epochs=args.epochs,
                      learning_rate=args.lr, seed=args.seed)
    trained = train_both(code, spec, batch, cfg)
    cal = batch[: min(args.calibration, len(batch))]
    for t, (weights, history) in trained.items():
        q = quantize(spec, weights, encode_syndromes(code, cal.syn[t], t))
        with open(f"{args.out}.{t}.mtlw", "wb") as fh:
            save_weights(fh, spec, q)
        if args.float:
            with open(f"{args.out}.{t}.float.mtlw", "wb") as fh:
                save_weights(fh, spec, weights)
        write_log(f"{args.out}.{t}.log.csv", history)
        print(f"{t}: final loss {history[-1].loss:.5f}, head accuracy "
              + " ".join(f"{a:.4f}" for a in history[-1].head_accuracy))
    return 0


def cmd_decode(args) -> int:
    _need(args, "data")
    with open(args.data, "rb") as fh:
        L, T, _, batch = read_dataset(fh)
    code = build_code(L)
    dec = _make_decoder(args, code, T)
    pred = dec.predict_batch(batch.syn)
    rows = []
    for t in ("X", "Z"):
        cls_ok = pred[t][0] == batch.cls[t]
        s_ok = (pred[t][1] == batch.s[t]).all(axis=1)
        rows.append((t, float(cls_ok.mean()), float(s_ok.mean()), float((cls_ok & s_ok).mean())))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["type", "class_accuracy", "s_accuracy", "joint_accuracy"])
    w.writerows(rows)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample", "class_X", "s_X", "class_Z", "s_Z"])
            for i in range(len(batch)):
                w.writerow([i, int(pred["X"][0][i]), "".join(map(str, pred["X"][1][i])),
                            int(pred["Z"][0][i]), "".join(map(str, pred["Z"][1][i]))])
    return 0


def cmd_bench_ler(args) -> int:
    from .harness import RunConfig, estimate_ler, summary_row, write_summary_csv, write_trajectories_csv

    _need(args, "L", "T")
    code = build_code(args.L)
    params = _params(args)
    try:
        cfg = RunConfig(args.L, args.T, params, args.decoder, args.trajectories,
                        args.max_cycles, args.seed, args.allow_few)
    except ValueError as e:
        raise UsageError(str(e)) from e
    dec = _make_decoder(args, code, args.T)
    res = estimate_ler(cfg, dec, code)
    if args.out:
        write_summary_csv(args.out, [summary_row(res)])
    else:
        write_summary_csv(sys.stdout, [summary_row(res)])
    if args.raw:
        write_trajectories_csv(args.raw, res)
    return 0


def cmd_hamming(args) -> int:
    from .harness import hamming_stats, write_hamming_csv

    _need(args, "L", "T")
    models = ["circuit", "phenomenological"] if args.model == "both" else [args.model]
    code = build_code(args.L)
    stats = {}
    for m in models:
        args.model = m
        stats[m] = hamming_stats(code, _params(args), args.T, args.samples, args.seed, args.statistic)
    with _open_out(args.out) as fh:
        write_hamming_csv(fh, stats)
    for m, st in stats.items():
        log.info("%s: mean %.4f, probability below 1e-4 from weight %d", m, st.mean, st.tail_weight())
    return 0


def cmd_npe_compile(args) -> int:
    from .neural import QuantizedNetwork
    from .npe import compile_program, save_program

    _need(args, "weights", "out")
    spec, net = _load_weights(args.weights)
    if not isinstance(net, QuantizedNetwork):
        raise UsageError("npe-compile needs quantised weights")
    prog = compile_program(net, _npe_config(args))
    with open(args.out, "wb") as fh:
        save_program(fh, prog)
    print(f"{prog.issue_count} MA issues, {len(prog.instructions)} instruction words")
    return 0


def cmd_npe_sim(args) -> int:
    from .neural import QuantizedNetwork
    from .npe import compile_program, load_program, pipeline_latency, report, simulate, write_trace

    if args.program:
        with open(args.program, "rb") as fh:
            prog = load_program(fh)
    else:
        _need(args, "weights")
        _, net = _load_weights(args.weights)
        if not isinstance(net, QuantizedNetwork):
            raise UsageError("npe-sim needs quantised weights")
        prog = compile_program(net, _npe_config(args))
    rng = np.random.default_rng(args.seed)
    x = rng.integers(0, 2, (args.inputs, *prog.input_shape), dtype=np.uint8)
    res = simulate(prog, x, trace=bool(args.trace))
    with _open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["input", "head", "logits"])
        for i in range(args.inputs):
            for h, lg in enumerate([res.class_logits, *res.s_logits]):
                w.writerow([i, h, " ".join(str(int(v)) for v in lg[i])])
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            write_trace(fh, res.trace)
    if args.report:
        for line in report(prog, res):
            print(line)
        if args.sm_period is not None:
            lat = pipeline_latency(prog, args.sm_period)
            print(f"pipelined latency after last round: {lat * 1e9:.1f} ns")
    return 0


def cmd_allocate(args) -> int:
    from .npe import allocate, spec_workload

    _need(args, "C")
    if args.L is not None:
        from .neural import default_spec

        M, alphas = spec_workload(default_spec(args.L))
    else:
        _need(args, "M")
        try:
            M = [float(v) for v in args.M.split(",")]
            alphas = [int(v) for v in args.alpha.split(",")] if args.alpha else [1] * len(M)
        except ValueError as e:
            raise UsageError(f"bad list: {e}") from e
    res = allocate(M, alphas, args.C)
    with _open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "M", "alpha", "units", "continuous"])
        for j, (m, a, c, x) in enumerate(zip(M, alphas, res.units, res.continuous)):
            w.writerow([j, m, a, c, repr(x)])
        w.writerow(["latency", "", "", "", repr(res.latency)])
    return 0


def cmd_export_lut(args) -> int:
    from .decoders import PRESET_IDS, LookupTable

    _need(args, "out")
    code = build_code(3)
    params = _params(args)
    batch = generate_batch(code, params, args.T, args.samples, args.seed)
    lut = LookupTable.build(batch, args.T, PRESET_IDS[args.preset])
    Path(args.out).write_bytes(lut.to_bytes())
    print(f"entries: X {lut.entries('X')}, Z {lut.entries('Z')}")
    return 0


COMMANDS = {
    "sample": cmd_sample, "train": cmd_train, "decode": cmd_decode, "bench-ler": cmd_bench_ler,
    "hamming": cmd_hamming, "npe-compile": cmd_npe_compile, "npe-sim": cmd_npe_sim,
    "allocate": cmd_allocate, "export-lut": cmd_export_lut,
}


def main(argv: list | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = _apply_defaults(ap, argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    except UsageError as e:
        print(f"rscw: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"rscw: error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "hamming" and args.model not in ("circuit", "phenomenological", "both"):
        print(f"rscw: error: unknown noise model {args.model!r}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"rscw: error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as e:
        print(f"rscw: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
