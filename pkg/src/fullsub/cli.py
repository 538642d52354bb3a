"""Command-line entry point: ``fullsub <command> [options]``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 when
the command itself fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from fullsub import data as datamod
from fullsub import plots
from fullsub.config import RunConfig, parse_lines
from fullsub.errors import FullSubError, InvalidArgument
from fullsub.metrics import evaluate_set
from fullsub.model import ARCHITECTURES, build, count_params, load_weights
from fullsub.stream import bench_latency, enhance_offline, enhance_stream, offline_stats
from fullsub.train import TrainConfig, Trainer, gradient_check, validate
from fullsub.wavio import read_wav, write_wav

log = logging.getLogger("fullsub")

GRADCHECK_TOL = 1e-3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- configuration ---------------------------------------------------------------


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def sidecar_layer(weights) -> dict:
    side = Path(str(weights) + ".txt")
    if not side.exists():
        return {}
    return parse_lines(side.read_text().splitlines(), str(side), strict=False)


def load_config(args, flag_layer: dict, weights=None) -> RunConfig:
    """defaults < checkpoint sidecar < ``--config`` file < ``--set`` < dedicated flags."""
    layers = []
    if weights:
        layers.append(sidecar_layer(weights))
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        layers.append(parse_lines(path.read_text().splitlines(), str(path)))
    layers.append(_overrides(getattr(args, "set", None)))
    layers.append({k: v for k, v in flag_layer.items() if v is not None})
    try:
        return RunConfig.build(*layers)
    except InvalidArgument as e:
        raise UsageError(str(e)) from None


def make_model(cfg: RunConfig, weights=None):
    net = build(cfg["model.variant"], **cfg.model_kwargs())
    if weights:
        load_weights(weights, net)
    return net


def header(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "seed": cfg["seed"], "created": time.strftime("%Y-%m-%dT%H:%M:%S"), "config": dict(cfg)}


def _seeds(root: int, n: int):
    return np.random.SeedSequence(root).spawn(n)


def corpus(cfg: RunConfig):
    """Clean and noise sets from manifests, or synthesized from the root seed."""
    s_clean, s_noise, _, _ = _seeds(cfg["seed"], 4)
    fs = cfg["stft.sample_rate"]
    if cfg["data.clean_manifest"]:
        clean = datamod.load_manifest(cfg["data.clean_manifest"])
    else:
        clean = datamod.make_clean_set(cfg["data.clean_count"], cfg["data.clean_seconds"], fs, s_clean)
    if cfg["data.noise_manifest"]:
        noise = datamod.load_manifest(cfg["data.noise_manifest"])
    else:
        noise = datamod.make_noise_set(cfg["data.noise_count"], cfg["data.noise_seconds"], fs, s_noise)
    return clean, noise


def mix_kwargs(cfg: RunConfig) -> dict:
    return {
        "keep_tail": cfg["data.keep_tail"],
        "reverb_prob": cfg["data.reverb_prob"],
        "snr_range": (cfg["data.snr_low"], cfg["data.snr_high"]),
    }


def held_out(cfg: RunConfig, count: int | None = None):
    """Validation mixtures from seeds disjoint from the training corpus."""
    _, _, s_valid, s_mix = _seeds(cfg["seed"], 4)
    fs = cfg["stft.sample_rate"]
    vc, vn = s_valid.spawn(2)
    clean = datamod.make_clean_set(count or cfg["data.valid_count"], cfg["data.clean_seconds"], fs, vc)
    noise = datamod.make_noise_set(len(datamod.NOISE_KINDS), cfg["data.noise_seconds"], fs, vn)
    return list(datamod.mix_stream(clean, noise, np.random.default_rng(s_mix), fs=fs, **mix_kwargs(cfg)))


# --- commands ----------------------------------------------------------------------


def cmd_enhance(args) -> int:
    cfg = load_config(args, {"stream.norm": args.norm, "stream.tau": args.tau}, args.weights)
    net = make_model(cfg, args.weights)
    stft_cfg = cfg.stft()
    x, _ = read_wav(args.inp, stft_cfg.sample_rate)
    norm = cfg["stream.norm"]
    if args.stream:
        stats = offline_stats(net, x, stft_cfg) if norm == "offline" else None
        y = enhance_stream(net, x, stft_cfg, norm, stats)
    else:
        y = enhance_offline(net, x, stft_cfg, norm)
    write_wav(args.out, y, stft_cfg.sample_rate, fmt=args.format)
    print(f"# seed = {cfg['seed']}")
    print(f"wrote {args.out}: {len(y)} samples ({len(y) / stft_cfg.sample_rate:.2f} s), norm={norm}, tau={net.tau}")
    return 0


def cmd_make_data(args) -> int:
    cfg = load_config(args, {"seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mixes = held_out(cfg, args.count)
    fs = cfg["stft.sample_rate"]
    with open(out / "mixtures.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", "snr_db", "reverberant", "rir_t60", "seed"])
        for k, m in enumerate(mixes):
            cid = f"clip{k:04d}"
            write_wav(out / f"{cid}_mix.wav", m.mixture, fs, fmt="float32")
            write_wav(out / f"{cid}_ref.wav", m.speech, fs, fmt="float32")
            w.writerow([cid, f"{m.spec.snr_db:.6f}", int(m.spec.reverberant), m.spec.rir_t60 or "", m.spec.seed])
    (out / "config.txt").write_text(f"# seed = {cfg['seed']}\n" + cfg.dumps())
    print(f"# seed = {cfg['seed']}")
    print(f"wrote {len(mixes)} mixtures to {out}")
    return 0


def read_data_dir(path) -> tuple[list, list[str]]:
    path = Path(path)
    table = path / "mixtures.csv"
    if not table.exists():
        raise FileNotFoundError(f"{table} not found (create it with make-data)")
    mixes, ids = [], []
    with open(table, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            cid = rec["clip_id"]
            x, _ = read_wav(path / f"{cid}_mix.wav")
            s, _ = read_wav(path / f"{cid}_ref.wav")
            spec = datamod.MixSpec(
                float(rec["snr_db"]), bool(int(rec["reverberant"])), float(rec["rir_t60"]) if rec["rir_t60"] else None, int(rec["seed"])
            )
            mixes.append(datamod.Mixture(s, x - s, x, spec))
            ids.append(cid)
    return mixes, ids


def cmd_eval(args) -> int:
    cfg = load_config(args, {"stream.norm": args.norm}, args.weights)
    net = make_model(cfg, args.weights)
    stft_cfg = cfg.stft()
    if args.data:
        mixes, ids = read_data_dir(args.data)
    else:
        mixes = held_out(cfg)
        ids = None
    norm = cfg["stream.norm"]
    report = evaluate_set(lambda m: enhance_offline(net, m.mixture, stft_cfg, norm), mixes, ids, stft_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "eval.csv")
    report.write_json(out / "eval.json", header(cfg, "eval"))
    plots.eval_figure(report, out / "eval.png")
    print(f"# seed = {cfg['seed']}")
    for name, agg in report.summary().items():
        if agg["clips"]:
            print(
                f"{name:15s} clips={agg['clips']:4d}  si_sdr={agg['si_sdr']:7.2f} dB  "
                f"noisy={agg['noisy_si_sdr']:7.2f} dB  gain={agg['si_sdr_improvement']:+.2f} dB"
            )
    print(f"wrote {out / 'eval.csv'}, {out / 'eval.json'}, {out / 'eval.png'}")
    return 0


def cmd_train(args) -> int:
    flags = {"model.variant": args.variant, "train.epochs": args.epochs, "seed": args.seed}
    cfg = load_config(args, flags, args.resume)
    net = make_model(cfg, args.resume)
    stft_cfg = cfg.stft()
    clean, noise = corpus(cfg)
    tcfg = TrainConfig(
        lr=cfg["train.lr"],
        seq_len=cfg["train.seq_len"],
        tau=cfg["stream.tau"],
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        seed=cfg["seed"],
        variant=cfg["model.variant"],
    )
    trainer = Trainer(net, tcfg, stft_cfg, clean, noise, mix_kwargs(cfg))
    valid = [datamod.make_pair(m, stft_cfg, net.crm) for m in held_out(cfg)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(f"# seed = {cfg['seed']}")
    print(f"{cfg['model.variant']}: {count_params(net)} parameters, {len(clean)} clean clips, {len(valid)} held-out")
    every = cfg["train.valid_every"]
    for _ in range(tcfg.epochs):
        rec = trainer.run_epoch()
        if every and trainer.epoch % every == 0:
            v = validate(net, valid, stft_cfg)
            rec.update(valid_loss=v["loss"], valid_si_sdr=v["si_sdr"], valid_gain=v["si_sdr_improvement"])
        print("  ".join(f"{k}={v:.5g}" if isinstance(v, float) else f"{k}={v}" for k, v in rec.items()), flush=True)
    trainer.save_checkpoint(out / "weights.fsnw", dict(cfg))
    keys = sorted({k for h in trainer.history for k in h}, key=lambda k: (k != "epoch", k))
    with open(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, keys)
        w.writeheader()
        w.writerows(trainer.history)
    doc = {"header": header(cfg, "train"), "history": trainer.history}
    (out / "history.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")
    plots.loss_figure(trainer.history, out / "loss.png")
    print(f"wrote {out / 'weights.fsnw'} (+ .txt), history.csv, history.json, loss.png")
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for k in range(args.seeds):
        err = gradient_check(
            n_bins=args.bins,
            n_neighbors=args.neighbors,
            full_hidden=args.hidden,
            sub_hidden=args.sub_hidden,
            seq_len=args.seq,
            seed=args.seed + k,
            tau=args.tau,
        )
        print(f"seed {args.seed + k}: max relative error {err:.3e}")
        worst = max(worst, err)
    ok = worst <= GRADCHECK_TOL
    print(f"max relative error {worst:.3e} ({'ok' if ok else 'FAIL'}, tolerance {GRADCHECK_TOL:g})")
    return 0 if ok else 2


def bench_text(rep: dict, seed: int) -> str:
    lines = [f"# seed = {seed}"]
    lines += [f"{k} = {v:.4f}" if isinstance(v, float) else f"{k} = {v}" for k, v in rep.items() if k != "frame_ms"]
    verdict = "real-time" if rep["mean_ms"] < rep["hop_ms"] else "slower than real time"
    lines.append(f"verdict = {verdict} (mean {rep['mean_ms']:.2f} ms per {rep['hop_ms']:.0f} ms hop)")
    return "\n".join(lines) + "\n"


def cmd_bench(args) -> int:
    cfg = load_config(args, {}, args.weights)
    net = make_model(cfg, args.weights)
    rep = bench_latency(net, args.seconds, args.reps, cfg.stft(), cfg["seed"], keep_times=True)
    times = rep.pop("frame_ms")
    rep["model"] = cfg["model.variant"]
    rep["params"] = count_params(net)
    text = bench_text(rep, cfg["seed"])
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.txt").write_text(text)
        (out / "bench.json").write_text(json.dumps({"header": header(cfg, "bench"), "report": rep}, indent=2))
        plots.bench_figure(times, 2 * rep["hop_ms"], out / "bench.png")
        print(f"wrote {out / 'bench.txt'}, {out / 'bench.json'}, {out / 'bench.png'}")
    return 0


# --- parser ------------------------------------------------------------------------


def _common(p):
    p.add_argument("--config", help="key = value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")


def make_parser() -> Parser:
    parser = Parser(prog="fullsub", description="Full-band / sub-band fusion speech enhancement.")
    parser.add_argument("--threads", type=int, help="BLAS threads (default: $FSN_THREADS or 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("enhance", help="denoise a 16 kHz mono WAV file")
    _common(p)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--norm", choices=["offline", "cumulative"])
    p.add_argument("--tau", type=int)
    p.add_argument("--stream", action="store_true", help="run the frame-by-frame engine instead of the batch path")
    p.add_argument("--format", choices=["pcm16", "float32"], default="pcm16")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("train", help="train with dynamic mixing")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=sorted(ARCHITECTURES))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="start from these weights")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("make-data", help="write seeded mixtures and references to a directory")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("eval", help="score a model on held-out mixtures")
    _common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--data", help="directory written by make-data (default: synthesize)")
    p.add_argument("--out", required=True)
    p.add_argument("--norm", choices=["offline", "cumulative"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="BPTT vs finite differences on a toy FullSubNet")
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--sub-hidden", type=int, default=6)
    p.add_argument("--seq", type=int, default=7)
    p.add_argument("--bins", type=int, default=9)
    p.add_argument("--neighbors", type=int, default=2)
    p.add_argument("--tau", type=int, default=2)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="per-frame latency of the streaming engine")
    _common(p)
    p.add_argument("--weights", help="weight file (default: random full-size model)")
    p.add_argument("--seconds", type=float, default=30.0)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--out", help="directory for bench.txt / bench.json / bench.png")
    p.set_defaults(func=cmd_bench)
    return parser


def _threads(arg) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("FSN_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"FSN_THREADS must be an integer, got {env!r}") from None
    return 1


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        threads = _threads(args.threads)
        if threads < 1:
            raise UsageError("--threads must be >= 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        with threadpool_limits(limits=threads):
            return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (FullSubError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
