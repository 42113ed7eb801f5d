"""Command-line entry point: simulate, keyrate, sweep, qds.

Every run resolves its configuration fully, writes it into a manifest next
to the outputs, and derives all randomness from the configured seed, so a
manifest plus its inputs reproduces the outputs byte-for-byte.  Analytical
"no positive rate" outcomes are reported as structured results with exit
status 0; only genuine errors exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .channel import ChannelParams, IntensitySet, mdi_yield_model, qkd_yield_model
from .decoy import CountTable, TableFormatError, estimate_bounds
from .keyrate import SecurityParams, rate_sweep, secure_key_length, sweep_to_csv
from .netsim import run_plan, schedule
from .qds import InsecureChannelError, QdsParams, distill_report

__all__ = ["main"]


class ConfigError(ValueError):
    """A configuration document failed validation; the message names the key."""


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def load_preset(name: str) -> dict:
    ref = resources.files("qkdnet") / "presets" / f"{name}.json"
    if not ref.is_file():
        available = sorted(
            p.name.removesuffix(".json")
            for p in (resources.files("qkdnet") / "presets").iterdir()
        )
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(available)}")
    return json.loads(ref.read_text(encoding="utf-8"))


def _build(cls, doc: dict, path: str):
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _intensities(doc: dict, path: str) -> IntensitySet:
    doc = dict(doc)
    if "x_weights" in doc:
        doc["x_weights"] = tuple(doc["x_weights"])
    return _build(IntensitySet, doc, path)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _manifest(out_dir: Path, command: str, config: dict, extra: dict):
    doc = {"command": command, "config": config}
    doc.update(extra)
    _write(out_dir / "manifest.json", json.dumps(doc, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    config = _load_json(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    out_dir = Path(args.out)

    slots = int(config.get("slots", 0))
    if slots < 0:
        raise ConfigError("slots: must be >= 0")
    weights = tuple(config.get("weights", (500, 1, 1)))
    z_prob = float(config.get("z_prob", 0.8))
    seed = int(config.get("seed", 0))
    intensities = _intensities(config.get("intensities", {}), "intensities")

    links = config.get("links", {})
    models = {}
    if "AB" in links:
        ab = links["AB"]
        side_a = _build(ChannelParams, ab.get("side_a", {}), "links.AB.side_a")
        side_b = _build(ChannelParams, ab.get("side_b", {}), "links.AB.side_b")
        try:
            models["AB"] = mdi_yield_model(
                side_a,
                side_b,
                hom_visibility=ab.get("hom_visibility", 1.0),
                bell_success=ab.get("bell_success", 0.5),
                x_multiphoton_floor=ab.get("x_multiphoton_floor", 0.25),
            )
        except ValueError as exc:
            raise ConfigError(f"links.AB: {exc}") from None
    for link in ("AC", "BC"):
        if link in links:
            params = _build(ChannelParams, links[link].get("channel", {}), f"links.{link}.channel")
            models[link] = qkd_yield_model(params)

    plan = schedule(slots, weights, z_prob, intensities, seed)
    missing = sorted(plan.active_links() - set(models))
    if missing:
        raise ConfigError(f"links: plan schedules {missing} but no channel was configured")
    result = run_plan(plan, models, seed=seed)

    outputs = []
    for link, table in sorted(result.tables.items()):
        _write(out_dir / f"counts_{link}.json", table.to_json() + "\n")
        _write(out_dir / f"counts_{link}.csv", table.to_csv())
        outputs += [f"counts_{link}.json", f"counts_{link}.csv"]
    pools = {
        link: {"size": int(len(pool)), "errors": int(pool.error_flags.sum())}
        for link, pool in result.z_pools.items()
    }
    _manifest(
        out_dir,
        "simulate",
        config,
        {"outputs": outputs, "z_pools": pools, "diagnostics": result.diagnostics},
    )
    print(f"simulated {slots} slots -> {out_dir}")
    return 0


def _read_table(path: str) -> CountTable:
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".csv"):
        return CountTable.from_csv(text)
    return CountTable.from_json(text)


def cmd_keyrate(args) -> int:
    table = _read_table(args.counts)
    mode = args.mode or ("MDI" if table.is_pair else "QKD")
    intensities = IntensitySet(s=args.s, u=args.u, v=args.v, w=args.w)
    security = SecurityParams(eps_sec=args.eps_sec, eps_cor=args.eps_cor, f_ec=args.f_ec)
    bounds = estimate_bounds(table, intensities, security.eps_sec / 2.0, mode)
    z_rec = table.z_entry()
    qber_z = z_rec.errors / z_rec.detected if z_rec.detected else 0.0
    result = secure_key_length(bounds, z_rec.detected, qber_z, security, args.elapsed_s)
    record = {
        "link": table.link,
        "mode": mode,
        "s1_lower": bounds.s1_lower,
        "eph_upper": bounds.eph_upper,
        "secure_bits": result.secure_bits,
        "leak_ec_bits": result.leak_ec_bits,
        "delta_bits": result.delta_bits,
        "elapsed_s": result.elapsed_s,
        "rate_bps": result.rate_bps,
    }
    if args.format == "json":
        text = json.dumps(record, sort_keys=True, indent=2) + "\n"
        name = "keyrate.json"
    else:
        lines = [
            ",".join(record),
            f"{table.link},{mode},{bounds.s1_lower},{bounds.eph_upper:.6g},"
            f"{result.secure_bits},{result.leak_ec_bits},{result.delta_bits},"
            f"{result.elapsed_s:.6g},{result.rate_bps:.6g}",
        ]
        text = "\n".join(lines) + "\n"
        name = "keyrate.csv"
    if args.out:
        out_dir = Path(args.out)
        _write(out_dir / name, text)
        _manifest(out_dir, "keyrate", {"counts": args.counts, "mode": mode}, {"outputs": [name]})
    sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    if args.preset:
        config = load_preset(args.preset)["sweep"]
    else:
        config = _load_json(args.config)
        config = config.get("sweep", config)
    if args.seed is not None:
        config["seed"] = args.seed

    channel = _build(ChannelParams, config.get("channel", {}), "sweep.channel")
    intensities = _intensities(config.get("intensities", {}), "sweep.intensities")
    security = _build(SecurityParams, config.get("security", {}), "sweep.security")
    mode = config.get("mode", "QKD")
    points = rate_sweep(
        channel,
        intensities,
        config.get("distances", []),
        mode,
        security,
        duty=config.get("duty", 1.0),
        seed=int(config.get("seed", 0)),
        n_pulses=int(config.get("n_pulses", 10**12)),
        mdi_model_kwargs=config.get("mdi_model"),
    )
    if args.format == "json":
        rows = [
            {
                "distance_km": p.distance_km,
                "mode": p.mode,
                "secure_bits": p.secure_bits,
                "elapsed_s": p.elapsed_s,
                "rate_bps": p.rate_bps,
                "note": p.note,
            }
            for p in points
        ]
        text = json.dumps(rows, sort_keys=True, indent=2) + "\n"
        name = f"sweep_{mode.lower()}.json"
    else:
        text = sweep_to_csv(points)
        name = f"sweep_{mode.lower()}.csv"
    if args.out:
        out_dir = Path(args.out)
        _write(out_dir / name, text)
        _manifest(out_dir, "sweep", config, {"outputs": [name]})
    sys.stdout.write(text)
    return 0


def cmd_qds(args) -> int:
    reference = {}
    if args.preset:
        preset = load_preset(args.preset)
        config = preset["qds"]
        reference = preset.get("reference", {})
    else:
        config = _load_json(args.config)
        config = config.get("qds", config)

    params = _build(
        QdsParams,
        {
            k: config[k]
            for k in ("c_sig", "c_test", "eps_h", "p_rep_budget", "p_fail_total")
            if k in config
        },
        "qds",
    )
    try:
        report = distill_report(
            s1_sig_lower=int(config["s1_sig_lower"]),
            eph_sig_upper=float(config["eph_sig_upper"]),
            e_test=float(config["e_test"]),
            pool_size=int(config["pool_size"]),
            params=params,
            total_time_s=float(config["total_time_s"]),
            duty_fraction=float(config["duty_fraction"]),
            epsilon_inherited=float(config.get("epsilon_inherited", 0.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"qds: missing field {exc.args[0]!r}") from None
    except InsecureChannelError as exc:
        outcome = {"outcome": "no positive QDS rate", "detail": str(exc)}
        print(json.dumps(outcome, sort_keys=True))
        if args.out:
            out_dir = Path(args.out)
            _write(out_dir / "qds_report.json", json.dumps(outcome, sort_keys=True) + "\n")
            _manifest(out_dir, "qds", config, {"outputs": ["qds_report.json"]})
        return 0

    rows = [
        ("p_e", report.p_e),
        ("e_sig_upper", report.e_sig_upper),
        ("s_auth", report.s_auth),
        ("s_ver", report.s_ver),
        ("l_sig", report.l_sig),
        ("p_rep", report.p_rep),
        ("p_hab", report.p_hab),
        ("p_for", report.p_for),
        ("n_signatures", report.n_signatures),
        ("avg_time_per_signature_s", report.avg_time_per_signature_s),
    ]
    header = f"{'quantity':<26}{'computed':>14}"
    if reference:
        header += f"{'reference':>14}"
    print(header)
    for name, value in rows:
        line = f"{name:<26}{value:>14.6g}"
        if reference:
            ref = reference.get(name)
            line += f"{ref:>14.6g}" if ref is not None else f"{'-':>14}"
        print(line)
    print(f"secure: {report.secure}")

    if args.out:
        out_dir = Path(args.out)
        _write(out_dir / "qds_report.json", report.to_json() + "\n")
        _manifest(out_dir, "qds", config, {"outputs": ["qds_report.json"]})
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qkdnet",
        description="Three-node MDI/QKD network simulation and signature analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a session plan and write count tables")
    p_sim.add_argument("--config", required=True, help="simulation config JSON")
    p_sim.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=cmd_simulate)

    p_key = sub.add_parser("keyrate", help="decoy bounds and key length from a counts file")
    p_key.add_argument("--counts", required=True, help="count table (.json or .csv)")
    p_key.add_argument("--mode", choices=("QKD", "MDI"), default=None)
    p_key.add_argument("--s", type=float, default=0.5)
    p_key.add_argument("--u", type=float, default=0.1)
    p_key.add_argument("--v", type=float, default=0.02)
    p_key.add_argument("--w", type=float, default=0.0)
    p_key.add_argument("--eps-sec", type=float, default=1e-10)
    p_key.add_argument("--eps-cor", type=float, default=1e-15)
    p_key.add_argument("--f-ec", type=float, default=1.16)
    p_key.add_argument("--elapsed-s", type=float, default=0.0)
    p_key.add_argument("--format", choices=("csv", "json"), default="csv")
    p_key.add_argument("--out", default=None, help="output directory (also prints to stdout)")
    p_key.set_defaults(func=cmd_keyrate)

    p_sweep = sub.add_parser("sweep", help="key rate versus distance (plot-ready CSV)")
    group = p_sweep.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", help="named preset, e.g. hw-mdi-sweep")
    group.add_argument("--config", help="sweep config JSON")
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--format", choices=("csv", "json"), default="csv")
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_qds = sub.add_parser("qds", help="signature-security report")
    group = p_qds.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", help="named preset, e.g. paper-mdi")
    group.add_argument("--config", help="qds input JSON")
    p_qds.add_argument("--out", default=None)
    p_qds.set_defaults(func=cmd_qds)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TableFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
