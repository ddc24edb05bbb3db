"""Command-line front end: run, converge, sweep, and compare.

Configs are single JSON documents; unknown keys are rejected so typos fail
loudly. Three scenario presets cover a slow-fading low-SNR link, a
fast-fading low-SNR link, and a slow-fading high-SNR link. Every artifact
this tool writes is a pure function of (config, seed), so repeated
invocations are byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .abr import MpcConfig
from .channel import BlerKind, BlerModel, ChannelKind, ChannelModel
from .engine import (AbrConfig, AbrKind, CsiConfig, EngineError, LinkConfig,
                     PredictionConfig, SessionConfig, SessionReport,
                     VideoConfig, apply_axis, run_convergence, run_session,
                     run_sweep)
from .mac import MacConfig, RaPolicy
from .phy import LinkMode
from .playback import CHUNK_CSV_HEADER
from .engine import SLOT_CSV_HEADER

SCENARIOS = ("static", "dynamic", "high_snr")

COMPARE_CSV_HEADER = "method,bler,mean_bitrate_mbps,mean_rebuffer_s,mean_qoe,mean_utilization"

# Method presets for the compare command: the full cross-layer stack, its two
# ablations (link-only, then neither), and the three simple selectors on the
# default link stack.
METHODS = {
    "mpc_s": dict(abr=AbrKind.MPC, ra=RaPolicy.VRA, link=LinkMode.SOFT_ACK),
    "mpc_a": dict(abr=AbrKind.MPC, ra=RaPolicy.FULL_GRID, link=LinkMode.SOFT_ACK),
    "mpc_b": dict(abr=AbrKind.MPC, ra=RaPolicy.FULL_GRID, link=LinkMode.LOOKUP_3GPP),
    "rate": dict(abr=AbrKind.RATE, ra=RaPolicy.FULL_GRID, link=LinkMode.LOOKUP_3GPP),
    "buffer": dict(abr=AbrKind.BUFFER, ra=RaPolicy.FULL_GRID, link=LinkMode.LOOKUP_3GPP),
    "hybrid": dict(abr=AbrKind.HYBRID, ra=RaPolicy.FULL_GRID, link=LinkMode.LOOKUP_3GPP),
}


class ConfigError(ValueError):
    pass


def preset_config(name: str, seed: int = 1) -> SessionConfig:
    """Built-in scenario presets; the JSON files under configs/ mirror these."""
    if name == "static":
        channel = ChannelModel(kind=ChannelKind.FADED_AR1, mean_snr_db=0.0,
                               swing_db=5.0, doppler_hz=10.0, ar1_sigma_db=1.0)
    elif name == "dynamic":
        channel = ChannelModel(kind=ChannelKind.FADED_AR1, mean_snr_db=0.0,
                               swing_db=5.0, doppler_hz=50.0, ar1_sigma_db=2.0)
    elif name == "high_snr":
        channel = ChannelModel(kind=ChannelKind.FADED_AR1, mean_snr_db=10.0,
                               swing_db=5.0, doppler_hz=10.0, ar1_sigma_db=1.0)
    else:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return SessionConfig(channel=channel, seed=seed)


def _take(section: dict, path: str, known: tuple[str, ...]) -> None:
    unknown = set(section) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {path}")


def _build_config(doc: dict) -> SessionConfig:
    _take(doc, "<root>", ("seed", "slot_duration_s", "channel", "bler_oracle",
                          "csi", "link", "mac", "abr", "prediction", "video",
                          "mcs_table_path", "harq_max_retransmissions",
                          "max_slots_per_chunk"))
    kwargs: dict = {}
    if "channel" in doc:
        sec = doc["channel"]
        _take(sec, "channel", ("kind", "mean_snr_db", "swing_db", "doppler_hz",
                               "ar1_sigma_db", "markov_good_db", "markov_bad_db",
                               "p_good_to_bad", "p_bad_to_good", "trace_path"))
        sec = dict(sec)
        if "kind" in sec:
            sec["kind"] = ChannelKind(sec["kind"])
        kwargs["channel"] = ChannelModel(**sec)
    if "bler_oracle" in doc:
        sec = dict(doc["bler_oracle"])
        _take(sec, "bler_oracle", ("kind", "alpha_db", "alpha0", "alpha1", "s"))
        if "kind" in sec:
            sec["kind"] = BlerKind(sec["kind"])
        kwargs["bler"] = BlerModel(**sec)
    if "csi" in doc:
        sec = doc["csi"]
        _take(sec, "csi", ("estimation_noise_sigma_db", "report_delay_slots"))
        kwargs["csi"] = CsiConfig(**sec)
    if "link" in doc:
        sec = dict(doc["link"])
        _take(sec, "link", ("mode", "delta_up_db", "target_bler", "delta_down_db",
                            "phi", "offset_min_db", "offset_max_db",
                            "classifier_alpha_db"))
        if "mode" in sec:
            sec["mode"] = LinkMode(sec["mode"])
        kwargs["link"] = LinkConfig(**sec)
    if "mac" in doc:
        sec = dict(doc["mac"])
        _take(sec, "mac", ("policy", "e_max", "slots_per_tti", "vra_bler_alpha_db",
                           "vra_remaining_aware"))
        kwargs["vra_bler_alpha_db"] = sec.pop("vra_bler_alpha_db", -1.5)
        kwargs["vra_remaining_aware"] = sec.pop("vra_remaining_aware", False)
        if "policy" in sec:
            sec["policy"] = RaPolicy(sec["policy"])
        kwargs["mac"] = MacConfig(**sec)
    if "abr" in doc:
        sec = dict(doc["abr"])
        _take(sec, "abr", ("kind", "horizon_chunks", "qoe_alpha", "qoe_beta",
                           "reservoir_s", "cushion_s", "safety"))
        mpc_keys = {k: sec.pop(k) for k in ("horizon_chunks", "qoe_alpha", "qoe_beta")
                    if k in sec}
        if "kind" in sec:
            sec["kind"] = AbrKind(sec["kind"])
        kwargs["abr"] = AbrConfig(mpc=MpcConfig(**mpc_keys), **sec)
    if "prediction" in doc:
        sec = doc["prediction"]
        _take(sec, "prediction", ("interval_s", "window_n"))
        kwargs["prediction"] = PredictionConfig(**sec)
    if "video" in doc:
        sec = dict(doc["video"])
        _take(sec, "video", ("ladder_kbps", "chunk_duration_s", "num_chunks",
                             "buffer_max_s"))
        if "ladder_kbps" in sec:
            sec["ladder_kbps"] = tuple(sec["ladder_kbps"])
        kwargs["video"] = VideoConfig(**sec)
    for key in ("seed", "slot_duration_s", "mcs_table_path",
                "harq_max_retransmissions", "max_slots_per_chunk"):
        if key in doc:
            kwargs[key] = doc[key]
    return SessionConfig(**kwargs)


def load_config(path: str | Path) -> SessionConfig:
    """Parse and validate a session config from a JSON file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config {path} is not valid JSON (line {exc.lineno}, column {exc.colno}): "
            f"{exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    try:
        config = _build_config(doc)
        config.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config {path} invalid: {exc}") from exc
    return config


def _resolve_config(args) -> SessionConfig:
    if args.config:
        config = load_config(args.config)
    elif args.scenario:
        config = preset_config(args.scenario)
    else:
        raise ConfigError("provide --config PATH or --scenario NAME")
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _json_dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_session_outputs(report: SessionReport, out: Path,
                           slot_log: bool) -> None:
    rows = [CHUNK_CSV_HEADER] + [c.csv_row() for c in report.chunks]
    _write(out / "chunks.csv", "\n".join(rows) + "\n")
    summary = report.summary_dict()
    summary["config"] = report.config
    _write(out / "summary.json", _json_dumps(summary))
    if slot_log:
        lines = [SLOT_CSV_HEADER]
        for s in report.slots:
            lines.append(f"{s.slot},{s.true_snr_db!r},{s.est_snr_db!r},"
                         f"{s.offset_db!r},{s.mcs},{s.n_rbs},{s.tb_bits},"
                         f"{int(s.error)},{s.feedback},{s.harq_attempt},"
                         f"{s.potential_bits}")
        _write(out / "slots.csv", "\n".join(lines) + "\n")


def cmd_run(args) -> int:
    config = _resolve_config(args)
    report = run_session(config, collect_slots=args.slot_log)
    out = Path(args.out)
    _write_session_outputs(report, out, args.slot_log)
    print(f"chunks={len(report.chunks)} mean_bitrate={report.mean_bitrate_kbps/1000:.3f} Mbps "
          f"rebuffer={report.mean_rebuffer_s:.3f} s qoe={report.mean_qoe:.3f} "
          f"bler={report.empirical_bler:.4f} utilization={report.mean_utilization:.3f}")
    print(f"wrote {out / 'chunks.csv'} and {out / 'summary.json'}")
    return 0


def cmd_converge(args) -> int:
    config = _resolve_config(args)
    if args.scenario and not args.config:
        # presets drift by design; converge on their stationary companion
        config = dataclasses.replace(
            config, channel=dataclasses.replace(config.channel, swing_db=0.0))
    report = run_convergence(config, args.slots)
    out = Path(args.out)
    _write(out / "summary.json", _json_dumps(report.summary_dict()))
    fp = report.fixed_point_soft if report.fixed_point_soft is not None \
        else report.fixed_point_olla
    print(f"mode={report.mode.value} converged_bler={report.converged_bler:.4f} "
          f"fixed_point={fp:.4f} slots_to_0.05={report.slots_to_within(0.05)}")
    print(f"wrote {out / 'summary.json'}")
    return 0


def _parse_values(axis: str, raw: str) -> list:
    values = [v.strip() for v in raw.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values must list at least one value")
    if axis in ("prediction_interval", "mean_snr_db"):
        return [float(v) for v in values]
    return values


def cmd_sweep(args) -> int:
    config = _resolve_config(args)
    values = _parse_values(args.axis, args.values)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    result = run_sweep(config, args.axis, values, seeds=seeds)
    out = Path(args.out)
    lines = [f"{args.axis},seed,bler,mean_bitrate_mbps,mean_rebuffer_s,mean_qoe,mean_utilization"]
    for value, row in zip(result.values, result.reports):
        for seed, rep in zip(result.seeds, row):
            lines.append(f"{value},{seed},{rep.empirical_bler!r},"
                         f"{rep.mean_bitrate_kbps / 1000.0!r},{rep.mean_rebuffer_s!r},"
                         f"{rep.mean_qoe!r},{rep.mean_utilization!r}")
    _write(out / "sweep.csv", "\n".join(lines) + "\n")
    summary = {
        "axis": result.axis,
        "values": result.values,
        "seeds": result.seeds,
        "mean_qoe": result.mean_metric("mean_qoe"),
        "mean_bitrate_kbps": result.mean_metric("mean_bitrate_kbps"),
        "mean_rebuffer_s": result.mean_metric("mean_rebuffer_s"),
        "mean_utilization": result.mean_metric("mean_utilization"),
    }
    _write(out / "summary.json", _json_dumps(summary))
    for value, qoe, br in zip(result.values, summary["mean_qoe"],
                              summary["mean_bitrate_kbps"]):
        print(f"{args.axis}={value}: qoe={qoe:.3f} bitrate={br / 1000:.3f} Mbps")
    print(f"wrote {out / 'sweep.csv'}")
    return 0


def _comparable(configs: list[SessionConfig]) -> None:
    base = configs[0]
    for other in configs[1:]:
        if other.video.ladder_kbps != base.video.ladder_kbps:
            raise ConfigError("compare requires identical bitrate ladders")
        if other.channel != base.channel:
            raise ConfigError("compare requires identical channel models")
        if other.seed != base.seed:
            raise ConfigError("compare requires a shared seed")


def cmd_compare(args) -> int:
    rows: list[tuple[str, SessionReport]] = []
    if args.config:
        configs = [load_config(p) for p in args.config]
        if args.seed is not None:
            configs = [dataclasses.replace(c, seed=args.seed) for c in configs]
        if len(configs) < 2:
            raise ConfigError("compare needs at least two configs")
        _comparable(configs)
        for path, config in zip(args.config, configs):
            rows.append((Path(path).stem, run_session(config)))
    else:
        if not args.scenario:
            raise ConfigError("compare needs --scenario or two or more --config")
        base = preset_config(args.scenario,
                             seed=args.seed if args.seed is not None else 1)
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        if len(methods) < 2:
            raise ConfigError("compare needs at least two methods")
        for name in methods:
            if name not in METHODS:
                raise ConfigError(f"unknown method {name!r}; "
                                  f"choose from {', '.join(METHODS)}")
            spec = METHODS[name]
            config = apply_axis(base, "abr", spec["abr"])
            config = apply_axis(config, "ra_policy", spec["ra"])
            config = apply_axis(config, "link_mode", spec["link"])
            rows.append((name, run_session(config)))

    lines = [COMPARE_CSV_HEADER]
    print(f"{'method':<10} {'bler':>8} {'bitrate':>9} {'rebuffer':>9} "
          f"{'qoe':>8} {'util':>8}")
    for name, rep in rows:
        lines.append(f"{name},{rep.empirical_bler!r},"
                     f"{rep.mean_bitrate_kbps / 1000.0!r},{rep.mean_rebuffer_s!r},"
                     f"{rep.mean_qoe!r},{rep.mean_utilization!r}")
        print(f"{name:<10} {rep.empirical_bler:>8.4f} "
              f"{rep.mean_bitrate_kbps / 1000.0:>9.3f} {rep.mean_rebuffer_s:>9.3f} "
              f"{rep.mean_qoe:>8.3f} {rep.mean_utilization:>8.3f}")
    out = Path(args.out)
    _write(out / "compare.csv", "\n".join(lines) + "\n")
    print(f"wrote {out / 'compare.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clsim",
        description="Slot-level simulator of closed-loop cross-layer video delivery")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="path to a session config JSON")
            p.add_argument("--scenario", choices=SCENARIOS,
                           help="built-in scenario preset")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default="out", help="output directory")

    p_run = sub.add_parser("run", help="run one delivery session")
    common(p_run)
    p_run.add_argument("--slot-log", action="store_true",
                       help="also write per-slot records to slots.csv")
    p_run.set_defaults(func=cmd_run)

    p_conv = sub.add_parser("converge",
                            help="link-only BLER convergence on a stationary channel")
    common(p_conv)
    p_conv.add_argument("--slots", type=int, default=50_000,
                        help="number of slots to simulate")
    p_conv.set_defaults(func=cmd_converge)

    p_sweep = sub.add_parser("sweep", help="rerun a session across one parameter axis")
    common(p_sweep)
    p_sweep.add_argument("--axis", required=True,
                         help="prediction_interval | abr | link_mode | ra_policy | mean_snr_db")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated axis values")
    p_sweep.add_argument("--seeds", default=None,
                         help="comma-separated seed list shared across values")
    p_sweep.set_defaults(func=cmd_sweep)

    p_cmp = sub.add_parser("compare",
                           help="run several method stacks on one scenario")
    p_cmp.add_argument("--config", action="append", default=[],
                       help="explicit config JSON (repeatable)")
    p_cmp.add_argument("--scenario", choices=SCENARIOS)
    p_cmp.add_argument("--methods", default="mpc_s,mpc_a,mpc_b",
                       help=f"comma-separated subset of {', '.join(METHODS)}")
    p_cmp.add_argument("--seed", type=int, default=None)
    p_cmp.add_argument("--out", default="out")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, EngineError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
