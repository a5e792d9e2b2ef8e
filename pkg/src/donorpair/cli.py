"""Command-line entry point: ``donorpair <subcommand> --config C --seed S --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 numerical or contract error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import analysis, artifacts, dynamics, signal_chain, spin_model
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DonorPairError, ManifoldError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _state_payload(state: spin_model.SpinState) -> dict:
    return {
        "basis": list(state.basis),
        "amplitudes": [[float(a.real), float(a.imag)] for a in state.amplitudes],
        "populations": state.populations(),
    }


def _eigen_payload(es: spin_model.EigenSystem) -> dict:
    return {
        "basis": list(es.basis),
        "labels": list(es.labels),
        "energies_hz": [float(e) for e in es.energies],
        "states": {lab: [[float(a.real), float(a.imag)] for a in es.state(lab).amplitudes] for lab in es.labels},
    }


def _maybe_husimi(out: Path, state: spin_model.SpinState, cfg: ExperimentConfig) -> dict:
    try:
        grid = dynamics.husimi(state, cfg.evolve.husimi_theta, cfg.evolve.husimi_phi)
    except ManifoldError as exc:
        return {"husimi": None, "husimi_skipped": str(exc)}
    artifacts.write_husimi(out / "husimi.csv", grid)
    theta, phi = grid.argmax()
    return {"husimi": "husimi.csv", "husimi_normalization": grid.normalization(),
            "husimi_argmax": {"theta": theta, "phi": phi}}


# --------------------------------------------------------------------------
# subcommands


def cmd_eigen(cfg: ExperimentConfig, out: Path) -> None:
    p, nc = cfg.donor, cfg.nuclear
    es4 = spin_model.electron_eigensystem(p, nc)
    es16 = spin_model.full_eigensystem(p)
    delta = spin_model.signed_detuning(p, nc)
    payload = {
        "nuclear_config": nc.name,
        "detuning_hz": abs(delta),
        "mixing_angle": spin_model.mixing_angle(p.j, delta),
        "odd_splitting_hz": spin_model.odd_parity_splitting(p, nc, full=False),
        "odd_splitting_full_hz": spin_model.odd_parity_splitting(p, nc, full=True),
        "electron": _eigen_payload(es4),
        "full": _eigen_payload(es16),
    }
    if nc.parallel:
        payload["alpha_splitting_hz"] = spin_model.alpha_splitting(p, nc, full=False)
        payload["alpha_splitting_full_hz"] = spin_model.alpha_splitting(p, nc, full=True)
        ok, margin = dynamics.hard_pulse_check(cfg.initial.rabi_frequency, p, nc)
        payload["hard_pulse"] = {"rabi_frequency": cfg.initial.rabi_frequency, "ok": ok, "margin": margin}
    artifacts.write_json(out / "eigen.json", "eigen", payload)
    lines = spin_model.esr_lines(p, nc, full=True)
    artifacts.write_csv(out / "esr.csv", ["line", "lower", "upper", "frequency_hz"],
                        ([ln.name, ln.lower, ln.upper, ln.frequency] for ln in lines))
    ratios = np.logspace(-3, 3, 61)
    curves = spin_model.projection_curves(ratios)
    keys = list(curves)
    artifacts.write_csv(out / "projections.csv", ["j_over_detuning", *keys],
                        ([r, *(curves[k][i] for k in keys)] for i, r in enumerate(ratios)))


def cmd_evolve(cfg: ExperimentConfig, out: Path) -> None:
    ev, p, nc = cfg.evolve, cfg.donor, cfg.nuclear
    start = analysis.initial_state(ev.initial, p, nc, ev.rabi_frequency, ev.phase)
    carrier = ev.carrier if ev.carrier is not None else analysis.drive_line(p, nc)
    duration = ev.duration
    if duration is None:
        if nc.parallel:
            duration = dynamics.calibrate_pi_duration(p, nc, ev.rabi_frequency, carrier, ev.phase)
        else:
            duration = dynamics.calibrate_pi_duration(p, nc, ev.rabi_frequency, carrier, ev.phase,
                                                      start="↓↓", target="↑↓")
    pulse = dynamics.DrivePulse(carrier, ev.rabi_frequency, duration, ev.phase, ev.chirp_rate)
    step = ev.sample_step or dynamics.max_sample_step(pulse, p, nc)
    rec = dynamics.evolve(start, pulse, p, nc, step)
    artifacts.write_evolution(out / "evolution.csv", rec)
    payload = {
        "carrier_hz": carrier, "duration_s": duration, "rabi_frequency_hz": ev.rabi_frequency,
        "phase": ev.phase, "chirp_rate_hz_per_s": ev.chirp_rate, "sample_step_s": step,
        "initial": _state_payload(start), "final": _state_payload(rec.final_state),
        "final_eigenstate_populations": dict(zip(rec.labels, rec.eigenstate_populations[-1].tolist())),
    }
    payload.update(_maybe_husimi(out, rec.final_state, cfg))
    artifacts.write_json(out / "evolve.json", "evolve", payload)


def cmd_prepare(cfg: ExperimentConfig, out: Path) -> None:
    ini = cfg.initial
    state = analysis.initial_state(ini.state, cfg.donor, cfg.nuclear, ini.rabi_frequency, ini.phase)
    payload = {"recipe": ini.state, "nuclear_config": cfg.nuclear.name, "state": _state_payload(state)}
    if cfg.nuclear.parallel:
        es = spin_model.electron_eigensystem(cfg.donor, cfg.nuclear)
        payload["eigenstate_populations"] = {
            lab: abs(es.state(lab).overlap(state)) ** 2 for lab in spin_model.EIGEN_LABELS}
    payload.update(_maybe_husimi(out, state, cfg))
    artifacts.write_json(out / "prepare.json", "prepare", payload)


def _write_readout(out: Path, res: analysis.ReadoutResult, cfg: ExperimentConfig) -> None:
    st = res.stats
    artifacts.write_csv(out / "counts.csv", ["trace", "seed", "count"],
                        ((i, tl.seed, c) for i, (tl, c) in enumerate(zip(res.timelines, st.per_trace_counts))))
    artifacts.write_csv(out / "subgroups.csv", ["subgroup", "mean_count"], enumerate(st.subgroup_means))
    artifacts.write_csv(out / "count_histogram.csv", ["count", "traces"], sorted(st.count_histogram.items()))
    edges = np.arange(0.0, max(st.subgroup_means) + 0.05 + 1e-9, 0.05)
    hist, edges = np.histogram(st.subgroup_means, np.append(edges, edges[-1] + 0.05))
    artifacts.write_csv(out / "subgroup_histogram.csv", ["bin_left", "bin_right", "subgroups"],
                        zip(edges[:-1], edges[1:], hist))
    payload = {"nuclear_config": cfg.nuclear.name, "initial": cfg.initial.state,
               "seed": cfg.experiment.seed, "detection": cfg.experiment.detection, **st.to_dict()}
    n_keep = cfg.experiment.save_traces
    if n_keep:
        artifacts.write_timelines(out / "timelines.jsonl", res.timelines[:n_keep])
        payload["timelines"] = "timelines.jsonl"
        if res.samples is not None:
            seeds = [tl.seed for tl in res.timelines[: res.samples.shape[0]]]
            artifacts.write_traces(out / "traces.bin", res.samples, cfg.trace.sample_rate,
                                   cfg.trace.digest(), seeds)
            payload["traces"] = "traces.bin"
    artifacts.write_json(out / "readout.json", "readout", payload)


def cmd_readout(cfg: ExperimentConfig, out: Path) -> None:
    _write_readout(out, analysis.run_experiment(cfg), cfg)


def cmd_spectrum(cfg: ExperimentConfig, out: Path) -> None:
    points = analysis.spectrum_scan(cfg)
    artifacts.write_csv(out / "spectrum.csv",
                        ["frequency_hz", "offset_hz", "spin_up_proportion", "sigma", "mean_count"],
                        ([pt.frequency, pt.offset, pt.proportion, pt.sigma, pt.mean_count] for pt in points))
    peak = max(points, key=lambda pt: pt.proportion)
    payload = {
        "nuclear_config": cfg.nuclear.name,
        "points": [dataclasses.asdict(pt) for pt in points],
        "peak_proportion": peak.proportion,
        "peak_frequency_hz": peak.frequency,
    }
    if not cfg.nuclear.parallel:
        payload["predicted_parallel_peak"] = analysis.predicted_parallel_proportion(peak.proportion)
    artifacts.write_json(out / "spectrum.json", "spectrum", payload)


def _fit_durations(cfg: ExperimentConfig) -> np.ndarray:
    ft = cfg.fit
    if ft.source == "synthetic":
        rng = np.random.default_rng(cfg.experiment.seed)
        return rng.exponential(ft.tau, ft.samples)
    if ft.source == "file":
        if not ft.path:
            raise ConfigError("[fit] path is required for source = file")
        try:
            return np.loadtxt(ft.path, delimiter=",", ndmin=1)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read durations from {ft.path}: {exc}") from exc
    res = analysis.run_experiment(cfg.with_section("experiment", detection="trace"), want_durations=True)
    return res.blip_durations


def cmd_fit(cfg: ExperimentConfig, out: Path) -> None:
    ft = cfg.fit
    durations = _fit_durations(cfg)
    fit = signal_chain.fit_tunnel_in_time(durations, ft.bin_width, ft.min_duration_cut)
    cut = ft.min_duration_cut if ft.min_duration_cut is not None else 1.0 / signal_chain.bandwidth_from_rise_time(
        signal_chain.RISE_TIME)
    tau_mle, sig_mle = signal_chain.fit_tunnel_in_time_mle(durations, cut)
    artifacts.write_csv(out / "duration_histogram.csv", ["bin_center_s", "count"], zip(fit.bin_centers, fit.counts))
    artifacts.write_json(out / "fit.json", "fit", {
        "source": ft.source, "n_durations": int(len(durations)), "bin_width_s": ft.bin_width,
        "min_duration_cut_s": cut, "tau_s": fit.tau, "sigma_tau_s": fit.sigma_tau,
        "n_used": fit.n_used, "mle_tau_s": tau_mle, "mle_sigma_s": sig_mle,
    })


def cmd_calibrate(cfg: ExperimentConfig, out: Path) -> None:
    res = analysis.calibrate(cfg)
    artifacts.write_json(out / "calibration.json", "calibration", res.to_dict())
    (out / "calibrated.ini").write_text(res.config.to_ini(), encoding="utf-8")


COMMANDS = {
    "eigen": (cmd_eigen, "eigenstructure, ESR lines and projection curves"),
    "evolve": (cmd_evolve, "driven evolution with populations and Husimi grid"),
    "prepare": (cmd_prepare, "prepare the configured initial state"),
    "readout": (cmd_readout, "run a single-shot readout experiment"),
    "spectrum": (cmd_spectrum, "adiabatic-sweep spectrum of spin-up proportions"),
    "fit-tunnel-time": (cmd_fit, "fit the tunnel-in time from blip durations"),
    "calibrate": (cmd_calibrate, "calibrate unmeasured device parameters"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="donorpair", description="Exchange-coupled donor pair readout simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", type=Path, default=None, help="INI config file (defaults if omitted)")
        sp.add_argument("--seed", type=int, default=None, help="master seed (overrides [experiment] seed)")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.with_seed(args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DonorPairError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
