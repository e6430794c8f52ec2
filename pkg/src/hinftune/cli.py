"""Command-line front end: ``hinftune analyze|tune|simulate``.

Every run writes ``manifest.json`` (atomically, first) and then its result
files into ``--out-dir``.  Result files depend only on the configuration,
so repeated runs produce identical bytes; the manifest carries timestamps
and is the only file that differs.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import datetime as _dt
import json
import logging
import os
import sys
import tempfile

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import format_parameters, load_config
from .exceptions import ConfigError, NoSteadyState, NumericalError
from .lti import freq_response, hinf_norm_bisect, poles, sigma_max
from .sim import SimScenario, response_metrics, simulate_nonlinear, step_response_linear
from .tuner import ScenarioSet, safeguard_check, tune_multi

__all__ = ["main", "cmd_analyze", "cmd_tune", "cmd_simulate", "RunManifest"]

log = logging.getLogger("hinftune")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
MANIFEST = "manifest.json"


def _f(v):
    """Shortest round-trip text of a float."""
    return repr(float(v))


def _atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


class RunManifest:
    """Provenance record of one command invocation."""

    def __init__(self, command, cfg, out_dir):
        self.out_dir = out_dir
        self.data = {
            "command": command,
            "config": os.path.abspath(cfg.path),
            "config_sha256": cfg.sha256,
            "inputs": [os.path.abspath(cfg.path)] + [os.path.abspath(p) for p in cfg.param_files],
            "outputs": [],
            "seed": cfg.seed,
            "tool_version": __version__,
            "started": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "status": "running",
        }
        self._write()

    def _write(self):
        _atomic_write(os.path.join(self.out_dir, MANIFEST), _json(self.data))

    def output(self, name, text):
        """Write one result file atomically and record it."""
        _atomic_write(os.path.join(self.out_dir, name), text)
        self.data["outputs"].append(name)

    def finish(self, status="ok"):
        self.data["status"] = status
        self.data["finished"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
        self._write()


def _csv(header, rows):
    return ",".join(header) + "\n" + "".join(",".join(r) + "\n" for r in rows)


# commands --------------------------------------------------------------------

def cmd_analyze(cfg, man):
    """Pole table, sigma sweep and H-infinity norm per scenario."""
    w = cfg.analysis["sweep"]
    pole_rows, sweep_rows, summary = [], [], {}
    for name, ps in zip(cfg.scenario_names, cfg.systems):
        sys_ = ps.evaluate(cfg.K0)
        for i, p in enumerate(poles(sys_).poles):
            mag = abs(p)
            zeta = -p.real / mag if mag > 0 else 1.0
            pole_rows.append([name, str(i), _f(p.real), _f(p.imag), _f(zeta), _f(abs(p.imag) / (2 * np.pi))])
        sig = sigma_max(freq_response(sys_, w))
        for om, s in zip(w, sig):
            sweep_rows.append([name, _f(om), _f(om / (2 * np.pi)), _f(s)])
        res = hinf_norm_bisect(sys_, tol=cfg.analysis["hinf_tol"])
        summary[name] = {
            "hinf_norm": float(res.norm),
            "peak_omega_rad_s": float(res.peak_omega),
            "peak_freq_hz": float(res.peak_omega / (2 * np.pi)),
            "stable": bool(res.stable),
            "sweep_max": float(np.max(sig)),
            "n_states": int(sys_.n_states),
        }
        log.info("%s: H-infinity norm %.6g at %.4g Hz", name, res.norm, res.peak_omega / (2 * np.pi))
    man.output("poles.csv", _csv(["scenario", "index", "real", "imag", "damping", "freq_hz"], pole_rows))
    man.output("sigma_sweep.csv", _csv(["scenario", "omega_rad_s", "freq_hz", "sigma_max"], sweep_rows))
    man.output("norm_summary.json", _json({
        "name": cfg.name,
        "parameters": dict(zip(cfg.param_names, map(float, cfg.K0))),
        "scenarios": summary,
    }))
    return summary


def cmd_tune(cfg, man):
    """Run the tuner and write the iteration trace and tuned parameters."""
    if not cfg.param_names:
        raise ConfigError("model: nothing to tune (no tunable parameters)")
    scen = ScenarioSet(cfg.systems)
    rep = tune_multi(scen, cfg.K0, cfg.tune_config())
    ok = safeguard_check(rep)
    man.output("tune_report.csv", rep.to_csv())
    params = dict(zip(cfg.param_names, map(float, rep.K_opt)))
    header = [f"tuned parameters of {cfg.name}", f"H-infinity norm {_f(rep.norm0)} -> {_f(rep.norm_opt)}"]
    man.output("tuned_parameters.yaml", format_parameters(params, header))
    per = {n: float(hinf_norm_bisect(s.evaluate(rep.K_opt)).norm) for n, s in zip(cfg.scenario_names, cfg.systems)}
    man.output("tune_summary.json", _json({
        "name": cfg.name,
        "norm_initial": float(rep.norm0),
        "norm_tuned": float(rep.norm_opt),
        "reduction": float(rep.norm0 / rep.norm_opt) if rep.norm_opt > 0 else None,
        "scenario_norms": per,
        "iterations": len(rep.iterations),
        "accepted": len(rep.accepted),
        "converged": bool(rep.converged),
        "message": rep.message,
        "safeguard_ok": bool(ok),
        "parameters": params,
    }))
    log.info("norm %.6g -> %.6g in %d iterations (%s)", rep.norm0, rep.norm_opt, len(rep.iterations), rep.message)
    return rep


def _metric_rows(traj, label, scenario, model, channels, step_time, band):
    rows = []
    for ch in channels:
        try:
            m = response_metrics(traj, ch, step_time, band=band)
            vals, status = [_f(m["overshoot"]), _f(m["settling_time"]), _f(m["osc_energy"])], "ok"
        except NoSteadyState:
            vals, status = ["", "", ""], "not_settled"
        rows.append([label, scenario, model, ch] + vals + [status])
    return rows


def cmd_simulate(cfg, man):
    """Linear (and optionally nonlinear) step responses plus metrics."""
    sim = cfg.simulation
    if sim is None:
        raise ConfigError("simulation: section required for the simulate command")
    sc = SimScenario(sim["step"], sim["horizon"], sim["dt"], sim["step_time"])
    runs = [("initial", cfg.K0)]
    if sim["compare"] is not None:
        runs.append(("compare", sim["compare"]))
    metric_rows = []
    for label, K in runs:
        for i, (name, ps) in enumerate(zip(cfg.scenario_names, cfg.systems)):
            sys_ = ps.evaluate(K)
            lin = step_response_linear(sys_, sc, cfg.output_names)
            chans = sim["channels"] or cfg.output_names
            for ch in chans:
                if ch not in lin.signals and not sim["nonlinear"]:
                    raise ConfigError(f"simulation.channels: unknown channel {ch!r}")
            fname = f"linear_{label}_{name}.csv"
            man.output(fname, _traj_csv(lin))
            metric_rows += _metric_rows(lin, label, name, "linear", [c for c in chans if c in lin.signals],
                                        sc.step_time, sim["band"])
            if sim["nonlinear"]:
                dae = cfg.daes[i]
                op = dae.equilibrium(K)
                nl = simulate_nonlinear(dae, op, sc, K)
                man.output(f"nonlinear_{label}_{name}.csv", _traj_csv(nl))
                metric_rows += _metric_rows(nl, label, name, "nonlinear", [c for c in chans if c in nl.signals],
                                            sc.step_time, sim["band"])
    man.output("metrics.csv", _csv(["run", "scenario", "model", "channel", "overshoot", "settling_time",
                                    "osc_energy", "status"], metric_rows))
    return metric_rows


def _traj_csv(traj):
    names = traj.channels
    cols = [traj.time] + [traj.signals[n] for n in names]
    return _csv(["time"] + names, ([_f(v) for v in row] for row in zip(*cols)))


COMMANDS = {"analyze": cmd_analyze, "tune": cmd_tune, "simulate": cmd_simulate}


def build_parser():
    p = argparse.ArgumentParser(prog="hinftune", description="Structured H-infinity tuning toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--out-dir", default=".", help="directory for result files (created if missing)")
        sp.add_argument("--threads", type=int, default=None, help="cap on BLAS/LAPACK threads")
        sp.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    man = None
    try:
        cfg = load_config(args.config)
        os.makedirs(args.out_dir, exist_ok=True)
        man = RunManifest(args.command, cfg, args.out_dir)
        with threadpool_limits(limits=args.threads):
            COMMANDS[args.command](cfg, man)
        man.finish()
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        if man is not None:
            man.finish("config_error")
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        if man is not None:
            man.finish("numerical_error")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
