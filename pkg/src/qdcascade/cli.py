"""Command-line interface.

Subcommands
-----------
gamma-curve   windowed coherence and detection probability vs window width
tomo-sim      simulate tomography counts and reconstruct the state
hbt-sim       time-tagged coincidence simulation with lifetime fit
reconstruct   reconstruct a state from a measurement records CSV

All randomness derives from the single config ``seed``: stream k of a run
uses ``numpy.random.SeedSequence((seed, k))`` with k = 1 for tomography
counts, 2 for bootstrap resampling, and (4, i) for the i-th coincidence
run.  Outputs are byte-identical across runs with the same config.

Exit codes: 0 success, 2 configuration or input-format error, 3 I/O error,
4 computation error (for example a singular measurement design).
"""

import argparse
import json
import math
import sys

import numpy as np

from . import eventsim, polstate, tomography
from .cascade import (
    SpectralWindow,
    detection_probability,
    filtered_density_matrix,
    gamma_prime_numeric,
    make_params,
    sweep_gamma_vs_window,
)
from .errors import DomainError, InvalidForm, QDCascadeError

SCHEMA_VERSION = 1

_SQRT_HALF = 1.0 / math.sqrt(2.0)


class ConfigError(Exception):
    """Configuration file or flag rejected; message names the field."""


def default_config() -> dict:
    return {
        "seed": 12345,
        "tol": 1e-9,
        "cascade": {
            "splitting": 27.0,
            "width": 1.6,
            "width_upper": None,
            "energy_upper": 0.0,
            "doublet_center": 0.0,
            "amp_h": [_SQRT_HALF, 0.0],
            "amp_v": [_SQRT_HALF, 0.0],
            "phase_h": 0.0,
            "phase_v": 0.0,
            "dot_overlap": [1.0, 0.0],
        },
        "window": {"width": 25.0, "center": None},
        "state": None,
        "tomography": {
            "settings": None,
            "n_per_setting": 100000.0,
            "n_resamples": 100,
            "grad_tol": 1e-9,
            "max_iter": 10000,
        },
        "events": {
            "pump_rate_per_ns": 5e-3,
            "lifetime_xx_ns": 0.4,
            "lifetime_x_ns": 0.8,
            "background_rate_per_ns": 0.0,
            "duration_ns": 5e6,
            "bin_width_ns": 0.05,
            "tau_max_ns": 8.0,
        },
        "w_grid": None,
    }


def _merge(base: dict, user, path: str = "") -> None:
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    for key, value in user.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"{where}: unknown field")
        if isinstance(base[key], dict) and base[key] is not None:
            if value is None:
                raise ConfigError(f"{where}: expected an object")
            _merge(base[key], value, where)
        else:
            base[key] = value


def _complex(value, where: str) -> complex:
    if isinstance(value, (int, float)):
        return complex(value)
    if (
        isinstance(value, (list, tuple))
        and len(value) == 2
        and all(isinstance(v, (int, float)) for v in value)
    ):
        return complex(value[0], value[1])
    raise ConfigError(f"{where}: expected a number or [re, im] pair")


def _number(cfg: dict, section: str, key: str, *, positive=False, nonneg=False) -> float:
    value = cfg[section][key] if section else cfg[key]
    where = f"{section}.{key}" if section else key
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(f"{where}: must be > 0")
    if nonneg and value < 0:
        raise ConfigError(f"{where}: must be >= 0")
    return float(value)


class RunConfig:
    """Fully resolved configuration with typed module parameters."""

    def __init__(self, raw: dict):
        c = raw["cascade"]
        width = _number(raw, "cascade", "width", positive=True)
        if c["width_upper"] is None:
            c["width_upper"] = 2.0 * width
        try:
            self.params = make_params(
                splitting=_number(raw, "cascade", "splitting"),
                width=width,
                width_upper=_number(raw, "cascade", "width_upper", positive=True),
                energy_upper=_number(raw, "cascade", "energy_upper"),
                doublet_center=_number(raw, "cascade", "doublet_center"),
                amp_h=_complex(c["amp_h"], "cascade.amp_h"),
                amp_v=_complex(c["amp_v"], "cascade.amp_v"),
                phase_h=_number(raw, "cascade", "phase_h"),
                phase_v=_number(raw, "cascade", "phase_v"),
                dot_overlap=_complex(c["dot_overlap"], "cascade.dot_overlap"),
            )
        except DomainError as exc:
            raise ConfigError(f"cascade: {exc}") from exc
        c["amp_h"] = [self.params.amp_h.real, self.params.amp_h.imag]
        c["amp_v"] = [self.params.amp_v.real, self.params.amp_v.imag]
        c["dot_overlap"] = [
            complex(self.params.dot_overlap).real,
            complex(self.params.dot_overlap).imag,
        ]

        if raw["window"]["center"] is None:
            raw["window"]["center"] = self.params.doublet_center
        try:
            self.window = SpectralWindow(
                center=_number(raw, "window", "center"),
                width=_number(raw, "window", "width", nonneg=True),
            )
        except DomainError as exc:
            raise ConfigError(f"window: {exc}") from exc

        self.state = None
        if raw["state"] is not None:
            s = raw["state"]
            if not isinstance(s, dict) or set(s) != {"p_hh", "p_vv", "coherence"}:
                raise ConfigError("state: expected fields p_hh, p_vv, coherence")
            try:
                self.state = polstate.CascadeForm(
                    float(s["p_hh"]),
                    float(s["p_vv"]),
                    _complex(s["coherence"], "state.coherence"),
                )
            except (InvalidForm, TypeError, ValueError) as exc:
                raise ConfigError(f"state: {exc}") from exc

        t = raw["tomography"]
        if t["settings"] is None:
            t["settings"] = ["".join(pair) for pair in tomography.DEFAULT_SETTINGS]
        self.settings = []
        for entry in t["settings"]:
            if (
                not isinstance(entry, str)
                or len(entry) != 2
                or entry[0] not in tomography.JONES
                or entry[1] not in tomography.JONES
            ):
                raise ConfigError(
                    f"tomography.settings: {entry!r} is not a two-letter HVDARL pair"
                )
            self.settings.append((entry[0], entry[1]))
        self.n_per_setting = _number(raw, "tomography", "n_per_setting", positive=True)
        self.n_resamples = int(_number(raw, "tomography", "n_resamples", positive=True))
        if self.n_resamples < 100:
            raise ConfigError("tomography.n_resamples: must be at least 100")
        self.grad_tol = _number(raw, "tomography", "grad_tol", positive=True)
        self.max_iter = int(_number(raw, "tomography", "max_iter", positive=True))

        try:
            self.rates = eventsim.RateModelParams(
                pump_rate_per_ns=_number(raw, "events", "pump_rate_per_ns", nonneg=True),
                lifetime_xx_ns=_number(raw, "events", "lifetime_xx_ns", positive=True),
                lifetime_x_ns=_number(raw, "events", "lifetime_x_ns", positive=True),
                background_rate_per_ns=_number(
                    raw, "events", "background_rate_per_ns", nonneg=True
                ),
            )
            self.hist = eventsim.HistogramConfig(
                bin_width_ns=_number(raw, "events", "bin_width_ns", positive=True),
                tau_max_ns=_number(raw, "events", "tau_max_ns", positive=True),
            )
        except DomainError as exc:
            raise ConfigError(f"events: {exc}") from exc
        self.duration_ns = _number(raw, "events", "duration_ns", nonneg=True)

        if raw["w_grid"] is None:
            raw["w_grid"] = [float(w) for w in np.geomspace(2.0, 2700.0, 60)]
        grid = raw["w_grid"]
        if (
            not isinstance(grid, list)
            or not grid
            or not all(isinstance(w, (int, float)) for w in grid)
        ):
            raise ConfigError("w_grid: expected a non-empty list of numbers")
        arr = np.asarray(grid, dtype=float)
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0) or np.any(np.diff(arr) <= 0):
            raise ConfigError("w_grid: widths must be positive and strictly increasing")
        self.w_grid = arr

        self.seed = int(_number(raw, "", "seed"))
        self.tol = _number(raw, "", "tol", positive=True)
        self.resolved = raw

    def rng(self, *stream) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence((self.seed, *stream)))

    def true_state(self):
        if self.state is not None:
            return polstate.from_cascade_form(self.state)
        return filtered_density_matrix(self.params, self.window, self.tol)


def load_config(args) -> RunConfig:
    raw = default_config()
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}:{exc.lineno}: invalid JSON ({exc.msg})")
        _merge(raw, user)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "tol", None) is not None:
        raw["tol"] = args.tol
    if getattr(args, "w_grid", None) is not None:
        try:
            raw["w_grid"] = [float(w) for w in args.w_grid.split(",") if w.strip()]
        except ValueError:
            raise ConfigError(f"--w-grid: could not parse {args.w_grid!r}")
    if getattr(args, "n_per_setting", None) is not None:
        raw["tomography"]["n_per_setting"] = args.n_per_setting
    if getattr(args, "resamples", None) is not None:
        raw["tomography"]["n_resamples"] = args.resamples
    if getattr(args, "duration", None) is not None:
        raw["events"]["duration_ns"] = args.duration
    return RunConfig(raw)


def _matrix_json(m: np.ndarray) -> dict:
    return {"real": m.real.tolist(), "imag": m.imag.tolist()}


def _result_json(result: tomography.TomographyResult) -> dict:
    form = result.cascade_fit
    return {
        "rho": _matrix_json(result.rho),
        "cascade_fit": {
            "p_hh": form.p_hh,
            "p_vv": form.p_vv,
            "coherence": [form.coherence.real, form.coherence.imag],
            "coherence_abs": abs(form.coherence),
        },
        "fit_residual": result.fit_residual,
        "log_likelihood": result.log_likelihood,
        "n_iterations": result.n_iterations,
        "std_gamma_re": result.std_gamma_re,
        "std_gamma_im": result.std_gamma_im,
        "significance_sigmas": result.significance_sigmas,
    }


def _witness_json(result: tomography.TomographyResult) -> dict:
    return {
        "bell_cascade": polstate.bell_value_cascade(result.cascade_fit.coherence),
        "bell_general": polstate.bell_value_general(result.rho),
        "ppt_min_eigenvalue": polstate.ppt_min_eigenvalue(result.rho),
    }


def _write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _echo(cfg: RunConfig, command: str) -> None:
    print(json.dumps({"command": command, "config": cfg.resolved}, sort_keys=True))


def cmd_gamma_curve(args, cfg: RunConfig) -> int:
    sweep = sweep_gamma_vs_window(cfg.params, cfg.w_grid, cfg.tol)
    with open(args.out, "w", newline="") as fh:
        fh.write("w_ueV,gamma_abs_numeric,gamma_abs_analytic,detection_prob\n")
        for w, g, a, p in zip(
            sweep.widths, sweep.gamma_abs, sweep.gamma_abs_analytic, sweep.detection_prob
        ):
            fh.write(f"{float(w)!r},{float(g)!r},{float(a)!r},{float(p)!r}\n")
    _echo(cfg, "gamma-curve")
    print(f"wrote {sweep.widths.size} rows to {args.out}")
    return 0


def cmd_tomo_sim(args, cfg: RunConfig) -> int:
    rho_true = cfg.true_state()
    records = tomography.simulate_counts(
        rho_true, cfg.settings, cfg.n_per_setting, cfg.rng(1)
    )
    result = tomography.reconstruct_with_uncertainty(
        records,
        cfg.n_resamples,
        cfg.rng(2),
        grad_tol=cfg.grad_tol,
        max_iter=cfg.max_iter,
    )
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "tomo-sim",
        "config": cfg.resolved,
        "true_state": _matrix_json(polstate.as_matrix(rho_true)),
        "records": [
            {"arm1": r.arm1, "arm2": r.arm2, "counts": r.counts, "weight": r.weight}
            for r in records
        ],
        "reconstruction": _result_json(result),
        "witnesses": _witness_json(result),
    }
    _write_json(args.out, report)
    _echo(cfg, "tomo-sim")
    print(
        f"|coherence| = {abs(result.cascade_fit.coherence):.4f} "
        f"({result.significance_sigmas:.1f} sigma), report in {args.out}"
    )
    return 0


def cmd_hbt_sim(args, cfg: RunConfig) -> int:
    import os

    os.makedirs(args.out, exist_ok=True)
    rho = cfg.true_state()
    pairs = [("H", "H"), ("H", "V"), ("V", "H")]
    hists = []
    for i, pair in enumerate(pairs):
        stream = eventsim.simulate_filtered_hbt(
            cfg.params,
            cfg.window,
            cfg.rates,
            pair,
            cfg.duration_ns,
            cfg.rng(4, i),
            rho=rho,
        )
        label = "".join(pair).lower()
        eventsim.export_events_csv(stream, os.path.join(args.out, f"events_{label}.csv"))
        hist = eventsim.correlate(stream, pair, cfg.hist)
        eventsim.export_histogram_csv(hist, os.path.join(args.out, f"corr_{label}.csv"))
        hists.append(hist)
    co, cross_a, cross_b = hists
    reduced = eventsim.reduced_correlation(co, cross_a, cross_b)
    eventsim.export_histogram_csv(reduced, os.path.join(args.out, "reduced.csv"))
    if co.total_pairs > 0:
        lifetime, lifetime_err = eventsim.extract_lifetime(co)
    else:
        lifetime = lifetime_err = None
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "hbt-sim",
        "config": cfg.resolved,
        "lifetime_ns": lifetime,
        "lifetime_err_ns": lifetime_err,
        "coincidences": {h.label: h.total_pairs for h in hists},
        "n_arm1": co.n_arm1,
        "n_arm2": co.n_arm2,
    }
    _write_json(os.path.join(args.out, "lifetime.json"), report)
    _echo(cfg, "hbt-sim")
    if lifetime is None:
        print(f"no coincidences recorded, outputs in {args.out}")
    else:
        print(f"lifetime = {lifetime:.4f} +- {lifetime_err:.4f} ns, outputs in {args.out}")
    return 0


def cmd_reconstruct(args, cfg: RunConfig) -> int:
    records = tomography.read_records(args.records)
    result = tomography.reconstruct_with_uncertainty(
        records,
        cfg.n_resamples,
        cfg.rng(2),
        grad_tol=cfg.grad_tol,
        max_iter=cfg.max_iter,
    )
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "reconstruct",
        "config": cfg.resolved,
        "n_records": len(records),
        "reconstruction": _result_json(result),
        "witnesses": _witness_json(result),
    }
    _write_json(args.out, report)
    _echo(cfg, "reconstruct")
    print(
        f"|coherence| = {abs(result.cascade_fit.coherence):.4f} "
        f"({result.significance_sigmas:.1f} sigma), report in {args.out}"
    )
    return 0


def _fail(category: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": category, "message": message}) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qdcascade",
        description="Cascade photon-pair coherence, tomography, and coincidence simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (defaults merged in)")
        p.add_argument("--seed", type=int, help="override the run seed")

    p = sub.add_parser("gamma-curve", help="coherence vs window width")
    common(p)
    p.add_argument("--w-grid", help="comma-separated window widths (ueV)")
    p.add_argument("--tol", type=float, help="quadrature relative tolerance")
    p.add_argument("--out", default="gamma_curve.csv", help="output CSV path")
    p.set_defaults(func=cmd_gamma_curve)

    p = sub.add_parser("tomo-sim", help="simulate and reconstruct tomography")
    common(p)
    p.add_argument("--n-per-setting", type=float, help="pairs per polarizer setting")
    p.add_argument("--resamples", type=int, help="bootstrap resamples (>= 100)")
    p.add_argument("--out", default="tomo_report.json", help="output JSON path")
    p.set_defaults(func=cmd_tomo_sim)

    p = sub.add_parser("hbt-sim", help="time-tagged coincidence simulation")
    common(p)
    p.add_argument("--duration", type=float, help="run duration (ns)")
    p.add_argument("--out", default="hbt_out", help="output directory")
    p.set_defaults(func=cmd_hbt_sim)

    p = sub.add_parser("reconstruct", help="reconstruct from a records CSV")
    common(p)
    p.add_argument("--records", required=True, help="input records CSV")
    p.add_argument("--resamples", type=int, help="bootstrap resamples (>= 100)")
    p.add_argument("--out", default="reconstruct_report.json", help="output JSON path")
    p.set_defaults(func=cmd_reconstruct)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        _fail("config", str(exc))
        return 2
    except OSError as exc:
        _fail("io", str(exc))
        return 3
    try:
        return args.func(args, cfg)
    except OSError as exc:
        _fail("io", str(exc))
        return 3
    except QDCascadeError as exc:
        _fail("computation", f"{type(exc).__name__}: {exc}")
        return 4
    except ValueError as exc:
        _fail("config", str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
