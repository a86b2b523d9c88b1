"""Command-line surface: simulate, fit, deconvolve, and test.

Conventions:
  * CSVs are headerless, comma-separated numeric files; vectors are one value
    per line, frame-indexed matrices are row-major (one frame per row).
  * JSON outputs carry ``"schema": 1`` and are written with sorted keys so a
    fixed seed reproduces byte-identical files.
  * Config precedence: command-line flags > --config file > defaults; the
    resolved configuration is archived in the output directory.
  * Exit codes: 0 success, 1 usage error, 2 numerical failure.
"""

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import ar, fade, fcss, glm, gof
from .core import (
    InvalidArgumentError,
    NumericalFailureError,
    RngSpec,
    TimeSeries,
)

SCHEMA = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        raise UsageError(message)


# ---------------------------------------------------------------------------
# I/O helpers
# ---------------------------------------------------------------------------


def _write_json(path: Path, obj: dict):
    obj = dict(obj)
    obj.setdefault("schema", SCHEMA)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _write_csv(path: Path, arr):
    arr = np.atleast_1d(np.asarray(arr, dtype=float))
    np.savetxt(path, arr, fmt="%.17g", delimiter=",")


def _read_vector(path) -> np.ndarray:
    try:
        v = np.loadtxt(path, delimiter=",", ndmin=1)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    if v.ndim != 1:
        raise UsageError(f"{path} must hold a single column")
    return v


def _read_matrix(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc


def _theta_triplets(theta) -> list:
    th = np.asarray(theta, dtype=float)
    return [[int(i), float(th[i])] for i in np.flatnonzero(th)]


def _theta_from_triplets(trip, p) -> np.ndarray:
    th = np.zeros(p)
    for i, v in trip:
        th[int(i)] = float(v)
    return th


def _outdir(args) -> Path:
    base = args.outdir or os.environ.get("SPARSEDYN_OUTDIR", ".")
    out = Path(base)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_config(args, keys) -> dict:
    """flags > config file > parser defaults (already baked into args)."""
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"bad config file: {exc}") from exc
    resolved = {}
    for key, default in keys.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in file_cfg:
            resolved[key] = file_cfg[key]
        else:
            resolved[key] = default
    return resolved


def _plot_series(out: Path, stem: str, columns: dict, no_plots: bool):
    """Write companion CSV always; render an SVG unless plotting is disabled."""
    names = sorted(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    _write_csv(out / f"{stem}.csv", data)
    if no_plots:
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 3))
    for k in names:
        ax.plot(np.asarray(columns[k], dtype=float), label=k, linewidth=0.8)
    ax.legend(loc="upper right", fontsize=7)
    ax.set_xlabel("index")
    fig.tight_layout()
    fig.savefig(out / f"{stem}.svg")
    plt.close(fig)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _sparse_theta(p, s, total_l1, g, signs=True) -> np.ndarray:
    idx = g.choice(p, size=s, replace=False)
    mag = g.uniform(0.5, 1.5, size=s)
    mag = mag / mag.sum() * total_l1
    if signs:
        mag *= g.choice([-1.0, 1.0], size=s)
    th = np.zeros(p)
    th[idx] = mag
    return th


def cmd_simulate(args) -> int:
    out = _outdir(args)
    kind = args.kind
    if kind == "ar":
        cfg = _resolve_config(args, dict(p=300, s=3, eta=0.5, n=1500, seed=0, sigma2=1.0))
        rng = RngSpec(cfg["seed"])
        g = rng.generator()
        theta = _sparse_theta(cfg["p"], cfg["s"], 1.0 - cfg["eta"], g)
        model = ar.ArModel(theta, cfg["sigma2"])
        ts = ar.simulate_ar(model, cfg["n"], RngSpec(cfg["seed"] + 1))
        _write_csv(out / "data.csv", ts.values)
        _write_json(out / "truth.json", {
            "kind": "ar", "p": cfg["p"], "n": cfg["n"], "sigma_w2": cfg["sigma2"],
            "eta": cfg["eta"], "theta": _theta_triplets(theta),
            "start_index": ts.start_index,
        })
    elif kind == "sep":
        cfg = _resolve_config(args, dict(
            p=1000, s=3, n=950, mu=0.1, pi_min=0.01, pi_max=0.49, seed=0,
            theta_sum=None,
        ))
        rng = RngSpec(cfg["seed"])
        g = rng.generator()
        total = cfg["theta_sum"]
        if total is None:
            total = min(0.5, cfg["pi_max"] - cfg["mu"] - 0.01)
        theta = _sparse_theta(cfg["p"], cfg["s"], total, g, signs=False)
        model = glm.SelfExcitingModel(cfg["mu"], theta, "linear",
                                      pi_min=cfg["pi_min"], pi_max=cfg["pi_max"])
        train = glm.simulate_sep(model, cfg["n"], RngSpec(cfg["seed"] + 1))
        _write_csv(out / "data.csv", train.bits)
        _write_json(out / "truth.json", {
            "kind": "sep", "p": cfg["p"], "n": cfg["n"], "mu": cfg["mu"],
            "pi_min": cfg["pi_min"], "pi_max": cfg["pi_max"],
            "theta": _theta_triplets(theta), "start_index": train.start_index,
        })
    elif kind == "statespace":
        cfg = _resolve_config(args, dict(
            p=200, T=200, s1=8, s2=4, theta=0.95, sigma2=1e-4,
            compression=1.0, seed=0,
        ))
        rng = RngSpec(cfg["seed"])
        x, w = fcss.simulate_statespace(cfg["p"], cfg["T"], cfg["s1"], cfg["s2"],
                                        cfg["theta"], rng)
        g = RngSpec(cfg["seed"] + 1).generator()
        n_t = int(round(cfg["compression"] * cfg["p"]))
        files = {"y": "y.csv", "x": "x.csv", "w": "w.csv"}
        if cfg["compression"] >= 1.0:
            y = x + g.normal(0.0, math.sqrt(cfg["sigma2"]), size=x.shape)
            a_file = None
        else:
            A = g.normal(0.0, 1.0 / math.sqrt(n_t), size=(n_t, cfg["p"]))
            y = x @ A.T + g.normal(0.0, math.sqrt(cfg["sigma2"]), size=(cfg["T"], n_t))
            _write_csv(out / "A.csv", A)
            a_file = "A.csv"
            files["A"] = a_file
        _write_csv(out / "y.csv", y)
        _write_csv(out / "x.csv", x)
        _write_csv(out / "w.csv", w)
        _write_json(out / "truth.json", {
            "kind": "statespace", "p": cfg["p"], "T": cfg["T"], "s1": cfg["s1"],
            "s2": cfg["s2"], "theta": cfg["theta"], "sigma2": cfg["sigma2"],
            "n_t": n_t if cfg["compression"] < 1.0 else cfg["p"],
        })
        _write_json(out / "manifest.json", {
            "kind": "statespace", "files": files, "p": cfg["p"], "T": cfg["T"],
            "theta": cfg["theta"], "sigma2": cfg["sigma2"],
            "s": [cfg["s1"]] + [cfg["s2"]] * (cfg["T"] - 1),
        })
    elif kind == "spindle":
        cfg = _resolve_config(args, dict(
            T=4000, fs=200.0, f=13.0, a=0.95, snr_db=-7.5, events=4, seed=0,
        ))
        g = RngSpec(cfg["seed"]).generator()
        onsets = np.sort(g.choice(np.arange(200, cfg["T"] - 400), size=cfg["events"],
                                  replace=False))
        amps = g.uniform(1.0, 2.0, size=cfg["events"])
        sig_pow = np.mean(
            fcss.simulate_spindles(cfg["T"], cfg["fs"], cfg["f"], cfg["a"],
                                   onsets, amps, 0.0, RngSpec(cfg["seed"] + 1))[0] ** 2
        )
        noise_sd = math.sqrt(sig_pow / (10.0 ** (cfg["snr_db"] / 10.0)))
        clean, noisy = fcss.simulate_spindles(
            cfg["T"], cfg["fs"], cfg["f"], cfg["a"], onsets, amps, noise_sd,
            RngSpec(cfg["seed"] + 1),
        )
        _write_csv(out / "data.csv", noisy)
        _write_csv(out / "clean.csv", clean)
        _write_json(out / "truth.json", {
            "kind": "spindle", "fs": cfg["fs"], "f": cfg["f"], "a": cfg["a"],
            "onsets": [int(t) for t in onsets], "noise_sd": noise_sd,
            "T": cfg["T"],
        })
        _write_json(out / "manifest.json", {
            "kind": "spindle", "files": {"y": "data.csv"}, "fs": cfg["fs"],
            "sigma2": noise_sd**2, "T": cfg["T"],
        })
    elif kind == "projection":
        cfg = _resolve_config(args, dict(grid=64, sources=3, photons=100.0, seed=0))
        n = cfg["grid"]
        g = RngSpec(cfg["seed"]).generator()
        P = fade.line_projection_matrix(n)
        pix = g.choice(n * n, size=cfg["sources"], replace=False)
        xtrue = np.zeros(n * n)
        xtrue[pix] = cfg["photons"]
        y = g.poisson(P @ xtrue).astype(float)
        _write_csv(out / "P_triplets.csv", fade.projection_triplets(P))
        _write_csv(out / "y.csv", y)
        _write_json(out / "truth.json", {
            "kind": "projection", "grid": n, "pixels": [int(i) for i in pix],
            "photons": cfg["photons"],
        })
        _write_json(out / "manifest.json", {
            "kind": "projection", "files": {"y": "y.csv", "P": "P_triplets.csv"},
            "grid": n,
        })
    else:
        raise UsageError(f"unknown simulation kind {kind!r}")
    if kind in ("ar", "sep"):
        _write_json(out / "manifest.json", {
            "kind": kind, "files": {"data": "data.csv"},
        })
    _write_json(out / "config.json", {"command": f"simulate {kind}",
                                      "resolved": cfg})
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

_AR_METHODS = ("yw", "ls", "lasso", "ywlasso", "omp")
_GLM_METHODS = ("glm-ml", "glm-l1", "pomp")


def cmd_fit(args) -> int:
    out = _outdir(args)
    cfg = _resolve_config(args, dict(
        p=None, gamma=0.1, s_star=3, link="linear", seed=0,
        pi_min=0.01, pi_max=0.49, residual_norm="l2",
    ))
    data = _read_vector(args.data)
    method = args.method
    p = cfg["p"]
    if p is None:
        raise UsageError("--p is required (model order)")
    p = int(p)
    if data.size <= p:
        raise UsageError("data shorter than the model order")
    if method in _AR_METHODS:
        ts = TimeSeries(data, start_index=-p + 1)
        gamma = cfg["gamma"]
        if args.cv == "even-odd" and method in ("lasso", "ywlasso"):
            grid = [gamma * m for m in (0.25, 0.5, 1.0, 2.0, 4.0)]
            gamma = ar.cross_validate_gamma(ts, p, grid)
        trace = None
        sigma2 = None
        stable = True
        if method == "yw":
            theta, sigma2 = ar.yule_walker(ts, p)
        elif method == "ls":
            theta = ar.least_squares(ts, p)
            stable = bool(np.sum(np.abs(theta)) < 1.0)
        elif method == "lasso":
            theta, trace = ar.lasso_ls(ts, p, gamma)
            stable = not any("stability" in f for f in trace.flags)
        elif method == "ywlasso":
            theta, trace = ar.lasso_yw(ts, p, gamma, cfg["residual_norm"])
            stable = not any("stability" in f for f in trace.flags)
        else:
            theta, _, trace = ar.omp_ls(ts, p, int(cfg["s_star"]))
        if sigma2 is None:
            sigma2 = ar.residual_variance(ts, theta)
        model_json = {
            "kind": "ar", "p": p, "theta": _theta_triplets(theta),
            "sigma_w2": float(sigma2), "method": method, "gamma": gamma,
            "stable": stable,
        }
        _write_json(out / "model.json", model_json)
        _plot_series(out, "theta_hat", {"theta_hat": theta}, args.no_plots)
        if args.gof:
            _ar_gof(out, ts, theta, float(sigma2), p)
    elif method in _GLM_METHODS:
        if not np.all((data == 0) | (data == 1)):
            raise UsageError(f"{method} expects a 0/1 spike train")
        train = glm.SpikeTrain(data.astype(int), start_index=-p + 1)
        link = cfg["link"]
        if method == "glm-ml":
            model, trace = glm.fit_ml(train, p, link, pi_min=cfg["pi_min"],
                                      pi_max=cfg["pi_max"])
        elif method == "glm-l1":
            model, trace = glm.fit_l1_ml(train, p, cfg["gamma"], link,
                                         pi_min=cfg["pi_min"], pi_max=cfg["pi_max"])
        else:
            model, trace = glm.pomp(train, p, int(cfg["s_star"]), link,
                                    pi_min=cfg["pi_min"], pi_max=cfg["pi_max"])
        model_json = {
            "kind": "sep", "p": p, "mu": float(model.mu),
            "theta": _theta_triplets(model.theta), "link": model.link,
            "pi_min": model.pi_min, "pi_max": model.pi_max, "method": method,
        }
        _write_json(out / "model.json", model_json)
        _plot_series(out, "theta_hat", {"theta_hat": model.theta}, args.no_plots)
        if args.gof:
            _sep_gof(out, train, model)
    else:
        raise UsageError(f"unknown fit method {method!r}")
    if trace is not None:
        _write_json(out / "trace.json", trace.as_dict())
    _write_json(out / "config.json", {"command": f"fit {method}", "resolved": cfg})
    return 0


def _render_table(reports) -> str:
    lines = [f"{'test':<16}{'value':>14}{'band95':>14}{'band99':>14}  pass95 pass99"]
    for r in reports:
        name = r.name if r.lag is None else f"{r.name}[{r.lag}]"
        lines.append(
            f"{name:<16}{r.value:>14.6g}{r.band_95:>14.6g}{r.band_99:>14.6g}"
            f"  {'yes' if r.pass_95 else 'NO':<6} {'yes' if r.pass_99 else 'NO'}"
        )
    return "\n".join(lines) + "\n"


def _ar_gof(out, ts, theta, sigma2, p, tests=("ks", "cvm", "ad", "spectral")):
    from scipy.stats import norm as normal

    res = gof.residues(ts, theta)
    sd = math.sqrt(max(sigma2, 1e-300))
    reports = []
    if {"ks", "cvm", "ad"} & set(tests):
        ks, cvm, adr = gof.ks_cvm_ad(res.values, lambda t: normal.cdf(t / sd))
        picked = {"ks": ks, "cvm": cvm, "ad": adr}
        reports += [picked[t] for t in ("ks", "cvm", "ad") if t in tests]
    if "spectral" in tests and ts.end_index >= 4 * p:
        model = ar.ArModel(theta, sigma2) if np.sum(np.abs(theta)) < 1 else None
        if model is not None:
            reports += list(gof.spectral_distance(ts, model, RngSpec(0), n_boot=100))
    _write_json(out / "gof.json", {"reports": [r.as_dict() for r in reports]})
    (out / "gof.txt").write_text(_render_table(reports))
    return reports


def _sep_gof(out, train, model, max_lag=20):
    lam = glm.rate_sequence(model, train)
    rescaled = gof.time_rescale(train, lam)
    reports = []
    if rescaled.count >= 2:
        reports.append(gof.rescaled_ks(rescaled))
        if rescaled.count >= 20:
            reports += gof.acf_test(rescaled.v, max_lag)
    if not reports:
        _write_json(out / "gof.json", {"reports": [], "note": "insufficient events"})
        (out / "gof.txt").write_text("insufficient events for point-process tests\n")
        return []
    _write_json(out / "gof.json", {"reports": [r.as_dict() for r in reports]})
    (out / "gof.txt").write_text(_render_table(reports))
    return reports


# ---------------------------------------------------------------------------
# deconvolve
# ---------------------------------------------------------------------------


def cmd_deconvolve(args) -> int:
    out = _outdir(args)
    try:
        manifest = json.loads(Path(args.manifest).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad manifest: {exc}") from exc
    base = Path(args.manifest).parent
    cfg = _resolve_config(args, dict(
        lam=None, alpha=None, rank=2, max_outer=100, estimate_theta=False,
    ))
    solver = args.solver
    files = manifest.get("files", {})

    def fpath(key):
        if key not in files:
            raise UsageError(f"manifest is missing the {key!r} file entry")
        return base / files[key]

    events = []
    if solver == "fcss":
        y = _read_matrix(fpath("y"))
        p = int(manifest["p"])
        A = None
        if "A" in files:
            A = _read_matrix(fpath("A"))
        T = y.shape[0]
        sigma2 = float(manifest["sigma2"])
        s = manifest.get("s", [4.0] * T)
        lam = cfg["lam"]
        if lam is None:
            n_t = p if A is None else A.shape[0]
            lam = fcss.lam_default(math.sqrt(sigma2), p, n_t)
        if "theta_file" in manifest:
            theta = _read_matrix(base / manifest["theta_file"])
        else:
            theta = manifest.get("theta", 0.0)
        problem = fcss.StateSpaceProblem(
            y=list(y), A=None if A is None else [A] * T, p=p, sigma2=sigma2,
            s=np.asarray(s, dtype=float), lam=float(lam),
            eps=float(manifest.get("eps", 1e-10)), theta=theta,
        )
        result = fcss.fcss_solve(problem, estimate_theta=bool(cfg["estimate_theta"]),
                                 max_outer=int(cfg["max_outer"]))
        _write_csv(out / "xhat.csv", result.x_hat)
        _write_csv(out / "what.csv", result.w_hat)
        if cfg["alpha"] is not None:
            pruned = fcss.prune_innovations(result, float(cfg["alpha"]))
            events = [{"coord": c, "frame": t} for c, t in pruned]
        else:
            events = [
                {"coord": int(c), "frame": int(t)}
                for t, c in zip(*np.nonzero(np.abs(result.w_hat) > 0.2 * np.max(np.abs(result.w_hat))))
            ]
        trace = result.trace
        _plot_series(out, "states", {"x0_hat": result.x_hat[:, 0],
                                     "w0_hat": result.w_hat[:, 0]}, args.no_plots)
    elif solver == "spindle":
        y = _read_vector(fpath("y"))
        result = fcss.spindle_solve(
            y, fs=float(manifest["fs"]), sigma2=float(manifest["sigma2"]),
            lam=float(cfg["lam"]) if cfg["lam"] is not None else 1.0,
        )
        _write_csv(out / "xhat.csv", result.x_hat[:, 0])
        _write_csv(out / "what.csv", result.w_hat[:, 0])
        onsets = fcss.detect_events(result.w_hat[:, 0])
        events = [{"frame": int(t)} for t in onsets]
        events_meta = {"a_hat": result.a_hat, "f_hat": result.f_hat}
        trace = result.trace
        _plot_series(out, "states", {"y": y, "x_hat": result.x_hat[:, 0]},
                     args.no_plots)
    elif solver in ("fade-rl", "fade-nls"):
        y = _read_matrix(fpath("y"))
        if "P" in files:
            trip = _read_matrix(fpath("P"))
            n_rows = int(trip[:, 0].max()) + 1
            n_cols = int(trip[:, 1].max()) + 1
            A = np.zeros((n_rows, n_cols))
            A[trip[:, 0].astype(int), trip[:, 1].astype(int)] = trip[:, 2]
        elif "A" in files:
            A = _read_matrix(fpath("A"))
        else:
            raise UsageError("fade solvers need a measurement matrix (A or P)")
        if y.shape[1] == 1 and y.shape[0] == A.shape[0]:
            y = y.T  # single-frame vector written one value per line
        theta = manifest.get("theta", 0.0)
        if solver == "fade-rl":
            problem = fade.PoissonRecoveryProblem(y=y, A=A, theta=theta)
            w, x, trace = fade.poisson_solve(problem, max_iter=int(cfg["max_outer"]),
                                             tol=1e-9)
        else:
            problem = fade.DynDeconvProblem(y=y, A=A, theta=theta,
                                            sigma2=float(manifest.get("sigma2", 1.0)))
            w, x, trace = fade.deconv_solve(problem, max_iter=int(cfg["max_outer"]),
                                            tol=1e-9)
        _write_csv(out / "xhat.csv", x)
        _write_csv(out / "what.csv", w)
        hot = np.abs(w) > 0.2 * np.max(np.abs(w)) if np.any(w) else np.zeros_like(w, bool)
        events = [{"coord": int(c), "frame": int(t)} for t, c in zip(*np.nonzero(hot))]
        _plot_series(out, "states", {"w0_hat": w[:, 0]}, args.no_plots)
    elif solver == "nmf":
        y = _read_matrix(fpath("y"))
        A, X, trace = fade.nmf_solve(y, int(cfg["rank"]))
        _write_csv(out / "xhat.csv", X)
        _write_csv(out / "what.csv", A)
        _plot_series(out, "states", {"x0_hat": X[0]}, args.no_plots)
    else:
        raise UsageError(f"unknown solver {solver!r}")
    payload = {"events": events}
    if solver == "spindle":
        payload.update(events_meta)
    _write_json(out / "events.json", payload)
    _write_json(out / "trace.json", trace.as_dict())
    _write_json(out / "config.json", {"command": f"deconvolve {solver}",
                                      "resolved": cfg})
    return 0


# ---------------------------------------------------------------------------
# gof
# ---------------------------------------------------------------------------


def cmd_gof(args) -> int:
    out = _outdir(args)
    try:
        model_json = json.loads(Path(args.model).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad model file: {exc}") from exc
    data = _read_vector(args.data)
    kind = model_json.get("kind")
    p = int(model_json.get("p", 0))
    tests = tuple(args.tests.split(",")) if args.tests else None
    if kind == "ar":
        if data.size <= p:
            raise UsageError("data shorter than the model order")
        ts = TimeSeries(data, start_index=-p + 1)
        theta = _theta_from_triplets(model_json["theta"], p)
        reports = _ar_gof(out, ts, theta, float(model_json["sigma_w2"]), p,
                          tests=tests or ("ks", "cvm", "ad", "spectral"))
    elif kind == "sep":
        if not np.all((data == 0) | (data == 1)):
            raise UsageError("sep models need 0/1 spike data")
        if data.size <= p:
            raise UsageError("data shorter than the model order")
        train = glm.SpikeTrain(data.astype(int), start_index=-p + 1)
        model = glm.SelfExcitingModel(
            float(model_json["mu"]), _theta_from_triplets(model_json["theta"], p),
            model_json.get("link", "linear"),
            pi_min=float(model_json.get("pi_min", 0.01)),
            pi_max=float(model_json.get("pi_max", 0.49)),
        )
        reports = _sep_gof(out, train, model)
    else:
        raise UsageError(f"model kind {kind!r} not compatible with gof")
    sys.stdout.write((out / "gof.txt").read_text())
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="sparsedyn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate synthetic data")
    sim.add_argument("kind", choices=["ar", "sep", "statespace", "spindle", "projection"])
    for flag, typ in [
        ("--p", int), ("--s", int), ("--eta", float), ("--n", int),
        ("--seed", int), ("--sigma2", float), ("--mu", float),
        ("--pi-min", float), ("--pi-max", float), ("--theta-sum", float),
        ("--T", int), ("--s1", int), ("--s2", int), ("--theta", float),
        ("--compression", float), ("--fs", float), ("--f", float),
        ("--a", float), ("--snr-db", float), ("--events", int),
        ("--grid", int), ("--sources", int), ("--photons", float),
    ]:
        sim.add_argument(flag, type=typ, dest=flag[2:].replace("-", "_"))
    sim.add_argument("--config")
    sim.add_argument("--outdir")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="fit a model to a data file")
    fit.add_argument("method", choices=list(_AR_METHODS) + list(_GLM_METHODS))
    fit.add_argument("--data", required=True)
    fit.add_argument("--p", type=int)
    fit.add_argument("--gamma", type=float)
    fit.add_argument("--s-star", type=int, dest="s_star")
    fit.add_argument("--link", choices=["linear", "log", "logistic"])
    fit.add_argument("--pi-min", type=float, dest="pi_min")
    fit.add_argument("--pi-max", type=float, dest="pi_max")
    fit.add_argument("--residual-norm", choices=["l2", "l1"], dest="residual_norm")
    fit.add_argument("--cv", choices=["even-odd"])
    fit.add_argument("--gof", action="store_true")
    fit.add_argument("--seed", type=int)
    fit.add_argument("--config")
    fit.add_argument("--outdir")
    fit.add_argument("--no-plots", action="store_true")
    fit.set_defaults(func=cmd_fit)

    dec = sub.add_parser("deconvolve", help="run a deconvolution solver")
    dec.add_argument("solver", choices=["fcss", "fade-rl", "fade-nls", "nmf", "spindle"])
    dec.add_argument("--manifest", required=True)
    dec.add_argument("--lam", type=float)
    dec.add_argument("--alpha", type=float)
    dec.add_argument("--rank", type=int)
    dec.add_argument("--max-outer", type=int, dest="max_outer")
    dec.add_argument("--estimate-theta", action="store_const", const=True,
                     dest="estimate_theta")
    dec.add_argument("--config")
    dec.add_argument("--outdir")
    dec.add_argument("--no-plots", action="store_true")
    dec.set_defaults(func=cmd_deconvolve)

    gofp = sub.add_parser("gof", help="goodness-of-fit report for a fitted model")
    gofp.add_argument("--data", required=True)
    gofp.add_argument("--model", required=True)
    gofp.add_argument("--tests")
    gofp.add_argument("--config")
    gofp.add_argument("--outdir")
    gofp.set_defaults(func=cmd_gof)
    return parser


def main(argv=None) -> int:
    try:  # small-matrix workloads; BLAS oversubscription is a large slowdown
        import threadpoolctl

        threadpoolctl.threadpool_limits(1)
    except ImportError:
        pass
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except InvalidArgumentError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        trace = getattr(exc, "trace", None)
        if trace is not None:
            path = Path(os.environ.get("SPARSEDYN_OUTDIR", ".")) / "failure_trace.json"
            try:
                _write_json(path, trace.as_dict())
                print(f"diagnostic trace written to {path}", file=sys.stderr)
            except OSError:
                pass
        return 2


if __name__ == "__main__":
    sys.exit(main())
