"""Experiment runner.

Subcommands: sample | distill | landscape | metrics | efficiency.

Configuration is a flat file of dotted keys (``key = value`` lines, ``#``
comments) merged over built-in defaults; ``--set key=value`` flags win over
the file.  Every run writes the artifacts plus a ``manifest.json`` recording
the canonical config, its hash, input file hashes, package versions, and
output file hashes, so a rerun can be checked byte-for-byte.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 missing file.
The output directory is taken from --out, else $MODESEEK_OUT, else ./out.
"""

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .analysis import (efficiency, landscape, find_local_maxima, mmd,
                       mixture_modes, nll, precision_recall)
from .denoise import (GuidanceConfig, IdealDenoiser, MixtureDenoiser,
                      load_weights, make_autoguidance_reference)
from .distill import (BandwidthSchedule, OptConfig, distill_run, msd_gradient,
                      msd_exact_gradient, sds_gradient, sdi_gradient)
from .mixtures import (build_fractal, build_pinwheel, build_spiral,
                       dataset_from_csv, dataset_to_csv, sample, smoothed,
                       score, density)
from .ppm import write_ppm
from .sampling import (DivergedInversionError, IntegratorInstabilityError,
                       KernelGuide, ddim_sample, product_sample_naive,
                       product_sample_stable)
from .schedule import make_schedule

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_MISSING = 4

FLOAT_FMT = "%.17g"

DEFAULTS = {
    "seed": "0",
    "dataset.kind": "spiral",          # spiral | pinwheel | fractal
    "dataset.n": "10000",
    "dataset.seed": "0",
    "denoiser": "ideal",               # ideal | analytic | learned:<path>
    "guidance.mode": "none",           # none | cfg | autoguidance
    "guidance.scale": "4.0",
    "class": "",                       # empty = unconditional
    "schedule.kind": "variance_exploding",
    "schedule.steps": "32",
    "schedule.sigma_min": "0.002",
    "schedule.sigma_max": "2.0",
    "method": "msd",                   # distill: sds | sdi | msd; sample: ddim | msd
    "method.sampler": "stable",        # naive | stable | exact (msd only)
    "method.inversion_anchor": "false",
    "method.active_interval": "default",  # default | full | "lo,hi"
    "opt.steps": "150",
    "opt.lr": "0.08",
    "opt.n_mc": "1",
    "bandwidth.lambda0": "0.316",
    "bandwidth.lambda_min": "0.01",
    "bandwidth.steps": "150",
    "bandwidth.mode": "linear",
    "lambda": "0.316",                 # fixed bandwidth (sample/landscape/efficiency)
    "grid.extent": "1.5",
    "grid.resolution": "64",
    "init.resolution": "64",           # distill init grid
    "sample.count": "1000",
    "metrics.generated": "",           # CSV of generated points
    "metrics.knn_k": "5",
    "efficiency.probes": "16",
    "efficiency.trials": "30",
    "efficiency.datasets": "spiral,fractal",
    "efficiency.methods": "sds,msd",
}


class ConfigError(Exception):
    pass


def parse_config_text(text, path="<config>"):
    """Parse 'key = value' lines; blank lines and # comments ignored."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"{path}:{ln}: empty key")
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{ln}: unknown config key {key!r}")
        out[key] = value
    return out


def canonical_config(cfg) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def _get_float(cfg, key):
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigError(f"config key {key}: not a number: {cfg[key]!r}")


def _get_int(cfg, key):
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(f"config key {key}: not an integer: {cfg[key]!r}")


def _get_bool(cfg, key):
    v = cfg[key].lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ConfigError(f"config key {key}: not a boolean: {cfg[key]!r}")


def build_mixture(cfg):
    kind = cfg["dataset.kind"]
    if kind == "spiral":
        return build_spiral()
    if kind == "pinwheel":
        return build_pinwheel()
    if kind == "fractal":
        return build_fractal()
    raise ConfigError(f"unknown dataset.kind {kind!r}")


def build_experiment(cfg):
    """Instantiate (mixture, dataset, denoiser, guidance, schedule) from config."""
    gmm = build_mixture(cfg)
    n = _get_int(cfg, "dataset.n")
    if n < 1:
        raise ConfigError("dataset.n must be >= 1")
    ds = sample(gmm, n, seed=_get_int(cfg, "dataset.seed"))

    spec = cfg["denoiser"]
    if spec == "ideal":
        den = IdealDenoiser(ds)
    elif spec == "analytic":
        den = MixtureDenoiser(gmm)
    elif spec.startswith("learned:"):
        path = spec.split(":", 1)[1]
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        den = load_weights(path)
    else:
        raise ConfigError(f"unknown denoiser spec {spec!r}")

    mode = cfg["guidance.mode"]
    ref = None
    if mode == "autoguidance":
        ref = make_autoguidance_reference(ds, seed=_get_int(cfg, "dataset.seed"))
    guidance = GuidanceConfig(mode=mode, scale=_get_float(cfg, "guidance.scale"),
                              reference=ref)

    steps = _get_int(cfg, "schedule.steps")
    schedule = make_schedule(cfg["schedule.kind"], steps,
                             _get_float(cfg, "schedule.sigma_min"),
                             _get_float(cfg, "schedule.sigma_max"))
    return gmm, ds, den, guidance, schedule


def _class_of(cfg):
    return None if cfg["class"] == "" else int(cfg["class"])


def _active_interval(cfg, num_steps):
    spec = cfg["method.active_interval"]
    if spec == "default":
        return None
    if spec == "full":
        return (0, num_steps - 1)
    try:
        lo, hi = (int(v) for v in spec.split(","))
    except ValueError:
        raise ConfigError(f"method.active_interval: expected 'default', 'full' "
                          f"or 'lo,hi', got {spec!r}")
    return (lo, hi)


def _grid_points(extent, resolution):
    xs = np.linspace(-extent, extent, resolution)
    gx, gy = np.meshgrid(xs, xs)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def write_csv(path, header, rows):
    """Write rows of floats (or strings) with full-precision float formatting."""
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(v if isinstance(v, str) else FLOAT_FMT % v
                             for v in row) + "\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(outdir, cfg, command, inputs, outputs):
    canon = canonical_config(cfg)
    manifest = {
        "command": command,
        "config": canon,
        "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
        "seed": int(cfg["seed"]),
        "versions": {
            "modeseek": __version__,
            "numpy": np.__version__,
        },
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": {os.path.basename(p): _sha256(p) for p in outputs},
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _histogram_ppm(path, points, extent, resolution=128):
    hist, _, _ = np.histogram2d(points[:, 1], points[:, 0], bins=resolution,
                                range=[[-extent, extent], [-extent, extent]])
    write_ppm(path, np.log1p(hist))


def _chunked(n, n_chunks):
    bounds = np.linspace(0, n, n_chunks + 1).astype(int)
    return [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _parallel_rows(fn, n_rows, threads):
    """Evaluate fn(lo, hi) -> array over row chunks, in order; results do not
    depend on the chunking because all randomness is keyed per row."""
    if threads <= 1:
        return fn(0, n_rows)
    chunks = _chunked(n_rows, threads * 4)
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda c: fn(*c), chunks))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# subcommands


def run_sample(cfg, outdir, threads):
    gmm, ds, den, guidance, schedule = build_experiment(cfg)
    cls = _class_of(cfg)
    count = _get_int(cfg, "sample.count")
    method = cfg["method"]
    seed = _get_int(cfg, "seed")
    if method == "ddim":
        pts, cost = ddim_sample(den, guidance, schedule,
                                np.random.default_rng(seed), cls,
                                n_samples=count)
    elif method == "msd":
        lam = _get_float(cfg, "lambda")
        guide = KernelGuide(anchor=np.zeros(2), lam=lam,
                            active_interval=_active_interval(cfg, schedule.num_steps))
        sampler = (product_sample_stable if cfg["method.sampler"] == "stable"
                   else product_sample_naive)
        pts, cost = sampler(den, guidance, schedule, guide,
                            np.random.default_rng(seed), cls, n_samples=count)
    else:
        raise ConfigError(f"sample: unknown method {method!r} (ddim | msd)")
    extent = _get_float(cfg, "grid.extent")
    csv_path = os.path.join(outdir, "samples.csv")
    write_csv(csv_path, ["x", "y"], pts)
    ppm_path = os.path.join(outdir, "samples.ppm")
    _histogram_ppm(ppm_path, pts, extent)
    return [csv_path, ppm_path]


def _opt_config(cfg, schedule):
    bw = BandwidthSchedule(lambda0=_get_float(cfg, "bandwidth.lambda0"),
                           lambda_min=_get_float(cfg, "bandwidth.lambda_min"),
                           total_steps=_get_int(cfg, "bandwidth.steps"),
                           mode=cfg["bandwidth.mode"])
    return OptConfig(steps=_get_int(cfg, "opt.steps"),
                     lr=_get_float(cfg, "opt.lr"),
                     n_mc=_get_int(cfg, "opt.n_mc"),
                     bandwidth=bw,
                     stable=cfg["method.sampler"] == "stable",
                     inversion_anchor=_get_bool(cfg, "method.inversion_anchor"),
                     active_interval=_active_interval(cfg, schedule.num_steps))


def run_distill(cfg, outdir, threads):
    gmm, ds, den, guidance, schedule = build_experiment(cfg)
    cls = _class_of(cfg)
    method = cfg["method"]
    if method not in ("sds", "sdi", "msd"):
        raise ConfigError(f"distill: unknown method {method!r} (sds | sdi | msd)")
    res_init = _get_int(cfg, "init.resolution")
    if res_init < 1:
        raise ConfigError("init.resolution must be >= 1")
    extent = _get_float(cfg, "grid.extent")
    init = _grid_points(extent, res_init)
    opt = _opt_config(cfg, schedule)
    seed = _get_int(cfg, "seed")

    def run_rows(lo, hi):
        return distill_run(method, den, guidance, schedule, init[lo:hi],
                           opt, seed, cls).theta

    theta = _parallel_rows(run_rows, len(init), threads)
    # the summary trace comes from a canonical single-chunk run of one point
    trace = distill_run(method, den, guidance, schedule, init[:1], opt, seed, cls)
    final_path = os.path.join(outdir, "final_points.csv")
    write_csv(final_path, ["x", "y"], theta)
    trace_path = os.path.join(outdir, "trace.csv")
    write_csv(trace_path, ["iter", "x", "y", "grad_norm", "lambda", "cum_cost"],
              [(float(i), trace.trace_theta[i, 0, 0], trace.trace_theta[i, 0, 1],
                trace.trace_grad_norm[i, 0], trace.trace_lambda[i],
                float(trace.trace_cost[i]))
               for i in range(trace.iterations)])
    ppm_path = os.path.join(outdir, "final_points.ppm")
    _histogram_ppm(ppm_path, theta, extent)
    return [final_path, trace_path, ppm_path]


def run_landscape(cfg, outdir, threads):
    gmm, ds, den, guidance, schedule = build_experiment(cfg)
    cls = _class_of(cfg)
    method = cfg["method"]
    lam = _get_float(cfg, "lambda")
    extent = _get_float(cfg, "grid.extent")
    res = _get_int(cfg, "grid.resolution")
    if res < 2:
        raise ConfigError("grid.resolution must be >= 2")
    n_mc = _get_int(cfg, "opt.n_mc")
    interval = _active_interval(cfg, schedule.num_steps)
    stable = cfg["method.sampler"] == "stable"
    inv_anchor = _get_bool(cfg, "method.inversion_anchor")
    seed = _get_int(cfg, "seed")

    def field_fn(points, field_seed):
        def rows(lo, hi):
            pts = points[lo:hi]
            rng = np.random.default_rng(np.random.SeedSequence((field_seed, lo)))
            if method == "msd":
                if cfg["method.sampler"] == "exact":
                    return msd_exact_gradient(den, pts, lam, cls).grad
                guide = KernelGuide(anchor=pts, lam=lam, active_interval=interval)
                return msd_gradient(den, guidance, schedule, guide, n_mc, rng,
                                    cls, stable=stable,
                                    inversion_anchor=inv_anchor).grad
            if method == "sds":
                return -sds_gradient(den, guidance, schedule, pts, n_mc, rng, cls).grad
            if method == "sdi":
                return -sdi_gradient(den, guidance, schedule, pts, n_mc, rng, cls).grad
            raise ConfigError(f"landscape: unknown method {method!r}")
        return _parallel_rows(rows, len(points), threads)

    grid = landscape(field_fn, extent=(-extent, extent, -extent, extent),
                     resolution=(res, res), seed=seed)
    maxima = find_local_maxima(grid)
    xs, ys = grid.cell_centers()
    rows = []
    for i in range(res):
        for j in range(res):
            rows.append((xs[j], ys[i], grid.grad_field[i, j, 0],
                         grid.grad_field[i, j, 1], grid.potential[i, j]))
    grid_path = os.path.join(outdir, "grid.csv")
    write_csv(grid_path, ["x", "y", "gx", "gy", "potential"], rows)
    max_path = os.path.join(outdir, "maxima.csv")
    write_csv(max_path, ["x", "y"], maxima)
    ppm_path = os.path.join(outdir, "potential.ppm")
    write_ppm(ppm_path, grid.potential)
    res_path = os.path.join(outdir, "residual.csv")
    write_csv(res_path, ["rms_residual"], [(grid.residual,)])
    return [grid_path, max_path, ppm_path, res_path]


def run_metrics(cfg, outdir, threads):
    gmm, ds, den, guidance, schedule = build_experiment(cfg)
    cls = _class_of(cfg)
    gen_path = cfg["metrics.generated"]
    if not gen_path:
        raise ConfigError("metrics.generated: path to a generated-points CSV required")
    if not os.path.exists(gen_path):
        raise FileNotFoundError(gen_path)
    gen, _ = dataset_from_csv(gen_path)
    ref = ds.points if cls is None else ds.points[ds.labels == cls]
    k = _get_int(cfg, "metrics.knn_k")
    p, r = precision_recall(gen, ref, k=k)
    report = (nll(gen, gmm, cls), mmd(gen, ref), p, r)
    table = os.path.join(outdir, "metrics.csv")
    new = not os.path.exists(table)
    with open(table, "a") as f:
        if new:
            f.write("method,dataset,nll,mmd,precision,recall\n")
        f.write(",".join([cfg["method"], cfg["dataset.kind"]]
                         + [FLOAT_FMT % v for v in report]) + "\n")
    return [table]


def run_efficiency(cfg, outdir, threads):
    seed = _get_int(cfg, "seed")
    trials = _get_int(cfg, "efficiency.trials")
    n_probes = _get_int(cfg, "efficiency.probes")
    lam = _get_float(cfg, "lambda")
    extent = _get_float(cfg, "grid.extent")
    methods = [m.strip() for m in cfg["efficiency.methods"].split(",") if m.strip()]
    names = [d.strip() for d in cfg["efficiency.datasets"].split(",") if d.strip()]
    rows = []
    out_rows = []
    for name in names:
        sub = dict(cfg)
        sub["dataset.kind"] = name
        gmm, ds, den, guidance, schedule = build_experiment(sub)
        cls = _class_of(cfg)
        sm = smoothed(gmm, lam)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 17)))
        cand = rng.uniform(-extent, extent, size=(50 * n_probes, 2))
        gmag = np.linalg.norm(score(sm, cand), axis=1) * density(sm, cand, cls)
        probes = cand[gmag > 1e-3 * gmag.max()][:n_probes]

        def ref_grad(x):
            # classical mean-shift expectation at matched bandwidth
            return den.denoise(x, lam / np.sqrt(2.0), cls) - x

        n_mc = _get_int(cfg, "opt.n_mc")
        for method in methods:
            if method == "msd":
                def est(x, s):
                    return msd_exact_gradient(den, x, lam, cls)
            elif method == "sds":
                def est(x, s):
                    g = sds_gradient(den, guidance, schedule, x, n_mc, s, cls)
                    return g.__class__(grad=-g.grad, cost=g.cost,
                                       mc_samples=g.mc_samples)
            elif method == "sdi":
                def est(x, s):
                    g = sdi_gradient(den, guidance, schedule, x, n_mc, s, cls)
                    return g.__class__(grad=-g.grad, cost=g.cost,
                                       mc_samples=g.mc_samples)
            else:
                raise ConfigError(f"efficiency: unknown method {method!r}")
            val = efficiency(est, probes, ref_grad, trials=trials, seed=seed)
            out_rows.append((method, name, val))
    table = os.path.join(outdir, "efficiency.csv")
    write_csv(table, ["method", "dataset", "log10_efficiency"],
              [(m, d, v) for m, d, v in out_rows])
    return [table]


COMMANDS = {
    "sample": run_sample,
    "distill": run_distill,
    "landscape": run_landscape,
    "metrics": run_metrics,
    "efficiency": run_efficiency,
}


def load_config(args):
    cfg = dict(DEFAULTS)
    if args.config:
        if not os.path.exists(args.config):
            raise FileNotFoundError(args.config)
        with open(args.config) as f:
            cfg.update(parse_config_text(f.read(), args.config))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"--set: unknown config key {key!r}")
        cfg[key] = value.strip()
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="modeseek",
                                     description="Diffusion mode-seeking experiments on 2D toy densities")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="config file of dotted keys")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable; wins over --config)")
    parser.add_argument("--out", help="output directory (default $MODESEEK_OUT or ./out)")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads; 1 is the canonical byte-exact mode")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args)
        outdir = args.out or os.environ.get("MODESEEK_OUT") or "out"
        os.makedirs(outdir, exist_ok=True)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        inputs = []
        if args.config:
            inputs.append(args.config)
        if cfg["denoiser"].startswith("learned:"):
            path = cfg["denoiser"].split(":", 1)[1]
            if not os.path.exists(path):
                raise FileNotFoundError(path)
            inputs.append(path)
        if cfg["metrics.generated"] and args.command == "metrics":
            inputs.append(cfg["metrics.generated"])
        outputs = COMMANDS[args.command](cfg, outdir, args.threads)
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (IntegratorInstabilityError, DivergedInversionError,
            FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    write_manifest(outdir, cfg, args.command, inputs, outputs)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
