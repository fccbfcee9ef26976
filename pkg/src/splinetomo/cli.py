"""``splinetomo`` command line.

Every subcommand writes its outputs under ``--out`` plus a run manifest
``<out>.manifest.json`` (flags, seeds, input/output digests, stage timings,
library version).  Failures exit nonzero with one line
``splinetomo: <category>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("splinetomo")

THREADS_ENV = "SPLINETOMO_THREADS"

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_DIGEST = 4
EXIT_NUMERIC = 5
EXIT_INTERNAL = 1


class UsageError(ValueError):
    pass


# -- manifest -------------------------------------------------------------------------

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stem_files(path) -> list[Path]:
    """The files behind a path argument: itself, or the ``.json``/``.raw`` pair."""
    p = Path(path)
    if p.is_file():
        return [p]
    base = p.with_suffix("") if p.suffix in (".json", ".raw") else p
    return [q for q in (base.with_name(base.name + ".json"), base.with_name(base.name + ".raw"))
            if q.is_file()]


def _digests(paths) -> dict:
    out = {}
    for path in paths:
        p = Path(path)
        files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else _stem_files(p)
        for q in files:
            if not q.name.endswith(".manifest.json"):
                out[str(q)] = file_digest(q)
    return out


class Run:
    """Collects what goes into the manifest of one invocation."""

    def __init__(self, args):
        self.args = args
        self.timings = {}
        self.inputs = []
        self.outputs = []

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        yield
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    def manifest(self) -> dict:
        flags = {k: v for k, v in vars(self.args).items() if k != "func"}
        return {
            "subcommand": self.args.command,
            "flags": flags,
            "seeds": {k: v for k, v in flags.items() if "seed" in k},
            "inputs": _digests(self.inputs),
            "outputs": _digests(self.outputs),
            "timings_s": self.timings,
            "version": __version__,
        }

    def write_manifest(self) -> Path:
        out = Path(self.args.out)
        path = out / "run.manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")
        path.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True, default=str))
        return path


# -- shared helpers ---------------------------------------------------------------------

def _shape(text) -> tuple[int, int, int]:
    try:
        shape = tuple(int(x) for x in str(text).replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}") from None
    if len(shape) != 3 or min(shape) < 1:
        raise argparse.ArgumentTypeError(f"shape needs three positive sizes, got {text!r}")
    return shape


def _int_list(text) -> list[int]:
    try:
        return [int(x) for x in str(text).split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None


def _positive(kind):
    def parse(text):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def _nonneg_float(text):
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def set_threads(n: int | None) -> int:
    import numba

    limit = numba.config.NUMBA_NUM_THREADS
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else limit
    if n < 1:
        raise UsageError("--threads must be >= 1")
    if n > limit:
        log.warning("capping --threads %d at %d (NUMBA_NUM_THREADS)", n, limit)
        n = limit
    numba.set_num_threads(n)
    return n


def _load_net(path):
    from .contribnet import default_net, load_net

    return default_net() if path is None else load_net(path)


def _make_geometry(args, shape):
    from .geometry import cone_pitch, default_cone_distances, make_cone_beam, make_parallel_beam

    if args.geometry_kind == "parallel":
        pitch = args.pitch or 1.02 * max(shape) * 1.5 / max(args.cols, args.rows)
        return make_parallel_beam(args.views, args.rows, args.cols, pitch, rotation_axis=args.axis)
    sd, dd = default_cone_distances(shape)
    sd = args.source_distance or sd
    dd = args.detector_distance or dd
    pitch = args.pitch or cone_pitch(shape, args.axis, sd, dd, args.rows, args.cols)
    extent = tuple(n / 2.0 for n in shape)
    return make_cone_beam(args.views, args.rows, args.cols, sd, dd, pitch,
                          volume_extent=extent, rotation_axis=args.axis)


def _geometry_flags(p, views=72, rows=32, cols=64, axis=3):
    g = p.add_argument_group("scan geometry")
    g.add_argument("--geometry-kind", choices=["cone", "parallel"], default="cone")
    g.add_argument("--views", type=_positive(int), default=views)
    g.add_argument("--rows", type=_positive(int), default=rows, help="detector rows (along the axis)")
    g.add_argument("--cols", type=_positive(int), default=cols)
    g.add_argument("--axis", type=int, choices=[1, 2, 3], default=axis, help="rotation axis")
    g.add_argument("--pitch", type=_positive(float), default=None,
                   help="detector pixel pitch (default: cover the inscribed cylinder)")
    g.add_argument("--source-distance", type=_positive(float), default=None)
    g.add_argument("--detector-distance", type=_positive(float), default=None)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _volume_samples(values, header):
    """Lattice samples of a volume file (coefficients are synthesized)."""
    from .bspline import CoefficientVolume
    from .formats import COEFFICIENTS
    from .recon import sample_volume

    values = np.asarray(values, dtype=np.float64)
    if header.get("value_kind") == COEFFICIENTS:
        return sample_volume(CoefficientVolume(values, header["origin_index"]))
    return values


# -- subcommands -----------------------------------------------------------------------

def cmd_train(args, run):
    from .contribnet import ContribNet, TrainConfig, quality_gate, save_net, train

    cfg = TrainConfig(batch_size=args.batch, learning_rate=args.lr, tolerance=args.epsilon,
                      max_steps=args.max_steps, rng_seed=args.seed, hidden=tuple(args.hidden))
    net = ContribNet.initialize(cfg.hidden, seed=args.seed)

    def progress(step, train_mse, val_mse):
        if step % 5000 == 0:
            log.info("step %d  train mse %.3e  val mse %.3e", step, train_mse, val_mse)

    with run.stage("train"):
        net, report = train(net, cfg, progress=progress)
    with run.stage("gate"):
        rmse, max_err = quality_gate(net)
    net.report = {**net.report, "gate_rmse": rmse, "gate_max_abs_err": max_err}
    save_net(net, args.out)
    run.outputs.append(args.out)
    print(f"steps={report.steps} converged={report.converged} rmse={rmse:.3e} max={max_err:.3e}")


def cmd_phantom(args, run):
    from .formats import COEFFICIENTS, SAMPLES, fit_coefficients, make_phantom, random_phantom, write_volume

    spec = random_phantom(args.kind, args.shape, seed=args.seed)
    samples = make_phantom(spec, args.shape)
    if args.coefficients:
        write_volume(args.out, fit_coefficients(samples), value_kind=COEFFICIENTS)
    else:
        write_volume(args.out, samples, value_kind=SAMPLES)
    spec_path = Path(str(args.out) + ".phantom.json")
    spec_path.write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True))
    run.outputs += [args.out, spec_path]


def cmd_geometry(args, run):
    geo = _make_geometry(args, args.shape)
    geo.to_json(args.out)
    run.outputs.append(args.out)
    print(geo.digest())


def cmd_project(args, run):
    from .bspline import CoefficientVolume
    from .formats import read_volume, write_sinogram
    from .geometry import load_geometry
    from .raytrace import project_all

    geo = load_geometry(args.geometry)
    values, header = read_volume(args.volume)
    vol = CoefficientVolume(values.astype(np.float64), header["origin_index"])
    net = _load_net(args.net) if args.projector == "splinesplat" else None
    with run.stage("project"):
        sino = project_all(vol, geo, net, projector=args.projector)
    write_sinogram(args.out, sino, geo)
    run.inputs += [args.geometry, args.volume]
    run.outputs.append(args.out)


def cmd_backproject(args, run):
    from .formats import COEFFICIENTS, SAMPLES, read_sinogram, write_volume
    from .geometry import load_geometry
    from .raytrace import splinesplat_backproject, voxel_backproject

    geo = load_geometry(args.geometry)
    values, _ = read_sinogram(args.sinogram, geo)
    with run.stage("backproject"):
        if args.projector == "splinesplat":
            vol = splinesplat_backproject(values, geo, _load_net(args.net), vol_shape=args.shape)
        else:
            vol = voxel_backproject(values, geo, args.shape)
    write_volume(args.out, vol, value_kind=COEFFICIENTS if args.projector == "splinesplat" else SAMPLES)
    run.inputs += [args.geometry, args.sinogram]
    run.outputs.append(args.out)


def cmd_simulate(args, run):
    from .bspline import CoefficientVolume
    from .formats import read_volume, write_sinogram
    from .geometry import load_geometry
    from .raytrace import project_all
    from .recon import add_noise

    geo = load_geometry(args.geometry)
    values, header = read_volume(args.volume)
    vol = CoefficientVolume(values.astype(np.float64), header["origin_index"])
    net = _load_net(args.net) if args.projector == "splinesplat" else None
    with run.stage("project"):
        clean = project_all(vol, geo, net, projector=args.projector)
    write_sinogram(args.out, add_noise(clean, args.noise_variance, args.seed), geo)
    run.inputs += [args.geometry, args.volume]
    run.outputs.append(args.out)


def cmd_reconstruct(args, run):
    from .formats import COEFFICIENTS, SAMPLES, read_sinogram, write_volume
    from .geometry import load_geometry
    from .recon import ReconConfig, Sinogram, cgls_solve

    geo = load_geometry(args.geometry)
    values, header = read_sinogram(args.sinogram, geo)
    sino = Sinogram(values, header["geometry_digest"])
    cfg = ReconConfig(iterations=args.iterations, projector=args.projector)
    net = _load_net(args.net) if args.projector == "splinesplat" else None
    with run.stage("reconstruct"):
        result = cgls_solve(geo, sino, cfg, vol_shape=args.shape, net=net)
    kind = COEFFICIENTS if args.projector == "splinesplat" else SAMPLES
    write_volume(args.out, result.volume, value_kind=kind)
    log_path = Path(str(args.out) + ".residuals.csv")
    result.write_log(log_path)
    run.inputs += [args.geometry, args.sinogram]
    run.outputs += [args.out, log_path]


def cmd_psnr(args, run):
    from .formats import read_volume
    from .recon import psnr

    ref = _volume_samples(*read_volume(args.reference))
    test = _volume_samples(*read_volume(args.test))
    value = psnr(ref, test, args.peak)
    Path(args.out).write_text(json.dumps({"psnr_db": value}, indent=2) + "\n")
    run.inputs += [args.reference, args.test]
    run.outputs.append(args.out)
    print(f"{value:.4f}")


def cmd_benchmark(args, run):
    from .bspline import CoefficientVolume
    from .raytrace import neighbor_counts, project_all

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    geo = _make_geometry(args, args.shape)
    rng = np.random.default_rng(args.seed)
    vol = CoefficientVolume(rng.random(args.shape))
    net = _load_net(args.net)
    rows = []
    for name in ("voxel", "splinesplat"):
        project_all(vol, geo, net, projector=name)  # warmup (and compilation)
        times = []
        for _ in range(args.reps):
            t0 = time.perf_counter()
            project_all(vol, geo, net, projector=name)
            times.append(time.perf_counter() - t0)
        med = float(np.median(times))
        rows.append({"projector": name, "rays": geo.num_rays, "reps": args.reps, "median_s": med,
                     "min_s": min(times), "max_s": max(times), "rays_per_second": geo.num_rays / med})
    sample = rng.choice(geo.num_rays, size=min(args.audit_rays, geo.num_rays), replace=False)
    evals, planes, window = neighbor_counts(geo, args.shape, rays=np.sort(sample))
    audit = {"rays": int(len(evals)), "window": window,
             "mean_evaluations": float(evals.mean()), "mean_planes": float(planes.mean()),
             "max_evaluations": int(evals.max()),
             "bound_exceeded": int(np.sum(evals > planes * window)),
             "mean_fill_of_bound": float(np.mean(evals / np.maximum(planes * window, 1)))}
    _write_csv(out / "benchmark.csv", list(rows[0]), [list(r.values()) for r in rows])
    _write_csv(out / "neighbor_counts.csv", ["ray", "evaluations", "planes", "bound"],
               [[int(i), int(e), int(p), int(p * window)] for i, e, p in zip(np.sort(sample), evals, planes)])
    (out / "benchmark.json").write_text(json.dumps({"projectors": rows, "neighbor_audit": audit},
                                                   indent=2))
    if not args.no_figures:
        from . import plotting

        plotting.benchmark_bars(out / "benchmark.png", rows)
    run.outputs.append(out)
    for r in rows:
        print(f"{r['projector']:12s} {r['rays_per_second']:12.0f} rays/s  median {r['median_s']:.3f} s")
    print(f"neighbor evaluations per ray {audit['mean_evaluations']:.1f} "
          f"(bound exceeded on {audit['bound_exceeded']} rays)")


def run_compare(shape, geometry, phantom_kind="smooth_blobs", phantom_seed=0, noise_seeds=(0,),
                noise_variance=1e-3, iterations=50, net=None, inverse_crime=False, timings=None):
    """Reconstruct one phantom with both projectors from the same noisy data.

    Measurements are exact line integrals of the continuous phantom, so neither
    discretization generates its own data.  Returns a summary dict plus the
    arrays needed for figures.  With ``inverse_crime`` an extra noise-free run
    fits spline-generated data with the spline operator.
    """
    from .bspline import CoefficientVolume
    from .contribnet import default_net
    from .formats import fit_coefficients, make_phantom, phantom_line_integrals, random_phantom
    from .raytrace import Projector
    from .recon import add_noise, cgls, psnr, sample_volume

    timings = {} if timings is None else timings

    @contextmanager
    def stage(name):
        t0 = time.perf_counter()
        yield
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0

    net = default_net() if net is None else net
    spec = random_phantom(phantom_kind, shape, seed=phantom_seed)
    reference = make_phantom(spec, shape)
    with stage("measure"):
        clean = phantom_line_integrals(spec, geometry)
    with stage("assemble"):
        ops = {"splinesplat": Projector(geometry, shape, projector="splinesplat", net=net),
               "voxel": Projector(geometry, shape, projector="voxel")}
    runs = []
    for seed in noise_seeds:
        y = add_noise(clean, noise_variance, seed)
        entry = {"seed": int(seed)}
        for name, op in ops.items():
            with stage(f"cgls_{name}"):
                x, rows = cgls(op, y, iterations)
            x = x.reshape(shape)
            image = sample_volume(CoefficientVolume(x)) if name == "splinesplat" else x
            entry[name] = {"psnr_db": psnr(reference, image), "log": rows, "image": image}
        entry["gap_db"] = entry["splinesplat"]["psnr_db"] - entry["voxel"]["psnr_db"]
        runs.append(entry)
    summary = {"shape": list(shape), "geometry_digest": geometry.digest(),
               "phantom": spec.to_dict(), "noise_variance": noise_variance,
               "iterations": iterations, "reference": reference, "runs": runs}
    if inverse_crime:
        coeffs = fit_coefficients(reference)
        y = ops["splinesplat"].forward(coeffs.flat)
        with stage("cgls_inverse_crime"):
            x, rows = cgls(ops["splinesplat"], y, iterations)
        image = sample_volume(CoefficientVolume(x.reshape(shape)))
        summary["inverse_crime"] = {"psnr_db": psnr(reference, image),
                                    "coeff_psnr_db": psnr(coeffs.coeffs, x.reshape(shape),
                                                          peak=float(np.abs(coeffs.coeffs).max())),
                                    "log": rows}
    return summary


def cmd_compare(args, run):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net = _load_net(args.net)
    geo = _make_geometry(args, args.shape)
    geo.to_json(out / "geometry.json")
    summary = run_compare(args.shape, geo, args.kind, args.phantom_seed, args.seeds,
                          args.noise_variance, args.iterations, net, args.inverse_crime,
                          timings=run.timings)
    table = []
    for r in summary["runs"]:
        table.append([r["seed"], r["splinesplat"]["psnr_db"], r["voxel"]["psnr_db"], r["gap_db"]])
        for name in ("splinesplat", "voxel"):
            _write_csv(out / f"residuals_{name}_seed{r['seed']}.csv",
                       ["iteration", "objective", "normal_residual"], r[name]["log"])
            z = r[name]["image"].shape[2] // 2
            np.savetxt(out / f"slice_{name}_seed{r['seed']}.csv", r[name]["image"][:, :, z],
                       delimiter=",", fmt="%.9e")
    z = summary["reference"].shape[2] // 2
    np.savetxt(out / "slice_reference.csv", summary["reference"][:, :, z], delimiter=",", fmt="%.9e")
    _write_csv(out / "summary.csv", ["seed", "psnr_spline_db", "psnr_voxel_db", "gap_db"], table)
    doc = {k: v for k, v in summary.items() if k not in ("reference", "runs", "inverse_crime")}
    doc["runs"] = [{"seed": r[0], "psnr_spline_db": r[1], "psnr_voxel_db": r[2], "gap_db": r[3]}
                   for r in table]
    gaps = [r[3] for r in table]
    doc["gap_db_mean"] = float(np.mean(gaps))
    doc["gap_db_min"] = float(np.min(gaps))
    if "inverse_crime" in summary:
        doc["inverse_crime"] = {k: v for k, v in summary["inverse_crime"].items() if k != "log"}
        _write_csv(out / "residuals_inverse_crime.csv", ["iteration", "objective", "normal_residual"],
                   summary["inverse_crime"]["log"])
    (out / "summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if not args.no_figures:
        from . import plotting

        first = summary["runs"][0]
        plotting.slice_panels(out / "slices.png", summary["reference"], first["splinesplat"]["image"],
                              first["voxel"]["image"],
                              (first["splinesplat"]["psnr_db"], first["voxel"]["psnr_db"]))
        plotting.convergence(out / "convergence.png", {"spline": first["splinesplat"]["log"],
                                                       "voxel": first["voxel"]["log"]})
        plotting.psnr_bars(out / "psnr.png", [r[0] for r in table], [r[1] for r in table],
                           [r[2] for r in table])
    run.outputs.append(out)
    for seed, ps, pv, gap in table:
        print(f"seed {seed}: spline {ps:.2f} dB  voxel {pv:.2f} dB  gap {gap:+.2f} dB")
    if "inverse_crime" in doc:
        print(f"inverse crime (noise-free spline data): {doc['inverse_crime']['psnr_db']:.2f} dB")


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splinetomo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or all)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("train-contribution-net", cmd_train, "fit the contribution regressor")
    sp.add_argument("--epsilon", type=_positive(float), default=1e-7, help="validation MSE target")
    sp.add_argument("--batch", type=_positive(int), default=4096)
    sp.add_argument("--lr", type=_positive(float), default=2e-3)
    sp.add_argument("--hidden", type=_int_list, default=[128, 32],
                    help="hidden layer widths (default matches the shipped net)")
    sp.add_argument("--max-steps", type=int, default=200_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("phantom", cmd_phantom, "write a synthetic phantom volume")
    sp.add_argument("--kind", choices=["ellipsoid_set", "smooth_blobs"], default="smooth_blobs")
    sp.add_argument("--shape", type=_shape, default=(64, 64, 32))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--coefficients", action="store_true",
                    help="store interpolating spline coefficients instead of samples")
    sp.add_argument("--out", required=True)

    sp = add("geometry", cmd_geometry, "write a scan geometry descriptor")
    sp.add_argument("--shape", type=_shape, default=(64, 64, 32), help="volume box the scan covers")
    _geometry_flags(sp)
    sp.add_argument("--out", required=True)

    for name, func, help_ in (("project", cmd_project, "forward-project a volume"),
                              ("simulate", cmd_simulate, "forward-project and add Gaussian noise")):
        sp = add(name, func, help_)
        sp.add_argument("--volume", required=True)
        sp.add_argument("--geometry", required=True)
        sp.add_argument("--projector", choices=["splinesplat", "voxel"], default="splinesplat")
        sp.add_argument("--net", default=None, help="contribution net file (default: shipped)")
        if name == "simulate":
            sp.add_argument("--noise-variance", type=_nonneg_float, default=1e-3)
            sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True)

    sp = add("backproject", cmd_backproject, "apply the matched adjoint")
    sp.add_argument("--sinogram", required=True)
    sp.add_argument("--geometry", required=True)
    sp.add_argument("--shape", type=_shape, required=True)
    sp.add_argument("--projector", choices=["splinesplat", "voxel"], default="splinesplat")
    sp.add_argument("--net", default=None)
    sp.add_argument("--out", required=True)

    sp = add("reconstruct", cmd_reconstruct, "CGLS reconstruction")
    sp.add_argument("--sinogram", required=True)
    sp.add_argument("--geometry", required=True)
    sp.add_argument("--shape", type=_shape, required=True)
    sp.add_argument("--projector", choices=["splinesplat", "voxel"], default="splinesplat")
    sp.add_argument("--iterations", type=_positive(int), default=50)
    sp.add_argument("--net", default=None)
    sp.add_argument("--out", required=True)

    sp = add("psnr", cmd_psnr, "PSNR of a volume against a reference")
    sp.add_argument("--reference", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--peak", type=_positive(float), default=None)
    sp.add_argument("--out", required=True)

    sp = add("benchmark", cmd_benchmark, "time both projectors over the same rays")
    sp.add_argument("--shape", type=_shape, default=(64, 64, 32))
    _geometry_flags(sp, views=18)
    sp.add_argument("--reps", type=int, default=5)
    sp.add_argument("--audit-rays", type=_positive(int), default=2000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--net", default=None)
    sp.add_argument("--no-figures", action="store_true")
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("compare", cmd_compare, "spline vs voxel reconstruction of one phantom")
    sp.add_argument("--shape", type=_shape, default=(64, 64, 32))
    sp.add_argument("--kind", choices=["ellipsoid_set", "smooth_blobs"], default="smooth_blobs")
    sp.add_argument("--phantom-seed", type=int, default=0)
    _geometry_flags(sp)
    sp.add_argument("--noise-variance", type=_nonneg_float, default=1e-3)
    sp.add_argument("--seeds", type=_int_list, default=[0], help="noise seeds, comma separated")
    sp.add_argument("--iterations", type=_positive(int), default=50)
    sp.add_argument("--inverse-crime", action="store_true",
                    help="also fit noise-free spline-generated data (consistency check)")
    sp.add_argument("--net", default=None)
    sp.add_argument("--no-figures", action="store_true")
    sp.add_argument("--out", required=True, help="output directory")
    return p


def _category(exc) -> tuple[int, str]:
    from .contribnet import NetConfigError, TrainingError
    from .formats import DigestMismatchError, FormatError
    from .geometry import GeometryError
    from .raytrace import ShapeMismatchError
    from .recon import ReconError

    if isinstance(exc, DigestMismatchError):
        return EXIT_DIGEST, "digest-mismatch"
    if isinstance(exc, (FormatError, NetConfigError, OSError)):
        return EXIT_INPUT, "input"
    if isinstance(exc, (UsageError, GeometryError, ShapeMismatchError, ValueError)):
        return EXIT_USAGE, "invalid-argument"
    if isinstance(exc, (ReconError, TrainingError, FloatingPointError)):
        return EXIT_NUMERIC, "numerical"
    return EXIT_INTERNAL, "internal"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = Run(args)
    try:
        args.threads = set_threads(args.threads)
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with run.stage("total"):
            args.func(args, run)
        run.write_manifest()
    except Exception as exc:  # noqa: BLE001 - mapped to an exit category
        code, category = _category(exc)
        print(f"splinetomo: {category}: {exc}", file=sys.stderr)
        if args.verbose:
            log.exception("traceback")
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
