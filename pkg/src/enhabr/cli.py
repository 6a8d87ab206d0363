"""Command-line entry point: ``enhabr <command> ...``.

Exit codes: 0 success, 1 domain or I/O error, 2 usage error.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from enhabr import abr
from enhabr import quality as q
from enhabr.errors import ConfigError, EnhabrError, MissingPrereq
from enhabr.fec.loss import (DEFAULT_BURST_LENGTH, DEFAULT_LOSS_IN_BAD, DEFAULT_RATIO_GRID,
                             BERNOULLI, GILBERT_ELLIOTT, LossModel, frame_loss_probability)
from enhabr.fecplan import DEFAULT_LOSS_GRID, FecPlan, build_table
from enhabr.simulator import SCHEMES, SimConfig, run_matrix, scheme_config
from enhabr.synthetic import SUITE_KINDS, synthetic_suite
from enhabr.traces import load_trace, load_trace_dir, save_trace, with_loss

log = logging.getLogger("enhabr")

OUTPUT_ENV = "ENHABR_OUTPUT_DIR"
DEFAULT_OUTPUT = "enhabr-out"
FIG_LOSSES = (0.01, 0.03, 0.05)


def atomic_write(path, text):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def default_output_dir():
    return Path(os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


# -- experiment config -------------------------------------------------------

# Override key -> how it lands on SimConfig.
_SIM_KEYS = ("n_chunks", "buffer_cap", "packet_size", "predictor", "robust_window")
_QOE_KEYS = ("mu", "smoothness_weight", "use_effective_bitrate")
_COST_KEYS = ("t_sr", "t_rc", "include_decode")
_POLICY_KEYS = ("lookahead_chunks", "reservoir", "cushion")
_LOSS_KEYS = ("loss_model", "burst_length", "loss_in_bad")
OVERRIDE_KEYS = _SIM_KEYS + _QOE_KEYS + _COST_KEYS + _POLICY_KEYS + _LOSS_KEYS

_PATH_KEYS = ("trace_dir", "quality_model", "fec_plan", "output_dir")
_SYNTH_KEYS = ("per_kind", "seed")


@dataclass
class ExperimentConfig:
    trace_dir: Path = None          # None: the seeded synthetic suite
    quality_model: Path = None      # None: shipped calibration
    fec_plan: Path = None
    output_dir: Path = None         # None: $ENHABR_OUTPUT_DIR or ./enhabr-out
    schemes: list = field(default_factory=lambda: ["plain", "enh_aware"])
    seed: int = 0
    loss_rate: float = None         # constant loss replacing the traces' own
    baseline: str = None
    synthetic: dict = field(default_factory=lambda: {"per_kind": 3, "seed": 2024})
    overrides: dict = field(default_factory=dict)


def _strict(mapping, allowed, where):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in {where}")


def parse_experiment(doc, base_dir=Path(".")):
    if doc is None:
        doc = {}
    top = [f.name for f in fields(ExperimentConfig) if f.name not in _PATH_KEYS] + ["paths"]
    _strict(doc, top, "config")
    paths = doc.get("paths") or {}
    _strict(paths, _PATH_KEYS, "paths")
    synthetic = {"per_kind": 3, "seed": 2024, **(doc.get("synthetic") or {})}
    _strict(synthetic, _SYNTH_KEYS, "synthetic")
    overrides = doc.get("overrides") or {}
    _strict(overrides, OVERRIDE_KEYS, "overrides")

    schemes = doc.get("schemes", ["plain", "enh_aware"])
    if isinstance(schemes, str):
        schemes = [schemes]
    if not schemes:
        raise ConfigError("schemes must list at least one scheme")
    for s in schemes:
        if s not in SCHEMES:
            raise ConfigError(f"unknown scheme {s!r}; known: {sorted(SCHEMES)}")
    baseline = doc.get("baseline")
    if baseline is not None and baseline not in schemes:
        raise ConfigError(f"baseline {baseline!r} is not among the schemes")
    resolved = {k: (base_dir / v if v is not None else None)
                for k, v in ((k, paths.get(k)) for k in _PATH_KEYS)}
    return ExperimentConfig(
        schemes=list(schemes),
        seed=_seed(str(doc.get("seed", 0))),
        loss_rate=doc.get("loss_rate"),
        baseline=baseline,
        synthetic=synthetic,
        overrides=dict(overrides),
        **resolved,
    )


def load_experiment(path):
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return parse_experiment(doc, path.parent)


def base_sim_config(exp):
    o = exp.overrides
    quality = q.QualityModel.load(exp.quality_model) if exp.quality_model else q.QualityModel.default()
    qoe = abr.QoEConfig(**{k: o[k] for k in _QOE_KEYS if k in o})
    cost = q.EnhancementCost(**{k: o[k] for k in _COST_KEYS if k in o})
    policy = abr.AbrPolicy(lookahead_chunks=2)
    policy = replace(policy, **{k: o[k] for k in _POLICY_KEYS if k in o})
    kind = o.get("loss_model", GILBERT_ELLIOTT)
    if kind == GILBERT_ELLIOTT:
        loss = LossModel.gilbert_elliott(0.0, o.get("burst_length", DEFAULT_BURST_LENGTH),
                                         o.get("loss_in_bad", DEFAULT_LOSS_IN_BAD))
    elif kind == BERNOULLI:
        loss = LossModel.bernoulli(0.0)
    else:
        raise ConfigError(f"unknown loss_model {kind!r}")
    plan = FecPlan.load(exp.fec_plan) if exp.fec_plan else None
    return SimConfig(quality=quality, qoe=qoe, cost=cost, policy=policy, loss_model=loss,
                     fec_plan=plan, seed=exp.seed,
                     **{k: o[k] for k in _SIM_KEYS if k in o})


def experiment_traces(exp):
    if exp.trace_dir is not None:
        if not exp.trace_dir.is_dir():
            raise ConfigError(f"trace_dir {exp.trace_dir} is not a directory")
        traces = load_trace_dir(exp.trace_dir)
        if not traces:
            raise ConfigError(f"no .csv or .json traces in {exp.trace_dir}")
    else:
        traces = synthetic_suite(per_kind=int(exp.synthetic["per_kind"]),
                                 seed=int(exp.synthetic["seed"]))
    if exp.loss_rate is not None:
        traces = [with_loss(t, float(exp.loss_rate)) for t in traces]
    return sorted(traces, key=lambda t: t.id)


# -- commands ----------------------------------------------------------------

def cmd_trace_validate(args):
    bad = 0
    for p in args.paths:
        try:
            t = load_trace(p)
        except (EnhabrError, OSError) as exc:
            print(f"FAIL {p}: {exc}")
            bad += 1
            continue
        print(f"ok   {p}: id={t.id} kind={t.network_kind} samples={len(t.samples)} "
              f"duration={t.duration:g}s mean={t.mean_throughput:.1f}kbps loss={t.mean_loss:.4f}")
    return 1 if bad else 0


def cmd_trace_synth(args):
    out = Path(args.out)
    kinds = args.kinds or list(SUITE_KINDS)
    traces = synthetic_suite(per_kind=args.per_kind, seed=args.seed, kinds=tuple(kinds),
                             downscale=not args.raw)
    out.mkdir(parents=True, exist_ok=True)
    for t in traces:
        tmp = out / f".{t.id}.tmp"
        save_trace(t, tmp, format="csv")
        os.replace(tmp, out / f"{t.id}.csv")
    print(f"wrote {len(traces)} traces to {out}")
    return 0


def fec_sweep_rows(losses, packets, grid, model_kind, method, trials, seed):
    rows = []
    for p in losses:
        if model_kind == GILBERT_ELLIOTT:
            model = LossModel.gilbert_elliott(p)
        else:
            model = LossModel.bernoulli(p)
        for ratio in grid:
            rows.append((p, ratio, frame_loss_probability(packets, ratio, model, method=method,
                                                          trials=trials, seed=seed)))
    return rows


def cmd_fec_sweep(args):
    if args.method == "analytic" and args.model != BERNOULLI:
        raise ConfigError("--method analytic only supports --model bernoulli")
    rows = fec_sweep_rows(args.loss, args.packets, args.grid, args.model, args.method,
                          args.trials, args.seed)
    _emit(_csv_text(("p_loss", "ratio", "frame_loss_prob"), rows), args.out)
    return 0


def cmd_fecplan_build(args):
    if args.traces:
        traces = load_trace_dir(args.traces)
        if not traces:
            raise ConfigError(f"no traces in {args.traces}")
    else:
        traces = synthetic_suite(per_kind=args.per_kind, seed=args.trace_seed)
    base = SimConfig(policy=abr.AbrPolicy(lookahead_chunks=2), n_chunks=args.n_chunks)
    # The plan is swept for the scheme's non-FEC twin with FEC forced on.
    name = args.scheme[:-4] if args.scheme.endswith("_fec") else args.scheme
    cfg = scheme_config(name, base)
    if Path(args.out).exists() and not args.force:
        raise ConfigError(f"{args.out} exists; pass --force to overwrite")
    plan = build_table(traces, cfg, loss_grid=args.loss_grid, ratio_grid=args.ratio_grid,
                       seed=args.seed, jobs=args.jobs, scheme=args.scheme)
    atomic_write(args.out, json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote FEC plan for {args.scheme} to {args.out}")
    return 0


def _summary_text(exp, result, baseline):
    lines = [f"seed {exp.seed}; {len(result.rows)} sessions; baseline {baseline}"]
    for row in result.aggregate(baseline):
        imp = row[f"improvement_vs_{baseline}"]
        lines.append(f"{row['network']:<10} {row['scheme']:<14} qoe {row['qoe']:10.2f}  "
                     f"bitrate {row['mean_bitrate']:8.1f}  rebuffer {row['rebuffer_s']:7.3f}s  "
                     f"recovered {row['recovered_frac']:.4f}  vs {baseline} {imp:+.2%}")
    means = result.scheme_means()
    lines.append("overall: " + ", ".join(f"{k} {v:.2f}" for k, v in means.items()))
    return "\n".join(lines) + "\n"


def cmd_run(args):
    exp = load_experiment(args.config)
    if args.seed is not None:
        exp.seed = args.seed
    out = Path(args.output_dir) if args.output_dir else (exp.output_dir or default_output_dir())
    matrix_path = out / "matrix.csv"
    if matrix_path.exists() and not args.force:
        raise ConfigError(f"{matrix_path} exists; pass --force to overwrite")

    try:
        base = base_sim_config(exp)
    except TypeError as exc:
        raise ConfigError(f"bad override value: {exc}") from None
    schemes = [(s, scheme_config(s, base)) for s in exp.schemes]
    traces = experiment_traces(exp)
    result = run_matrix(traces, schemes, seed=exp.seed, jobs=args.jobs)
    baseline = exp.baseline or exp.schemes[0]

    # Everything is computed before anything is written.
    files = {"matrix.csv": result.to_csv(),
             "summary.csv": result.aggregate_csv(baseline),
             "summary.txt": _summary_text(exp, result, baseline)}
    for rep in result.reports:
        stem = f"{rep.trace_id}__{rep.scheme}"
        files[f"reports/{stem}.json"] = rep.to_json()
        files[f"decisions/{stem}.jsonl"] = "".join(d + "\n" for d in rep.decisions)
    for rel, text in sorted(files.items()):
        atomic_write(out / rel, text)
    sys.stdout.write(files["summary.txt"])
    print(f"wrote {len(files)} files to {out}")
    return 0


def _read_matrix(run_dir):
    path = Path(run_dir) / "matrix.csv"
    if not path.exists():
        raise MissingPrereq(f"{path} not found; run `enhabr run` first")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _group_means(rows, key):
    groups = {}
    for r in rows:
        groups.setdefault((r["network"], r["scheme"]), []).append(float(r[key]))
    return [(net, scheme, len(v), sum(v) / len(v)) for (net, scheme), v in sorted(groups.items())]


def cmd_figures(args):
    if args.kind == "fec_sweep":
        rows = fec_sweep_rows(FIG_LOSSES, args.packets, DEFAULT_RATIO_GRID, GILBERT_ELLIOTT,
                              "exact", 0, 0)
        text = _csv_text(("p_loss", "ratio", "frame_loss_prob"), rows)
    else:
        run_dir = Path(args.run_dir) if args.run_dir else default_output_dir()
        rows = _read_matrix(run_dir)
        if args.kind == "qoe_bars":
            text = _csv_text(("network", "scheme", "n_traces", "mean_qoe"),
                             _group_means(rows, "qoe"))
        else:
            text = _csv_text(("network", "scheme", "n_traces", "recovered_frac"),
                             _group_means(rows, "recovered_frac"))
    _emit(text, args.out)
    return 0


def _emit(text, out):
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


# -- parser ------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="enhabr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    trace = sub.add_parser("trace", help="trace utilities")
    tsub = trace.add_subparsers(dest="trace_command", required=True)
    v = tsub.add_parser("validate", help="parse and check trace files")
    v.add_argument("paths", nargs="+")
    v.set_defaults(func=cmd_trace_validate)
    s = tsub.add_parser("synth", help="write the seeded synthetic suite as CSV")
    s.add_argument("--out", required=True)
    s.add_argument("--per-kind", type=int, default=3)
    s.add_argument("--seed", type=_seed, default=2024)
    s.add_argument("--kinds", nargs="+", choices=SUITE_KINDS)
    s.add_argument("--raw", action="store_true", help="skip downscaling onto the ladder")
    s.set_defaults(func=cmd_trace_synth)

    fec = sub.add_parser("fec", help="FEC analysis")
    fsub = fec.add_subparsers(dest="fec_command", required=True)
    sw = fsub.add_parser("sweep", help="frame loss probability vs redundancy ratio")
    sw.add_argument("--loss", type=float, action="append", required=True,
                    help="packet loss rate (repeatable)")
    sw.add_argument("--packets", type=int, default=24, help="data packets per frame")
    sw.add_argument("--grid", type=_floats, default=list(DEFAULT_RATIO_GRID))
    sw.add_argument("--model", choices=(GILBERT_ELLIOTT, BERNOULLI), default=GILBERT_ELLIOTT)
    sw.add_argument("--method", choices=("exact", "analytic", "monte_carlo"), default="exact")
    sw.add_argument("--trials", type=int, default=1_000_000)
    sw.add_argument("--seed", type=_seed, default=0)
    sw.add_argument("--out")
    sw.set_defaults(func=cmd_fec_sweep)

    plan = sub.add_parser("fecplan", help="FEC lookup tables")
    psub = plan.add_subparsers(dest="fecplan_command", required=True)
    b = psub.add_parser("build", help="sweep ratios per loss rate and keep the best")
    b.add_argument("--traces", help="training trace directory (default: synthetic suite)")
    b.add_argument("--trace-seed", type=_seed, default=7, help="synthetic training suite seed")
    b.add_argument("--per-kind", type=int, default=1)
    b.add_argument("--scheme", default="enh_aware_fec", choices=sorted(SCHEMES))
    b.add_argument("--loss-grid", type=_floats, default=list(DEFAULT_LOSS_GRID))
    b.add_argument("--ratio-grid", type=_floats, default=list(DEFAULT_RATIO_GRID))
    b.add_argument("--n-chunks", type=int, default=60)
    b.add_argument("--seed", type=_seed, default=0)
    b.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    b.add_argument("--out", required=True)
    b.add_argument("--force", action="store_true")
    b.set_defaults(func=cmd_fecplan_build)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=_seed)
    r.add_argument("--output-dir", help=f"overrides paths.output_dir and ${OUTPUT_ENV}")
    r.add_argument("--force", action="store_true", help="overwrite an existing run")
    r.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("figures", help="figure-ready CSV series")
    f.add_argument("kind", choices=("fec_sweep", "qoe_bars", "recovered_frac"))
    f.add_argument("--run-dir", help=f"output of `enhabr run` (default ${OUTPUT_ENV})")
    f.add_argument("--packets", type=int, default=24)
    f.add_argument("--out")
    f.set_defaults(func=cmd_figures)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (EnhabrError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
