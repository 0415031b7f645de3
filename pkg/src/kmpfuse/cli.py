"""Command-line entry point.

Subcommands cover corpus tooling (gen-shapes, gen-context, convert-lasa),
training, evaluation, field export, single rollouts, and the HTTP service.
Every model-facing command accepts the same configuration block, either from
a flat JSON file (--config) or from flags (flags win); defaults follow the
published 2D handwriting benchmark row.

Exit codes: 0 success, 1 usage, 2 data, 3 numerical.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import demonstrations, letters
from .demonstrations import load_training_set, save_corpus
from .errors import DataError, KmpFuseError, NumericalError, UsageError
from .fusion import FusionParams
from .pipeline import PolicyBundle, TrainSettings, train_bundle
from .rollout import (
    ContextSchedule,
    EvalReport,
    GridSpec,
    RolloutConfig,
    STRATEGIES,
    evaluate,
    inflate_bounds,
    random_starts,
    rollout,
    save_trace,
    vector_field_grid,
)

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "KMPFUSE_OUTPUT_DIR"


@dataclass
class RunConfig:
    """Flat run configuration; field names mirror the published table."""

    dataset: str | None = None
    components: int = 20            # C
    n_refs: int = 500               # N
    lam: float = 0.5                # lambda
    l_c: float = 0.06
    l_p: float = 0.04
    k_s: float = 4.0                # K_s
    k_g: float = 20.0               # K_g
    pi_sp: float = 0.6
    gamma_sigma: float = 0.5
    gamma_grad: float = 1.0
    dt: float = 10.0                # gain normalization timescale (s)
    control_dt: float = 0.05        # rollout integration step (20 Hz)
    max_iters: int = 500
    success_radius: float = 0.01
    em_seed: int = 0
    sample_seed: int = 1
    start_seed: int = 2
    jitter: float = 1e-8
    output_dir: str = "."

    # JSON key <-> attribute (published names where they exist)
    KEYS = {
        "dataset": "dataset",
        "C": "components",
        "N": "n_refs",
        "lambda": "lam",
        "l_c": "l_c",
        "l_p": "l_p",
        "K_s": "k_s",
        "K_g": "k_g",
        "pi_sp": "pi_sp",
        "gamma_sigma": "gamma_sigma",
        "gamma_grad": "gamma_grad",
        "dt": "dt",
        "control_dt": "control_dt",
        "max_iters": "max_iters",
        "success_radius": "success_radius",
        "em_seed": "em_seed",
        "sample_seed": "sample_seed",
        "start_seed": "start_seed",
        "jitter": "jitter",
        "output_dir": "output_dir",
    }

    def to_dict(self) -> dict:
        return {key: getattr(self, attr) for key, attr in self.KEYS.items()}

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
        config = cls()
        unknown = set(doc) - set(cls.KEYS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key, value in doc.items():
            setattr(config, cls.KEYS[key], value)
        return config

    def fusion_params(self) -> FusionParams:
        return FusionParams(
            pi_sp=self.pi_sp, k_sp=self.k_s, k_g=self.k_g,
            gamma_sigma=self.gamma_sigma, gamma_grad=self.gamma_grad, dt=self.dt,
        )

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            components=self.components, n_refs=self.n_refs, lam=self.lam,
            l_c=self.l_c, l_p=self.l_p, jitter=self.jitter,
            em_seed=self.em_seed, sample_seed=self.sample_seed,
        )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


_CONFIG_FLAGS = [
    # (flag, attr, type, help)
    ("--dataset", "dataset", str, "corpus JSON path"),
    ("--components", "components", int, "mixture components C"),
    ("--n-refs", "n_refs", int, "reference points N"),
    ("--lambda", "lam", float, "kernel regularizer lambda"),
    ("--l-c", "l_c", float, "kernel length, context dims"),
    ("--l-p", "l_p", float, "kernel length, position dims"),
    ("--k-s", "k_s", float, "stabilizer gain K_s"),
    ("--k-g", "k_g", float, "goal attractor gain K_g"),
    ("--pi-sp", "pi_sp", float, "constant stabilizer coefficient pi_sp"),
    ("--gamma-sigma", "gamma_sigma", float, "uncertainty threshold gamma_sigma"),
    ("--gamma-grad", "gamma_grad", float, "gradient-norm threshold gamma_grad"),
    ("--dt", "dt", float, "gain normalization timescale dt (s)"),
    ("--control-dt", "control_dt", float, "rollout integration step (s)"),
    ("--max-iters", "max_iters", int, "rollout iteration cap"),
    ("--success-radius", "success_radius", float, "goal proximity for success"),
    ("--em-seed", "em_seed", int, "EM initialization seed"),
    ("--sample-seed", "sample_seed", int, "reference sampling seed"),
    ("--start-seed", "start_seed", int, "random start seed"),
    ("--jitter", "jitter", float, "base kernel-matrix jitter"),
    ("--output-dir", "output_dir", str, f"output directory (or ${OUTPUT_DIR_ENV})"),
]


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group(
        "model configuration (defaults = published 2D benchmark row)"
    )
    group.add_argument("--config", help="flat JSON config file; flags override it")
    defaults = RunConfig()
    for flag, attr, kind, text in _CONFIG_FLAGS:
        group.add_argument(
            flag, dest=attr, type=kind, default=None,
            help=f"{text} (default: {getattr(defaults, attr)})",
        )


def _resolve_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    for _, attr, _, _ in _CONFIG_FLAGS:
        value = getattr(args, attr, None)
        if value is not None:
            setattr(config, attr, value)
    if getattr(args, "output_dir", None) is None and not (
        args.config and "output_dir" in json.loads(Path(args.config).read_text())
    ):
        config.output_dir = os.environ.get(OUTPUT_DIR_ENV, config.output_dir)
    return config


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v != ""])
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _parse_context_list(text: str) -> list[np.ndarray]:
    return [_parse_vector(chunk) for chunk in text.split(";") if chunk]


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train(config: RunConfig) -> tuple[PolicyBundle, dict]:
    if not config.dataset:
        raise UsageError("--dataset (or config key 'dataset') is required")
    timings: dict = {}
    t0 = time.perf_counter()
    training = load_training_set(config.dataset)
    timings["load_s"] = time.perf_counter() - t0
    bundle = train_bundle(training, config.train_settings(), config.fusion_params(),
                          timings=timings)
    return bundle, timings


def _write_manifest(out: Path, config: RunConfig, bundle: PolicyBundle,
                    timings: dict, name: str = "manifest.json") -> Path:
    manifest = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seeds": {
            "em_seed": config.em_seed,
            "sample_seed": config.sample_seed,
            "start_seed": config.start_seed,
        },
        "jitter_used": bundle.provenance["jitter_used"],
        "model_hash": bundle.content_hash(),
        "timings": timings,
        "created_unix": time.time(),
    }
    path = out / name
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return path


def _load_or_train(args, config: RunConfig) -> tuple[PolicyBundle, dict]:
    model_path = getattr(args, "model", None)
    if model_path:
        return PolicyBundle.load(model_path), {}
    return _train(config)


def cmd_train(args) -> int:
    config = _resolve_config(args)
    bundle, timings = _train(config)
    out = _out_dir(config)
    model_path = out / "model.json"
    bundle.save(model_path)
    _write_manifest(out, config, bundle, timings)
    print(f"model written to {model_path} (hash {bundle.content_hash()[:12]})")
    return 0


def _schedules_for(config: RunConfig, bundle: PolicyBundle, contexts):
    c_dim = bundle.dims.context
    if c_dim == 0:
        return [ContextSchedule.none()]
    if not contexts:
        raise UsageError("model has context inputs; pass --contexts \"c1,c2;...\"")
    for c in contexts:
        if c.shape[0] != c_dim:
            raise UsageError(f"context dim {c.shape[0]} != model context dim {c_dim}")
    return [ContextSchedule.constant(c) for c in contexts]


def report_rows_to_csv(reports: list[EvalReport]) -> str:
    lines = ["strategy,success_pct,avg_iterations,rms"]
    lines += [
        f"{r.strategy},{r.success_pct!r},{r.avg_iterations!r},{r.rms!r}"
        for r in reports
    ]
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    config = _resolve_config(args)
    bundle, timings = _load_or_train(args, config)
    if not config.dataset:
        raise UsageError("evaluation needs the dataset for starts and the RMS metric")
    training = load_training_set(config.dataset)

    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for s in strategies:
        if s not in STRATEGIES:
            raise UsageError(f"unknown strategy {s!r}; one of {', '.join(STRATEGIES)}")

    schedules = _schedules_for(config, bundle, _parse_context_list(args.contexts or ""))
    base = RolloutConfig(
        x0=np.zeros(bundle.dims.position), schedule=schedules[0],
        max_iters=config.max_iters, success_radius=config.success_radius,
        dt=config.control_dt, seed=config.start_seed,
    )

    if args.starts == "on-demos":
        trial_starts, trial_schedules = [], []
        for demo in training.demonstrations:
            trial_starts.append(demo.positions[0])
            if bundle.dims.context > 0:
                trial_schedules.append(ContextSchedule.constant(demo.contexts[0]))
        if bundle.dims.context == 0:
            trial_schedules = [schedules[0]] * len(trial_starts)
    elif args.starts.startswith("random:"):
        n = int(args.starts.split(":", 1)[1])
        box = inflate_bounds(training.position_bounds())
        trial_starts, trial_schedules = [], []
        for i, sched in enumerate(schedules):
            starts = random_starts(box, n, seed=config.start_seed + i)
            trial_starts.extend(starts)
            trial_schedules.extend([sched] * n)
    else:
        raise UsageError("--starts must be 'on-demos' or 'random:N'")

    reports = []
    for strategy in strategies:
        rep = evaluate(
            bundle.kmp, bundle.goals, bundle.fusion, trial_starts,
            schedules[0], strategy, training,
            base_config=base, schedules=trial_schedules,
        )
        reports.append(rep)
        print(f"{strategy:9s} success {rep.success_pct:6.2f}%  "
              f"avg_iters {rep.avg_iterations:6.1f}  rms {rep.rms:.4f}  "
              f"({rep.successes}/{rep.trials})")

    out = _out_dir(config)
    (out / "report.csv").write_text(report_rows_to_csv(reports))
    (out / "report.json").write_text(json.dumps(
        [dataclasses.asdict(r) for r in reports], sort_keys=True, indent=1))
    print(f"report written to {out / 'report.csv'}")
    return 0


def cmd_field(args) -> int:
    config = _resolve_config(args)
    bundle, _ = _load_or_train(args, config)
    if args.bounds:
        vals = _parse_vector(args.bounds)
        if vals.shape[0] != 4:
            raise UsageError("--bounds expects xmin,xmax,ymin,ymax")
        bounds = vals.reshape(2, 2)
    else:
        bounds = inflate_bounds(bundle.train_bounds)
    grid = GridSpec(nx=args.nx, ny=args.ny, bounds=bounds)
    context = _parse_vector(args.context) if args.context else None
    field = vector_field_grid(bundle.kmp, bundle.goals, bundle.fusion, grid,
                              context, args.strategy)
    out = _out_dir(config)
    (out / "field.csv").write_text(field.to_csv())
    (out / "field.json").write_text(json.dumps(field.to_dict(), sort_keys=True))
    print(f"field written to {out / 'field.csv'} and field.json")
    return 0


def cmd_rollout(args) -> int:
    config = _resolve_config(args)
    bundle, _ = _load_or_train(args, config)
    x0 = _parse_vector(args.x0)
    if args.switch:
        entries = []
        for chunk in args.switch:
            if ":" not in chunk:
                raise UsageError("--switch expects ITER:c1,c2,...")
            it, ctx = chunk.split(":", 1)
            entries.append((int(it), _parse_vector(ctx)))
        schedule = ContextSchedule.piecewise(entries)
    elif args.context:
        schedule = ContextSchedule.constant(_parse_vector(args.context))
    else:
        schedule = ContextSchedule.none()
    rollout_config = RolloutConfig(
        x0=x0, schedule=schedule, max_iters=config.max_iters,
        success_radius=config.success_radius, dt=config.control_dt,
        seed=config.start_seed,
    )
    result = rollout(bundle.kmp, bundle.goals, bundle.fusion, rollout_config,
                     args.strategy)
    out = _out_dir(config)
    save_trace(out / "trace.json", result)
    status = "success" if result.success else "failure"
    print(f"{status} after {result.iterations} iterations "
          f"(terminal distance {result.terminal_distance:.4f}); "
          f"trace written to {out / 'trace.json'}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = _resolve_config(args)
    app = create_app(
        default_config=config,
        store_capacity=args.store_capacity,
        frontend_dir=args.frontend,
    )
    print(f"serving on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_gen_shapes(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(config)
    names = [s.strip() for s in args.shapes.split(",") if s.strip()]
    for name in names:
        demos = demonstrations.synthetic_handwriting_demos(
            name, n_demos=args.demos, n_points=args.points,
            dt=args.demo_dt, seed=args.seed,
        )
        path = out / f"{name}.json"
        save_corpus(path, demos)
        print(f"wrote {path}")
    return 0


def cmd_gen_context(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(config)
    letters_list = [s.strip() for s in args.letters.split(",") if s.strip()]
    centers = _parse_context_list(args.centers)
    training = demonstrations.generate_context_letter_set(
        letters_list, centers, cluster_std=args.std,
        demos_per_letter=args.demos_per_letter, n_points=args.points,
        dt=args.demo_dt, seed=args.seed,
    )
    path = out / args.name
    save_corpus(path, training.demonstrations)
    print(f"wrote {path}")
    return 0


def cmd_convert_lasa(args) -> int:
    from scipy.io import loadmat

    config = _resolve_config(args)
    out = _out_dir(config)
    for mat_path in args.mat:
        mat_path = Path(mat_path)
        if not mat_path.exists():
            raise DataError(f"file not found: {mat_path}")
        doc = loadmat(str(mat_path), squeeze_me=True, struct_as_record=False)
        if "demos" not in doc:
            raise DataError(f"{mat_path}: no 'demos' struct; not a handwriting archive")
        raw = np.atleast_1d(doc["demos"])
        demos = []
        for i, entry in enumerate(raw):
            pos = np.asarray(entry.pos, dtype=float).T   # stored (2, M)
            dt = float(np.asarray(entry.dt).squeeze())
            demos.append(demonstrations.Demonstration(
                id=f"{mat_path.stem}-{i}", dt=dt, positions=pos))
        if args.normalize:
            stacked = np.vstack([d.positions for d in demos])
            center = 0.5 * (stacked.max(axis=0) + stacked.min(axis=0))
            scale = (stacked.max(axis=0) - stacked.min(axis=0)).max()
            demos = [demonstrations.Demonstration(
                id=d.id, dt=d.dt, positions=(d.positions - center) / scale)
                for d in demos]
        path = out / f"{mat_path.stem}.json"
        save_corpus(path, demos)
        print(f"wrote {path} ({len(demos)} demonstrations)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="kmpfuse",
        description="Context- and state-dependent imitation learning toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[], help="fit a policy bundle from a corpus")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run rollouts and write a metrics report")
    _add_config_arguments(p)
    p.add_argument("--model", help="trained model.json (else trains in-line)")
    p.add_argument("--strategies", default=",".join(STRATEGIES),
                   help="comma list of strategies to evaluate")
    p.add_argument("--starts", default="on-demos",
                   help="'on-demos' or 'random:N' (N starts per context)")
    p.add_argument("--contexts", help="semicolon list of context vectors")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("field", help="export a vector/uncertainty field grid")
    _add_config_arguments(p)
    p.add_argument("--model", help="trained model.json (else trains in-line)")
    p.add_argument("--nx", type=int, default=50)
    p.add_argument("--ny", type=int, default=50)
    p.add_argument("--bounds", help="xmin,xmax,ymin,ymax (default: inflated demo box)")
    p.add_argument("--context", help="context vector c1,c2,...")
    p.add_argument("--strategy", default="full", choices=STRATEGIES)
    p.set_defaults(func=cmd_field)

    p = sub.add_parser("rollout", help="run a single rollout and dump the trace")
    _add_config_arguments(p)
    p.add_argument("--model", help="trained model.json (else trains in-line)")
    p.add_argument("--x0", required=True, help="start position x,y")
    p.add_argument("--context", help="constant context vector")
    p.add_argument("--switch", action="append",
                   help="piecewise schedule entry ITER:c1,c2 (repeatable)")
    p.add_argument("--strategy", default="full", choices=STRATEGIES)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("serve", help="start the HTTP service")
    _add_config_arguments(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--store-capacity", type=int, default=16)
    p.add_argument("--frontend", help="static playground directory to mount at /app")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("gen-shapes", help="write synthetic handwriting corpora")
    _add_config_arguments(p)
    p.add_argument("--shapes", default=",".join(letters.shape_names()))
    p.add_argument("--demos", type=int, default=7)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--demo-dt", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=3)
    p.set_defaults(func=cmd_gen_shapes)

    p = sub.add_parser("gen-context", help="write a synthetic context-letter corpus")
    _add_config_arguments(p)
    p.add_argument("--letters", default="zee,ess,jay")
    p.add_argument("--centers", default="0,0;1,1;2,2")
    p.add_argument("--std", type=float, default=0.02)
    p.add_argument("--demos-per-letter", type=int, default=3)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--demo-dt", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--name", default="context_letters.json")
    p.set_defaults(func=cmd_gen_context)

    p = sub.add_parser("convert-lasa", help="convert handwriting .mat archives")
    _add_config_arguments(p)
    p.add_argument("--mat", nargs="+", required=True, help=".mat file paths")
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True,
                   help="center and scale positions to a unit box")
    p.set_defaults(func=cmd_convert_lasa)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except KmpFuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
