"""Command-line front end: scene simulation, separation runs, benchmarks.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 numerical
failure. All artifacts are deterministic for a fixed seed; CSV outputs are
byte-identical across reruns of the same configuration.
"""

import argparse
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import io
from .errors import (
    ConfigError,
    CostOverflowError,
    DegenerateReferenceError,
    GcivaError,
    InvalidInputError,
    SingularUpdateError,
)
from .iva import PriorConfig, SourceModel, project_back, run_gradient_iva, run_informed_iva
from .metrics import SeparationReport, decompose_sir_sdr, match_permutation
from .scene import ArrayGeometry, SceneSpec, simulate_mixture, synthetic_sources
from .stft import StftConfig, analyze, synthesize

ALGORITHMS = ("aux", "gc-aux", "gc-grad")
DEFAULT_ITERATIONS = {"aux": 100, "gc-aux": 100, "gc-grad": 350}


@dataclass
class ExperimentConfig:
    """Fully resolved experiment settings (defaults mirror the reference
    operating point: 2048-sample Hamming window at 16 kHz, sigma2 = 40,
    lambda_e = 1e-3, stepsize 0.05 with constraint weight 0.5, a 0.21 m
    microphone pair, and an SNR sweep over 10/20/30 dB)."""

    algorithm: str = "gc-aux"
    algorithms: tuple = ALGORITHMS
    iterations: int | None = None
    window_length: int = 2048
    hop: int = 1024
    sample_rate: float = 16000.0
    window_kind: str = "hamming"
    sigma2: float = 40.0
    lambda_e: float = 1e-3
    doas: tuple = ()
    constrained_channels: tuple = (0,)
    stepsize: float = 0.05
    constraint_weight: float = 0.5
    snr_db: float = 20.0
    snrs: tuple = (10.0, 20.0, 30.0)
    doa_pairs: tuple = ((45.0, 135.0), (45.0, 90.0), (20.0, 160.0))
    seeds: tuple = (0, 1, 2, 3, 4)
    seed: int = 0
    duration: float = 5.0
    mic_spacing: float = 0.21
    speed_of_sound: float = 343.0
    sources: tuple = ()
    refs: tuple = ()
    out_dir: str = "."

    def resolved_iterations(self, algorithm: str) -> int:
        if self.iterations is not None:
            return self.iterations
        return DEFAULT_ITERATIONS[algorithm]

    def stft_config(self, sample_rate: float | None = None) -> StftConfig:
        return StftConfig(self.window_length, self.hop,
                          sample_rate or self.sample_rate, self.window_kind)

    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry.linear_pair(self.mic_spacing, self.speed_of_sound)

    def echo(self) -> dict:
        """Resolved configuration for report embedding (artifact paths are
        left out so reruns in other directories stay byte-identical)."""
        skip = {"out_dir"}
        payload = {}
        for f in fields(self):
            if f.name in skip:
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = [list(v) if isinstance(v, tuple) else v for v in value]
            if isinstance(value, float) and np.isinf(value):
                value = "inf"
            payload[f.name] = value
        return payload


def _parse_floats(text: str) -> tuple:
    try:
        return tuple(float(part) for part in str(text).split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated float list, got {text!r}") from exc


def _parse_ints(text: str) -> tuple:
    try:
        return tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from exc


def _parse_pairs(text: str) -> tuple:
    pairs = []
    for chunk in str(text).split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 2:
            raise ConfigError(f"expected 'doa:doa' pairs, got {chunk!r}")
        try:
            pairs.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise ConfigError(f"expected 'doa:doa' pairs, got {chunk!r}") from exc
    return tuple(pairs)


def _parse_strings(text: str) -> tuple:
    return tuple(part.strip() for part in str(text).split(",") if part.strip())


def _coerce(key: str, raw: str):
    try:
        if key in ("iterations", "window_length", "hop", "seed"):
            return int(raw)
        if key in ("sample_rate", "sigma2", "lambda_e", "stepsize", "constraint_weight",
                   "duration", "mic_spacing", "speed_of_sound"):
            return float(raw)
        if key == "snr_db":
            return float("inf") if str(raw).strip().lower() in ("inf", "infinite") else float(raw)
    except ValueError as exc:
        raise ConfigError(f"invalid value for config key {key!r}: {raw!r}") from exc
    if key in ("doas", "snrs"):
        return _parse_floats(raw)
    if key in ("constrained_channels", "seeds"):
        return _parse_ints(raw)
    if key == "doa_pairs":
        return _parse_pairs(raw)
    if key in ("sources", "refs", "algorithms"):
        return _parse_strings(raw)
    if key in ("algorithm", "window_kind", "out_dir"):
        return str(raw)
    raise ConfigError(f"unknown config key: {key!r}")


def load_config(path) -> dict:
    return {key: _coerce(key, raw) for key, raw in io.read_keyvalue(path).items()}


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        cfg = replace(cfg, **load_config(args.config))
    overrides = {}
    if getattr(args, "algorithm", None):
        if args.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {args.algorithm!r}, expected one of {ALGORITHMS}")
        overrides["algorithm"] = args.algorithm
        overrides["algorithms"] = (args.algorithm,)
    if getattr(args, "iterations", None) is not None:
        overrides["iterations"] = args.iterations
    if getattr(args, "sigma2", None) is not None:
        overrides["sigma2"] = args.sigma2
    if getattr(args, "lambda_e", None) is not None:
        overrides["lambda_e"] = args.lambda_e
    if getattr(args, "doa", None):
        if ":" in args.doa:
            overrides["doa_pairs"] = _parse_pairs(args.doa)
        else:
            overrides["doas"] = _parse_floats(args.doa)
    if getattr(args, "constrained_channels", None):
        overrides["constrained_channels"] = _parse_ints(args.constrained_channels)
    if getattr(args, "snr", None) is not None:
        snrs = _parse_floats(args.snr)
        overrides["snrs"] = snrs
        if snrs:
            overrides["snr_db"] = snrs[0]
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
        overrides["seeds"] = (args.seed,)
    if getattr(args, "duration", None) is not None:
        overrides["duration"] = args.duration
    if getattr(args, "refs", None):
        overrides["refs"] = _parse_strings(args.refs)
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    cfg = replace(cfg, **overrides)
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {cfg.algorithm!r}, expected one of {ALGORITHMS}")
    for name in cfg.algorithms:
        if name not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {name!r} in algorithms list")
    if cfg.iterations is not None and cfg.iterations < 0:
        raise ConfigError("iterations must be nonnegative")
    return cfg


def _load_sources(cfg: ExperimentConfig) -> np.ndarray:
    if not cfg.sources:
        doas = cfg.doas or (45.0, 135.0)
        return synthetic_sources(len(doas), cfg.duration, cfg.sample_rate, cfg.seed)
    signals = []
    for path in cfg.sources:
        data, rate = io.read_wav(path)
        if rate != cfg.sample_rate:
            raise ConfigError(f"source {path} has rate {rate}, expected {cfg.sample_rate}")
        signals.append(data[:, 0] if data.ndim == 2 else data)
    lengths = {len(s) for s in signals}
    if len(lengths) != 1:
        raise InvalidInputError("source signals must all have the same length")
    return np.stack(signals)


def run_separation(spec, cfg: ExperimentConfig, algorithm: str,
                   constrained_channels=None, constraint_doas=None):
    """Run one algorithm on an analyzed mixture.

    For ``gc-aux`` the constraint DOAs are directions to suppress at the
    constrained channels; for ``gc-grad`` they are directions to preserve.
    Returns ``(stack, demixed, trace)``.
    """
    channels = cfg.constrained_channels if constrained_channels is None else constrained_channels
    doas = cfg.doas if constraint_doas is None else constraint_doas
    iterations = cfg.resolved_iterations(algorithm)
    model = SourceModel()
    if algorithm == "aux":
        return run_informed_iva(spec, None, model, iterations)
    if algorithm == "gc-aux":
        if len(channels) != len(doas):
            raise ConfigError("need one constraint DOA per constrained channel")
        prior = PriorConfig.constant(channels, doas, cfg.geometry(), spec.n_bins,
                                     cfg.sigma2, cfg.lambda_e)
        return run_informed_iva(spec, prior, model, iterations)
    if algorithm == "gc-grad":
        if len(channels) != len(doas):
            raise ConfigError("need one constraint DOA per constrained channel")
        return run_gradient_iva(spec, channels, doas, cfg.geometry(), model, iterations,
                                cfg.stepsize, cfg.constraint_weight)
    raise ConfigError(f"unknown algorithm {algorithm!r}")


def _separate_signal(mixture: np.ndarray, rate: float, cfg: ExperimentConfig,
                     algorithm: str, constrained_channels=None, constraint_doas=None,
                     reference: int | None = None):
    """Full pipeline for one mixture; ``reference=None`` scales each output
    to its own microphone (identity demixing stays untouched), an integer
    projects every output back to that reference microphone."""
    spec = analyze(mixture, cfg.stft_config(rate))
    stack, demixed, trace = run_separation(spec, cfg, algorithm,
                                           constrained_channels, constraint_doas)
    projected = project_back(demixed, stack, reference)
    outputs = synthesize(projected)[: mixture.shape[0]]
    return outputs, stack, demixed, trace


def cmd_simulate(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doas = cfg.doas or (45.0, 135.0)
    signals = _load_sources(cfg)
    scene = SceneSpec(signals, doas, cfg.snr_db, seed=cfg.seed)
    mixture, images = simulate_mixture(scene, cfg.geometry(), cfg.stft_config())
    io.write_wav(out / "mixture.wav", mixture, int(cfg.sample_rate))
    image_files = []
    for k in range(images.shape[0]):
        name = f"source{k + 1:02d}.wav"
        io.write_wav(out / name, images[k], int(cfg.sample_rate))
        image_files.append(name)
    meta = {
        "config": cfg.echo(),
        "doas": list(doas),
        "snr_db": "inf" if np.isinf(cfg.snr_db) else cfg.snr_db,
        "seed": cfg.seed,
        "n_samples": int(mixture.shape[0]),
        "files": {"mixture": "mixture.wav", "images": image_files},
    }
    io.write_json(out / "scene.json", meta)
    return 0


def cmd_separate(cfg: ExperimentConfig, mixture_path: str) -> int:
    mixture, rate = io.read_wav(mixture_path)
    if mixture.ndim != 2 or mixture.shape[1] < 2:
        raise InvalidInputError(f"{mixture_path} is not a multichannel mixture")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs, stack, demixed, trace = _separate_signal(mixture, rate, cfg, cfg.algorithm)

    for k in range(outputs.shape[1]):
        io.write_wav(out / f"separated{k + 1:02d}.wav", outputs[:, k], rate)
    io.write_cost_trace_csv(out / "cost_trace.csv", trace)

    report: dict = {"config": cfg.echo(), "algorithm": cfg.algorithm,
                    "iterations": cfg.resolved_iterations(cfg.algorithm),
                    "sample_rate": rate}
    if cfg.refs:
        # metrics compare against the first (reference) microphone, so they
        # are computed on reference-projected outputs; the written WAVs keep
        # the per-channel own-microphone scaling
        refs = []
        for path in cfg.refs:
            data, _ = io.read_wav(path)
            refs.append(data[:, 0] if data.ndim == 2 else data)
        ref_outputs = synthesize(project_back(demixed, stack, 0))[: mixture.shape[0]]
        n = min(ref_outputs.shape[0], min(len(r) for r in refs))
        refs = np.stack([r[:n] for r in refs])
        estimates = ref_outputs[:n].T
        sir, sdr = [], []
        for k in range(estimates.shape[0]):
            s, d, _ = decompose_sir_sdr(estimates[k], refs)
            sir.append(s)
            sdr.append(d)
        perm, matched = match_permutation(estimates, refs)
        result = SeparationReport(tuple(sir), tuple(sdr), perm, matched,
                                  config=cfg.echo(), cost_trace=trace)
        report["metrics"] = result.to_dict()
    report["cost_trace"] = {
        "j_iva": [float(v) for v in trace.j_iva],
        "j_prior": [float(v) for v in trace.j_prior],
    }
    io.write_json(out / "report.json", report)
    return 0


def _benchmark_runs(cfg: ExperimentConfig, algorithm: str, doas, mixture, rate):
    """All (constraint, outputs, intended reference order) runs for one scene.

    Outputs are projected back to the reference microphone, matching the
    ground-truth images the metrics compare against.
    """
    if algorithm == "aux":
        outputs, _, _, _ = _separate_signal(mixture, rate, cfg, algorithm, reference=0)
        return [(-1, outputs, (0, 1))]
    runs = []
    for target in range(len(doas)):
        other = 1 - target
        constraint_doa = doas[other] if algorithm == "gc-aux" else doas[target]
        outputs, _, _, _ = _separate_signal(mixture, rate, cfg, algorithm,
                                            constrained_channels=(0,),
                                            constraint_doas=(constraint_doa,),
                                            reference=0)
        runs.append((target, outputs, (target, other)))
    return runs


def cmd_benchmark(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not cfg.doa_pairs:
        raise ConfigError("benchmark needs a non-empty doa_pairs list")
    if not cfg.snrs:
        raise ConfigError("benchmark needs a non-empty snrs list")
    if not cfg.seeds:
        raise ConfigError("benchmark needs a non-empty seeds list")

    geometry = cfg.geometry()
    stft_cfg = cfg.stft_config()
    run_rows = []
    aggregates: dict[tuple, list] = {}
    for pair in cfg.doa_pairs:
        label = f"{pair[0]:g}-{pair[1]:g}"
        for snr in cfg.snrs:
            for seed in cfg.seeds:
                signals = synthetic_sources(2, cfg.duration, cfg.sample_rate, seed)
                swap = int(np.random.default_rng([seed, 1]).integers(0, 2))
                doas = (pair[0], pair[1]) if swap == 0 else (pair[1], pair[0])
                scene = SceneSpec(signals, doas, snr, seed=seed)
                mixture, images = simulate_mixture(scene, geometry, stft_cfg)
                refs = images[:, :, 0]
                input_sir = np.mean([
                    decompose_sir_sdr(mixture[:, m], refs)[0]
                    for m in range(mixture.shape[1])
                ])
                for algorithm in cfg.algorithms:
                    for target, outputs, order in _benchmark_runs(
                            cfg, algorithm, doas, mixture, cfg.sample_rate):
                        ordered_refs = refs[list(order)]
                        estimates = outputs.T
                        sir, sdr = [], []
                        for k in range(estimates.shape[0]):
                            s, d, _ = decompose_sir_sdr(estimates[k], ordered_refs)
                            sir.append(s)
                            sdr.append(d)
                        _, matched = match_permutation(estimates, ordered_refs)
                        run_rows.append([
                            label, snr, f"{seed}", algorithm, f"{target}",
                            sir[0], sir[1], sdr[0], sdr[1], float(input_sir),
                            f"{int(matched)}",
                        ])
                        key = (label, snr, algorithm)
                        aggregates.setdefault(key, []).append(
                            (np.mean(sir), np.mean(sdr), float(input_sir), matched)
                        )

    agg_rows = []
    for (label, snr, algorithm), entries in aggregates.items():
        sirs, sdrs, input_sirs, matches = zip(*entries)
        agg_rows.append([
            label, snr, algorithm,
            float(np.mean(sirs)), float(np.mean(sdrs)), float(np.mean(input_sirs)),
            float(np.mean(matches)), f"{len(entries)}",
        ])
    io.write_csv(out / "runs.csv",
                 ["scenario", "snr_db", "seed", "algorithm", "constrained_source",
                  "sir_ch1_db", "sir_ch2_db", "sdr_ch1_db", "sdr_ch2_db",
                  "input_sir_db", "perm_matched"],
                 run_rows)
    io.write_csv(out / "benchmark.csv",
                 ["scenario", "snr_db", "algorithm", "sir_db", "sdr_db",
                  "input_sir_db", "perm_success_rate", "n_runs"],
                 agg_rows)
    io.write_json(out / "benchmark.json", {"config": cfg.echo()})
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map usage errors onto the config exit code
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gc-iva", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--algorithm", help="aux, gc-aux or gc-grad")
        p.add_argument("--iterations", type=int, help="solver iterations")
        p.add_argument("--sigma2", type=float, help="prior variance (gc-aux)")
        p.add_argument("--lambda-e", dest="lambda_e", type=float,
                       help="Tikhonov weight of the prior (gc-aux)")
        p.add_argument("--doa", help="comma list of DOAs in degrees; for benchmark, "
                                     "colon pairs like 45:135,45:90")
        p.add_argument("--constrained-channels", dest="constrained_channels",
                       help="comma list of 0-based output channels to constrain")
        p.add_argument("--snr", help="comma list of SNRs in dB")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--duration", type=float, help="scene duration in seconds")
        p.add_argument("--out", help="output directory")

    p_sim = sub.add_parser("simulate", help="render a scene to mixture and image WAVs")
    add_common(p_sim)

    p_sep = sub.add_parser("separate", help="separate a multichannel mixture WAV")
    p_sep.add_argument("mixture", help="input mixture WAV file")
    p_sep.add_argument("--refs", help="comma list of ground-truth image WAVs "
                                      "(enables SIR/SDR in the report)")
    add_common(p_sep)

    p_bench = sub.add_parser("benchmark", help="sweep scenes x SNRs x seeds x algorithms")
    add_common(p_bench)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "separate":
            return cmd_separate(cfg, args.mixture)
        if args.command == "benchmark":
            return cmd_benchmark(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, InvalidInputError) as exc:
        print(f"gc-iva: config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"gc-iva: I/O error: {exc}", file=sys.stderr)
        return 2
    except (SingularUpdateError, CostOverflowError, DegenerateReferenceError) as exc:
        print(f"gc-iva: numerical failure: {exc}", file=sys.stderr)
        return 3
    except GcivaError as exc:
        print(f"gc-iva: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
