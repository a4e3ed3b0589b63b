"""``gc`` command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 unreadable or
malformed data, 4 internal invariant violation.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .binding import BindingConfig
from .errors import ConfigError, GenerationError, InputError, InvariantError
from .metrics import evaluate
from .pipeline import DEFAULT_ITERATIONS, MODES, PipelineConfig, compare_modes, format_table, track
from .saliency import STRATEGIES, SaliencyConfig, compute_saliency, select_seeds
from .synthgen import SceneSpec, generate_scene
from .tensor import (
    FeatureMap,
    FeatureSequence,
    FormatError,
    LabelMap,
    SegmentationSequence,
    read_tensor,
    unit_rows,
    write_tensor,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

DEFAULTS = {
    "gen": {
        "out": ".",
        "height": 16,
        "width": 16,
        "dim": 16,
        "objects": 3,
        "frames": 10,
        "radius_min": 2.0,
        "radius_max": 3.0,
        "speed_min": 0.3,
        "speed_max": 1.0,
        "noise": 0.0,
        "separation": 0.7,
        "feature_scale": None,
        "symmetric": False,
        "allow_overlap": False,
        "seed": 0,
    },
    "saliency": {
        "out": ".",
        "alpha": 1.0,
        "radius": 1,
        "strategy": "grounded",
        "pca_components": 1,
        "include_center": False,
        "k": 4,
        "normalize": False,
    },
    "track": {
        "out": ".",
        "mode": "grounded-correspondence",
        "k": 4,
        "alpha": 1.0,
        "radius": 1,
        "strategy": "grounded",
        "pca_components": 1,
        "include_center": False,
        "iters_first": None,
        "iters_rest": None,
        "seed": 0,
        "weights": None,
        "position_weight": 0.0,
        "normalize": False,
    },
    "eval": {"level": "both", "per_frame": False},
    "compare": {
        "modes": list(MODES),
        "k": 4,
        "alpha": 1.0,
        "radius": 1,
        "strategy": "grounded",
        "pca_components": 1,
        "include_center": False,
        "seed": 0,
        "normalize": False,
        "out": None,
    },
}
DEFAULTS["diagnose"] = {k: v for k, v in DEFAULTS["track"].items() if k != "out"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _saliency_flags(p):
    p.add_argument("--alpha", type=float, help="background penalty weight")
    p.add_argument("--radius", type=int, help="neighbourhood radius in patches")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--pca-components", type=int)
    p.add_argument("--include-center", action="store_true", help="count a patch as its own neighbour")
    p.add_argument("--normalize", action="store_true", help="L2-normalize features before use")
    p.add_argument("--k", type=int, help="number of slots")


def _tracking_flags(p):
    _saliency_flags(p)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--iters-first", type=int)
    p.add_argument("--iters-rest", type=int)
    p.add_argument("--seed", type=int, help="content-blind query seed")
    p.add_argument("--weights", help="GCT1 bundle with projection/GRU weights (external-gru update)")
    p.add_argument("--position-weight", type=float, help="weight of slot-centroid distance in the matching cost")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gc", description="Grounded slot discovery and Hungarian tracking.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = dict(argument_default=argparse.SUPPRESS)

    p = sub.add_parser("gen", help="generate a synthetic scene", **common)
    p.add_argument("--out", help="output directory")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--objects", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--radius-min", type=float)
    p.add_argument("--radius-max", type=float)
    p.add_argument("--speed-min", type=float)
    p.add_argument("--speed-max", type=float)
    p.add_argument("--noise", type=float, help="per-coordinate noise std")
    p.add_argument("--separation", type=float, help="minimum prototype cosine distance")
    p.add_argument("--feature-scale", type=float)
    p.add_argument("--symmetric", action="store_true")
    p.add_argument("--allow-overlap", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON file of option values; flags override it")

    p = sub.add_parser("saliency", help="saliency fields and seeds", **common)
    p.add_argument("features")
    p.add_argument("--out")
    _saliency_flags(p)
    p.add_argument("--config")

    p = sub.add_parser("track", help="segment and track a feature sequence", **common)
    p.add_argument("features")
    p.add_argument("--out")
    _tracking_flags(p)
    p.add_argument("--config")

    p = sub.add_parser("eval", help="score predicted masks against ground truth", **common)
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--level", choices=("image", "video", "both"))
    p.add_argument("--per-frame", action="store_true")
    p.add_argument("--config")

    p = sub.add_parser("diagnose", help="Hungarian identity ratio per frame pair", **common)
    p.add_argument("features")
    _tracking_flags(p)
    p.add_argument("--config")

    p = sub.add_parser("compare", help="run several modes and tabulate metrics", **common)
    p.add_argument("features")
    p.add_argument("truth")
    p.add_argument("--modes", nargs="+", choices=MODES)
    p.add_argument("--out", help="also write the table as JSON here")
    _saliency_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    return parser


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    given = dict(vars(args))
    given.pop("command", None)
    config_path = given.pop("config", None)
    options = dict(DEFAULTS[command])
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        loaded = {k.replace("-", "_"): v for k, v in loaded.items()}
        unknown = sorted(set(loaded) - set(options))
        if unknown:
            raise ConfigError(f"unknown config keys for '{command}': {unknown}")
        options.update(loaded)
    options.update(given)
    return options


def _load(path, expected):
    try:
        value = read_tensor(path)
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    if isinstance(value, FeatureMap) and expected is FeatureSequence:
        value = FeatureSequence(value.data[None])
    if isinstance(value, LabelMap) and expected is SegmentationSequence:
        value = SegmentationSequence(value.labels[None])
    if not isinstance(value, expected):
        raise InputError(f"{path} holds {type(value).__name__}, expected {expected.__name__}")
    return value


def _features(path, normalize: bool) -> FeatureSequence:
    seq = _load(path, FeatureSequence)
    if normalize:
        seq = FeatureSequence(unit_rows(seq.data).astype(np.float32))
    return seq


def _saliency_config(o: dict) -> SaliencyConfig:
    return SaliencyConfig(
        alpha=o["alpha"],
        radius=o["radius"],
        strategy=o["strategy"],
        pca_components=o["pca_components"],
        include_center=o["include_center"],
    )


def _pipeline_config(o: dict) -> PipelineConfig:
    if o["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    first, rest = DEFAULT_ITERATIONS[o["mode"]]
    binding = BindingConfig(
        iterations_first=o["iters_first"] if o["iters_first"] is not None else first,
        iterations_rest=o["iters_rest"] if o["iters_rest"] is not None else rest,
        update_rule="external-gru" if o["weights"] else "weighted-mean",
        weights_path=o["weights"],
    )
    return PipelineConfig(
        mode=o["mode"],
        k=o["k"],
        saliency=_saliency_config(o),
        binding=binding,
        seed=o["seed"],
        position_weight=o["position_weight"],
    )


def _out_dir(o: dict) -> Path:
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(o: dict) -> int:
    spec = SceneSpec(
        height=o["height"],
        width=o["width"],
        dim=o["dim"],
        num_objects=o["objects"],
        frames=o["frames"],
        object_radius_range=(o["radius_min"], o["radius_max"]),
        speed_range=(o["speed_min"], o["speed_max"]),
        noise_sigma=o["noise"],
        feature_separation=o["separation"],
        seed=o["seed"],
        allow_overlap=o["allow_overlap"],
        symmetric=o["symmetric"],
        feature_scale=o["feature_scale"],
    )
    truth = generate_scene(spec)
    out = _out_dir(o)
    write_tensor(out / "features.gct", truth.features)
    write_tensor(out / "labels.gct", truth.labels)
    (out / "manifest.json").write_text(json.dumps(truth.manifest(spec), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_saliency(o: dict) -> int:
    seq = _features(o["features"], o["normalize"])
    cfg = _saliency_config(o)
    fields, seeds = [], []
    for t, fmap in enumerate(seq):
        field = compute_saliency(fmap, cfg)
        fields.append(field.scores)
        seeds.append({"t": t, "seeds": select_seeds(fmap, field, o["k"]).trace()})
    out = _out_dir(o)
    write_tensor(out / "saliency.gct", FeatureSequence(np.stack(fields)[..., None]))
    (out / "seeds.json").write_text(json.dumps(seeds, indent=2) + "\n")
    return EXIT_OK


def cmd_track(o: dict) -> int:
    seq = _features(o["features"], o["normalize"])
    result = track(seq, _pipeline_config(o))
    out = _out_dir(o)
    write_tensor(out / "masks.gct", result.masks)
    with open(out / "diagnostics.jsonl", "w") as fh:
        for record in result.diagnostics:
            fh.write(json.dumps(record) + "\n")
    return EXIT_OK


def cmd_eval(o: dict) -> int:
    pred = _load(o["pred"], SegmentationSequence)
    truth = _load(o["truth"], SegmentationSequence)
    levels = ("image", "video") if o["level"] == "both" else (o["level"],)
    report = {lvl: evaluate(pred, truth, lvl, per_frame=o["per_frame"]).to_json() for lvl in levels}
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_diagnose(o: dict) -> int:
    seq = _features(o["features"], o["normalize"])
    result = track(seq, _pipeline_config(o))
    for record in result.diagnostics:
        print(json.dumps({k: record[k] for k in ("t", "ratio", "total_cost", "perm")}), flush=True)
    return EXIT_OK


def cmd_compare(o: dict) -> int:
    seq = _features(o["features"], o["normalize"])
    truth = _load(o["truth"], SegmentationSequence)
    rows = compare_modes(seq, truth, o["modes"], k=o["k"], saliency=_saliency_config(o), seed=o["seed"])
    print(format_table(rows))
    if o["out"]:
        Path(o["out"]).write_text(json.dumps(rows, indent=2) + "\n")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "saliency": cmd_saliency,
    "track": cmd_track,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        options = resolve_options(args.command, args)
        return COMMANDS[args.command](options)
    except (ConfigError, GenerationError) as exc:
        print(f"gc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, InputError) as exc:
        print(f"gc {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TypeError, KeyError) as exc:
        # a config file value of the wrong type surfaces here
        print(f"gc {args.command}: invalid option value: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"gc {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as exc:
        print(f"gc {args.command}: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"gc {args.command}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
