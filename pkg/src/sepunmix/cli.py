"""Command-line entry point: `sepunmix <experiment> --out <dir> [...]`.

Exit codes: 0 on success, 2 when the self-check reports a failed invariant,
3 on configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .errors import ConfigError
from .experiments import (
    EXPERIMENT_NAMES,
    ExperimentConfig,
    SelfCheckFailure,
    run_experiment,
)


def _canonical(name: str) -> str:
    return name.strip().lower().replace("_", "-")


_ALIASES = {
    "coherence": "coherence",
    "taildecay": "tail-decay",
    "tail-decay": "tail-decay",
    "basinls": "basin-ls",
    "basin-ls": "basin-ls",
    "basinvp": "basin-vp",
    "basin-vp": "basin-vp",
    "stability": "stability",
    "convergenceregion": "convergence-region",
    "convergence-region": "convergence-region",
    "traces": "traces",
    "selfcheck": "self-check",
    "self-check": "self-check",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sepunmix",
        description="Separable least-squares experiments: coherence, basins, stability, traces.",
    )
    parser.add_argument("experiment", help=f"one of {', '.join(EXPERIMENT_NAMES)}")
    parser.add_argument("--config", help="JSON file mirroring the experiment configuration")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config)")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--scale", choices=["desk", "paper"], help="problem scale")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        name = _ALIASES.get(_canonical(args.experiment))
        if name is None:
            raise ConfigError(
                f"unknown experiment {args.experiment!r}; pick one of {EXPERIMENT_NAMES}"
            )
        if args.config:
            config = ExperimentConfig.from_json(args.config)
        else:
            config = ExperimentConfig()
        overrides = {"experiment": name}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out_dir"] = args.out
        if args.scale is not None:
            overrides["scale"] = args.scale
        config = dataclasses.replace(config, **overrides)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3

    try:
        out_dir = run_experiment(config)
    except SelfCheckFailure as exc:
        print(f"self-check failed: {', '.join(exc.failed)}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {out_dir / 'data.csv'} and {out_dir / 'manifest.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
