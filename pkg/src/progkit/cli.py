"""Command-line pipeline from corpus generation to evaluation reports.

Every command reads and writes the documented file formats, logs to
stderr only, and exits 0 on success, 2 on usage errors, 3 on data or
validation errors, and 4 on I/O errors. Outputs are deterministic for a
fixed seed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections.abc import Sequence
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .dataset import DatasetError, read_dataset, write_dataset
from .estimator import (
    EstimatorError,
    RemoteHTTPError,
    RemoteTimeout,
    load_model,
    save_model,
    state_view,
    train,
)
from .evalkit import EvalError, build_report
from .labeling import (
    Labeler,
    LabelingError,
    label_dataset,
    read_labels,
    write_labels,
)
from .recipes import RecipeError, build_library, load_library, save_library
from .rewards import RewardError, RewardSource, reward_trajectory, write_rewards
from .simenv import (
    AgentPolicy,
    PolicyKind,
    SimenvError,
    generate_corpus,
    generate_tasks,
    write_truth,
    read_truth,
)
from .synthesis import (
    SynthesisConfig,
    SynthesisError,
    balance_dataset,
    write_balance_report,
)

LOG = logging.getLogger("progkit")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_IO = 4

DEFAULT_MIX = "optimal=0.25,noisy=0.35,early=0.2,random=0.2"

_DATA_ERRORS = (
    ConfigError,
    DatasetError,
    RecipeError,
    LabelingError,
    SynthesisError,
    SimenvError,
    EvalError,
    RewardError,
    EstimatorError,
)


class UsageError(Exception):
    """A flag combination is invalid beyond what argparse can express."""


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(
            f"expected a non-negative integer, got {text}"
        )
    return value


def _parse_mix(
    spec: str, noise_rate: float, stop_fraction: float
) -> dict[AgentPolicy, float]:
    policies = {
        "optimal": AgentPolicy(PolicyKind.OPTIMAL),
        "noisy": AgentPolicy(PolicyKind.NOISY, noise_rate=noise_rate),
        "early": AgentPolicy(PolicyKind.EARLY_STOP, stop_fraction=stop_fraction),
        "random": AgentPolicy(PolicyKind.RANDOM),
    }
    mix: dict[AgentPolicy, float] = {}
    for part in spec.split(","):
        name, equals, weight_text = part.partition("=")
        name = name.strip()
        if not equals:
            raise UsageError(f"--mix entry {part!r} is not name=weight")
        if name not in policies:
            raise UsageError(
                f"--mix names unknown policy {name!r};"
                f" choose from {', '.join(sorted(policies))}"
            )
        if policies[name] in mix:
            raise UsageError(f"--mix repeats policy {name!r}")
        try:
            weight = float(weight_text)
        except ValueError:
            raise UsageError(
                f"--mix weight for {name!r} is not a number: {weight_text!r}"
            ) from None
        if weight < 0:
            raise UsageError(f"--mix weight for {name!r} is negative")
        mix[policies[name]] = weight
    if abs(sum(mix.values()) - 1.0) > 1e-9:
        raise UsageError(f"--mix weights sum to {sum(mix.values())}, expected 1")
    return mix


def _cmd_simenv_gen(args: argparse.Namespace, cfg: RunConfig) -> None:
    mix = _parse_mix(args.mix, args.noise_rate, args.stop_fraction)
    tasks = generate_tasks(args.tasks, seed=args.seed)
    dataset, truth = generate_corpus(tasks, mix, args.per_task, seed=args.seed)
    write_dataset(args.out, dataset)
    write_truth(args.truth, truth)
    LOG.info(
        "generated %d trajectories over %d tasks -> %s, %d truth rows -> %s",
        len(dataset),
        len(tasks),
        args.out,
        len(truth),
        args.truth,
    )


def _cmd_recipes_build(args: argparse.Namespace, cfg: RunConfig) -> None:
    dataset = read_dataset(args.in_path)
    theta = args.theta if args.theta is not None else cfg.theta
    library = build_library(
        dataset, theta=theta, epsilon=cfg.epsilon, threads=args.threads
    )
    save_library(args.out, library)
    LOG.info(
        "built %d recipes across %d goals -> %s",
        len(library),
        len(library.goals),
        args.out,
    )


def _cmd_label(args: argparse.Namespace, cfg: RunConfig) -> None:
    dataset = read_dataset(args.in_path)
    mode = Labeler(args.mode)
    library = None
    if mode is Labeler.LCS:
        if args.library is None:
            raise UsageError("label --mode lcs requires --library")
        library = load_library(args.library)
    labeled, summary = label_dataset(
        dataset,
        library=library,
        mode=mode,
        epsilon=cfg.epsilon,
        threads=args.threads,
    )
    write_labels(args.out, labeled)
    LOG.info(
        "labeled %d/%d trajectories (%d skipped) -> %s",
        summary.labeled,
        summary.total,
        len(summary.skipped),
        args.out,
    )
    if summary.full_match_failures:
        LOG.warning(
            "%d failed trajectories matched a full recipe: %s",
            len(summary.full_match_failures),
            ", ".join(summary.full_match_failures[:5]),
        )


def _cmd_synth_balance(args: argparse.Namespace, cfg: RunConfig) -> None:
    dataset = read_dataset(args.in_path)
    ratio = args.ratio if args.ratio is not None else cfg.target_ratio
    synth_cfg = SynthesisConfig(
        seed=args.seed,
        target_success_fail_step_ratio=ratio,
        min_insertions=cfg.min_insertions,
        max_insertions=cfg.max_insertions,
        mismatch_fraction=cfg.mismatch_fraction,
        max_balance_rounds=cfg.max_balance_rounds,
    )
    balanced, report = balance_dataset(dataset, synth_cfg)
    write_dataset(args.out, balanced)
    if args.report is not None:
        write_balance_report(args.report, report)
    LOG.info(
        "balanced %d -> %d trajectories -> %s",
        len(dataset),
        len(balanced),
        args.out,
    )


def _cmd_train(args: argparse.Namespace, cfg: RunConfig) -> None:
    labels = read_labels(args.labels)
    corpus = {t.traj_id: t for t in read_dataset(args.corpus)}
    examples = []
    for labeled in labels:
        trajectory = corpus.get(labeled.traj_id)
        if trajectory is None:
            raise DatasetError(
                f"labels reference trajectory {labeled.traj_id!r}"
                " missing from the corpus"
            )
        if len(labeled.labels) != len(trajectory):
            raise DatasetError(
                f"trajectory {labeled.traj_id!r} has {len(trajectory)} steps"
                f" but {len(labeled.labels)} labels"
            )
        examples.extend(
            (state_view(trajectory, index), step.progress)
            for index, step in enumerate(labeled.labels)
        )
    model, losses = train(
        examples,
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    save_model(args.out, model)
    final_loss = losses[-1] if losses else float("nan")
    LOG.info(
        "trained on %d examples for %d epochs; final loss %.6f -> %s",
        len(examples),
        args.epochs,
        final_loss,
        args.out,
    )


def _cmd_reward(args: argparse.Namespace, cfg: RunConfig) -> None:
    dataset = read_dataset(args.in_path)
    source = RewardSource(args.source)
    k = args.k if args.k is not None else cfg.k
    model = None
    labels_by_id = None
    if source is RewardSource.ESTIMATOR:
        if args.model is None:
            raise UsageError("reward --source estimator requires --model")
        model = load_model(args.model)
    elif source is RewardSource.LABELS:
        if args.labels is None:
            raise UsageError("reward --source labels requires --labels")
        labels_by_id = {lt.traj_id: lt for lt in read_labels(args.labels)}
    elif args.endpoint is None:
        raise UsageError("reward --source remote requires --endpoint")
    series = []
    for trajectory in dataset:
        labeled = None
        if labels_by_id is not None:
            labeled = labels_by_id.get(trajectory.traj_id)
            if labeled is None:
                raise DatasetError(f"no labels for trajectory {trajectory.traj_id!r}")
        series.append(
            reward_trajectory(
                trajectory,
                source,
                k=k,
                model=model,
                labels=labeled,
                endpoint=args.endpoint,
                timeout=args.timeout,
            )
        )
    write_rewards(args.out, series)
    LOG.info("wrote %d reward series (k=%d) -> %s", len(series), k, args.out)


def _cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> None:
    dataset = read_dataset(args.corpus)
    truth = read_truth(args.truth)
    model = load_model(args.model)
    labels = None
    if args.labels is not None:
        labels = {lt.traj_id: lt for lt in read_labels(args.labels)}
    paths = build_report(
        dataset,
        truth,
        model,
        args.out_dir,
        labels=labels,
        tau_s=cfg.tau_s,
        latency_repetitions=args.latency_reps,
    )
    LOG.info(
        "report written: %s, %s, %s, %d figures",
        paths.table2,
        paths.table3,
        paths.summary,
        len(paths.figures),
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="derivation seed")
    common.add_argument(
        "--config", type=Path, default=None, help="key=value defaults file"
    )
    common.add_argument(
        "--threads",
        type=_positive_int,
        default=os.cpu_count() or 1,
        help="worker threads for parallel stages",
    )
    common.add_argument(
        "--log-level",
        choices=("debug", "info", "warning", "error"),
        default="info",
    )

    parser = argparse.ArgumentParser(
        prog="progkit",
        description="progress labeling, estimation, and reward pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    simenv = sub.add_parser("simenv", help="synthetic milestone environment")
    simenv_sub = simenv.add_subparsers(dest="subcommand", required=True)
    gen = simenv_sub.add_parser(
        "gen", parents=[common], help="generate a corpus with ground truth"
    )
    gen.add_argument("--tasks", type=_positive_int, required=True)
    gen.add_argument("--per-task", type=_positive_int, required=True)
    gen.add_argument(
        "--mix", default=DEFAULT_MIX, help="policy weights, name=weight pairs"
    )
    gen.add_argument("--noise-rate", type=float, default=0.3)
    gen.add_argument("--stop-fraction", type=float, default=0.5)
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--truth", type=Path, required=True)
    gen.set_defaults(handler=_cmd_simenv_gen)

    recipes = sub.add_parser("recipes", help="recipe library operations")
    recipes_sub = recipes.add_subparsers(dest="subcommand", required=True)
    build = recipes_sub.add_parser(
        "build", parents=[common], help="mine recipes from successes"
    )
    build.add_argument("--in", dest="in_path", type=Path, required=True)
    build.add_argument("--theta", type=float, default=None)
    build.add_argument("--out", type=Path, required=True)
    build.set_defaults(handler=_cmd_recipes_build)

    label = sub.add_parser("label", parents=[common], help="assign progress labels")
    label.add_argument("--in", dest="in_path", type=Path, required=True)
    label.add_argument("--library", type=Path, default=None)
    label.add_argument(
        "--mode", choices=tuple(m.value for m in Labeler), required=True
    )
    label.add_argument("--out", type=Path, required=True)
    label.set_defaults(handler=_cmd_label)

    synth = sub.add_parser("synth", help="synthetic trajectory operations")
    synth_sub = synth.add_subparsers(dest="subcommand", required=True)
    balance = synth_sub.add_parser(
        "balance", parents=[common], help="balance success and failure steps"
    )
    balance.add_argument("--in", dest="in_path", type=Path, required=True)
    balance.add_argument("--ratio", type=float, default=None)
    balance.add_argument("--out", type=Path, required=True)
    balance.add_argument("--report", type=Path, default=None)
    balance.set_defaults(handler=_cmd_synth_balance)

    train_cmd = sub.add_parser(
        "train", parents=[common], help="fit the progress estimator"
    )
    train_cmd.add_argument("--labels", type=Path, required=True)
    train_cmd.add_argument("--corpus", type=Path, required=True)
    train_cmd.add_argument("--epochs", type=_non_negative_int, default=200)
    train_cmd.add_argument("--lr", type=float, default=0.5)
    train_cmd.add_argument("--batch-size", type=_positive_int, default=None)
    train_cmd.add_argument("--out", type=Path, required=True)
    train_cmd.set_defaults(handler=_cmd_train)

    reward = sub.add_parser(
        "reward", parents=[common], help="emit per-step progress rewards"
    )
    reward.add_argument("--in", dest="in_path", type=Path, required=True)
    reward.add_argument(
        "--source", choices=tuple(s.value for s in RewardSource), required=True
    )
    reward.add_argument("--k", type=_positive_int, default=None)
    reward.add_argument("--model", type=Path, default=None)
    reward.add_argument("--labels", type=Path, default=None)
    reward.add_argument("--endpoint", default=None)
    reward.add_argument("--timeout", type=float, default=10.0)
    reward.add_argument("--out", type=Path, required=True)
    reward.set_defaults(handler=_cmd_reward)

    evaluate = sub.add_parser(
        "eval", parents=[common], help="write evaluation tables and figures"
    )
    evaluate.add_argument("--corpus", type=Path, required=True)
    evaluate.add_argument("--truth", type=Path, required=True)
    evaluate.add_argument("--model", type=Path, required=True)
    evaluate.add_argument("--labels", type=Path, default=None)
    evaluate.add_argument("--out-dir", type=Path, required=True)
    evaluate.add_argument("--latency-reps", type=_non_negative_int, default=0)
    evaluate.set_defaults(handler=_cmd_eval)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(message)s",
        force=True,
    )
    try:
        cfg = load_config(args.config) if args.config is not None else RunConfig()
        args.handler(args, cfg)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RemoteTimeout, RemoteHTTPError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_IO
    except _DATA_ERRORS as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK
