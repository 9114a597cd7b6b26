import argparse
import csv
import sys
from pathlib import Path

import numpy as np
import structlog
from pydantic import ValidationError

from autodiff import check_gradients
from backbone import (
    BackboneParams,
    MiniClip,
    contrastive_pretrain,
    load_checkpoint,
    save_checkpoint,
)
from config import configure_logging, settings
from errors import (
    ArtifactError,
    ConfigError,
    ContractError,
    GradCheckFailed,
    SeplabError,
)
from evaluation.ablation import default_ablation_grids
from evaluation.protocols import (
    Classifier,
    base_to_new_eval,
    cross_dataset_eval,
    domain_shift_eval,
    few_shot_eval,
    make_split,
    seed_average,
    transfer_report,
)
from graph import build_ablation_graph
from models import RunConfig, SepConfig, SplitManifest, SyntheticSpec
from objectives import (
    LossParts,
    ce_visual,
    contrastive_ce,
    kg_text,
    kg_visual,
    total_loss,
)
from runs import RunDirectory, load_grid_file, load_run_config
from sep.model import SepModel, init_prompts
from sep.prompts import PromptParams, load_prompts, save_prompts
from synth.dataset import (
    SyntheticDataset,
    domain_shift_variant,
    file_checksum,
    generate_dataset,
    load_dataset,
    merge_datasets,
    save_dataset,
)
from training.seeding import seed_all
from training.tune import tune, write_metrics_csv

log = structlog.get_logger(__name__)

EVAL_MODES = ["base-to-new", "cross-dataset", "domain-shift", "few-shot"]

# Where `--seed` lands for commands that do not iterate over `train.seeds`.
SEED_FIELDS = {
    "synth": ("data", "benchmark_seed"),
    "pretrain": ("pretrain", "seed"),
    "gradcheck": ("gradcheck", "seed"),
}


def _with_seed(command: str, config: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return config
    if command not in SEED_FIELDS:
        return config.with_overrides({"train": {"seeds": [seed]}})
    section, name = SEED_FIELDS[command]
    if section == "gradcheck":
        toy = config.gradcheck.model_copy(update={name: seed})
        payload = toy.model_dump(mode="json")
        return config.with_overrides({"gradcheck": payload})
    return config.with_overrides({section: {name: seed}})


def _load_backbone(config: RunConfig) -> MiniClip:
    params = load_checkpoint(config.checkpoint)
    if params.config != config.backbone:
        raise ConfigError(
            f"{config.checkpoint} was built for a different backbone "
            "than the config describes",
            field_paths=["backbone"],
        )
    return MiniClip(params if params.frozen else params.freeze())


def _prompts_for(
    config: RunConfig, seed: int
) -> tuple[PromptParams | None, SepConfig, dict]:
    """Tuned prompts for `seed`, the SepConfig they were tuned with and the
    prompt header; no prompts means zero-shot."""
    if config.eval.prompts_dir is None:
        return None, config.sep, {}
    return load_prompts(config.eval.prompts_dir / f"prompts_seed{seed}.sepprompts")


def _tuned_split(prompts_dir: Path, seed: int) -> SplitManifest:
    path = prompts_dir / f"split_seed{seed}.json"
    if not path.is_file():
        raise ArtifactError(f"{path}: file not found")
    try:
        return SplitManifest.model_validate_json(path.read_text())
    except ValidationError as e:
        raise ArtifactError(f"{path}: not a valid split manifest ({e})") from e


def _eval_split(
    config: RunConfig, dataset: SyntheticDataset, seed: int, header: dict
) -> SplitManifest:
    """The split the prompts were tuned on, checked against the configured one.

    Raises:
        ArtifactError: If the prompts directory has no readable split manifest.
        ContractError: If the configured split or the prompt header names other
            base or new classes than the saved manifest.
    """
    configured = make_split(config, dataset, seed)
    if config.eval.prompts_dir is None:
        return configured
    tuned = _tuned_split(config.eval.prompts_dir, seed)
    classes = (tuned.base_classes, tuned.new_classes)
    if classes != (configured.base_classes, configured.new_classes):
        raise ContractError(
            f"prompts in {config.eval.prompts_dir} were tuned on base classes "
            f"{tuned.base_classes}; the configured split has base classes "
            f"{configured.base_classes} and new classes {configured.new_classes}"
        )
    recorded = (
        header.get("base_classes", tuned.base_classes),
        header.get("new_classes", tuned.new_classes),
    )
    if recorded != classes:
        raise ContractError(
            f"prompt header for seed {seed} disagrees with split_seed{seed}.json"
        )
    return tuned


def cmd_synth(
    config: RunConfig, run: RunDirectory, args: argparse.Namespace
) -> list[int]:
    """Write the benchmark, targets, shifted variants and pretraining corpus."""
    data = config.data
    benchmark = generate_dataset(data.spec, data.benchmark_seed)
    save_dataset(benchmark, data.benchmark)
    written = {"benchmark": data.benchmark}

    targets = []
    for target in data.targets:
        spec = data.spec.model_copy(
            update={
                "class_offset": target.class_offset,
                "n_classes": target.n_classes,
                "prototype_seed": target.prototype_seed,
            }
        )
        dataset = generate_dataset(spec, target.seed)
        save_dataset(dataset, target.path)
        targets.append(spec)
        written[f"target:{target.name}"] = target.path

    for variant in data.shifts:
        shifted = domain_shift_variant(benchmark, variant.shift, variant.seed)
        save_dataset(shifted, variant.path)
        written[f"shift:{variant.name}"] = variant.path

    # Fresh draws of every class, so pretraining never sees benchmark examples.
    draws = {"samples_per_class": data.pretrain_samples_per_class, "test_per_class": 0}
    corpus_specs: list[SyntheticSpec] = [data.spec, *targets]
    corpus = merge_datasets(
        [
            generate_dataset(spec.model_copy(update=draws), data.pretrain_seed + i)
            for i, spec in enumerate(corpus_specs)
        ],
        seed=data.pretrain_seed,
    )
    save_dataset(corpus, data.pretrain_corpus)
    written["pretrain_corpus"] = data.pretrain_corpus

    checksums = {
        name: {"path": str(path), "sha256": file_checksum(path)}
        for name, path in written.items()
    }
    run.write_json("datasets.json", checksums)
    log.info("datasets_written", files=len(written))
    return [data.benchmark_seed]


def cmd_pretrain(
    config: RunConfig, run: RunDirectory, args: argparse.Namespace
) -> list[int]:
    """Contrastively pretrain a fresh backbone, freeze it and save the checkpoint."""
    corpus = load_dataset(config.data.pretrain_corpus)
    rng = seed_all(config.pretrain.seed).init
    params = BackboneParams.initialize(config.backbone, rng=rng)
    trained = contrastive_pretrain(params, corpus, config.pretrain).freeze()
    save_checkpoint(trained, config.checkpoint)
    run.write_json(
        "checkpoint.json",
        {"path": str(config.checkpoint), "sha256": file_checksum(config.checkpoint)},
    )
    return [config.pretrain.seed]


def cmd_tune(
    config: RunConfig, run: RunDirectory, args: argparse.Namespace
) -> list[int]:
    """Tune prompts once per seed; writes prompts, split and step metrics."""
    clip = _load_backbone(config)
    dataset = load_dataset(config.data.benchmark)
    for seed in config.train.seeds:
        structlog.contextvars.bind_contextvars(seed=seed)
        split = make_split(config, dataset, seed)
        tuned = tune(
            clip, config.sep, dataset, split, config.train, config.weights, seed
        )
        save_prompts(
            tuned.prompts,
            config.sep,
            run.output(f"prompts_seed{seed}.sepprompts"),
            meta={
                "seed": seed,
                "config_fingerprint": config.fingerprint(),
                "split": config.split.model_dump(mode="json"),
                "base_classes": split.base_classes,
                "new_classes": split.new_classes,
            },
        )
        run.write_json(f"split_seed{seed}.json", split)
        write_metrics_csv(tuned.metrics, run.output(f"metrics_seed{seed}.csv"))
    structlog.contextvars.unbind_contextvars("seed")
    return config.train.seeds


def _write_rows(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0]) if rows else [])
        writer.writeheader()
        writer.writerows(rows)


def cmd_eval(
    config: RunConfig, run: RunDirectory, args: argparse.Namespace
) -> list[int]:
    """Evaluate tuned prompts (or the frozen backbone) under one protocol."""
    clip = _load_backbone(config)
    mode = args.mode
    prompts_dir = config.eval.prompts_dir
    key = "zero-shot" if prompts_dir is None else str(prompts_dir)

    if mode == "base-to-new":
        dataset = load_dataset(config.data.benchmark)
        results = []
        for seed in config.train.seeds:
            prompts, sep_config, header = _prompts_for(config, seed)
            classifier = Classifier(clip, sep_config, prompts)
            split = _eval_split(config, dataset, seed, header)
            results.append(base_to_new_eval(classifier, dataset, split, seed))
        report = seed_average(key, results, config.fingerprint())
        run.write_json("eval_base-to-new.json", report)
        _write_rows(
            run.output("eval_base-to-new.csv"),
            [
                {
                    "key": key,
                    "seed": r.seed,
                    "base": f"{r.base_acc:.4f}",
                    "new": f"{r.new_acc:.4f}",
                    "h": f"{r.h:.4f}",
                }
                for r in results
            ],
        )
        log.info(
            "evaluation_complete",
            mode=mode,
            base=report.base_acc,
            new=report.new_acc,
            h=report.h,
        )
        return config.train.seeds

    dataset = load_dataset(config.data.benchmark)
    rows = []
    for seed in config.train.seeds:
        prompts, sep_config, header = _prompts_for(config, seed)
        classifier = Classifier(clip, sep_config, prompts)
        if mode == "cross-dataset":
            if not config.data.targets:
                raise ConfigError(
                    "no cross-dataset targets configured", field_paths=["data.targets"]
                )
            targets = [(t.name, load_dataset(t.path)) for t in config.data.targets]
            rows += cross_dataset_eval(classifier, dataset, targets, seed)
        elif mode == "domain-shift":
            if not config.data.shifts:
                raise ConfigError(
                    "no domain-shift variants configured", field_paths=["data.shifts"]
                )
            variants = [("source", dataset)]
            variants += [(v.name, load_dataset(v.path)) for v in config.data.shifts]
            split = _eval_split(config, dataset, seed, header)
            rows += domain_shift_eval(classifier, variants, split, seed)
        else:
            split = _eval_split(config, dataset, seed, header)
            rows += few_shot_eval(classifier, dataset, split, seed)

    report = transfer_report(mode, key, rows, config.fingerprint())
    run.write_json(f"eval_{mode}.json", report)
    _write_rows(
        run.output(f"eval_{mode}.csv"),
        [
            {
                "key": key,
                "target": r.name,
                "seed": r.seed,
                "accuracy": f"{r.accuracy:.4f}",
            }
            for r in rows
        ],
    )
    log.info("evaluation_complete", mode=mode, average=report.average)
    return config.train.seeds


def cmd_ablate(
    config: RunConfig, run: RunDirectory, args: argparse.Namespace
) -> list[int]:
    """Run every ablation cell through the graph and tabulate the results."""
    grids = (
        load_grid_file(Path(args.grid))
        if args.grid
        else default_ablation_grids(config.backbone.n_layers)
    )
    _load_backbone(config)
    run.write_json("grids.json", grids)

    graph = build_ablation_graph()
    initial_state = {
        "run_config": config,
        "grids": grids,
        "checkpoint": str(config.checkpoint),
        "dataset": str(config.data.benchmark),
        "output_dir": str(run.path),
        "dataset_checksum": "",
        "cell_order": [],
        "pending": [],
        "reports": [],
        "tables_saved": False,
    }
    graph_config = {
        "configurable": {"thread_id": run.run_id},
        "max_concurrency": settings.ablation_workers,
    }
    reports = []
    for event in graph.stream(initial_state, config=graph_config):
        node, update = next(iter(event.items()))
        log.info("node_completed", node=node)
        reports += (update or {}).get("reports", [])
    run.outputs += ["ablation.csv", "ablation_summary.json"]

    failed = [f"{r.grid}/{r.key}" for r in reports if r.status == "failed"]
    if failed:
        log.warning("cells_failed", cells=failed)
    return config.train.seeds


def gradcheck_objective(config: RunConfig):
    """The full tuning objective on the toy backbone, as a function of the
    prompt tensors; also returns the initial prompts and the frozen tensors."""
    toy = config.gradcheck
    streams = seed_all(toy.seed)
    backbone = BackboneParams.initialize(toy.backbone, rng=streams.init)
    clip = MiniClip(backbone.freeze())
    prompts = init_prompts(toy.sep, toy.backbone, streams.init)

    classes = list(range(toy.n_classes))
    shape = (toy.batch_size, toy.backbone.n_patches, toy.backbone.patch_dim)
    patches = streams.sample.normal(size=shape)
    targets = np.arange(toy.batch_size) % toy.n_classes
    tau = config.weights.tau or toy.backbone.tau
    w_clip = clip.encode_frozen_text(classes)
    f = clip.encode_frozen_image(patches)

    def objective(params):
        model = SepModel(clip, toy.sep, PromptParams(dict(params)))
        w_sep = model.text_classifier(classes)
        f_hat = model.image_embeddings(patches)
        parts = LossParts(
            ce=contrastive_ce(f_hat, w_sep, targets, tau),
            kg_text=kg_text(w_clip, w_sep),
            kg_visual=kg_visual(f_hat, f),
            ce_visual=ce_visual(f_hat, w_clip, targets, tau),
        )
        return total_loss(parts, config.weights)[0]

    frozen = list(clip.params.named_parameters().values())
    return objective, prompts.named_parameters(), frozen


def cmd_gradcheck(
    config: RunConfig, run: RunDirectory, args: argparse.Namespace
) -> list[int]:
    """Finite-difference audit of every learnable gradient on the toy instance."""
    objective, params, frozen = gradcheck_objective(config)
    report = check_gradients(
        objective,
        params,
        frozen=frozen,
        step=config.gradcheck.step,
        tolerance=config.gradcheck.tolerance,
    )
    run.write_json("gradcheck.json", report)
    if not report.frozen_without_grad:
        raise GradCheckFailed(
            "backbone (received a gradient)", float("inf"), report.tolerance
        )
    if not report.passed:
        worst = report.worst
        raise GradCheckFailed(worst.name, worst.rel_error, report.tolerance)
    print(
        f"gradcheck passed: max rel. error {report.max_rel_error:.3e} "
        f"over {len(report.checks)} tensors"
    )
    return [config.gradcheck.seed]


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "tune": cmd_tune,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Self-enhanced prompt tuning on a miniature dual encoder"
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name, handler in COMMANDS.items():
        command = commands.add_parser(name, help=handler.__doc__.splitlines()[0])
        command.add_argument("--config", required=True, help="YAML or JSON run config")
        command.add_argument("--seed", type=int, help="Override the config's seed(s)")
        command.add_argument("--out", help="Directory for run directories")
        if name == "eval":
            command.add_argument("--mode", choices=EVAL_MODES, default="base-to-new")
        if name == "ablate":
            command.add_argument("--grid", help="Grid file (default: built-in grids)")
    return parser


def run_command(args: argparse.Namespace) -> RunDirectory:
    """Load the config, create the run directory and run one command in it."""
    config = _with_seed(args.command, load_run_config(Path(args.config)), args.seed)
    out_dir = Path(args.out) if args.out else config.output_dir or settings.runs_dir
    run = RunDirectory.create(args.command, config, out_dir)
    configure_logging(log_file=run.log_file)
    structlog.contextvars.bind_contextvars(command=args.command, run_id=run.run_id)
    try:
        seeds = COMMANDS[args.command](config, run, args)
        run.finish(seeds)
    finally:
        structlog.contextvars.clear_contextvars()
    return run


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        run_command(args)
    except SeplabError as e:
        log.error(
            "command_failed", command=args.command, error=str(e), exit_code=e.exit_code
        )
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
