"""
Command-line entry point: ``rexl <command> [flags]``.

Commands: synth-data, train-classifier, train, explain, evaluate, compare,
bench. Every command writes ``effective_config.json`` into ``--out`` and
stamps its artifacts with the seed and config hash.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from dotenv import load_dotenv

from .classifiers import BaseClassifier, SlowClassifier, save_tiny_params, train_tiny_classifier
from .config import RunConfig, build_classifier, load_run_config, require_paths, write_effective_config
from .errors import ConfigError, exit_code_for
from .experiments import make_explainers, oracle_items
from .image_io import load_image
from .metrics import EvalItem, EvalReport, benchmark, comparison_table, evaluate_method, format_table
from .policy import PolicyParams, load_params, save_params
from .saliency import explain, export_heatmap, export_map, render_heatmap
from .synthetic import load_dataset, write_dataset
from .trainer import DatasetEpisodes, OracleFamilyEpisodes, train

logger = logging.getLogger(__name__)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="Run config JSON (must contain \"version\": 1)")
    p.add_argument("--seed", type=int, help="Global seed (default: 0)")
    p.add_argument("--threads", type=int, help="Worker threads (default: REXL_THREADS or all cores)")
    p.add_argument("--out", help="Output directory (default: runs)")
    p.add_argument(
        "--log-level",
        default=None,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: REXL_LOG_LEVEL or INFO)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rexl", description="Learned sequential-masking saliency maps for black-box image classifiers"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="Generate the synthetic shapes dataset")
    _add_common(p)
    p.add_argument("--images-per-class", type=int, help="Images per class (default: 100)")
    p.add_argument("--size", type=int, help="Image side in pixels (default: 112)")

    p = sub.add_parser("train-classifier", help="Train the tiny classifier on a dataset")
    _add_common(p)
    p.add_argument("--dataset", help="Dataset directory from synth-data")

    p = sub.add_parser("train", help="Train a masking agent")
    _add_common(p)
    p.add_argument("--dataset", help="Dataset directory (tiny/subprocess classifiers)")
    p.add_argument("--scope", choices=["DS", "CS", "IS"], help="Agent scope (default: CS)")
    p.add_argument("--class-index", type=int, help="Class for CS scope")
    p.add_argument("--image-id", help="Image for IS scope")
    p.add_argument("--steps", type=int, help="Total environment steps")
    p.add_argument("--resume", action="store_true", help="Continue from the checkpoint in --out")

    p = sub.add_parser("explain", help="Explain images with a trained agent")
    _add_common(p)
    p.add_argument("--weights", help="Agent weight file")
    p.add_argument("--images", nargs="+", help="PNG/PGM images to explain")
    p.add_argument("--dataset", help="Explain the images of a dataset instead")
    p.add_argument("--class-index", type=int, help="Target class for --images")
    p.add_argument("--lambda", dest="lam", type=float, help="Cumulating factor (default: 1.0)")
    p.add_argument("--limit", type=int, help="Explain at most this many images")

    for name, helptext in (
        ("evaluate", "Deletion/insertion evaluation, optionally for several λ values"),
        ("compare", "Compare rexl, rise, greedy and random on the same images"),
        ("bench", "Time explain calls and count classifier calls per method"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        p.add_argument("--weights", help="Agent weight file (needed for rexl)")
        p.add_argument("--images", nargs="+", help="PNG/PGM images")
        p.add_argument("--dataset", help="Dataset directory")
        p.add_argument("--class-index", type=int, help="Target class for --images")
        p.add_argument("--methods", nargs="+", choices=["rexl", "rise", "greedy", "random"])
        p.add_argument("--limit", type=int, help="Use at most this many images")
        if name == "evaluate":
            p.add_argument("--lambdas", nargs="+", type=float, help="λ values, one report each")
        if name in ("evaluate", "compare"):
            p.add_argument("--db", help="SQLite file to append evaluation rows to")
        if name == "bench":
            p.add_argument("--repetitions", type=int, help="Repetitions per image (default: 1)")
            p.add_argument("--delay", type=float, help="Added per-call classifier cost in seconds")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    keys = (
        "seed", "threads", "out", "dataset", "scope", "class_index", "image_id", "weights",
        "images", "lam", "lambdas", "methods", "limit", "db", "repetitions", "delay",
    )
    out = {k: getattr(args, k, None) for k in keys}
    if getattr(args, "images", None):
        out["images"] = [str(Path(p)) for p in args.images]
    return out


def _section_overrides(args: argparse.Namespace, config_obj: Dict[str, object]) -> None:
    """Fold section-level flags (--steps, --size, ...) into the override dict."""
    if getattr(args, "steps", None) is not None:
        config_obj.setdefault("train", {})["total_steps"] = args.steps
    synth = {}
    if getattr(args, "images_per_class", None) is not None:
        synth["images_per_class"] = args.images_per_class
    if getattr(args, "size", None) is not None:
        synth["size"] = args.size
    if synth:
        config_obj.setdefault("synth", {}).update(synth)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    defaults = {"methods": ["rexl"]} if args.command == "evaluate" else {}
    base = load_run_config(args.config, defaults)
    obj = base.to_dict()
    obj.update({k: v for k, v in _overrides(args).items() if v is not None})
    for section in ("train", "synth"):
        obj[section] = dict(obj[section])
    _section_overrides(args, obj)
    return RunConfig.from_dict(obj)


def _limit(items: List[EvalItem], limit: Optional[int]) -> List[EvalItem]:
    return items if limit is None else items[:limit]


def load_items(config: RunConfig) -> Tuple[Optional[BaseClassifier], List[EvalItem]]:
    """The classifier and images a command works on.

    Planted-oracle runs use the held-out oracle family, each image under its
    own oracle; other runs use --images (with --class-index) or a dataset.
    """
    spec = config.classifier_spec()
    if spec.type == "oracle":
        oracles = config.oracle_suite().build(config.k, held_out=True)
        return None, _limit(oracle_items(oracles), config.limit)
    if not config.images and not config.dataset:
        raise ConfigError("no images: pass --images or --dataset")
    require_paths(config, "images" if config.images else "dataset")
    if config.images:
        items = [EvalItem(load_image(p), config.class_index, Path(p).stem) for p in config.images]
    else:
        ds = load_dataset(config.dataset)  # type: ignore[arg-type]
        items = [EvalItem(img, int(y), i) for img, y, i in zip(ds.images, ds.labels, ds.image_ids)]
    return build_classifier(spec), _limit(items, config.limit)


def _agent(config: RunConfig, methods: Sequence[str]) -> Optional[PolicyParams]:
    if "rexl" not in methods:
        return None
    require_paths(config, "weights")
    return load_params(config.weights)  # type: ignore[arg-type]


def _close(classifier: Optional[BaseClassifier]) -> None:
    if classifier is not None:
        classifier.close()


def cmd_synth_data(config: RunConfig, args: argparse.Namespace) -> int:
    spec = config.synth_spec()
    out = write_dataset(spec, config.out)
    write_effective_config(config, out)
    print(f"Wrote {len(spec.classes) * spec.images_per_class} images to {out}")
    return 0


def cmd_train_classifier(config: RunConfig, args: argparse.Namespace) -> int:
    require_paths(config, "dataset")
    ds = load_dataset(config.dataset)  # type: ignore[arg-type]
    params = train_tiny_classifier(ds.images, ds.labels, config.tiny_config(), config.seed, ds.num_classes)
    params.extra.update({"seed": config.seed, "config_hash": config.hash, "class_names": ds.class_names})
    out = Path(config.out)
    save_tiny_params(out / "classifier.json", params)
    write_effective_config(config, out)
    print(f"Classifier saved to {out / 'classifier.json'} (training accuracy {params.extra['train_accuracy']:.3f})")
    return 0


def cmd_train(config: RunConfig, args: argparse.Namespace) -> int:
    out = Path(config.out)
    spec = config.classifier_spec()
    classifier: Optional[BaseClassifier] = None
    if spec.type == "oracle":
        if config.scope == "DS":
            raise ConfigError("planted-oracle training supports CS and IS scopes only")
        oracles = config.oracle_suite().build(config.k, held_out=False)
        ids = [f"train-{i:04d}" for i in range(len(oracles))]
        if config.scope == "IS":
            if config.image_id not in ids:
                raise ConfigError(f"image {config.image_id!r} is not one of {ids[0]}..{ids[-1]}")
            keep = ids.index(config.image_id)
            oracles, ids = [oracles[keep]], [ids[keep]]
        factory = OracleFamilyEpisodes(oracles, ids)
    else:
        require_paths(config, "dataset")
        ds = load_dataset(config.dataset)  # type: ignore[arg-type]
        classifier = build_classifier(spec)
        factory = DatasetEpisodes(
            ds.images, ds.labels, ds.image_ids, classifier, config.scope, config.class_index, config.image_id
        )
    try:
        result = train(
            factory,
            config.train_config(),
            k=config.k,
            pool=config.pool,
            checkpoint_path=out / "checkpoint.json",
            resume=args.resume,
            log_path=out / "train_log.csv",
        )
    finally:
        _close(classifier)
    result.params.extra.update(
        {
            "config_hash": config.hash,
            "seen_image_ids": sorted(result.seen_image_ids),
            "seen_classes": sorted(result.seen_classes),
        }
    )
    save_params(out / "agent.json", result.params)
    write_effective_config(config, out)
    print(
        f"Agent saved to {out / 'agent.json'}: {result.updates} updates, {result.env_steps} env steps, "
        f"{len(result.seen_image_ids)} distinct images"
    )
    return 0


def cmd_explain(config: RunConfig, args: argparse.Namespace) -> int:
    require_paths(config, "weights")
    params = load_params(config.weights)  # type: ignore[arg-type]
    classifier, items = load_items(config)
    out = Path(config.out)
    try:
        for item in items:
            clf = item.classifier or classifier
            result = explain(params, clf, item.image, item.class_index, config.lam, config.seed)
            export_map(
                out / "maps" / f"{item.image_id}.json",
                result.saliency,
                seed=config.seed,
                config_hash=config.hash,
                image_id=item.image_id,
                class_index=item.class_index,
                calls=result.calls,
            )
            result.trace.to_frame().to_csv(out / "maps" / f"{item.image_id}_trace.csv", index=False)
            heatmap = render_heatmap(result.saliency, item.image.height, item.image.width, image=item.image)
            export_heatmap(out / "heatmaps", item.image_id, heatmap)
            print(f"{item.image_id}: {result.calls} classifier calls")
    finally:
        _close(classifier)
    write_effective_config(config, out)
    return 0


def _save_to_db(config: RunConfig, reports: Sequence[EvalReport]) -> None:
    if not config.db:
        return
    from .sql_storage import init_db, save_report

    _, SessionLocal = init_db(f"sqlite:///{config.db}")
    session = SessionLocal()
    try:
        n = sum(save_report(session, r) for r in reports)
    finally:
        session.close()
    logger.info("stored %d evaluation rows in %s", n, config.db)


def _lam_tag(lam: float) -> str:
    return f"{lam:g}".replace(".", "p")


def cmd_evaluate(config: RunConfig, args: argparse.Namespace) -> int:
    params = _agent(config, config.methods)
    classifier, items = load_items(config)
    out = Path(config.out)
    lambdas = config.lambdas or [config.lam]
    reports = []
    try:
        for lam in lambdas:
            explainers = make_explainers(
                config.methods, params=params, k=config.k, lam=lam, seed=config.seed, rise=config.rise_config()
            )
            for name, method in explainers.items():
                report = evaluate_method(
                    name, method, classifier, items, config.eval_config(),
                    n_jobs=config.threads, lam=lam, config_hash=config.hash,
                )
                tag = f"{name}_lam{_lam_tag(lam)}"
                report.save(out / f"report_{tag}.json")
                report.save_curves(out / "curves" / tag)
                report.save_timings(out / "timings" / f"{tag}.csv")
                reports.append(report)
    finally:
        _close(classifier)
    _save_to_db(config, reports)
    write_effective_config(config, out)
    table = comparison_table(reports)
    table.insert(1, "lambda", [r.lam for r in reports])
    print(format_table(table))
    return 0


def cmd_compare(config: RunConfig, args: argparse.Namespace) -> int:
    params = _agent(config, config.methods)
    classifier, items = load_items(config)
    out = Path(config.out)
    explainers = make_explainers(
        config.methods, params=params, k=config.k, lam=config.lam, seed=config.seed, rise=config.rise_config()
    )
    reports = []
    try:
        for name, method in explainers.items():
            report = evaluate_method(
                name, method, classifier, items, config.eval_config(),
                n_jobs=config.threads, lam=config.lam, config_hash=config.hash,
            )
            report.save(out / f"report_{name}.json")
            report.save_timings(out / "timings" / f"{name}.csv")
            reports.append(report)
    finally:
        _close(classifier)
    _save_to_db(config, reports)
    table = comparison_table(reports)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "compare.csv", index=False)
    text = format_table(table)
    (out / "compare.txt").write_text(text + "\n", encoding="utf-8")
    write_effective_config(config, out)
    print(text)
    return 0


def cmd_bench(config: RunConfig, args: argparse.Namespace) -> int:
    params = _agent(config, config.methods)
    classifier, items = load_items(config)
    if config.delay > 0:
        classifier = SlowClassifier(classifier, config.delay) if classifier is not None else None
        items = [
            EvalItem(i.image, i.class_index, i.image_id, SlowClassifier(i.classifier, config.delay))
            if i.classifier is not None else i
            for i in items
        ]
    out = Path(config.out)
    rise = config.rise_config()
    rise.n_jobs = 1
    explainers = make_explainers(
        config.methods, params=params, k=config.k, lam=config.lam, seed=config.seed, rise=rise
    )
    try:
        report = benchmark(explainers, classifier, items, config.repetitions, threads=1)
    finally:
        _close(classifier)
    report.save(out / "bench.json", seed=config.seed, config_hash=config.hash, delay=config.delay)
    write_effective_config(config, out)
    print(format_table(report.to_frame()))
    if "rexl" in explainers and "rise" in explainers:
        ratio = report.speedup("rexl", "rise")
        if ratio is not None:
            print(f"rexl speedup over rise: {ratio:.1f}x")
    return 0


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "synth-data": cmd_synth_data,
    "train-classifier": cmd_train_classifier,
    "train": cmd_train,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "bench": cmd_bench,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    level = args.log_level or os.environ.get("REXL_LOG_LEVEL", "INFO")
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](config, args)
    except Exception as exc:
        code = exit_code_for(exc)
        if code == 1:
            logger.exception("%s failed", args.command)
        else:
            logger.error("%s failed: %s", args.command, exc)
        return code


if __name__ == "__main__":
    sys.exit(main())
