"""Command-line entry points: mmdial build|calibrate|filter|stats|eval|serve|sample.

Every command validates its inputs before writing, writes through temp-file
renames so failures never leave partial outputs, and takes explicit seeds:
identical inputs and flags produce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import builder, calibrate, corpus, evalharness, preprocess, service, simsearch
from .stopwords import DEFAULT_STOPWORDS, load_stopwords, stopword_tokens


@dataclass
class PipelineConfig:
    """Inputs and knobs for the build stage."""

    dialogues: dict[str, Path] = field(default_factory=dict)
    images: dict[str, Path] = field(default_factory=dict)
    embeddings: dict[str, Path] = field(default_factory=dict)
    topk: int = 5
    floor: float = 0.0
    seed: int = 0
    out: Path = Path(".")
    stopwords: Path | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.topk < 1:
            raise ValueError(f"topk must be >= 1, got {self.topk}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


def _parse_kv(pairs: list[str] | None, flag: str) -> dict[str, Path]:
    out: dict[str, Path] = {}
    for pair in pairs or []:
        name, sep, path = pair.partition("=")
        if not sep or not name or not path:
            raise ValueError(f"{flag} expects <name>=<path>, got {pair!r}")
        if name in out:
            raise ValueError(f"{flag} given twice for {name!r}")
        out[name] = Path(path)
    return out


def _require_file(path: Path, what: str) -> Path:
    if not Path(path).is_file():
        raise ValueError(f"{what} not found: {path}")
    return Path(path)


def _active_stoplist(stopwords_path: Path | None) -> frozenset[str]:
    words = load_stopwords(_require_file(stopwords_path, "stop-word file")) \
        if stopwords_path else DEFAULT_STOPWORDS
    return stopword_tokens(words)


def _load_named_dialogues(paths: dict[str, Path]) -> list[corpus.Dialogue]:
    dialogues: list[corpus.Dialogue] = []
    for source in sorted(paths):
        loaded = corpus.load_dialogues(_require_file(paths[source], "dialogue file"),
                                       source=source)
        if not loaded:
            raise ValueError(f"dialogue file for source {source!r} is empty: {paths[source]}")
        mismatched = [d.dialogue_id for d in loaded if d.source != source]
        if mismatched:
            raise ValueError(
                f"dialogue file {paths[source]} has records with source != {source!r}: "
                f"{mismatched[:3]}"
            )
        dialogues.extend(loaded)
    return dialogues


def _load_named_images(paths: dict[str, Path]) -> list[corpus.ImageRecord]:
    images: list[corpus.ImageRecord] = []
    for source in sorted(paths):
        loaded = corpus.load_images(_require_file(paths[source], "image file"), source=source)
        if not loaded:
            raise ValueError(f"image file for source {source!r} is empty: {paths[source]}")
        mismatched = [img.image_id for img in loaded if img.source != source]
        if mismatched:
            raise ValueError(
                f"image file {paths[source]} has records with source != {source!r}: "
                f"{mismatched[:3]}"
            )
        images.extend(loaded)
    return images


def _write_json(path: Path, payload: dict) -> None:
    with corpus.atomic_write(path) as fh:
        fh.write(json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n")


# --------------------------------------------------------------------------
# build

def cmd_build(config: PipelineConfig) -> dict:
    """preprocess -> simsearch -> builder; writes instances.jsonl and sims.jsonl."""
    if not config.dialogues:
        raise ValueError("build needs at least one --dialogues <src>=<path>")
    if not config.images:
        raise ValueError("build needs at least one --images <src>=<path>")
    for role in ("sentences", "images"):
        if role not in config.embeddings:
            raise ValueError(f"build needs --embeddings {role}=<path>")

    stoplist = _active_stoplist(config.stopwords)
    dialogues = _load_named_dialogues(config.dialogues)
    images = _load_named_images(config.images)
    sentence_store = corpus.load_embeddings(
        _require_file(config.embeddings["sentences"], "sentence embedding file"))
    image_store = corpus.load_embeddings(
        _require_file(config.embeddings["images"], "image embedding file"))

    candidates: list[preprocess.CandidateSentence] = []
    for dialogue in dialogues:
        candidates.extend(preprocess.extract_candidates(dialogue, stoplist))

    missing = [c.key for c in candidates if c.key not in sentence_store][:5]
    if missing:
        raise ValueError(f"sentence embeddings missing for candidate keys: {missing}")

    split_of_dialogue = {d.dialogue_id: d.split for d in dialogues}
    image_ids_by_split: dict[str, list[str]] = {}
    for img in images:
        image_ids_by_split.setdefault(img.split, []).append(img.image_id)

    # candidates are matched against images of the same split, so held-out
    # splits never borrow training images
    results: dict[str, simsearch.TopKResult] = {}
    for split in corpus.SPLITS:
        split_candidates = [c for c in candidates if split_of_dialogue[c.dialogue_id] == split]
        if not split_candidates:
            continue
        split_image_ids = image_ids_by_split.get(split)
        if not split_image_ids:
            raise ValueError(f"split {split!r} has candidate sentences but no images")
        missing_emb = [iid for iid in split_image_ids if iid not in image_store][:5]
        if missing_emb:
            raise ValueError(f"image embeddings missing for image ids: {missing_emb}")
        split_store = image_store.subset(split_image_ids)
        queries = [(c.key, sentence_store.vector(c.key)) for c in split_candidates]
        for res in simsearch.topk_batch(queries, split_store, config.topk, config.floor,
                                        workers=config.workers):
            results[res.query_id] = res
    ordered_keys = [c.key for c in candidates]

    instances = builder.build_instances(dialogues, candidates, results, images)

    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    builder.write_instances(out_dir / "instances.jsonl", instances)
    with corpus.atomic_write(out_dir / "sims.jsonl") as fh:
        for key in ordered_keys:
            res = results.get(key)
            matches = [] if res is None else [
                {"image_id": m.image_id, "sim": builder.serialize_similarity(m.similarity)}
                for m in res.matches
            ]
            fh.write(corpus.json_line({"query_id": key, "matches": matches}) + "\n")

    by_split = {s: sum(1 for i in instances if i.split == s) for s in corpus.SPLITS}
    return {
        "dialogues": len(dialogues),
        "images": len(images),
        "candidates": len(candidates),
        "instances": len(instances),
        "instances_by_split": by_split,
        "out": str(out_dir),
    }


# --------------------------------------------------------------------------
# calibrate / filter / stats / eval / sample

def _matrix_json(matrix: dict[tuple[str, str], float | None]) -> dict:
    nested: dict[str, dict[str, float | None]] = {}
    for (a, b), rho in sorted(matrix.items()):
        nested.setdefault(a, {})[b] = rho
    return nested


def cmd_calibrate(instances_path: Path, annotations_path: Path, seed: int,
                  out: Path | None) -> dict:
    instances = builder.load_instances(_require_file(instances_path, "instance file"))
    annotations = calibrate.load_annotations(
        _require_file(annotations_path, "annotation file"))
    report = calibrate.calibrate(instances, annotations, seed)
    correlations = calibrate.correlation_report(instances, annotations)
    payload = calibrate.report_as_dict(report)
    payload["spearman"] = {
        "pooled": _matrix_json(correlations.pooled),
        "per_combination": {
            calibrate.combination_label(combo): _matrix_json(matrix)
            for combo, matrix in correlations.per_combination.items()
        },
    }
    if out is not None:
        _write_json(out, payload)
    return payload


def cmd_filter(instances_path: Path, thresholds_path: Path | None,
               default: float | None, out: Path | None) -> dict:
    instances = builder.load_instances(_require_file(instances_path, "instance file"))
    thresholds: dict[tuple[str, str], float] = {}
    if thresholds_path is not None:
        data = json.loads(_require_file(thresholds_path, "thresholds file")
                          .read_text(encoding="utf-8"))
        thresholds = calibrate.thresholds_from_dict(data)
    if not thresholds and default is None:
        raise ValueError("filter needs --thresholds and/or --default-threshold")
    kept = calibrate.filter_instances(instances, thresholds, default=default)
    if out is not None:
        builder.write_instances(out, kept)
    by_combination: dict[str, dict[str, int]] = {}
    for inst in instances:
        label = calibrate.combination_label(inst.combination)
        by_combination.setdefault(label, {"total": 0, "kept": 0})["total"] += 1
    for inst in kept:
        by_combination[calibrate.combination_label(inst.combination)]["kept"] += 1
    return {
        "total": len(instances),
        "kept": len(kept),
        "by_combination": dict(sorted(by_combination.items())),
    }


def cmd_stats(instances_path: Path, dialogue_paths: dict[str, Path]) -> dict:
    instances = builder.load_instances(_require_file(instances_path, "instance file"))
    dialogues = _load_named_dialogues(dialogue_paths) if dialogue_paths else []
    stats = builder.compute_stats(instances, dialogues)
    return stats.as_dict()


def cmd_eval(instances_path: Path, image_paths: dict[str, Path], task: str,
             split: str, seed: int, n_candidates: int,
             out: Path | None, dump: Path | None) -> dict:
    instances = builder.load_instances(_require_file(instances_path, "instance file"))
    split_instances = [inst for inst in instances if inst.split == split]
    if not split_instances:
        raise ValueError(f"no instances in split {split!r}")
    images = _load_named_images(image_paths)
    metrics, ranks = evalharness.evaluate(split_instances, images, task, seed,
                                          n_candidates=n_candidates)
    payload = {
        "task": task,
        "n": metrics.n,
        "r_at_1": metrics.r_at_1,
        "r_at_5": metrics.r_at_5,
        "mean_rank": metrics.mean_rank,
        "mrr": metrics.mrr,
        "seed": seed,
    }
    if out is not None:
        _write_json(out, payload)
    if dump is not None:
        with corpus.atomic_write(dump) as fh:
            for instance_id, rank in ranks:
                fh.write(corpus.json_line({"instance_id": instance_id, "rank": rank}) + "\n")
    return payload


def cmd_sample(instances_path: Path, seed: int, per_segment: int, out: Path) -> dict:
    """Export the per-combination annotation sample as an instance file."""
    instances = builder.load_instances(_require_file(instances_path, "instance file"))
    by_id = {inst.instance_id: inst for inst in instances}
    by_combination: dict[tuple[str, str], list[builder.Instance]] = {}
    for inst in instances:
        by_combination.setdefault(inst.combination, []).append(inst)
    sampled: list[builder.Instance] = []
    for combination in sorted(by_combination):
        group = by_combination[combination]
        if len(group) < calibrate.NUM_SEGMENTS:
            continue
        sample = calibrate.sample_for_annotation(group, seed, per_segment=per_segment)
        for segment in sample.segments:
            sampled.extend(by_id[iid] for iid in segment.instance_ids)
    if not sampled:
        raise ValueError("no combination had enough instances to sample")
    builder.write_instances(out, sampled)
    return {"sampled": len(sampled),
            "combinations": [calibrate.combination_label(c) for c in sorted(by_combination)]}


def cmd_serve(instances_path: Path, log_path: Path, port: int,
              image_base: str, ui_dir: Path | None) -> None:
    instances = builder.load_instances(_require_file(instances_path, "instance file"))
    if ui_dir is None and Path("frontend/dist/index.html").is_file():
        ui_dir = Path("frontend/dist")
    log = service.AnnotationLog(log_path)
    app = service.AnnotationService(instances, log, image_base=image_base)
    server = service.make_server(app, port, ui_dir=ui_dir)
    host, bound_port = server.server_address[:2]
    print(f"serving {len(instances)} instances on http://{host}:{bound_port} "
          f"(log: {log_path})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        log.close()


# --------------------------------------------------------------------------
# argument parsing

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmdial",
        description="Build, calibrate, filter, and evaluate image-mixed dialogue datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="construct instances from corpora and embeddings")
    p.add_argument("--dialogues", action="append", metavar="SRC=PATH")
    p.add_argument("--images", action="append", metavar="SRC=PATH")
    p.add_argument("--embeddings", action="append", metavar="ROLE=PATH",
                   help="roles: sentences, images")
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--floor", type=float, default=0.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--stopwords", type=Path, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("calibrate", help="derive thresholds from annotation scores")
    p.add_argument("--instances", type=Path, required=True)
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("filter", help="apply per-combination similarity thresholds")
    p.add_argument("--instances", type=Path, required=True)
    p.add_argument("--thresholds", type=Path, default=None)
    p.add_argument("--default-threshold", type=float, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("stats", help="dataset statistics per split")
    p.add_argument("--instances", type=Path, required=True)
    p.add_argument("--dialogues", action="append", metavar="SRC=PATH")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("eval", help="tf-idf retrieval baseline")
    p.add_argument("--instances", type=Path, required=True)
    p.add_argument("--images", action="append", metavar="SRC=PATH")
    p.add_argument("--task", choices=evalharness.TASKS, default="current")
    p.add_argument("--split", choices=corpus.SPLITS, default="test")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--candidates", type=int, default=100)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--dump", type=Path, default=None)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("sample", help="export the annotation sample for serving")
    p.add_argument("--instances", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--per-segment", type=int, default=calibrate.SAMPLES_PER_SEGMENT)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--instances", type=Path, required=True)
    p.add_argument("--log", type=Path, required=True)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--image-base", default="")
    p.add_argument("--ui", type=Path, default=None)

    return parser


def _print_result(payload: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(payload, ensure_ascii=False, sort_keys=True))
        return
    for key, value in payload.items():
        print(f"{key}: {json.dumps(value, ensure_ascii=False, sort_keys=True)}")


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "build":
            config = PipelineConfig(
                dialogues=_parse_kv(args.dialogues, "--dialogues"),
                images=_parse_kv(args.images, "--images"),
                embeddings=_parse_kv(args.embeddings, "--embeddings"),
                topk=args.topk,
                floor=args.floor,
                seed=args.seed,
                out=args.out,
                stopwords=args.stopwords,
                workers=args.workers,
            )
            _print_result(cmd_build(config), args.json)
        elif args.command == "calibrate":
            payload = cmd_calibrate(args.instances, args.annotations, args.seed, args.out)
            summary = {
                label: {"chosen": entry["chosen"], "kept": entry["kept"],
                        "total": entry["total"]}
                for label, entry in payload["combinations"].items()
            }
            _print_result(payload if args.json else {"combinations": summary,
                                                     "seed": payload["seed"]}, args.json)
        elif args.command == "filter":
            _print_result(cmd_filter(args.instances, args.thresholds,
                                     args.default_threshold, args.out), args.json)
        elif args.command == "stats":
            payload = cmd_stats(args.instances, _parse_kv(args.dialogues, "--dialogues"))
            if args.out is not None:
                _write_json(args.out, payload)
            _print_result(payload, args.json)
        elif args.command == "eval":
            _print_result(cmd_eval(args.instances, _parse_kv(args.images, "--images"),
                                   args.task, args.split, args.seed, args.candidates,
                                   args.out, args.dump), args.json)
        elif args.command == "sample":
            _print_result(cmd_sample(args.instances, args.seed, args.per_segment,
                                     args.out), args.json)
        elif args.command == "serve":
            cmd_serve(args.instances, args.log, args.port, args.image_base, args.ui)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
