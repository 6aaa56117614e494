"""Batch command-line front end.

Subcommands cover the whole pipeline: corpus generation, event ranking,
training, the on-device/offload estimate, partitioning, fleet simulation,
and metric reports. Every command is file-based and reproducible: identical
inputs and seed give byte-identical outputs, and outputs are written to a
temporary file and renamed so failures never leave partial artifacts.

Exit codes: 0 success, 2 configuration errors, 3 domain errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources as importlib_resources
from pathlib import Path

import numpy as np

from . import cnn, features, partitioning, resources, simulation
from .errors import EdgemalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DOMAIN = 3

_REGRESSOR_TRAIN_SAMPLES = 600


class _ConfigError(Exception):
    pass


def data_path(*parts: str) -> Path:
    """Path to a packaged data file (default model, shipped scenarios)."""
    return Path(importlib_resources.files("edgemal").joinpath("data", *parts))


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _atomic_write_bytes(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _load_json(path: Path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise _ConfigError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise _ConfigError(f"invalid JSON in {path}: {exc}") from exc


def _load_spec(path: str | None) -> cnn.ModelSpec:
    spec_path = Path(path) if path else data_path("default_model.json")
    return cnn.spec_from_json(_load_json(spec_path))


def _info(args, message: str) -> None:
    if not args.quiet:
        print(message)


# --- corpus ------------------------------------------------------------------

def _pgm_name(index: int) -> str:
    return f"images/img_{index:06d}.pgm"


def cmd_gen_corpus(args) -> int:
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    if args.full_res:
        (out / "full_res").mkdir(parents=True, exist_ok=True)

    bundle = features.gen_synthetic_corpus(
        samples_per_class=args.per_class, events=args.events,
        noise=args.noise, classes=args.classes, seed=args.seed)
    ranked = features.rank_events(bundle.traces)
    top = min(args.top_events, len(ranked))
    selected = features.select_top_events(ranked, top)
    name_to_col = {name: i for i, name in enumerate(bundle.traces.event_names)}
    columns = [name_to_col[name] for name in selected]

    samples = []
    for i in range(bundle.traces.rows.shape[0]):
        values = bundle.traces.rows[i, columns]
        label = int(bundle.traces.labels[i])
        full = features.to_grayscale(values, bundle.blobs[i], label)
        small = features.downsample(full)
        rel = _pgm_name(i)
        header = f"P5\n{small.side} {small.side}\n255\n".encode("ascii")
        _atomic_write_bytes(out / rel, header + small.pixels.tobytes())
        if args.full_res:
            big_rel = f"full_res/img_{i:06d}.pgm"
            header = f"P5\n{full.side} {full.side}\n255\n".encode("ascii")
            _atomic_write_bytes(out / big_rel, header + full.pixels.tobytes())
        samples.append({
            "file": rel,
            "label": label,
            "class_name": bundle.traces.class_names[label],
        })

    csv_tmp = out / "traces.csv.tmp"
    features.write_traces_csv(bundle.traces, csv_tmp)
    os.replace(csv_tmp, out / "traces.csv")
    _atomic_write_text(out / "ranked_events.json",
                       _dump_json(features.ranked_to_json(ranked)))
    manifest = {
        "class_names": bundle.traces.class_names,
        "side": features.SMALL_SIDE,
        "seed": args.seed,
        "noise": args.noise,
        "selected_events": selected,
        "samples": samples,
    }
    _atomic_write_text(out / "manifest.json", _dump_json(manifest))
    _info(args, f"wrote {len(samples)} images + manifest to {out}")
    return EXIT_OK


def _load_corpus(corpus_dir: Path, limit: int = 0):
    manifest = _load_json(corpus_dir / "manifest.json")
    samples = manifest["samples"]
    if limit > 0:
        samples = samples[:limit]
    images = []
    labels = []
    names = []
    for entry in samples:
        img = features.read_pgm(corpus_dir / entry["file"], entry["label"])
        images.append(features.image_to_tensor(img))
        labels.append(int(entry["label"]))
        names.append(entry["file"])
    return manifest, images, labels, names


# --- event ranking --------------------------------------------------------------

def cmd_rank_events(args) -> int:
    try:
        traces = features.read_traces_csv(Path(args.traces))
    except FileNotFoundError as exc:
        raise _ConfigError(f"file not found: {args.traces}") from exc
    ranked = features.rank_events(traces)
    doc = features.ranked_to_json(ranked)
    if args.out:
        _atomic_write_text(Path(args.out), _dump_json(doc))
    shown = ranked[: args.top] if args.top else ranked
    for entry in shown:
        _info(args, f"rank {entry.rank:3d}  rho {entry.rho:+.6f}  {entry.name}")
    return EXIT_OK


# --- training --------------------------------------------------------------------

def _accuracy(model: cnn.Model, images, labels) -> float:
    if not images:
        return 0.0
    hits = 0
    for x, lab in zip(images, labels):
        if int(np.argmax(cnn.forward(model, x).array)) == lab:
            hits += 1
    return hits / len(images)


def cmd_train(args) -> int:
    corpus_dir = Path(args.corpus)
    manifest, images, labels, _ = _load_corpus(corpus_dir)
    spec = _load_spec(args.model)
    train_idx, test_idx = features.split_corpus(labels, args.train_frac, args.seed)
    model = cnn.build_model(spec, args.seed)
    trained, history = cnn.train_model(
        model, [images[i] for i in train_idx], [labels[i] for i in train_idx],
        epochs=args.epochs, learning_rate=args.learning_rate,
        batch_size=args.batch_size, seed=args.seed,
        clip_norm=args.clip_norm if args.clip_norm > 0 else None)
    train_acc = _accuracy(trained, [images[i] for i in train_idx],
                          [labels[i] for i in train_idx])
    test_acc = _accuracy(trained, [images[i] for i in test_idx],
                         [labels[i] for i in test_idx])

    _atomic_write_text(Path(args.out), _dump_json(cnn.weights_to_json(trained)))
    if args.history:
        _atomic_write_text(Path(args.history), _dump_json({
            "epoch_loss": history,
            "train_accuracy": train_acc,
            "test_accuracy": test_acc,
            "train_samples": len(train_idx),
            "test_samples": len(test_idx),
            "classes": manifest["class_names"],
        }))
    _info(args, f"train accuracy {train_acc:.4f}  test accuracy {test_acc:.4f}")
    return EXIT_OK


# --- estimate ---------------------------------------------------------------------

def _get_regressor(args) -> resources.RegressorModel:
    if getattr(args, "regressor", None):
        return resources.regressor_from_json(_load_json(Path(args.regressor)))
    dataset = resources.build_regressor_dataset(args.seed, _REGRESSOR_TRAIN_SAMPLES)
    return resources.fit_regressor(dataset)


def cmd_estimate(args) -> int:
    spec = _load_spec(args.model)
    reg = _get_regressor(args)
    decision = resources.predict_offload(
        reg, spec, args.node_free, n_batches=args.n_batches,
        batch_size=args.batch_size, kb_per_param=args.kb_per_param)
    mem = resources.model_bytes(spec, n_batches=args.n_batches,
                                batch_size=args.batch_size,
                                kb_per_param=args.kb_per_param)
    record = {
        "verdict": decision.verdict,
        "score": decision.score,
        "model_bytes": mem,
        "node_free_bytes": args.node_free,
        "ground_truth_comparator": resources.ON_DEVICE if mem <= args.node_free
        else resources.OFFLOAD,
        "n_batches": args.n_batches,
        "batch_size": args.batch_size,
        "kb_per_param": args.kb_per_param,
    }
    text = _dump_json(record)
    if args.out:
        _atomic_write_text(Path(args.out), text)
    if args.save_regressor:
        _atomic_write_text(Path(args.save_regressor),
                           _dump_json(resources.regressor_to_json(reg)))
    print(text, end="")
    return EXIT_OK


# --- partition ----------------------------------------------------------------------

def _build_placement(scenario, spec, nodes_arg, *, n_batches, batch_size,
                     kb_per_param) -> partitioning.Placement:
    mem = resources.model_bytes(spec, n_batches=n_batches, batch_size=batch_size,
                                kb_per_param=kb_per_param)
    if nodes_arg == "parent-only":
        parent = scenario.node(scenario.parent_id)
        if mem > parent.mem_free_bytes:
            raise EdgemalError(
                f"model needs {mem} bytes, parent has {parent.mem_free_bytes}")
        return partitioning.single_node_placement(spec, scenario.parent_id)
    if nodes_arg is not None:
        count = int(nodes_arg)
        candidates = partitioning.candidate_order(
            scenario, scenario.parent_id, scenario.radius_r)
        if count < 1 or count > len(candidates):
            raise _ConfigError(f"--nodes must be in [1, {len(candidates)}]")
        chosen = candidates[:count]
        return partitioning.partition_layers(spec, chosen, n_batches=n_batches,
                                             batch_size=batch_size,
                                             kb_per_param=kb_per_param)
    chosen = partitioning.select_nodes(scenario, scenario.parent_id,
                                       scenario.radius_r, mem, scenario.max_nodes)
    return partitioning.partition_layers(spec, chosen, n_batches=n_batches,
                                         batch_size=batch_size,
                                         kb_per_param=kb_per_param)


def cmd_partition(args) -> int:
    scenario = partitioning.scenario_from_json(_load_json(Path(args.scenario)))
    spec = _load_spec(args.model)
    placement = _build_placement(scenario, spec, args.nodes,
                                 n_batches=args.n_batches,
                                 batch_size=args.batch_size,
                                 kb_per_param=args.kb_per_param)
    _atomic_write_text(Path(args.out),
                       _dump_json(partitioning.placement_to_json(placement)))
    ranges = ", ".join(f"{nid}:[{lo}..{hi - 1}]"
                       for nid, (lo, hi) in placement.assignments)
    _info(args, f"placement: {ranges}")
    return EXIT_OK


# --- simulate -----------------------------------------------------------------------

def _load_faults(path: Path) -> list[simulation.FaultEvent]:
    doc = _load_json(path)
    return [simulation.FaultEvent(entry["node_id"], float(entry["time_sec"]))
            for entry in doc]


def _simulate_one(scenario_path: Path, args, spec, model, images, labels, names):
    scenario = partitioning.scenario_from_json(_load_json(scenario_path))
    if args.placement:
        placement = partitioning.placement_from_json(_load_json(Path(args.placement)))
    else:
        placement = _build_placement(scenario, spec, args.nodes,
                                     n_batches=args.n_batches,
                                     batch_size=args.batch_size,
                                     kb_per_param=args.kb_per_param)
    faults = _load_faults(Path(args.faults)) if args.faults else []
    if len(placement.assignments) == 1 and not faults:
        report = simulation.simulate_on_device(
            scenario, placement.assignments[0][0], model, images,
            n_batches=args.n_batches, batch_size=args.batch_size,
            kb_per_param=args.kb_per_param)
    else:
        report = simulation.simulate_inference(
            scenario, placement, model, images, faults,
            n_batches=args.n_batches, batch_size=args.batch_size,
            kb_per_param=args.kb_per_param)
    report.input_labels = labels
    report.input_files = names
    if args.baseline:
        base_doc = _load_json(Path(args.baseline))
        report.speedup_vs_baseline = (
            base_doc["total_latency_max_sec"] / report.total_latency_max_sec
            if report.total_latency_max_sec > 0 else float("inf"))
    return report


def cmd_simulate(args) -> int:
    spec = _load_spec(args.model)
    model = cnn.weights_from_json(_load_json(Path(args.weights)), spec)
    _, images, labels, names = _load_corpus(Path(args.corpus), args.limit)
    scenario_paths = [Path(p) for p in args.scenario]

    if len(scenario_paths) == 1:
        report = _simulate_one(scenario_paths[0], args, spec, model,
                               images, labels, names)
        _atomic_write_text(Path(args.out),
                           _dump_json(simulation.report_to_json(report)))
        if args.event_log:
            log_path = Path(args.event_log)
            log_tmp = log_path.with_name(log_path.name + ".tmp")
            simulation.write_event_log(report, log_tmp)
            os.replace(log_tmp, log_path)
        _info(args, f"latency {report.total_latency_max_sec:.6f} s, "
                    f"faults handled {report.faults_handled}")
        return EXIT_OK

    # scenario list: fan out, merge reports deterministically by input order
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=min(8, len(scenario_paths))) as pool:
        futures = [pool.submit(_simulate_one, path, args, spec, model,
                               images, labels, names)
                   for path in scenario_paths]
        reports = [f.result() for f in futures]
    for path, report in zip(scenario_paths, reports):
        target = out_dir / (path.stem + "_report.json")
        _atomic_write_text(target, _dump_json(simulation.report_to_json(report)))
        _info(args, f"{path.stem}: latency {report.total_latency_max_sec:.6f} s")
    return EXIT_OK


# --- report -------------------------------------------------------------------------

def classification_metrics(predictions: list[int], labels: list[int],
                           class_count: int) -> dict:
    """Accuracy plus macro-averaged F1 and recall over all classes."""
    tp = [0] * class_count
    fp = [0] * class_count
    fn = [0] * class_count
    hits = 0
    for pred, lab in zip(predictions, labels):
        if pred == lab:
            hits += 1
            tp[lab] += 1
        else:
            fp[pred] += 1
            fn[lab] += 1
    recalls = []
    f1s = []
    for c in range(class_count):
        recall = tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] else 0.0
        precision = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        recalls.append(recall)
        f1s.append(f1)
    n = len(labels)
    return {
        "accuracy": hits / n if n else 0.0,
        "macro_f1": sum(f1s) / class_count,
        "macro_recall": sum(recalls) / class_count,
        "per_class_recall": recalls,
        "per_class_f1": f1s,
        "samples": n,
        "averaging": "macro",
    }


def cmd_report(args) -> int:
    doc = _load_json(Path(args.report))
    predictions = doc.get("predictions", [])
    labels = doc.get("input_labels")
    class_names = None
    if args.manifest:
        manifest = _load_json(Path(args.manifest))
        class_names = manifest["class_names"]
        by_file = {s["file"]: int(s["label"]) for s in manifest["samples"]}
        if doc.get("input_files"):
            labels = [by_file[name] for name in doc["input_files"]]
    if labels is None:
        raise _ConfigError("report lacks input_labels; pass --manifest")
    class_count = len(class_names) if class_names else max(
        len(doc["outputs"][0]) if doc.get("outputs") else 0,
        max(labels, default=0) + 1)

    metrics = classification_metrics(predictions, labels, class_count)
    result = {
        "metrics": metrics,
        "total_latency_max_sec": doc["total_latency_max_sec"],
        "total_latency_pipeline_sec": doc["total_latency_pipeline_sec"],
        "faults_handled": doc.get("faults_handled", 0),
    }
    if args.baseline:
        base = _load_json(Path(args.baseline))
        result["speedup_vs_baseline"] = (
            base["total_latency_max_sec"] / doc["total_latency_max_sec"]
            if doc["total_latency_max_sec"] > 0 else float("inf"))
    elif "speedup_vs_baseline" in doc:
        result["speedup_vs_baseline"] = doc["speedup_vs_baseline"]

    print(f"samples          {metrics['samples']}")
    print(f"accuracy         {metrics['accuracy']:.4f}")
    print(f"macro F1         {metrics['macro_f1']:.4f}")
    print(f"macro recall     {metrics['macro_recall']:.4f}")
    print(f"latency (max)    {doc['total_latency_max_sec']:.6f} s")
    print(f"latency (1-shot) {doc['total_latency_pipeline_sec']:.6f} s")
    if "speedup_vs_baseline" in result:
        print(f"speedup          {result['speedup_vs_baseline']:.4f}x")
    print("node               bytes        busy_sec    layers")
    for nid in sorted(doc["per_node"],
                      key=lambda n: (n != doc["parent_id"], n)):
        entry = doc["per_node"][nid]
        print(f"{nid:<12} {entry['bytes_consumed']:>12} "
              f"{entry['busy_sec']:>15.6f} {entry['layers_executed']:>9}")

    if args.out:
        _atomic_write_text(Path(args.out), _dump_json(result))
    return EXIT_OK


# --- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgemal",
        description="Resource-aware distributed malware detection pipeline")
    parser.add_argument("--seed", type=int, default=42, help="global PRNG seed")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress progress messages")
    # the global flags are also accepted after the subcommand; SUPPRESS keeps
    # the subparser from clobbering a value given before it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help=argparse.SUPPRESS)
    common.add_argument("--quiet", action="store_true",
                        default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", parents=[common],
                       help="generate the synthetic labeled corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--events", type=int, default=16)
    p.add_argument("--noise", type=float, default=4.0)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--top-events", type=int, default=8)
    p.add_argument("--full-res", action="store_true",
                   help="also write the 256x256 images")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("rank-events", parents=[common], help="rank trace events by correlation")
    p.add_argument("--traces", required=True, help="traces CSV")
    p.add_argument("--out", help="ranked events JSON")
    p.add_argument("--top", type=int, default=0, help="print only the top K")
    p.set_defaults(func=cmd_rank_events)

    p = sub.add_parser("train", parents=[common], help="train the classifier on a corpus")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--model", help="model spec JSON (default: shipped)")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--clip-norm", type=float, default=0.5,
                   help="global gradient-norm bound (0 disables)")
    p.add_argument("--train-frac", type=float, default=0.7)
    p.add_argument("--out", required=True, help="weights JSON")
    p.add_argument("--history", help="training history JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate", parents=[common], help="on-device vs offload decision")
    p.add_argument("--model", help="model spec JSON (default: shipped)")
    p.add_argument("--node-free", type=int, required=True,
                   help="free bytes on the node")
    p.add_argument("--n-batches", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--kb-per-param", type=int, default=1)
    p.add_argument("--regressor", help="load a fitted regressor JSON")
    p.add_argument("--save-regressor", help="save the fitted regressor JSON")
    p.add_argument("--out", help="write the decision record JSON")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("partition", parents=[common], help="select nodes and split the layers")
    p.add_argument("--scenario", required=True, help="fleet scenario JSON")
    p.add_argument("--model", help="model spec JSON (default: shipped)")
    p.add_argument("--nodes", help="'parent-only' or a node count to force")
    p.add_argument("--n-batches", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--kb-per-param", type=int, default=1)
    p.add_argument("--out", required=True, help="placement JSON")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("simulate", parents=[common], help="run placed inference on the fleet")
    p.add_argument("--scenario", required=True, nargs="+",
                   help="fleet scenario JSON (several fan out over threads)")
    p.add_argument("--model", help="model spec JSON (default: shipped)")
    p.add_argument("--weights", required=True, help="weights JSON")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--placement", help="placement JSON (default: auto-partition)")
    p.add_argument("--nodes", help="'parent-only' or a node count to force")
    p.add_argument("--n-batches", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--kb-per-param", type=int, default=1)
    p.add_argument("--limit", type=int, default=0,
                   help="use only the first N corpus samples")
    p.add_argument("--faults", help="fault schedule JSON")
    p.add_argument("--baseline", help="baseline report JSON for speedup")
    p.add_argument("--out", required=True,
                   help="report JSON (directory when several scenarios)")
    p.add_argument("--event-log", help="CSV event log path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", parents=[common], help="metrics and tables from a run report")
    p.add_argument("--report", required=True, help="simulation report JSON")
    p.add_argument("--manifest", help="corpus manifest for label lookup")
    p.add_argument("--baseline", help="baseline report JSON for speedup")
    p.add_argument("--out", help="metrics JSON")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EdgemalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
