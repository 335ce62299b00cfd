"""Command-line entry point for reproducible desk-scale runs.

Subcommands: synth-data, train, eval, infer, lead-report, serve. Every
artifact-producing command writes a run manifest (command, config, seed,
input hashes, outputs) under its --out directory. Exit codes: 0 success,
1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import sys
from pathlib import Path


from .backbone import BackboneConfig
from .checkpoint import load_bundle, save_bundle, version_id
from .data import (
    Label,
    SyntheticSpec,
    generate_synthetic_corpus,
    load_manifest,
    preprocess,
    write_corpus,
)
from .data.manifest import read_image_file
from .data.splits import protocol_split
from .evaluation import (
    CaseTimeline,
    cohort_lead_report,
    evaluate,
    report_grid_csv,
    youden_threshold,
)
from .segmenter import SegmenterConfig, train_segmenter
from .service import (
    ModelRegistryEntry,
    ServiceConfig,
    load_snapshot,
    prediction_json,
    read_registry,
    run_cascade,
    serve,
    write_registry,
)
from .stage2 import build_stage2_dataset, train_stage2
from .stage3 import build_stage3_dataset, train_stage3
from .training import TrainConfig


class UserError(Exception):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(out_dir: Path, command: str, args: argparse.Namespace,
                       inputs: list[Path], outputs: list[Path]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": {k: str(v) for k, v in vars(args).items() if k != "func"},
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): _sha256(p) for p in inputs if p and Path(p).is_file()},
        "outputs": [str(p) for p in outputs],
        "finished": dt.datetime.now(dt.timezone.utc).isoformat(),
    }
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def _load_corpus(path: Path):
    result = load_manifest(path)
    for issue in result.issues:
        print(f"manifest row {issue.row} ({issue.source_id}): {issue.problem}",
              file=sys.stderr)
    if not len(result.corpus):
        raise UserError(f"no usable samples in {path}")
    return result.corpus


def _update_registry(registry_path: Path, stage: int, bundle_dir: Path, vid: str) -> None:
    entries = []
    if registry_path.exists():
        entries = read_registry(registry_path)
    rel = str(bundle_dir.resolve().relative_to(registry_path.resolve().parent)) \
        if bundle_dir.resolve().is_relative_to(registry_path.resolve().parent) \
        else str(bundle_dir.resolve())
    entries = [
        ModelRegistryEntry(e.stage, e.version_id, e.path, e.active and e.stage != stage)
        for e in entries
    ]
    entries.append(ModelRegistryEntry(stage=stage, version_id=vid, path=rel, active=True))
    write_registry(registry_path, entries)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth_data(args) -> int:
    spec = SyntheticSpec(
        n_normal=args.normal, n_covid=args.covid, n_pneumonia=args.pneumonia,
        image_size=args.size, seed=args.seed,
    )
    corpus = generate_synthetic_corpus(spec)
    out = Path(args.out)
    manifest = write_corpus(corpus, out)
    write_run_manifest(out, "synth-data", args, [], [manifest])
    print(f"wrote {len(corpus)} samples to {out}")
    return 0


def _train_config(args, stage: int) -> TrainConfig:
    return TrainConfig(
        stage=stage,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        lam=getattr(args, "lam", 0.0) or 0.0,
        temperature=getattr(args, "temperature", 1.0),
        seed=args.seed,
    )


def cmd_train(args) -> int:
    corpus = _load_corpus(Path(args.data))
    split = protocol_split(corpus, args.split_seed)
    train_samples = list(corpus.by_ids(split.train))
    val_samples = list(corpus.by_ids(split.val))
    out = Path(args.out)
    bundle_dir = out / "bundle"
    config = _train_config(args, args.stage)

    teacher = None
    if args.teacher:
        teacher_model = load_bundle(Path(args.teacher)).model
        teacher = teacher_model

    if args.stage == 1:
        masked_train = [s for s in train_samples if s.lung_mask is not None]
        masked_val = [s for s in val_samples if s.lung_mask is not None]
        if not masked_train:
            raise UserError("stage 1 needs ground-truth masks (masks/ directory)")
        bundle = train_segmenter(
            masked_train, config, val_samples=masked_val,
            seg_config=SegmenterConfig(seed=args.seed),
        )
    elif args.stage == 2:
        segmenter = _require_segmenter(args)
        bundle = train_stage2(
            train_samples, segmenter, config, teacher=teacher, val_samples=val_samples,
            backbone_config=BackboneConfig(seed=args.seed),
        )
    else:
        segmenter = _require_segmenter(args)
        if not args.stage2:
            raise UserError("--stage2 BUNDLE is required for stage 3 training")
        stage2_model = load_bundle(Path(args.stage2)).model
        pneumonia = [s for s in train_samples if s.label != Label.NORMAL]
        pneumonia_val = [s for s in val_samples if s.label != Label.NORMAL]
        bundle = train_stage3(
            pneumonia, segmenter, stage2_model, config, teacher=teacher,
            val_samples=pneumonia_val, backbone_config=BackboneConfig(seed=args.seed),
        )

    save_bundle(bundle, bundle_dir)
    vid = version_id(args.stage, bundle.model.net)
    if args.registry:
        _update_registry(Path(args.registry), args.stage, bundle_dir, vid)
    write_run_manifest(out, "train", args, [Path(args.data)], [bundle_dir])
    last = bundle.history[-1] if bundle.history else {}
    print(f"stage {args.stage} trained: {vid} {json.dumps(last)}")
    return 0


def _require_segmenter(args):
    if not args.segmenter:
        raise UserError("--segmenter BUNDLE is required for this stage")
    return load_bundle(Path(args.segmenter)).model


def _scores(net, dataset) -> list[float]:
    import torch

    from .backbone import softmax

    with torch.no_grad():
        logits = net(torch.from_numpy(dataset.inputs[:, None]).float())[0].numpy()
    return [float(softmax(row)[1]) for row in logits]


def _safe_report(scores, labels, threshold) -> dict:
    """Full report when both classes are present; rates only otherwise."""
    from .evaluation import UndefinedMetricError, sens_spec

    try:
        return evaluate(scores, labels, threshold).to_dict()
    except UndefinedMetricError:
        sens, spec, confusion = sens_spec(scores, labels, threshold)
        return {"auc": None, "sensitivity": sens, "specificity": spec,
                "threshold": threshold, **confusion, "n": len(labels)}


def _fmt(value) -> str:
    return "" if value is None or value != value else f"{value:.4f}"


def _stage_report(name, split_name, masked, scores, labels, threshold, rows) -> dict:
    report = _safe_report(scores, labels, threshold)
    rows.append(
        {
            "Split": split_name,
            "Lung mask": "yes" if masked else "no",
            "Stage": name,
            "AUC": _fmt(report["auc"]),
            "Sensitivity": _fmt(report["sensitivity"]),
            "Specificity": _fmt(report["specificity"]),
            "Threshold": f"{threshold:.4f}",
        }
    )
    return report


def cmd_eval(args) -> int:
    corpus = _load_corpus(Path(args.data))
    split = protocol_split(corpus, args.split_seed)
    models = load_snapshot(Path(args.registry))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    splits = {"val": split.val, "test": split.test} if args.split == "both" else {
        args.split: split.of(args.split)
    }
    rows: list[dict] = []
    summary: dict = {}
    for split_name, ids in splits.items():
        samples = list(corpus.by_ids(ids))
        ds2 = build_stage2_dataset(samples, models.segmenter)
        scores2 = _scores(models.stage2.net, ds2)
        labels2 = ds2.targets.tolist()
        threshold2 = args.threshold
        if args.tune_threshold:
            val_ds = build_stage2_dataset(list(corpus.by_ids(split.val)), models.segmenter)
            threshold2 = youden_threshold(_scores(models.stage2.net, val_ds),
                                          val_ds.targets.tolist())
        report2 = _stage_report("2:pneumonia", split_name, True, scores2, labels2,
                                threshold2, rows)

        pneumonia = [s for s in samples if s.label != Label.NORMAL]
        summary[split_name] = {"stage2": report2}
        if pneumonia:
            ds3 = build_stage3_dataset(pneumonia, models.segmenter, models.stage2)
            scores3 = _scores(models.stage3.net, ds3)
            report3 = _stage_report("3:covid", split_name, True, scores3,
                                    ds3.targets.tolist(), args.threshold, rows)
            summary[split_name]["stage3"] = report3

    outputs = [out / "report.csv", out / "report.json"]
    columns = ["Split", "Lung mask", "Stage", "AUC", "Sensitivity", "Specificity", "Threshold"]
    outputs[0].write_text(report_grid_csv(rows, columns))
    outputs[1].write_text(json.dumps(summary, indent=2))

    if args.ablate_mask:
        ablation_rows = _mask_ablation(args, corpus, split, models)
        path = out / "mask_ablation.csv"
        path.write_text(
            report_grid_csv(ablation_rows,
                            ["Split", "Lung mask", "AUC", "Sensitivity", "Specificity"])
        )
        outputs.append(path)
    write_run_manifest(out, "eval", args, [Path(args.data)], outputs)
    print(report_grid_csv(rows, columns))
    return 0


def _mask_ablation(args, corpus, split, models) -> list[dict]:
    """Retrain a no-mask twin of the registry's stage-2 model and compare."""
    stage2_entry = next(e for e in models.entries if e.stage == 2 and e.active)
    bundle = load_bundle(Path(args.registry).parent / stage2_entry.path)
    config = bundle.config
    train_samples = list(corpus.by_ids(split.train))
    val_samples = list(corpus.by_ids(split.val))
    nomask = train_stage2(
        train_samples, None, config, val_samples=val_samples,
        backbone_config=bundle.model.config,
    )
    rows = []
    for split_name in ("val", "test"):
        samples = list(corpus.by_ids(split.of(split_name)))
        for masked, model, seg in ((True, models.stage2, models.segmenter),
                                   (False, nomask.model, None)):
            ds = build_stage2_dataset(samples, seg)
            report = _safe_report(_scores(model.net, ds), ds.targets.tolist(), args.threshold)
            rows.append(
                {
                    "Split": split_name,
                    "Lung mask": "yes" if masked else "no",
                    "AUC": _fmt(report["auc"]),
                    "Sensitivity": _fmt(report["sensitivity"]),
                    "Specificity": _fmt(report["specificity"]),
                }
            )
    return rows


def cmd_infer(args) -> int:
    models = load_snapshot(Path(args.registry))
    image_path = Path(args.image)
    if not image_path.is_file():
        raise UserError(f"image not found: {image_path}")
    try:
        raw = read_image_file(image_path)
    except Exception as exc:
        raise UserError(f"invalid image: {exc}") from exc
    image = preprocess(raw, source_id=image_path.stem)
    pred = run_cascade(image, models, args.stage2_threshold, args.stage3_threshold)
    body = prediction_json(pred)
    body["heatmaps"] = {}
    if args.out:
        from .explain import guided_png, heatmap_png

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        files = {"stage2_cam": heatmap_png(pred.stage2.heatmap)}
        if pred.stage3 is not None:
            files["stage3_gradcam"] = heatmap_png(pred.stage3.gradcam)
            files["guided"] = guided_png(pred.stage3.guided)
        for name, blob in files.items():
            path = out / f"{name}.png"
            path.write_bytes(blob)
            body["heatmaps"][name] = str(path)
        write_run_manifest(out, "infer", args, [image_path],
                           [out / f"{n}.png" for n in files])
    print(json.dumps(body, indent=2))
    return 0


def cmd_lead_report(args) -> int:
    corpus = _load_corpus(Path(args.manifest))
    models = load_snapshot(Path(args.registry))
    cases = []
    for sample in corpus:
        if sample.label != Label.COVID or sample.image.capture_date is None:
            continue
        pred = run_cascade(sample.image, models,
                           args.stage2_threshold, args.stage3_threshold)
        positive = pred.final_class == Label.COVID
        cases.append(
            CaseTimeline(
                case_id=sample.source_id,
                captures=((sample.image.capture_date, positive),),
                symptom_onset_date=sample.symptom_onset_date,
                rtpcr_confirm_date=sample.rtpcr_confirm_date,
            )
        )
    report = cohort_lead_report(cases)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "lead_report.csv").write_text(report.to_csv())
    (out / "lead_report.json").write_text(report.to_json())
    write_run_manifest(out, "lead-report", args, [Path(args.manifest)],
                       [out / "lead_report.csv", out / "lead_report.json"])
    print(f"{report.n_defined} cases with defined lead time; "
          f"{report.n_lead_2_or_more} detected >=2 days early, "
          f"{report.n_lead_5_or_more} >=5 days early")
    return 0


def cmd_serve(args) -> int:
    config = ServiceConfig.load(
        args.config,
        data_dir=args.data_dir,
        registry_path=args.registry,
        port=args.port,
        host=args.host,
    )
    serve(config)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cxrscreen",
                                     description="Cascaded chest x-ray screening")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--normal", type=int, default=60)
    p.add_argument("--covid", type=int, default=30)
    p.add_argument("--pneumonia", type=int, default=30)
    p.add_argument("--size", type=int, default=512)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train one cascade stage")
    p.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--data", required=True, help="manifest CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--split-seed", type=int, default=7)
    p.add_argument("--segmenter", help="stage-1 bundle (stages 2 and 3)")
    p.add_argument("--stage2", help="stage-2 bundle (stage 3 only)")
    p.add_argument("--teacher", help="teacher bundle for incremental training")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="distillation weight; default 1 with a teacher, else 0")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--registry", help="registry.json to update with the new bundle")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate the cascade on a split")
    p.add_argument("--split", choices=("val", "test", "both"), default="test")
    p.add_argument("--data", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split-seed", type=int, default=7)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--tune-threshold", action="store_true",
                   help="use the Youden threshold selected on the validation split")
    p.add_argument("--ablate-mask", action="store_true",
                   help="also train/evaluate a no-mask stage-2 twin (4-row grid)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run the cascade on one image")
    p.add_argument("--image", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--out", help="directory for heatmap PNGs")
    p.add_argument("--stage2-threshold", type=float, default=0.5)
    p.add_argument("--stage3-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("lead-report", help="RT-PCR lead-time analysis")
    p.add_argument("--manifest", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage2-threshold", type=float, default=0.5)
    p.add_argument("--stage3-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_lead_report)

    p = sub.add_parser("serve", help="run the screening HTTP service")
    p.add_argument("--config", help="service config JSON")
    p.add_argument("--registry")
    p.add_argument("--data-dir")
    p.add_argument("--port", type=int)
    p.add_argument("--host")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if getattr(args, "teacher", None) and getattr(args, "lam", None) is None:
        args.lam = 1.0
    try:
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # internal error
        import traceback

        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
