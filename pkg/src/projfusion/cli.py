"""Command-line entry point: synth, train, eval, sweep, bench.

Exit codes: 0 success, 2 usage errors, 1 runtime errors. Training precedence
for settings: built-in defaults < --config file (UTF-8 `key = value` lines,
`#` comments) < explicit flags.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint, kernels, metrics, model, ops
from .dataio import read_dataset, split_dataset, write_dataset
from .metrics import RunReport, round2
from .stream import make_task_stream
from .synth import synth_dataset
from .trainer import MemoryPolicy, TrainConfig, run_incremental
from .errors import DegenerateVectorError  # noqa: F401  (re-export for callers)

DEFAULT_SEEDS = "1993,1994,1995,1996,1997"

# config-file / flag keys that feed cmd_train and cmd_sweep
_TRAIN_KEYS = ("base", "inc", "seed", "epochs", "batch", "lr", "momentum",
               "prompt_len", "mode", "policy", "holdout", "eval_zeroshot",
               "projection_only")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _parse_config_file(path, parser) -> dict:
    """key = value lines; # comments; keys must be known train settings."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        parser.error(f"cannot read config file: {e}")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().replace("-", "_"), value.strip()
        if not sep or not key or not value:
            parser.error(f"config line {lineno}: expected 'key = value'")
        if key not in _TRAIN_KEYS:
            parser.error(f"config line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


_COERCERS = {
    "base": int, "inc": int, "seed": int, "epochs": int, "batch": int,
    "lr": float, "momentum": float, "prompt_len": int, "holdout": int,
    "mode": str, "policy": str,
    "eval_zeroshot": lambda v: str(v).lower() in ("1", "true", "yes", "on"),
    "projection_only": lambda v: str(v).lower() in ("1", "true", "yes", "on"),
}

_TRAIN_DEFAULTS = {
    "base": 0, "inc": 1, "seed": 1993, "epochs": 5, "batch": 64,
    "lr": 0.001, "momentum": 0.9, "prompt_len": 3, "mode": "plain",
    "policy": "perclass:20", "holdout": 0, "eval_zeroshot": False,
    "projection_only": False,
}


def _merge_settings(args, parser) -> dict:
    merged = dict(_TRAIN_DEFAULTS)
    if getattr(args, "config", None):
        for k, v in _parse_config_file(args.config, parser).items():
            try:
                merged[k] = _COERCERS[k](v)
            except ValueError:
                parser.error(f"config key {k!r}: bad value {v!r}")
    for k in _TRAIN_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v
    return merged


def _build_config(s: dict, parser) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=s["epochs"], batch_size=s["batch"], lr0=s["lr"],
            momentum=s["momentum"], seed=s["seed"], prompt_len=s["prompt_len"],
            mode=s["mode"], policy=MemoryPolicy.parse(s["policy"]),
            fusion=not s["projection_only"])
    except ValueError as e:
        parser.error(str(e))


def _load_probe(path):
    ds = read_dataset(path)
    return ds.embeddings, ds.text_matrix()[ds.labels]


def cmd_synth(args, parser) -> int:
    ds = synth_dataset(args.classes, args.per_class, args.dim, args.seed, args.separation)
    write_dataset(ds, args.out)
    print(f"wrote {args.out}: {ds.num_classes} classes, {ds.num_records} records, dim {ds.dim}")
    return 0


def _run_one(data_path, test_path, settings, config, out_dir: Path,
             probe_path=None, echo=True) -> dict:
    """Shared train body for cmd_train and cmd_sweep; returns manifest dict."""
    t_start = time.time()
    ds = read_dataset(data_path)
    if test_path:
        train_ds, test_ds = ds, read_dataset(test_path)
    elif settings["holdout"] > 0:
        train_ds, test_ds = split_dataset(ds, settings["holdout"])
    else:
        train_ds, test_ds = ds, None
    stream = make_task_stream(ds, settings["base"], settings["inc"], config.seed)
    probe = _load_probe(probe_path) if probe_path else None
    snapshots, results = run_incremental(
        train_ds, stream, config, test_ds=test_ds,
        eval_zeroshot=settings["eval_zeroshot"], probe=probe)
    report = RunReport(results)

    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_paths = []
    for snap in snapshots:
        p = out_dir / f"stage_{snap.tasks_learned:02d}.ckpt"
        checkpoint.save_state(snap, p)
        ckpt_paths.append(str(p))
    (out_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    manifest = {
        "settings": {**settings, "policy": str(config.policy)},
        "dataset": {"path": str(data_path), "sha256": _sha256(data_path),
                    "classes": ds.num_classes, "records": ds.num_records, "dim": ds.dim},
        "test_dataset": ({"path": str(test_path), "sha256": _sha256(test_path)}
                         if test_path else None),
        "probe": ({"path": str(probe_path), "sha256": _sha256(probe_path)}
                  if probe_path else None),
        "stream": {"base": stream.base, "inc": stream.inc, "seed": stream.seed,
                   "num_tasks": stream.num_tasks},
        "backend": kernels.backend_name(),
        "outputs": {"checkpoints": ckpt_paths,
                    "report_csv": str(out_dir / "report.csv"),
                    "report_json": str(out_dir / "report.json")},
        "wall_seconds": round(time.time() - t_start, 3),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if echo:
        for r in results:
            extra = ""
            if r.a_hm is not None:
                extra = f"  A_S={round2(r.a_s)} A_U={round2(r.a_u)} A_HM={round2(r.a_hm)}"
            if r.probe is not None:
                extra += f"  probe={round2(r.probe)}"
            print(f"stage {r.stage}: seen={len(r.seen)}  A_b={round2(r.a_b)}{extra}")
        print(f"A_last={round2(report.a_last)}  A_mean={round2(report.a_mean)}")
    return manifest


def cmd_train(args, parser) -> int:
    settings = _merge_settings(args, parser)
    config = _build_config(settings, parser)
    _run_one(args.data, args.test, settings, config, Path(args.out_dir),
             probe_path=args.probe)
    return 0


def cmd_eval(args, parser) -> int:
    state = checkpoint.load_state(args.checkpoint)
    ds = read_dataset(args.data)
    checkpoint.check_dataset_compat(state, ds)
    name_to_label = {c.name: i for i, c in enumerate(ds.classes)}
    missing = [n for n in state.seen_names if n not in name_to_label]
    if missing and (args.zeroshot or not args.recall):
        # classification needs every checkpoint class in the dataset; a
        # paired file read only for --recall does not
        raise ValueError(f"dataset lacks checkpoint classes: {missing[:5]}")
    lines = []
    if not missing:
        # remap dataset labels into the checkpoint's id space by class name
        label_to_sid = {}
        for sid, name in zip(state.seen, state.seen_names):
            label_to_sid[name_to_label[name]] = sid
        seen_labels = np.asarray(sorted(label_to_sid), dtype=np.int64)
        mask = np.isin(ds.labels, seen_labels)
        if mask.any():
            mapped = np.asarray([label_to_sid[int(l)] for l in ds.labels[mask]])
            pred = model.predict_batch(state, ds.embeddings[mask], candidates=state.seen)
            a_b = 100.0 * float(np.mean(pred == mapped))
            lines.append(f"A_seen={round2(a_b)} over {int(mask.sum())} records")
        if args.zeroshot:
            unseen = [i for i in range(ds.num_classes) if i not in label_to_sid]
            if unseen and np.isin(ds.labels, unseen).any():
                a_u = metrics.unseen_top1(state, ds.embeddings, ds.labels, unseen,
                                          ds.text_matrix())
                lines.append(f"A_unseen={round2(a_u)} over {len(unseen)} classes")
    if args.probe:
        img, txt = _load_probe(args.probe)
        lines.append(f"probe={round2(metrics.probe_score(state, img, txt))}")
    if args.recall:
        img, txt = _load_probe(args.data)
        zi = img @ state.img_stack.effective().T
        wt = txt @ state.txt_stack.effective().T
        sim, _ = ops.cross_cosine_fwd(zi, wt)
        for k in (1, 5, 10):
            if k <= sim.shape[0]:
                lines.append(f"i2t R@{k}={round2(metrics.recall_at_k(sim, k))}  "
                             f"t2i R@{k}={round2(metrics.recall_at_k(sim.T, k))}")
    if not lines:
        lines.append("nothing to report (no seen-class records and no flags)")
    text = "\n".join(lines)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_sweep(args, parser) -> int:
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        parser.error(f"bad --seeds {args.seeds!r}")
    if not seeds:
        parser.error("need at least one seed")
    settings = _merge_settings(args, parser)
    out_dir = Path(args.out_dir)
    rows = []
    for seed in seeds:
        s = dict(settings, seed=seed)
        config = _build_config(s, parser)
        manifest = _run_one(args.data, args.test, s, config,
                            out_dir / f"seed_{seed}", probe_path=None, echo=False)
        rep = json.loads(Path(manifest["outputs"]["report_json"]).read_text())
        rows.append((seed, rep["a_last"], rep["a_mean"]))
        print(f"seed {seed}: A_last={rows[-1][1]} A_mean={rows[-1][2]}")
    lasts = np.array([r[1] for r in rows])
    means = np.array([r[2] for r in rows])
    agg = (f"aggregate,{round2(lasts.mean())}+-{round2(lasts.std())},"
           f"{round2(means.mean())}+-{round2(means.std())}")
    csv_text = "seed,a_last,a_mean\n"
    csv_text += "".join(f"{s},{al},{am}\n" for s, al, am in rows)
    csv_text += agg + "\n"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.csv").write_text(csv_text, encoding="utf-8")
    print(agg)
    return 0


def cmd_bench(args, parser) -> int:
    from . import bench
    bench.run(dim=args.dim, classes=args.classes, prompt_rows=args.prompt_rows,
              batch=args.batch, repeats=args.repeats)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="projfusion",
                                description="Incremental projection-fusion engine "
                                            "over frozen embeddings")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic EMB1 dataset")
    sp.add_argument("--classes", type=int, required=True)
    sp.add_argument("--per-class", type=int, required=True, dest="per_class")
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--seed", type=int, default=1993)
    sp.add_argument("--separation", type=float, default=4.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    def add_train_flags(tp):
        tp.add_argument("--data", required=True)
        tp.add_argument("--test", help="held-out EMB1 file for staged evaluation")
        tp.add_argument("--holdout", type=int, help="split N records per class off --data as test")
        tp.add_argument("--config", help="key = value settings file")
        tp.add_argument("--base", type=int)
        tp.add_argument("--inc", type=int)
        tp.add_argument("--epochs", type=int)
        tp.add_argument("--batch", type=int)
        tp.add_argument("--lr", type=float)
        tp.add_argument("--momentum", type=float)
        tp.add_argument("--prompt-len", type=int, dest="prompt_len")
        tp.add_argument("--mode", choices=list(model.MODES))
        tp.add_argument("--policy", help="fixed:K or perclass:k")
        tp.add_argument("--eval-zeroshot", action="store_const", const=True,
                        dest="eval_zeroshot")
        tp.add_argument("--projection-only", action="store_const", const=True,
                        dest="projection_only",
                        help="train/predict with the projected-matching head only")
        tp.add_argument("--out-dir", required=True, dest="out_dir")

    tp = sub.add_parser("train", help="run the incremental protocol")
    add_train_flags(tp)
    tp.add_argument("--seed", type=int)
    tp.add_argument("--probe", help="paired EMB1 file scored per stage")
    tp.set_defaults(func=cmd_train)

    ep = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ep.add_argument("--checkpoint", required=True)
    ep.add_argument("--data", required=True)
    ep.add_argument("--zeroshot", action="store_true")
    ep.add_argument("--probe")
    ep.add_argument("--recall", action="store_true",
                    help="treat --data as a paired file and report R@k")
    ep.add_argument("--out", help="also write the report lines to a file")
    ep.set_defaults(func=cmd_eval)

    wp = sub.add_parser("sweep", help="train across seeds and aggregate")
    add_train_flags(wp)
    wp.add_argument("--seeds", default=DEFAULT_SEEDS)
    wp.set_defaults(func=cmd_sweep)

    bp = sub.add_parser("bench", help="compare kernel backends")
    bp.add_argument("--dim", type=int, default=64)
    bp.add_argument("--classes", type=int, default=40)
    bp.add_argument("--prompt-rows", type=int, default=15, dest="prompt_rows")
    bp.add_argument("--batch", type=int, default=64)
    bp.add_argument("--repeats", type=int, default=5)
    bp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except BrokenPipeError:
        return 1
    except Exception as e:  # runtime failures exit 1 with a clear message
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
