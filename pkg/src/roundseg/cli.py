"""Command-line entry point: datagen / train / train-jcm / eval / infer / serve.

Every subcommand is a thin adapter over the library modules: parse, validate,
log the resolved configuration, delegate, and write artifacts atomically
(temp + rename). Usage errors exit 2; runtime failures exit 1 with a
one-line `category: message` on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

from .errors import RoundsegError

log = logging.getLogger("roundseg")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roundseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="emit a synthetic conversation dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, required=True)
    p.add_argument("--n-val", type=int, required=True)
    p.add_argument("--n-test", type=int, required=True)
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--hard-fraction", type=float, default=0.3)
    _add_common(p)

    p = sub.add_parser("train", help="teacher-forced training of the main model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--batch-size", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)

    p = sub.add_parser("train-jcm", help="train judgment/correction heads on a frozen model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau-q", type=float, default=0.7)
    p.add_argument("--limit", type=int, default=None, help="cap on collection conversations")
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--jcm-checkpoint", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.add_argument("--beta", type=float, default=0.6)
    p.add_argument("--jcm", default="off", choices=["on", "off"])
    p.add_argument("--mode", default="auto", choices=["auto", "teacher"])
    p.add_argument("--report", default=None)
    p.add_argument("--limit", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("infer", help="run a scripted conversation against one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--jcm-checkpoint", default=None)
    p.add_argument("--image", required=True)
    p.add_argument("--script", required=True, help="conversation record or {query_text, ref_round} lines")
    p.add_argument("--beta", type=float, default=0.6)
    p.add_argument("--jcm", default="off", choices=["on", "off"])
    p.add_argument("--mode", default="auto", choices=["auto", "teacher"])
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("serve", help="start the HTTP session service")
    p.add_argument("--checkpoint", default=os.environ.get("ROUNDSEG_CHECKPOINT"))
    p.add_argument("--jcm-checkpoint", default=os.environ.get("ROUNDSEG_JCM_CHECKPOINT"))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=int(os.environ.get("ROUNDSEG_PORT", "8008")))
    p.add_argument("--sessions-dir", default=os.environ.get("ROUNDSEG_SESSIONS_DIR"))
    p.add_argument("--static", default=os.environ.get("ROUNDSEG_STATIC"))
    p.add_argument("--workers", type=int, default=int(os.environ.get("ROUNDSEG_WORKERS", "8")),
                   help="bound on concurrent in-flight requests")
    _add_common(p)

    return parser


def _log_config(args: argparse.Namespace):
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    resolved = {k: v for k, v in vars(args).items() if k != "log_level"}
    log.info("resolved config: %s", json.dumps(resolved, sort_keys=True, default=str))


def _atomic_dir(final: Path):
    """Context: returns a temp dir later renamed onto `final`."""
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=final.name + ".", dir=final.parent))
    return tmp


def _finish_atomic(tmp: Path, final: Path):
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)


def _cmd_datagen(args) -> int:
    from .datagen import GenConfig, emit_dataset

    cfg = GenConfig(
        seed=args.seed,
        image_size=args.image_size,
        n_train=args.n_train,
        n_val=args.n_val,
        n_test=args.n_test,
        hard_fraction=args.hard_fraction,
    )
    manifest = emit_dataset(cfg, args.out)  # emit_dataset is atomic itself
    log.info("dataset written: %s", json.dumps(manifest["counts"]))
    return 0


def _cmd_train(args) -> int:
    from .training import TrainConfig, train_main

    out = Path(args.out)
    tmp = _atomic_dir(out)
    train_main(
        args.data,
        tmp,
        TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed),
    )
    _finish_atomic(tmp, out)
    log.info("checkpoint at %s", out / "model.pt")
    return 0


def _cmd_train_jcm(args) -> int:
    from .core.serial import load_image_png
    from .datagen import load_split
    from .model import load_model
    from .model.jcm import save_jcm
    from .training import collect_jcm_samples, model_digest, train_correction, train_judgment

    model = load_model(args.checkpoint)
    main_hash = model_digest(model)
    root = Path(args.data)
    convs = load_split(root, "train")
    if args.limit:
        convs = convs[: args.limit]
    images = [load_image_png(root / c.image_ref) for c in convs]
    samples, skipped = collect_jcm_samples(model, convs, images, tau_q=args.tau_q)
    log.info("collected %d samples (%d rounds skipped without [SEG])", len(samples), skipped)
    judge, jm = train_judgment(samples, seed=args.seed)
    image_map = {c.image_ref: img for c, img in zip(convs, images)}
    corrector, cm = train_correction(samples, model, image_map, seed=args.seed)
    assert main_hash == model_digest(model), "jcm training mutated the frozen model"
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(out.parent), suffix=".pt")
    os.close(fd)
    save_jcm(judge, corrector, model.config.d_seg, args.tau_q, tmp)
    os.replace(tmp, out)
    log.info("judge metrics: %s; corrector metrics: %s", json.dumps(jm), json.dumps(cm))
    return 0


def _cmd_eval(args) -> int:
    from .evalharness import evaluate_split
    from .inference import JcmConfig
    from .model import load_model
    from .model.jcm import load_jcm

    model = load_model(args.checkpoint)
    if args.jcm == "on":
        if not args.jcm_checkpoint:
            raise RoundsegError("--jcm on requires --jcm-checkpoint")
        judge, corrector, _ = load_jcm(args.jcm_checkpoint)
        cfg = JcmConfig(enabled=True, beta=args.beta, judge=judge, corrector=corrector)
    else:
        cfg = JcmConfig(enabled=False, beta=args.beta)
    mode = "autoregressive" if args.mode == "auto" else "teacher_forced"
    report = evaluate_split(model, args.data, args.split, cfg, mode, limit=args.limit)
    blob = json.dumps(report.to_dict(), sort_keys=True, indent=2)
    if args.report:
        out = Path(args.report)
        out.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=str(out.parent), suffix=".json")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(blob + "\n")
        os.replace(tmp, out)
    print(blob)
    return 0


def _load_script(script_path: Path, image, mask_loader):
    """Parse either a full conversation record or {query_text, ref_round} lines."""
    from .core.serial import parse_conversation

    text = script_path.read_text(encoding="utf-8").strip()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    first = json.loads(lines[0])
    if "rounds" in first:
        return parse_conversation(lines[0], mask_loader), None
    rounds = [(str(obj["query_text"]), int(obj.get("ref_round", 0))) for obj in map(json.loads, lines)]
    return None, rounds


def _cmd_infer(args) -> int:
    from .core.serial import load_image_png, load_mask_png, save_mask_png
    from .inference import JcmConfig, run_conversation, run_round, start_session
    from .model import load_model
    from .model.jcm import load_jcm

    model = load_model(args.checkpoint)
    if args.jcm == "on":
        if not args.jcm_checkpoint:
            raise RoundsegError("--jcm on requires --jcm-checkpoint")
        judge, corrector, _ = load_jcm(args.jcm_checkpoint)
        cfg = JcmConfig(enabled=True, beta=args.beta, judge=judge, corrector=corrector)
    else:
        cfg = JcmConfig(enabled=False, beta=args.beta)
    image = load_image_png(args.image)
    script = Path(args.script)
    conv, plain_rounds = _load_script(
        script, image, lambda ref: load_mask_png(script.parent / ref)
    )
    mode = "autoregressive" if args.mode == "auto" else "teacher_forced"
    if conv is not None:
        results = run_conversation(conv, image, model, cfg, mode)
    else:
        if mode == "teacher_forced":
            raise RoundsegError("teacher mode needs a full conversation record with gt masks")
        state = start_session(image, model)
        results = [run_round(state, q, ref, model, cfg) for q, ref in plain_rounds]

    out = Path(args.out)
    tmp = _atomic_dir(out)
    records = []
    for r in results:
        mask_name = f"round_{r.round_index:02d}.png"
        save_mask_png(r.mask, tmp / mask_name)
        records.append(
            {
                "round_index": r.round_index,
                "query_text": r.query_text,
                "ref_round": r.ref_round,
                "answer_text": r.answer_text,
                "mask": mask_name,
                "mask_area": r.mask.area(),
                "q": r.q,
                "corrected": r.corrected,
                "seg_emitted": r.seg_emitted,
                "ref_empty": r.ref_empty,
            }
        )
    (tmp / "results.jsonl").write_text(
        "\n".join(json.dumps(rec, sort_keys=True) for rec in records) + "\n", encoding="utf-8"
    )
    _finish_atomic(tmp, out)
    log.info("wrote %d rounds to %s", len(records), out)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        checkpoint=args.checkpoint,
        jcm_checkpoint=args.jcm_checkpoint,
        sessions_dir=args.sessions_dir,
        static_dir=args.static,
    )
    uvicorn.run(app, host=args.host, port=args.port, limit_concurrency=max(2, args.workers))
    return 0


_COMMANDS = {
    "datagen": _cmd_datagen,
    "train": _cmd_train,
    "train-jcm": _cmd_train_jcm,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _log_config(args)
    try:
        return _COMMANDS[args.command](args)
    except RoundsegError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"FileNotFound: {e}", file=sys.stderr)
        return 1
    except FileExistsError as e:
        print(f"FileExists: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
