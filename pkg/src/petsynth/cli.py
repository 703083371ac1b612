"""Command-line entry point.

Subcommands: generate / train / eval / ablate / plot. Every run writes
its resolved parameter set as JSON next to its outputs so any result can
be reproduced from disk alone. A JSON config file (--config-file) seeds
the defaults; explicit flags override it; environment variables are
never consulted.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import evaluator, phantoms, trainer
from .datasets import Batch, Modality, load_manifest
from .errors import DataError, PetSynthError
from .losses import ssim
from .model import ModelConfig, build, predict
from .sliceio import manifest_digest
from .trainer import TrainSchedule, load_checkpoint

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--multitask", dest="multitask", action="store_true", default=True,
                   help="semi-supervised multitask network (default)")
    p.add_argument("--single-task", dest="multitask", action="store_false",
                   help="fully-supervised single-task network (PET branch only)")
    p.add_argument("--t1", dest="t1", action=argparse.BooleanOptionalAction, default=True,
                   help="feed the T1 channel")
    p.add_argument("--ra", dest="ra", action=argparse.BooleanOptionalAction, default=True,
                   help="residual attention (alternating coarse/fine training)")
    p.add_argument("--da", dest="da", action=argparse.BooleanOptionalAction, default=True,
                   help="disentanglement attention gates on the skip connections")
    p.add_argument("--base-channels", type=int, default=16, help="width of the first level")


def _add_schedule_flags(p: argparse.ArgumentParser, iterations: int, batch: int):
    p.add_argument("--iterations", type=int, default=iterations,
                   help="total training iterations (even; half coarse, half fine)")
    p.add_argument("--batch-size", type=int, default=batch, help="slices per batch")
    p.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate")
    p.add_argument("--dataset-block", type=int, default=5,
                   help="iterations per paired/unpaired alternation block")
    p.add_argument("--checkpoint-every", type=int, default=0,
                   help="checkpoint interval in iterations (0: final only)")
    p.add_argument("--seed", type=int, default=0, help="run seed")


def _build_parser() -> tuple:
    parser = _Parser(prog="petsynth", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config-file", type=Path, default=None,
                        help="JSON file of defaults; explicit flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic corpus")
    g.add_argument("--out", type=Path, required=True, help="output directory")
    g.add_argument("--paired", type=int, default=8, help="subjects with PET ground truth")
    g.add_argument("--unpaired", type=int, default=16, help="subjects without PET")
    g.add_argument("--grid", type=int, nargs=2, default=[64, 64], metavar=("H", "W"),
                   help="slice dimensions (multiples of 4)")
    g.add_argument("--seed", type=int, default=0, help="corpus seed")

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--manifest", type=Path, required=True, help="corpus manifest")
    t.add_argument("--unpaired-manifest", type=Path, default=None,
                   help="separate corpus supplying the unpaired pool")
    t.add_argument("--out", type=Path, required=True, help="output directory")
    t.add_argument("--resume", type=Path, default=None, help="checkpoint to resume from")
    _add_model_flags(t)
    _add_schedule_flags(t, iterations=2000, batch=4)

    e = sub.add_parser("eval", help="score a checkpoint on a manifest's paired subjects")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--manifest", type=Path, required=True)
    e.add_argument("--out", type=Path, required=True, help="output directory")

    a = sub.add_parser("ablate", help="cross-validate the 7-row ablation matrix")
    a.add_argument("--manifest", type=Path, required=True)
    a.add_argument("--out", type=Path, required=True, help="output directory")
    a.add_argument("--k", type=int, default=3, help="number of cross-validation folds")
    a.add_argument("--base-channels", type=int, default=16)
    _add_schedule_flags(a, iterations=600, batch=4)

    pl = sub.add_parser("plot", help="render input/target/prediction/error panels")
    pl.add_argument("--checkpoint", type=Path, required=True)
    pl.add_argument("--manifest", type=Path, required=True)
    pl.add_argument("--out", type=Path, required=True, help="output directory")
    pl.add_argument("--subjects", type=int, nargs="*", default=None,
                    help="paired subject ids (default: all)")
    return parser, {"generate": g, "train": t, "eval": e, "ablate": a, "plot": pl}


def _apply_config_file(parser: _Parser, subparsers: dict, argv: list) -> argparse.Namespace:
    # Two-stage parse: pull --config-file first, install its values as
    # defaults on every subcommand, then parse fully so flags win.
    probe = _Parser(add_help=False)
    probe.add_argument("--config-file", type=Path, default=None)
    known, _ = probe.parse_known_args(argv)
    if known.config_file is not None:
        values = json.loads(Path(known.config_file).read_text())
        if not isinstance(values, dict):
            raise _UsageError("--config-file must contain a JSON object")
        for sub in subparsers.values():
            sub.set_defaults(**values)
    return parser.parse_args(argv)


def _write_resolved(out_dir: Path, args: argparse.Namespace) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    path = out_dir / f"resolved_{args.command}.json"
    path.write_text(json.dumps(resolved, sort_keys=True, indent=2) + "\n")
    return path


def _model_config(args) -> ModelConfig:
    return ModelConfig(
        multitask=args.multitask,
        use_t1=args.t1,
        use_residual_attention=args.ra if args.multitask else False,
        use_disentanglement_attention=args.da,
        base_channels=args.base_channels,
    )


def _schedule(args) -> TrainSchedule:
    return TrainSchedule(
        total_iterations=args.iterations,
        batch_size=args.batch_size,
        dataset_block=args.dataset_block,
        lr=args.lr,
        checkpoint_every=args.checkpoint_every,
        seed=args.seed,
    )


def _args_digest(args: argparse.Namespace) -> str:
    """Digest of the content-determining parameters (output paths excluded)."""
    resolved = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in vars(args).items()
        if k not in ("out", "config_file")
    }
    return hashlib.sha256(json.dumps(resolved, sort_keys=True).encode()).hexdigest()


def cmd_generate(args) -> int:
    manifest = phantoms.generate_corpus(
        args.paired, args.unpaired, args.seed, args.out, grid=tuple(args.grid)
    )
    _write_resolved(args.out, args)
    print(manifest.path)
    return EXIT_OK


def cmd_train(args) -> int:
    config = _model_config(args)
    schedule = _schedule(args)
    handle = load_manifest(args.manifest)
    unpaired_handle = None
    if args.unpaired_manifest is not None:
        if not config.multitask:
            print("warning: single-task training ignores the unpaired manifest", file=sys.stderr)
        else:
            unpaired_handle = load_manifest(args.unpaired_manifest)
    if config.multitask and unpaired_handle is None:
        unpaired_handle = handle
    _write_resolved(args.out, args)
    net, _ = trainer.train(
        config,
        schedule,
        handle,
        unpaired_handle if config.multitask else None,
        out_dir=args.out,
        resume_from=args.resume,
    )
    print(args.out / "checkpoint_final.pt")
    return EXIT_OK


def _load_net(checkpoint_path: Path):
    payload = load_checkpoint(checkpoint_path)
    config = ModelConfig.from_dict(payload["config"])
    net = build(config, seed=0)
    net.load_state_dict(payload["model_state"])
    net.eval()
    return net, config


def cmd_eval(args) -> int:
    net, config = _load_net(args.checkpoint)
    handle = load_manifest(args.manifest)
    records = evaluator.score_subjects(net, handle, handle.paired_ids)
    _write_resolved(args.out, args)
    out_path = args.out / f"metrics_{manifest_digest(args.manifest)[:8]}.jsonl"
    lines = [json.dumps({"magic": "PSMETRICS", "version": 1, "config": config.label}, sort_keys=True)]
    for r in records:
        lines.append(json.dumps({
            "subject": r.subject_id, "condition": r.condition,
            "ssim": r.ssim, "mse": r.mse, "psnr": r.psnr,
        }, sort_keys=True))
    agg = evaluator._aggregate(records)
    lines.append(json.dumps({"kind": "aggregate", "aggregates": agg}, sort_keys=True))
    out_path.write_text("\n".join(lines) + "\n")
    print(out_path)
    return EXIT_OK


def cmd_ablate(args) -> int:
    handle = load_manifest(args.manifest)
    schedule = _schedule(args)
    _write_resolved(args.out, args)
    paths = evaluator.run_ablation(
        handle,
        args.k,
        schedule,
        args.out,
        model_overrides={"base_channels": args.base_channels},
        corpus_digest=manifest_digest(args.manifest),
        run_digest=_args_digest(args),
    )
    print(paths["table"])
    return EXIT_OK


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    net, _ = _load_net(args.checkpoint)
    handle = load_manifest(args.manifest)
    subjects = args.subjects if args.subjects else handle.paired_ids
    _write_resolved(args.out, args)
    written = []
    for sid in subjects:
        rec = handle.subject(sid)
        if not rec.paired:
            continue
        batch = Batch(
            asl=torch.from_numpy(rec.slices[Modality.ASL].pixels).unsqueeze(0),
            t1=torch.from_numpy(rec.slices[Modality.T1].pixels).unsqueeze(0),
            pet=torch.from_numpy(rec.slices[Modality.PET].pixels).unsqueeze(0),
            paired=True,
            subject_ids=[sid],
        )
        pred = predict(net, batch).pet_pred[0].numpy()
        gt = rec.slices[Modality.PET].pixels
        asl = rec.slices[Modality.ASL].pixels
        score = float(ssim(torch.from_numpy(pred).double(), torch.from_numpy(gt).double())[0])
        panels = [
            ("Input: ASL", asl, "gray"),
            ("Target: PET", gt, "gray"),
            (f"Prediction (SSIM {score:.3f})", pred, "gray"),
            ("|Error|", np.abs(pred - gt), "magma"),
        ]
        fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 3.2))
        for ax, (title, img, cmap) in zip(axes, panels):
            ax.imshow(img, cmap=cmap, vmin=0, vmax=1 if cmap == "gray" else None)
            ax.set_title(title, fontsize=9)
            ax.axis("off")
        fig.suptitle(f"subject {sid} ({rec.condition})", fontsize=10)
        fig.tight_layout()
        out_path = args.out / f"panel_s{sid:04d}.png"
        fig.savefig(out_path, dpi=110)
        plt.close(fig)
        written.append(out_path)
    for p in written:
        print(p)
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = _build_parser()
    try:
        args = _apply_config_file(parser, subparsers, argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"petsynth: bad config file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"petsynth: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PetSynthError as exc:
        print(f"petsynth: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"petsynth: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
