"""Command-line surface: extract / train / eval / predict.

The corpus is described by a plain manifest file, one frame per line:

    path format [width height [frame]]

where format is raw-y, yuv420, or pgm; width/height are required for the
headerless formats; frame selects a frame of a yuv420 file (default 0).
Paths are resolved relative to the manifest's directory and '#' starts a
comment. Every command is deterministic given identical inputs and flags,
and every output file is written atomically.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from .dataset import (
    assemble_context,
    build_dataset,
    eligible_origins,
    read_dataset,
    write_dataset,
)
from .intra_codec import Qp, reconstruct_plane
from .media_io import FORMAT_PGM, FORMATS, Plane, load_luma, write_bytes_atomic, write_luma
from .neuralnet import (
    TrainConfig,
    load_model,
    save_model,
    train,
    write_loss_log,
)
from .pipeline import (
    ModelRegistry,
    encode_with_ipcnn,
    normalize,
    refine_reconstructions,
    write_outcomes_csv,
)

EVAL_HEADER = "qp,n_samples,original_mse,target_mse,pu_hevc_mse,pu_ipcnn_mse"


@dataclass
class ManifestEntry:
    path: str
    fmt: str
    width: int | None
    height: int | None
    frame: int


def read_manifest(path: str) -> list[ManifestEntry]:
    """Parse the corpus manifest; referenced files must exist."""
    base = os.path.dirname(os.path.abspath(path))
    entries: list[ManifestEntry] = []
    with open(path, encoding="ascii") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            where = f"{path}:{lineno}"
            if len(tokens) not in (2, 4, 5):
                raise ValueError(
                    f"{where}: expected 'path format [width height [frame]]', "
                    f"got {len(tokens)} fields"
                )
            file_path = os.path.join(base, tokens[0])
            fmt = tokens[1]
            if fmt not in FORMATS:
                raise ValueError(f"{where}: unknown format {fmt!r}")
            if fmt != FORMAT_PGM and len(tokens) < 4:
                raise ValueError(f"{where}: format {fmt} needs width and height")
            width = int(tokens[2]) if len(tokens) > 2 else None
            height = int(tokens[3]) if len(tokens) > 3 else None
            frame = int(tokens[4]) if len(tokens) > 4 else 0
            if not os.path.isfile(file_path):
                raise FileNotFoundError(f"{where}: no such file {file_path}")
            entries.append(ManifestEntry(file_path, fmt, width, height, frame))
    if not entries:
        raise ValueError(f"{path}: manifest lists no files")
    return entries


def load_corpus(entries: list[ManifestEntry]) -> list[Plane]:
    return [
        load_luma(e.path, e.fmt, e.width, e.height, e.frame) for e in entries
    ]


def cmd_extract(args: argparse.Namespace) -> int:
    planes = load_corpus(read_manifest(args.manifest))
    ds = build_dataset(planes, Qp(args.qp))
    write_dataset(ds, args.out)
    print(f"wrote {ds.count} samples to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    ds = read_dataset(args.dataset)
    if args.qp is not None and args.qp != ds.qp:
        raise ValueError(
            f"--qp {args.qp} does not match dataset qp {ds.qp} in {args.dataset}"
        )
    config = TrainConfig(learning_rate=args.lr, epochs=args.epochs, seed=args.seed)
    model, logs = train(ds, config)
    save_model(model, args.out)
    log_path = args.out + ".loss.csv"
    write_loss_log(logs, log_path)
    last = logs[-1]
    print(
        f"trained qp {ds.qp} for {len(logs)} epochs on {ds.count} samples; "
        f"final train loss {last.train_loss:.3e}; "
        f"model {args.out}, log {log_path}"
    )
    return 0


def _load_registry(paths: list[str]) -> ModelRegistry:
    registry = ModelRegistry()
    seen: dict[int, str] = {}
    for path in paths:
        model = load_model(path)
        qp = model.qp.value
        if qp in seen:
            raise ValueError(f"{path}: duplicate model for qp {qp} ({seen[qp]})")
        seen[qp] = path
        registry.register(model)
    return registry


def _eval_one_qp(planes: list[Plane], qp: Qp, registry: ModelRegistry):
    """Mean refinement MSEs over HEVC-coded contexts, plus in-loop PU SSEs."""
    model = registry.get(qp)
    original_sum = target_sum = 0.0
    hevc_sse_sum = ipcnn_sse_sum = 0
    n_samples = n_pus = 0
    for plane in planes:
        recon, records = reconstruct_plane(plane, qp)
        by_origin = {r.origin: r for r in records}
        recon_arr = recon.samples.astype(np.int32)
        norm_orig = normalize(plane.samples)
        for origin in eligible_origins(plane):
            context = assemble_context(
                recon_arr, origin, by_origin[origin].prediction
            )
            window = norm_orig[
                origin.y - 8 : origin.y + 8, origin.x - 8 : origin.x + 8
            ]
            before, after = refine_reconstructions(model, context, window)
            original_sum += before
            target_sum += after
            n_samples += 1
        _, outcomes = encode_with_ipcnn(plane, qp, registry)
        for outcome in outcomes:
            if not outcome.used_fallback:
                hevc_sse_sum += outcome.hevc_sse
                ipcnn_sse_sum += outcome.ipcnn_sse
                n_pus += 1
    return (
        n_samples,
        original_sum / n_samples,
        target_sum / n_samples,
        hevc_sse_sum / (64 * n_pus),
        ipcnn_sse_sum / (64 * n_pus),
    )


def cmd_eval(args: argparse.Namespace) -> int:
    registry = _load_registry(args.model)
    planes = load_corpus(read_manifest(args.manifest))
    if not any(eligible_origins(p) for p in planes):
        raise ValueError(f"{args.manifest}: no plane is large enough to evaluate")
    lines = [EVAL_HEADER]
    summary = []
    for qp_value in registry.qps():
        qp = Qp(qp_value)
        n, orig_mse, tgt_mse, pu_hevc, pu_ipcnn = _eval_one_qp(planes, qp, registry)
        lines.append(f"{qp_value},{n},{orig_mse!r},{tgt_mse!r},{pu_hevc!r},{pu_ipcnn!r}")
        summary.append(
            f"qp {qp_value}: n={n} recon mse {orig_mse:.4g} -> {tgt_mse:.4g} "
            f"({100 * (orig_mse - tgt_mse) / orig_mse:+.2f}% reduction), "
            f"pu mse {pu_hevc:.4g} -> {pu_ipcnn:.4g} "
            f"({100 * (pu_hevc - pu_ipcnn) / pu_hevc:+.2f}% reduction)"
        )
    write_bytes_atomic(args.out, ("\n".join(lines) + "\n").encode("ascii"))
    print(f"wrote {args.out}")
    for line in summary:
        print(line)
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    if args.qp is not None and args.qp != model.qp.value:
        raise ValueError(
            f"--qp {args.qp} does not match model qp {model.qp.value} in {args.model}"
        )
    plane = load_luma(args.input, args.format, args.width, args.height, args.frame)
    registry = ModelRegistry([model])
    recon, outcomes = encode_with_ipcnn(plane, model.qp, registry)
    write_luma(recon, args.out)
    csv_path = args.out + ".outcomes.csv"
    write_outcomes_csv(outcomes, csv_path)
    n_fallback = sum(o.used_fallback for o in outcomes)
    print(
        f"coded {plane.width}x{plane.height} at qp {model.qp.value}: "
        f"{len(outcomes)} blocks ({n_fallback} fallback); "
        f"wrote {args.out} and {csv_path}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ipcnn",
        description="Intra-prediction refinement codec: dataset extraction, "
        "training, evaluation, and single-frame coding.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="build a training dataset from a manifest")
    p.add_argument("--manifest", required=True, help="corpus manifest file")
    p.add_argument("--qp", type=int, required=True, help="quantization parameter")
    p.add_argument("--out", required=True, help="output dataset file")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a model on an extracted dataset")
    p.add_argument("--dataset", required=True, help="dataset file from extract")
    p.add_argument("--qp", type=int, default=None,
                   help="expected qp; must match the dataset header")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-4)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="measure refinement over a corpus")
    p.add_argument("--manifest", required=True, help="corpus manifest file")
    p.add_argument("--model", action="append", required=True,
                   help="model file; repeat for multiple QPs")
    p.add_argument("--out", required=True, help="output report CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="code one frame with learned prediction")
    p.add_argument("input", help="input frame file")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--qp", type=int, default=None,
                   help="expected qp; must match the model header")
    p.add_argument("--format", choices=FORMATS, default=FORMAT_PGM)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--out", required=True, help="output reconstruction (raw-y)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
