"""Command-line operator surface: data synthesis, training, evaluation,
single-image restoration, the gradient suite, and the HTTP service."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import evalkit
from .degrade import DegradationSpec, build_dataset
from .gradcheck import run_all
from .images import load_png, save_png
from .pipeline import (
    MODES,
    ModelConfig,
    build_model,
    config_for_mode,
    default_config,
    mode_uses_cem,
    toy_config,
)
from .service import ServiceConfig, create_app
from .textio import DEFAULT_PROMPT, OracleProvider, RemoteMLLMProvider, provider_describe
from .train import Checkpoint, TrainConfig, load_checkpoint, train_stage


def _parse_mix(text: str) -> dict:
    mix = {}
    for part in text.split(","):
        if not part:
            continue
        name, _, value = part.partition("=")
        mix[name.strip()] = float(value)
    return mix


def _model_config(spec: dict) -> ModelConfig:
    preset = spec.get("preset", "toy")
    if preset == "toy":
        cfg = toy_config()
    elif preset == "full":
        cfg = default_config()
    else:
        raise ValueError(f"unknown preset: {preset!r}")
    overrides = dict(cfg.to_dict())
    overrides.update(spec.get("model", {}))
    return ModelConfig.from_dict(overrides)


def cmd_synth(args) -> int:
    manifest = build_dataset(args.out, n=args.n, mix=_parse_mix(args.mix),
                             seed=args.seed, size=args.size, split=args.split)
    print(f"{len(manifest.entries)} pairs written to {args.out}/manifest.json")
    return 0


def cmd_train(args) -> int:
    spec = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    mode = spec.get("mode", "full")
    model_cfg = config_for_mode(_model_config(spec), mode)
    train_cfg = TrainConfig(**{"patch": 32, **spec.get("train", {})})
    init = load_checkpoint(args.init) if args.init else None
    ckpt = train_stage(args.stage, args.manifest, train_cfg,
                       model_config=model_cfg, init=init,
                       use_cem=mode_uses_cem(mode), log_path=args.log,
                       out_path=args.out, meta={"mode": mode})
    print(f"stage {args.stage} finished at iteration {ckpt.iteration}; "
          f"checkpoint written to {args.out}")
    return 0


def _emit_report(report: dict, report_path) -> None:
    print(evalkit.render_table(report))
    if report_path:
        evalkit.save_report(report, report_path)
        print(f"report written to {report_path}")


def cmd_eval(args) -> int:
    report = evalkit.evaluate_checkpoint(args.checkpoint, args.manifest,
                                         include_input=True)
    _emit_report(report, args.report)
    return 0


def cmd_text_impact(args) -> int:
    _emit_report(evalkit.run_text_impact(args.checkpoint, args.manifest), args.report)
    return 0


def cmd_ablate(args) -> int:
    _emit_report(evalkit.run_ablation(args.mode, args.checkpoint, args.manifest),
                 args.report)
    return 0


def cmd_restore(args) -> int:
    img = load_png(getattr(args, "in"))
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        model = ckpt.build_model()
        use_cem_default = ckpt.stage == "restore" and ckpt.meta.get("mode") != "no_cem"
    else:
        model = build_model(toy_config(), seed=0)
        use_cem_default = False
    model.eval()

    if args.text:
        out = model.restore_array(img, args.text, use_cem=False)
    else:
        spec = (DegradationSpec.from_dict(json.loads(Path(args.spec).read_text(encoding="utf-8")))
                if args.spec else None)
        if args.provider == "oracle":
            provider = OracleProvider(mode="gt")
            if spec is None:
                raise ValueError("oracle provider needs --spec (degradation record JSON)")
        else:
            if not args.endpoint:
                raise ValueError("remote provider needs --endpoint")
            provider = RemoteMLLMProvider(args.endpoint)
        desc = provider_describe(provider, img, DEFAULT_PROMPT, spec=spec,
                                 seed=spec.seed if spec else 0)
        print(f"description: {desc.text}")
        out = model.restore_array(img, desc.text, use_cem=use_cem_default)
    save_png(out, args.out)
    print(f"restored image written to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_all(verbose=True)
    return 0 if all(r["ok"] for r in results.values()) else 1


def cmd_serve(args) -> int:
    import uvicorn

    cfg = ServiceConfig.load(args.config) if args.config else ServiceConfig()
    if args.checkpoint:
        cfg.checkpoint = args.checkpoint
    if args.port:
        cfg.port = args.port
    app = create_app(config=cfg)
    uvicorn.run(app, host="127.0.0.1", port=cfg.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="restora",
        description="Text-conditioned image restoration: data, training, "
                    "evaluation, and the session service.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a degraded/clean PNG dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mix", default="noise=0.34,rain=0.33,low=0.33",
                   help='fractions like "noise=0.4,rain=0.3,low=0.3" (sum to 1)')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--split", default="train")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", choices=["refine", "restore"], required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help='JSON: {"preset","model","train","mode"}')
    p.add_argument("--init", help="checkpoint to resume from")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", help="JSONL training-log path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PSNR/SSIM report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", help="JSON report output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("text-impact", help="accurate vs contradicting text study")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_text_impact)

    p = sub.add_parser("ablate", help="evaluate an ablation-mode checkpoint")
    p.add_argument("--mode", choices=list(MODES), required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("restore", help="restore one PNG")
    p.add_argument("--checkpoint")
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--text", help="use this description directly (enhancement bypassed)")
    p.add_argument("--provider", choices=["oracle", "remote"], default="oracle")
    p.add_argument("--spec", help="degradation record JSON for the oracle provider")
    p.add_argument("--endpoint", help="remote describe endpoint")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--checkpoint")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--config", help="service config JSON")
    p.set_defaults(func=cmd_serve)

    return parser


def cli_dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures map to exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
