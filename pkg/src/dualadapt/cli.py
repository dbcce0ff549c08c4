"""Command-line entry point."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .memory import STRATEGIES, plan_indices
from .model import ModelConfig, param_audit

GRAD_TOL = 1e-4


def _cmd_audit(args) -> int:
    cfg = ModelConfig()
    if args.stma_d is not None:
        cfg = ModelConfig(stma_d_rgb=args.stma_d, stma_d_x=args.stma_d)
    elif args.full_scale:
        cfg = ModelConfig(stma_d_rgb=16, stma_d_x=16)
    audit = param_audit(cfg, full_scale=args.full_scale)
    if args.json:
        print(json.dumps(audit.to_dict(), indent=1, sort_keys=True))
        return 0
    print(f"widths: {audit.widths}")
    for group, info in audit.groups.items():
        print(f"  {group:<9} {info['count']:>12,d}  trainable={info['trainable']}")
    print(f"adapter params:  {audit.adapter_count:,d} ({audit.adapter_count / 1e6:.3f}M)")
    print(f"trainable:       {audit.trainable_count:,d} of {audit.total:,d} ({100 * audit.fraction:.3f}%)")
    if audit.stma_delta_16_12 is not None:
        print(f"stma_d 16 vs 12: {audit.stma_delta_16_12:,d}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import desk_gradcheck

    report = desk_gradcheck(seed=args.seed)
    ok = True
    for group, err in sorted(report.items()):
        flag = "ok" if err < GRAD_TOL else "FAIL"
        ok &= err < GRAD_TOL
        print(f"{group:<9} max rel err {err:.3e}  {flag}")
    return 0 if ok else 1


def _print_report_table(rows) -> None:
    for name, r in rows.items():
        events = ", ".join(f"{k}={v.mean_iou:.3f}" for k, v in sorted(r.per_event.items()))
        print(f"{name:<10} iou={r.mean_iou:.3f} auc={r.success_auc:.3f} prec={r.precision_at_r:.3f}  [{events}]")


def _cmd_train(args) -> int:
    from .experiment import load_config, run_experiment

    cfg = load_config(args.config)
    if args.output:
        cfg.output_dir = args.output
    result = run_experiment(cfg)
    _print_report_table(result.rows())
    print(f"outputs in {cfg.output_dir}")
    return 0


def _cmd_eval(args) -> int:
    from dataclasses import replace

    from .experiment import VARIANTS, evaluate_model, load_config, load_model, make_sequences

    ckpt = Path(args.checkpoint)
    cfg_path = Path(args.config) if args.config else ckpt.parent / "config.yaml"
    cfg = load_config(cfg_path)
    mcfg = cfg.model
    if args.variant:
        if args.variant not in VARIANTS:
            raise ValueError(f"unknown variant {args.variant!r}; known: {sorted(VARIANTS)}")
        mcfg = replace(mcfg, **VARIANTS[args.variant])
    model = load_model(ckpt, mcfg)
    seqs = make_sequences(args.sequences or cfg.data.eval_sequences, cfg.data.eval_length,
                          args.seed if args.seed is not None else cfg.data.eval_seed,
                          replace(cfg.synth, lead_event=cfg.data.eval_lead_event))
    report = evaluate_model(model, seqs, cfg.strategy, adapters=not args.no_adapters)
    if args.json:
        print(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    else:
        _print_report_table({"checkpoint": report})
    return 0


def _cmd_sample_plan(args) -> int:
    scores = [float(s) for s in args.scores.split(",")] if args.scores else None
    print("frame,slot")
    for slot, frame in enumerate(plan_indices(args.strategy, args.T, args.C, scores)):
        print(f"{frame},{slot}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualadapt", description="Dual-adapter multimodal tracking toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("audit", help="count parameters by group")
    a.add_argument("--full-scale", action="store_true", help="use ViT-B/16 geometry")
    a.add_argument("--stma-d", type=int, default=None, help="STMA hidden width for both modalities")
    a.add_argument("--json", action="store_true")
    a.set_defaults(func=_cmd_audit)

    g = sub.add_parser("gradcheck", help="finite-difference check on a 1-block model")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_gradcheck)

    t = sub.add_parser("train-synth", help="run the synthetic experiment")
    t.add_argument("--config", required=True)
    t.add_argument("--output", default=None, help="override output_dir")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval-synth", help="evaluate a saved checkpoint on held-out sequences")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", default=None, help="defaults to config.yaml next to the checkpoint")
    e.add_argument("--sequences", type=int, default=None)
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--variant", default=None, help="ablation the checkpoint was trained as, e.g. no_deep")
    e.add_argument("--no-adapters", action="store_true")
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=_cmd_eval)

    s = sub.add_parser("sample-plan", help="print the memory schedule as CSV")
    s.add_argument("--strategy", choices=STRATEGIES, default="uniform")
    s.add_argument("-T", type=int, default=3, help="memory slots")
    s.add_argument("-C", type=int, required=True, help="frames seen so far")
    s.add_argument("--scores", default=None, help="comma-separated confidences (confidence strategy)")
    s.set_defaults(func=_cmd_sample_plan)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
