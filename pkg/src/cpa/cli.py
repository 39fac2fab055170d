"""Command-line interface.

Every command prints (or writes with ``--out``) a JSON report that embeds the
full run configuration; ``cpa rerun REPORT`` replays that configuration.
Failures print a single JSON line ``{"error": ..., "message": ...}`` to stderr
and exit non-zero.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import compute_relational_matrix
from .csm import collaborative_step_mining
from .fsa import alignment_log_probability, frame_to_step_probabilities
from .io import read_fseq, read_manifest, to_pgm_bytes, write_fseq, write_grid, write_manifest
from .losses import LinearEncoder, TrainingDiverged, train_linear_encoder
from .metrics import silhouette_score
from .synth import BENCHMARK, PairEntry, ProcedureSpec, evaluate_verification, generate_pairs, random_procedures

POLICY_NAMES = {"midpoint": "midpoint", "random": "seeded_random", "mean": "mean"}
BOUNDARY_NAMES = {"semantic": "semantic", "literal": "paper-literal-boundary"}
METHOD_NAMES = {"cpa": "cpa", "mean-l2": "mean_feature_l2"}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {message}")


def _emit(report: dict, out) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def _load_pair(args):
    F1, F2 = read_fseq(args.seq1), read_fseq(args.seq2)
    for F, name in ((F1, args.seq1), (F2, args.seq2)):
        if F.length > args.max_frames:
            raise CliError(f"{name} has {F.length} frames, above the --max-frames guard of {args.max_frames}")
    return F1, F2


def _write_heatmap(path, grid):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".csv":
        write_grid(path, grid)
    else:
        path.write_bytes(to_pgm_bytes(grid))


def _with_suffix(path, tag):
    path = Path(path)
    return path.with_name(f"{path.stem}{tag}{path.suffix}")


def _mine(F1, F2, args):
    return collaborative_step_mining(F1, F2, args.k, POLICY_NAMES[args.policy], args.seed)


def cmd_gen(args):
    params = dict(BENCHMARK)
    procedures = None
    if args.spec:
        spec = json.loads(Path(args.spec).read_text())
        procedures = spec.pop("procedures", None)
        for key in ("n_pos", "n_neg", "negative_mode"):
            if key in spec and getattr(args, key) is None:
                setattr(args, key, spec.pop(key))
            spec.pop(key, None)
        unknown = set(spec) - set(params)
        if unknown:
            raise CliError(f"unknown spec keys: {sorted(unknown)}")
        params.update(spec)
    for key in ("noise_sigma", "min_duration", "max_duration"):
        if getattr(args, key) is not None:
            params[key] = getattr(args, key)
    n_pos = 100 if args.n_pos is None else args.n_pos
    n_neg = 100 if args.n_neg is None else args.n_neg
    mode = args.negative_mode or "step_permutation"

    proc_seed, pair_seed = np.random.SeedSequence(args.seed).spawn(2)
    if procedures is not None:
        specs = [ProcedureSpec(np.array(p["prototypes"]), p.get("min_duration", params["min_duration"]),
                               p.get("max_duration", params["max_duration"]),
                               p.get("noise_sigma", params["noise_sigma"]),
                               p.get("total_frames", params["frames"]), procedure_id=i)
                 for i, p in enumerate(procedures)]
    else:
        specs = random_procedures(seed=int(proc_seed.generate_state(1)[0]), **params)
    manifest = generate_pairs(specs, n_pos, n_neg, mode, seed=int(pair_seed.generate_state(1)[0]))

    out = Path(args.out)
    (out / "sequences").mkdir(parents=True, exist_ok=True)
    ground_truth = {}
    paths = {}
    for ref, rec in manifest.sequences.items():
        rel = f"sequences/{ref}.csv"
        paths[ref] = rel
        write_fseq(out / rel, rec.features)
        ground_truth[rel] = {"boundaries": [list(b) for b in rec.boundaries],
                             "step_ids": list(rec.step_ids), "procedure_id": rec.procedure_id}
    write_manifest(out / "manifest.jsonl", [PairEntry(paths[e.a], paths[e.b], e.label) for e in manifest.entries])
    (out / "ground_truth.json").write_text(json.dumps(ground_truth, indent=1, sort_keys=True) + "\n")
    report = {"config": _config(args), "procedure_params": params, "n_sequences": len(manifest.sequences),
              "n_pairs": len(manifest), "manifest": "manifest.jsonl", "ground_truth": "ground_truth.json"}
    _emit(report, out / "gen_report.json")
    return report


def cmd_segment(args):
    F1, F2 = _load_pair(args)
    partition, S1, S2 = _mine(F1, F2, args)
    if args.heatmap:
        _write_heatmap(args.heatmap, compute_relational_matrix(F1, F2).values)
    report = {"config": _config(args), **partition.to_dict(),
              "steps": {"seq1": list(S1.source or []), "seq2": list(S2.source or [])},
              "intervals": {"seq1": partition.intervals(1), "seq2": partition.intervals(2)}}
    _emit(report, args.out)
    return report


def cmd_align(args):
    F1, F2 = _load_pair(args)
    partition, S1, S2 = _mine(F1, F2, args)
    boundary = BOUNDARY_NAMES[args.boundary]
    r12 = alignment_log_probability(frame_to_step_probabilities(F1, S2), boundary, with_posteriors=bool(args.heatmap))
    r21 = alignment_log_probability(frame_to_step_probabilities(F2, S1), boundary, with_posteriors=bool(args.heatmap))
    if args.heatmap:
        _write_heatmap(args.heatmap, r12.posteriors)
        _write_heatmap(_with_suffix(args.heatmap, "_21"), r21.posteriors)
    report = {"config": _config(args), "d_align": -0.5 * (r12.log_prob + r21.log_prob),
              "log_p_s2_given_f1": r12.log_prob, "log_p_s1_given_f2": r21.log_prob,
              "boundary": boundary, "partition": partition.to_dict()}
    _emit(report, args.out)
    return report


def _ground_truth(manifest_path, explicit=None):
    path = Path(explicit) if explicit else Path(manifest_path).parent / "ground_truth.json"
    return json.loads(path.read_text()) if path.exists() else None


def _verify(manifest, args, k, features=None):
    return evaluate_verification(manifest, METHOD_NAMES[args.method], k, args.seed, POLICY_NAMES[args.policy],
                                 BOUNDARY_NAMES[args.boundary], args.workers, features)


def _check_manifest_frames(manifest, limit):
    for ref, rec in manifest.sequences.items():
        if rec.features.length > limit:
            raise CliError(f"{ref} has {rec.features.length} frames, above the --max-frames guard of {limit}")


def cmd_verify(args):
    manifest = read_manifest(args.manifest)
    _check_manifest_frames(manifest, args.max_frames)
    rep = _verify(manifest, args, args.k)
    report = {"config": _config(args), **rep.to_dict()}
    for row, e in zip(report["pairs"], manifest.entries):
        row.update(a=e.a, b=e.b)
    _emit(report, args.out)
    return report


def cmd_sensitivity(args):
    manifest = read_manifest(args.manifest)
    _check_manifest_frames(manifest, args.max_frames)
    table = [{"k": k, "auc": _verify(manifest, args, k).auc} for k in range(args.k_min, args.k_max + 1)]
    best = max(table, key=lambda r: r["auc"])
    report = {"config": _config(args), "table": table, "best_k": best["k"], "best_auc": best["auc"]}
    _emit(report, args.out)
    return report


def cmd_train_demo(args):
    manifest = read_manifest(args.manifest, _ground_truth(args.manifest, args.ground_truth))
    _check_manifest_frames(manifest, args.max_frames)
    if args.task == "centroid" and any(r.procedure_id < 0 for r in manifest.sequences.values()):
        raise CliError("--task centroid needs procedure ids from ground_truth.json")
    try:
        result = train_linear_encoder(manifest, args.k, args.epochs, args.lr, args.seed, args.d_out,
                                      POLICY_NAMES[args.policy], BOUNDARY_NAMES[args.boundary], args.task)
    except TrainingDiverged as exc:
        raise CliError(f"training diverged at epoch {exc.epoch}; losses so far: "
                       f"{[r.total for r in exc.curve]}") from None

    enc_seed = int(np.random.SeedSequence(args.seed).spawn(2)[0].generate_state(1)[0])
    initial = LinearEncoder.random(result.encoder.weight.shape[0], args.d_out, enc_seed)

    def encoded(enc):
        return {ref: enc.encode(rec.features) for ref, rec in manifest.sequences.items()}

    report = {"config": _config(args), "loss_curve": [r.total for r in result.curve]}
    for tag, enc in (("pre", initial), ("post", result.encoder)):
        feats = encoded(enc)
        report[f"auc_{tag}"] = _verify(manifest, args, args.k, feats).auc
        ids = [manifest.sequences[r].procedure_id for r in feats]
        if len(set(ids)) > 1 and min(ids) >= 0:
            video = np.stack([f.frames.mean(axis=0) for f in feats.values()])
            report[f"silhouette_video_{tag}"] = silhouette_score(video, ids)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "loss_curve.csv", "w") as fh:
        fh.write("epoch,l_step,l_align,l_task,total\n")
        for i, r in enumerate(result.curve, 1):
            fh.write(f"{i},{r.l_step!r},{r.l_align!r},{r.l_task!r},{r.total!r}\n")
    write_grid(out / "encoder.csv", result.encoder.weight)
    _emit(report, out / "report.json")
    return report


COMMANDS = {
    "gen": cmd_gen, "segment": cmd_segment, "align": cmd_align, "verify": cmd_verify,
    "sensitivity": cmd_sensitivity, "train-demo": cmd_train_demo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, method=False):
        p.add_argument("--k", type=int, default=4, help="number of steps")
        p.add_argument("--policy", choices=sorted(POLICY_NAMES), default="midpoint")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--boundary", choices=sorted(BOUNDARY_NAMES), default="semantic")
        p.add_argument("--max-frames", type=int, default=256)
        if method:
            p.add_argument("--method", choices=sorted(METHOD_NAMES), default="cpa")
            p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("gen", help="generate synthetic sequences and a pair manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--spec", help="JSON file with procedure parameters or explicit procedures")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-pos", type=int)
    p.add_argument("--n-neg", type=int)
    p.add_argument("--negative-mode", choices=["step_permutation", "different_procedure"])
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--min-duration", type=int)
    p.add_argument("--max-duration", type=int)

    for name in ("segment", "align"):
        p = sub.add_parser(name, help=f"{name} a pair of fseq-csv sequences")
        p.add_argument("seq1")
        p.add_argument("seq2")
        common(p)
        p.add_argument("--out", help="write the JSON report here instead of stdout")
        p.add_argument("--heatmap", help="export heatmap (.pgm, or .csv for a numeric grid)")

    p = sub.add_parser("verify", help="score every manifest pair and report AUC")
    p.add_argument("--manifest", required=True)
    common(p, method=True)
    p.add_argument("--out")

    p = sub.add_parser("sensitivity", help="verification AUC as a function of K")
    p.add_argument("--manifest", required=True)
    common(p, method=True)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--out")

    p = sub.add_parser("train-demo", help="train a linear encoder on positive pairs")
    p.add_argument("--manifest", required=True)
    common(p, method=True)
    p.add_argument("--ground-truth", help="defaults to ground_truth.json next to the manifest")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--d-out", type=int, default=8)
    p.add_argument("--task", choices=["none", "centroid"], default="none")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("rerun", help="replay the configuration embedded in a report")
    p.add_argument("report")
    p.add_argument("--out", help="override the output location")
    return parser


def _rerun(args):
    config = json.loads(Path(args.report).read_text())["config"]
    ns = argparse.Namespace(**config)
    if args.out:
        ns.out = args.out
    if ns.command not in COMMANDS:
        raise CliError(f"cannot rerun command {ns.command!r}")
    return COMMANDS[ns.command](ns)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "rerun":
            _rerun(args)
        else:
            COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one machine-readable line
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": " ".join(str(exc).split())}) + "\n")
        return 2 if isinstance(exc, CliError) and str(exc).startswith("usage:") else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
