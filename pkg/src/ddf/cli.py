"""``ddf`` command line: synth, train, filter, attack, eval, report, plot.

Exit codes: 0 success, 1 precondition failure, 2 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ddf.errors import PreconditionError

log = logging.getLogger("ddf")


class _Parser(argparse.ArgumentParser):
    """Usage errors count as precondition failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise PreconditionError(message)


def _csv(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _seed_everything(seed: int):
    import torch  # noqa: PLC0415
    np.random.seed(seed)
    torch.manual_seed(seed)


def _records(manifest, split: str, split_seed: int, require_transcript: bool = False):
    from ddf.corpus import SplitSpec, parse_manifest, split_80_20  # noqa: PLC0415
    recs = parse_manifest(manifest, require_transcript=require_transcript)
    if split == "all":
        return recs
    train, test = split_80_20(recs, SplitSpec(seed=split_seed))
    return train if split == "train" else test


def _merge(dc, overrides: dict):
    """Replace fields of a (possibly nested) frozen dataclass from a dict."""
    if not overrides:
        return dc
    known = {f.name: f for f in dataclasses.fields(dc)}
    changes = {}
    for key, value in overrides.items():
        if key not in known:
            raise PreconditionError(f"unknown configuration key {key!r} for {type(dc).__name__}")
        current = getattr(dc, key)
        if dataclasses.is_dataclass(current):
            changes[key] = _merge(current, value)
        elif isinstance(current, tuple):
            changes[key] = tuple(value)
        else:
            changes[key] = value
    return dataclasses.replace(dc, **changes)


def load_run_config(path):
    """JSON file with optional ``train`` and ``model`` sections over the defaults."""
    from ddf.pipeline import ModelConfig, TrainConfig  # noqa: PLC0415
    if path is None:
        return TrainConfig(), ModelConfig()
    path = Path(path)
    if not path.is_file():
        raise PreconditionError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PreconditionError(f"config is not valid JSON: {exc}") from exc
    unknown = set(data) - {"train", "model"}
    if unknown:
        raise PreconditionError(f"unknown config sections: {', '.join(sorted(unknown))}")
    base = ModelConfig.reference() if data.get("model", {}).pop("reference", False) else ModelConfig()
    return _merge(TrainConfig(), data.get("train", {})), _merge(base, data.get("model", {}))


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------- commands

def cmd_synth(args):
    from ddf.corpus import SynthCorpusSpec, synth_corpus  # noqa: PLC0415
    spec = SynthCorpusSpec(num_utterances=args.utterances, num_speakers=args.speakers,
                           num_emotions=args.emotions, token_vocab_size=args.vocab, seed=args.seed)
    spec.validate()
    print(synth_corpus(spec, args.out, workers=args.workers))


def cmd_train(args):
    from ddf.pipeline import save_checkpoint, train  # noqa: PLC0415
    tcfg, mcfg = load_run_config(args.config)
    over = {"seed": args.seed}
    if args.steps is not None:
        over["max_steps"] = args.steps
    tcfg = dataclasses.replace(tcfg, **over)
    recs = _records(args.manifest, args.split, args.split_seed, require_transcript=True)
    models = train(recs, tcfg, mcfg)
    save_checkpoint(models, args.out)
    print(f"{args.out} {models.checkpoint_id}")


def cmd_filter(args):
    from ddf.formats import save_array, save_embeddings  # noqa: PLC0415
    from ddf.frontend import load_waveform, save_waveform  # noqa: PLC0415
    from ddf.pipeline import FilterRequest, OutputKind, filter, load_checkpoint  # noqa: PLC0415
    from ddf.preference import default_profile, is_passthrough, load_profile  # noqa: PLC0415
    profile = load_profile(args.profile) if args.profile else default_profile()
    kind = OutputKind(args.emit)
    w = load_waveform(args.input)
    models = None
    if args.checkpoint:
        models = load_checkpoint(args.checkpoint)
    elif not is_passthrough(args.preference, profile):
        raise PreconditionError(f"the {args.preference} option needs --checkpoint")
    req = FilterRequest(w, args.preference, kind, args.seed, args.vocoder, args.speaker)
    res = filter(req, models, profile)
    out = Path(args.out)
    side = {"provenance": res.provenance.to_dict(), "input": Path(args.input).name}
    if kind == OutputKind.RECONSTRUCTED_AUDIO:
        if res.payload is w and args.preference == "low":
            # passthrough: copy the input bytes verbatim
            out.write_bytes(Path(args.input).read_bytes())
        else:
            save_waveform(res.payload, out)
    elif kind == OutputKind.SPEECH_EMBEDDING:
        save_array(out, res.payload.vectors)
        side["indices"] = res.payload.indices.tolist()
    else:
        save_embeddings(out, [(Path(args.input).stem, res.payload.vector)])
    _write_json(out.with_name(out.name + ".json"), side)
    print(out)


def _specs(names):
    from ddf.attack import MODEL_KINDS, AttackModelSpec  # noqa: PLC0415
    out = []
    for n in names:
        kind = n.upper()
        if kind not in MODEL_KINDS:
            raise PreconditionError(f"unknown attacker {n!r}; choose from {', '.join(m.lower() for m in MODEL_KINDS)}")
        out.append(AttackModelSpec(kind))
    return out


def cmd_attack(args):
    from ddf.attack import AttackReport, RepresentationExtractor, render_attack_table  # noqa: PLC0415
    from ddf.evaluation import CONDITIONS, EMBEDDING_CONDITION, attack_condition  # noqa: PLC0415
    from ddf.pipeline import load_checkpoint  # noqa: PLC0415
    specs = _specs(_csv(args.models))
    conditions = _csv(args.conditions)
    for c in conditions:
        if c not in CONDITIONS + (EMBEDDING_CONDITION,):
            raise PreconditionError(f"unknown condition {c!r}")
    models = load_checkpoint(args.checkpoint) if args.checkpoint else None
    extractor = RepresentationExtractor(args.extractor, models, args.features_dir)
    recs = _records(args.manifest, args.split, args.split_seed)
    seeds = [int(s) for s in _csv(args.split_seeds)]
    report = AttackReport()
    for c in conditions:
        report.extend(attack_condition(recs, models, c, extractor, _csv(args.attributes), specs, seeds,
                                       args.vocoder, args.seed, args.dataset))
    report.write(args.out)
    print(render_attack_table(report.records, columns=("condition", "attribute")), end="")


def cmd_eval(args):
    from ddf.corpus import load_synth_params  # noqa: PLC0415
    from ddf.evaluation import evaluate  # noqa: PLC0415
    from ddf.pipeline import load_checkpoint  # noqa: PLC0415
    if not (args.wer or args.eer):
        raise PreconditionError("nothing to evaluate: pass --wer and/or --eer")
    models = load_checkpoint(args.checkpoint)
    params = load_synth_params(args.manifest) if args.wer else None
    recs = _records(args.manifest, args.split, args.split_seed, require_transcript=args.wer)
    rep = evaluate(recs, models, params, args.wer, args.eer, args.vocoder, args.seed)
    rep.provenance["split"] = {"part": args.split, "seed": args.split_seed}
    _write_json(args.out, rep.to_dict())
    for name, c in sorted(rep.conditions.items()):
        print(f"{name}: wer={c.wer} eer={c.eer}")


def cmd_report(args):
    from ddf.report import write_report  # noqa: PLC0415
    print(write_report(args.run, args.out))


def cmd_plot(args):
    from ddf.frontend import load_waveform  # noqa: PLC0415
    from ddf.plots import compare_plots  # noqa: PLC0415
    print(compare_plots(load_waveform(args.raw), load_waveform(args.filtered), args.kind, args.out))


# --------------------------------------------------------------------------- parser

def _split_args(p):
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--split-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ddf", description="Preference-driven voice privacy filter")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        p.add_argument("--seed", type=int, default=0)
        return p

    p = command("synth", cmd_synth, "write a synthetic labelled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--utterances", type=int, default=200)
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--emotions", type=int, default=4)
    p.add_argument("--vocab", type=int, default=16)
    p.add_argument("--workers", type=int, default=1)

    p = command("train", cmd_train, "train the filter and write a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--split", choices=("train", "test", "all"), default="train")
    p.add_argument("--split-seed", type=int, default=0)

    p = command("filter", cmd_filter, "filter one utterance")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preference", choices=("high", "moderate", "low"), required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--emit", choices=("reconstructed-audio", "speech-embedding", "speaker-embedding"),
                   default="reconstructed-audio")
    p.add_argument("--vocoder", choices=("fallback", "autoregressive"), default="fallback")
    p.add_argument("--profile", help="preference CSV (option,task,value)")
    p.add_argument("--speaker", help="speaker id, needed by one-hot checkpoints")

    p = command("attack", cmd_attack, "attribute-inference attacks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--extractor", choices=("spectrogram", "content", "speaker", "external"), default="spectrogram")
    p.add_argument("--features-dir")
    p.add_argument("--models", default="lr,rf,svm,mlp")
    p.add_argument("--attributes", default="gender,emotion")
    p.add_argument("--conditions", default="raw")
    p.add_argument("--split-seeds", default="0,1,2,3,4")
    p.add_argument("--vocoder", choices=("fallback", "autoregressive"), default="fallback")
    p.add_argument("--dataset", default="synthetic")
    p.add_argument("--split", choices=("train", "test", "all"), default="all")
    p.add_argument("--split-seed", type=int, default=0)

    p = command("eval", cmd_eval, "token error rate and verification EER per condition")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--wer", action="store_true")
    p.add_argument("--eer", action="store_true")
    p.add_argument("--vocoder", choices=("fallback", "autoregressive"), default="fallback")
    _split_args(p)

    p = command("report", cmd_report, "aggregate a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)

    p = command("plot", cmd_plot, "raw vs filtered comparison figure")
    p.add_argument("--raw", required=True)
    p.add_argument("--filtered", required=True)
    p.add_argument("--kind", choices=("spectrogram", "chromagram"), default="spectrogram")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except PreconditionError as exc:
        print(f"ddf: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _seed_everything(args.seed)
        args.func(args)
    except PreconditionError as exc:
        print(f"ddf: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"ddf: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
