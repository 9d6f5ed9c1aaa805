"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Diagnostics go to stderr; each command prints one ``RESULT key=value ...``
line on stdout.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import encoder, netgraph, pipeline, vocoder
from .labels import LabelError, parse_label_file
from .phoneset import PhoneSetError, load_phoneset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4

log = logging.getLogger("rtdnn")


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def read_kv(path) -> dict:
    """``key=value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"{path}:{lineno}: expected key=value")
        out[key.strip()] = val.strip()
    return out


def _result(**kw):
    print("RESULT " + " ".join(f"{k}={v}" for k, v in kw.items()), flush=True)


def _hidden(text: str) -> netgraph.HiddenSizes:
    try:
        parts = [int(v) for v in text.split(",")]
        if len(parts) != 3 or min(parts) < 1:
            raise ValueError
    except ValueError:
        raise argparse.ArgumentTypeError("expected three positive integers, e.g. 32,64,16") from None
    return netgraph.HiddenSizes(*parts)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--phoneset", type=Path, help="phone table (default: bundled TIMIT table)")
    common.add_argument("--voc-config", type=Path, help="vocoder key=value settings")
    common.add_argument("--enc-config", type=Path, help="encoder key=value settings")
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--verbose", "-v", action="store_true")

    p = _Parser(prog="rtdnn", description="Phonetic-label to vocoder-parameter network and vocoder.",
                parents=[common])
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    # subcommands accept the global flags too; SUPPRESS keeps a value given globally
    for action in common._actions:
        action.default = argparse.SUPPRESS

    s = sub.add_parser("analyze", parents=[common], help="analyze a WAV into a parameter track")
    s.add_argument("wav", type=Path)
    s.add_argument("labels", type=Path)
    s.add_argument("out", type=Path, help="output track (one frame per line)")

    s = sub.add_parser("encode", parents=[common], help="write the network input matrix for a label file")
    s.add_argument("labels", type=Path)
    s.add_argument("out", type=Path)

    s = sub.add_parser("train", parents=[common], help="train a model from a corpus manifest")
    s.add_argument("manifest", type=Path)
    s.add_argument("out", type=Path, help="model file to write")
    s.add_argument("--epochs", type=int, default=netgraph.TrainConfig.epochs)
    s.add_argument("--lr", type=float, default=netgraph.TrainConfig.learning_rate)
    s.add_argument("--final-lr", type=float, default=None,
                   help="learning rate reached in the last epoch (default: min(lr, %g))"
                   % netgraph.TrainConfig.final_learning_rate)
    s.add_argument("--momentum", type=float, default=netgraph.TrainConfig.momentum)
    s.add_argument("--band-weight", type=float, default=netgraph.TrainConfig.band_loss_weight)
    s.add_argument("--hidden", type=_hidden, default=netgraph.HiddenSizes())
    s.add_argument("--buffer-len", type=int, default=10)
    s.add_argument("--no-shuffle", action="store_true")

    s = sub.add_parser("synth", parents=[common], help="synthesize a WAV from labels with a trained model")
    s.add_argument("model", type=Path)
    s.add_argument("labels", type=Path)
    s.add_argument("out", type=Path)
    s.add_argument("--noise-seed", type=int, default=0)

    s = sub.add_parser("copysynth", parents=[common], help="analyze and resynthesize a WAV")
    s.add_argument("wav", type=Path)
    s.add_argument("out", type=Path)
    s.add_argument("--noise-seed", type=int, default=0)

    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check on a small graph")
    return p


def _require_files(*paths):
    for path in paths:
        if not path.is_file():
            raise UsageError(f"no such file: {path}")


def _require_dirs(*paths):
    for path in paths:
        parent = path.resolve().parent
        if not parent.is_dir():
            raise UsageError(f"output directory does not exist: {parent}")


def _configs(args):
    _require_files(*(p for p in (args.phoneset, args.voc_config, args.enc_config) if p is not None))
    ps = load_phoneset(args.phoneset)
    voc = vocoder.config_from_mapping(read_kv(args.voc_config)) if args.voc_config else vocoder.VocoderConfig()
    enc = encoder.config_from_mapping(read_kv(args.enc_config)) if args.enc_config else encoder.EncoderConfig()
    return ps, voc, enc


def cmd_analyze(args):
    _require_files(args.wav, args.labels)
    _require_dirs(args.out)
    ps, voc, _ = _configs(args)
    item = pipeline.analyze_item(args.wav, args.labels, ps, voc)
    vocoder.write_track(args.out, item.targets)
    _result(frames=len(item.targets), padded=item.padded_frames, out=args.out)


def cmd_encode(args):
    _require_files(args.labels)
    _require_dirs(args.out)
    ps, _, enc = _configs(args)
    u = parse_label_file(args.labels, ps)
    m = encoder.encode_utterance(u, ps, enc)
    args.out.write_text(encoder.format_matrix(m), encoding="utf-8")
    _result(frames=len(m), dim=m.matrix.shape[1], out=args.out)


def cmd_train(args):
    _require_files(args.manifest)
    _require_dirs(args.out)
    ps, voc, enc = _configs(args)
    seed = args.seed
    final_lr = args.final_lr if args.final_lr is not None else min(args.lr, netgraph.TrainConfig.final_learning_rate)
    try:
        cfg = netgraph.TrainConfig(learning_rate=args.lr, final_learning_rate=final_lr, momentum=args.momentum,
                                   epochs=args.epochs, seed=seed,
                                   band_loss_weight=args.band_weight, shuffle=not args.no_shuffle)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    t0 = time.perf_counter()
    items = pipeline.build_corpus(pipeline.read_manifest(args.manifest), ps, voc)
    data = pipeline.training_set(items, ps, enc)
    g = netgraph.init_weights(netgraph.build_default_graph(ps, enc, voc, args.hidden, args.buffer_len), seed)
    log.info("corpus: %d utterances, %d frames; %d parameters", data.n_utts, len(data.X), g.n_params())

    def progress(epoch, hist, _g):
        if (epoch + 1) % 50 == 0 or epoch + 1 == cfg.epochs:
            log.info("epoch %d: main %.5f band %.5f", epoch + 1, hist.main_mse[-1], hist.band_mse[-1])

    try:
        g, hist = netgraph.train(g, data, cfg, progress)
    except FloatingPointError as exc:
        raise NumericFailure(str(exc)) from None
    netgraph.save_model(g, args.out)
    final = hist.main_mse[-1] if hist.main_mse else float("nan")
    _result(utterances=data.n_utts, frames=len(data.X), epochs=cfg.epochs, final_mse=f"{final:.6g}",
            params=g.n_params(), seconds=f"{time.perf_counter() - t0:.1f}", model=args.out)


def cmd_synth(args):
    _require_files(args.model, args.labels)
    _require_dirs(args.out)
    ps, _, _ = _configs(args)
    g = netgraph.load_model(args.model, ps)
    audio, rep = pipeline.synthesize_utterance(g, args.labels, ps, args.out, args.noise_seed)
    _result(frames=rep.n_frames, samples=rep.n_samples, lsf_repairs=rep.lsf_repairs,
            runtime_s=f"{rep.runtime_s:.3f}", out=args.out)


def cmd_copysynth(args):
    _require_files(args.wav)
    _require_dirs(args.out)
    _, voc, _ = _configs(args)
    x, sr = vocoder.read_wav(args.wav)
    params = vocoder.analyze(x, voc, sample_rate=sr)
    y = vocoder.synthesize(params, voc, args.noise_seed)
    vocoder.write_wav(args.out, y, voc.sample_rate)
    _result(frames=len(params), samples=len(y), out=args.out)


def cmd_gradcheck(args):
    ps, _, _ = _configs(args)
    t0 = time.perf_counter()
    err, n = netgraph.reduced_gradient_check(ps, args.seed)
    _result(max_rel_err=f"{err:.3e}", params=n, seconds=f"{time.perf_counter() - t0:.1f}")
    if not err < GRADCHECK_TOL:
        raise NumericFailure(f"gradient check failed: max relative error {err:.3e} >= {GRADCHECK_TOL:g}")


COMMANDS = {
    "analyze": cmd_analyze, "encode": cmd_encode, "train": cmd_train,
    "synth": cmd_synth, "copysynth": cmd_copysynth, "gradcheck": cmd_gradcheck,
}

DATA_ERRORS = (pipeline.DataError, LabelError, PhoneSetError, vocoder.VocoderError, netgraph.GraphError,
               OSError, ValueError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"rtdnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    for name, default in (("phoneset", None), ("voc_config", None), ("enc_config", None), ("seed", 0),
                          ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"rtdnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericFailure, FloatingPointError) as exc:
        print(f"rtdnn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as exc:
        print(f"rtdnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
