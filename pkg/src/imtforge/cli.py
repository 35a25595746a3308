"""Command-line orchestration: subword learning, training, translation,
terminal sessions, simulation, evaluation, and the HTTP service.

Exit codes: 0 success, 1 runtime failure (divergence, model or protocol
errors), 2 argument problems (argparse's own convention). An optional INI
config file supplies per-subcommand defaults; explicit flags always win.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

from .bpe import BpeError, MergeTable, learn_bpe
from .decoding import ConstraintError
from .engine import Engine, EngineError, build_engine
from .metrics import MetricError, bleu, bootstrap_ci, ter, write_metric_report
from .session import SessionError, accept_hypothesis, apply_char_feedback, \
    apply_word_feedback, start_session
from .simulation import SimulationConfig, SimulationError, run_simulation, \
    write_report_csv
from .training import OPTIMIZERS, OptimizerState, TrainConfig, TrainingError, \
    online_update, train

PUBLIC_COMMANDS = ("learn-bpe", "train", "translate", "interactive",
                   "simulate", "evaluate", "serve")

RUNTIME_ERRORS = (BpeError, EngineError, TrainingError, SessionError,
                  ConstraintError, SimulationError, MetricError)


def _read_token_lines(path: str) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh.read().splitlines()]


def _require_files(parser: argparse.ArgumentParser, *paths: str) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            parser.error(f"no such file: {p}")


def _parallel(parser, src_path, trg_path):
    src = _read_token_lines(src_path)
    trg = _read_token_lines(trg_path)
    if len(src) != len(trg):
        parser.error(f"{src_path} has {len(src)} lines but "
                     f"{trg_path} has {len(trg)}")
    pairs = [(s, t) for s, t in zip(src, trg) if s or t]
    if any(not s or not t for s, t in pairs):
        parser.error("source/target lines must be empty together")
    return pairs


# -- subcommands ---------------------------------------------------------------


def cmd_learn_bpe(parser, args) -> int:
    _require_files(parser, args.src, args.trg)
    sentences = _read_token_lines(args.src)
    if args.trg:
        sentences += _read_token_lines(args.trg)
    sentences = [s for s in sentences if s]
    table = learn_bpe(sentences, args.merges)
    table.save(args.out)
    print(f"learned {len(table)} merges -> {args.out}")
    return 0


def cmd_train(parser, args) -> int:
    _require_files(parser, args.src, args.trg, args.dev_src, args.dev_trg)
    train_pairs = _parallel(parser, args.src, args.trg)
    dev_pairs = _parallel(parser, args.dev_src, args.dev_trg)
    engine = build_engine([s for s, _ in train_pairs],
                          [t for _, t in train_pairs],
                          num_merges=args.merges, embed_dim=args.embed_dim,
                          hidden_dim=args.hidden_dim,
                          attention_dim=args.attention_dim,
                          readout_dim=args.readout_dim, seed=args.seed)
    corpus = [(engine.source_ids(s), engine.target_ids(t))
              for s, t in train_pairs]
    dev = [(engine.source_ids(s), engine.target_ids(t))
           for s, t in dev_pairs]
    config = TrainConfig(batch_size=args.batch_size, clip_norm=args.clip,
                         noise_stddev=args.noise, eval_every=args.eval_every,
                         patience=args.patience, max_updates=args.max_updates,
                         seed=args.seed)
    optimizer = OptimizerState(args.optimizer, args.lr)
    best, history = train(corpus, dev, engine.params, optimizer, config)
    engine.params = best
    engine.save(args.out)
    history_path = args.history or args.out + ".history.tsv"
    with open(history_path, "w", encoding="utf-8") as fh:
        fh.write("updates\tdev_bleu\ttrain_loss\n")
        for updates, dev_bleu, loss in history:
            fh.write(f"{updates}\t{dev_bleu!r}\t{loss!r}\n")
    best_bleu = max((row[1] for row in history), default=0.0)
    print(f"checkpoint -> {args.out} (best dev BLEU {best_bleu:.4f}, "
          f"{len(history)} evaluations)")
    return 0


def cmd_translate(parser, args) -> int:
    _require_files(parser, args.ckpt)
    engine = Engine.load(args.ckpt)
    stream = sys.stdin if args.input == "-" else open(args.input,
                                                      encoding="utf-8")
    sink = sys.stdout if args.output == "-" else open(args.output, "w",
                                                      encoding="utf-8")
    try:
        for line in stream:
            words = line.split()
            sink.write((engine.translate(words, args.beam).text if words
                        else "") + "\n")
    finally:
        if stream is not sys.stdin:
            stream.close()
        if sink is not sys.stdout:
            sink.flush()
            sink.close()
    return 0


def _interactive_help() -> str:
    return "commands: c POS CHAR | w POS WORD | a [CHARS] | q"


def cmd_interactive(parser, args) -> int:
    _require_files(parser, args.ckpt)
    engine = Engine.load(args.ckpt)
    optimizer = OptimizerState(args.optimizer, args.lr) if args.adapt else None
    lines = iter(sys.stdin)

    def prompt(text):
        print(text, end="", flush=True)
        return next(lines, None)

    while True:
        line = prompt("source> ")
        if line is None:
            return 0
        words = line.split()
        if not words:
            continue
        try:
            record = start_session(engine, words, args.beam)
        except (SessionError, EngineError) as exc:
            print(f"error: {exc}")
            continue
        print(f"[{record.iterations}] {record.hypothesis_text}")
        while record.status == "active":
            command = prompt("edit> ")
            if command is None:
                return 0
            parts = command.split()
            try:
                if not parts:
                    print(_interactive_help())
                elif parts[0] == "q":
                    return 0
                elif parts[0] == "a":
                    at_char = int(parts[1]) if len(parts) > 1 else None
                    record, pair = accept_hypothesis(engine, record,
                                                     at_char=at_char)
                    print(f"accepted ks={record.keystrokes} "
                          f"ma={record.mouse_actions}: "
                          f"{record.hypothesis_text}")
                    if optimizer is not None:
                        online_update(engine.params, optimizer,
                                      list(pair[0]), list(pair[1]))
                        print("adapted")
                elif parts[0] == "c" and len(parts) == 3:
                    apply_char_feedback(engine, record, int(parts[1]),
                                        parts[2])
                    print(f"[{record.iterations}] {record.hypothesis_text}")
                elif parts[0] == "w" and len(parts) == 3:
                    apply_word_feedback(engine, record, int(parts[1]),
                                        parts[2])
                    print(f"[{record.iterations}] {record.hypothesis_text}")
                else:
                    print(_interactive_help())
            except (SessionError, ConstraintError, ValueError) as exc:
                print(f"error: {exc}")


def _strip_timing(report) -> None:
    for row in report.rows:
        row.rt_ms = 0.0
        row.lt_ms = 0.0
        row.rt_samples_ms = ()


def _aggregate_lines(tag, report, resamples, seed):
    """KSMR/TER/BLEU with bootstrap CIs over sentence resampling."""
    rows = report.rows
    effort = [(r.keystrokes + r.mouse_actions, r.ref_chars) for r in rows]
    pairs = [(list(r.first_hypothesis), list(r.reference_words))
             for r in rows]
    specs = [
        ("ksmr", effort,
         lambda xs: sum(e for e, _ in xs) / sum(c for _, c in xs)),
        ("ter", [r.ter_first for r in rows], None),
        ("bleu", pairs,
         lambda xs: bleu([h for h, _ in xs], [r for _, r in xs])),
    ]
    out = []
    for name, values, stat in specs:
        if len(rows) >= 2:
            ci = bootstrap_ci(values, resamples=resamples, seed=seed,
                              statistic=stat)
            out.append((f"{tag}_{name}", ci.point, ci.lower, ci.upper))
        else:
            point = stat(values) if stat else values[0]
            out.append((f"{tag}_{name}", point, point, point))
    return out


def _compare_path(path: str, tag: str) -> str:
    p = Path(path)
    return str(p.with_name(f"{p.stem}.{tag}{p.suffix or '.csv'}"))


def cmd_simulate(parser, args) -> int:
    _require_files(parser, args.ckpt, args.test_src, args.test_trg)
    engine = Engine.load(args.ckpt)
    test = _parallel(parser, args.test_src, args.test_trg)
    base = SimulationConfig(level=args.level, adaptive=args.adaptive,
                            optimizer=args.optimizer,
                            learning_rate=args.lr, beam_size=args.beam,
                            max_sentences=args.max_sentences,
                            seed=args.seed).validate()

    runs = []
    if args.compare:
        for tag, adaptive in (("static", False), ("adaptive", True)):
            eng = Engine(engine.params.copy(), engine.merges,
                         engine.src_vocab, engine.tgt_vocab)
            config = SimulationConfig(level=base.level, adaptive=adaptive,
                                      optimizer=base.optimizer,
                                      learning_rate=base.learning_rate,
                                      beam_size=base.beam_size,
                                      max_sentences=base.max_sentences,
                                      seed=base.seed)
            runs.append((tag, run_simulation(eng, test, config)))
    else:
        tag = "adaptive" if args.adaptive else "static"
        runs.append((tag, run_simulation(engine, test, base)))

    metric_rows = []
    for tag, report in runs:
        if not args.timing:
            _strip_timing(report)
        if args.report:
            path = _compare_path(args.report, tag) if args.compare \
                else args.report
            write_report_csv(report, path)
        for name, point, lo, hi in _aggregate_lines(tag, report,
                                                    args.resamples,
                                                    args.seed):
            metric_rows.append((name, point, lo, hi))
            print(f"{name} {point:.4f} [{lo:.4f}, {hi:.4f}]")
    if args.metrics:
        write_metric_report(args.metrics, metric_rows)
    return 0


def cmd_evaluate(parser, args) -> int:
    _require_files(parser, args.hyp, args.ref)
    pairs = _parallel(parser, args.hyp, args.ref)
    if not pairs:
        parser.error("no sentences to score")
    ters = [ter(h, r) for h, r in pairs]
    rows = []
    if len(pairs) >= 2:
        ter_ci = bootstrap_ci(ters, resamples=args.resamples, seed=args.seed)
        bleu_ci = bootstrap_ci(
            pairs, resamples=args.resamples, seed=args.seed,
            statistic=lambda xs: bleu([h for h, _ in xs],
                                      [r for _, r in xs]))
        rows = [("ter", ter_ci.point, ter_ci.lower, ter_ci.upper),
                ("bleu", bleu_ci.point, bleu_ci.lower, bleu_ci.upper)]
    else:
        t = ters[0]
        b = bleu([pairs[0][0]], [pairs[0][1]])
        rows = [("ter", t, t, t), ("bleu", b, b, b)]
    for name, point, lo, hi in rows:
        print(f"{name} {point:.4f} [{lo:.4f}, {hi:.4f}]")
    if args.metrics:
        write_metric_report(args.metrics, rows)
    return 0


def cmd_serve(parser, args) -> int:
    from .service import ServiceConfig, ServiceError, serve
    _require_files(parser, args.ckpt)
    host, _, port = args.addr.rpartition(":")
    if not host or not port.isdigit():
        parser.error(f"--addr must be HOST:PORT, got {args.addr!r}")
    engine = Engine.load(args.ckpt)
    try:
        config = ServiceConfig(host=host, port=int(port), adapt=args.adapt,
                               optimizer=args.optimizer,
                               learning_rate=args.lr, beam_size=args.beam,
                               max_sessions=args.max_sessions,
                               session_ttl_s=args.ttl, ui_dir=args.ui_dir)
        server = serve(engine, config)
    except (ServiceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"serving on {server.address}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_fixture(parser, args) -> int:
    # developer plumbing: emit the bundled corpora, or a small untrained
    # checkpoint that still produces multi-word hypotheses
    from . import fixtures as fx
    from .bpe import EOS_ID
    if args.what == "checkpoint":
        if not args.out:
            parser.error("fixture checkpoint needs --out")
        src, tgt = fx.out_domain_training(40, seed=args.seed)
        engine = build_engine(src, tgt, num_merges=20, embed_dim=12,
                              hidden_dim=12, attention_dim=12,
                              readout_dim=12, seed=args.seed)
        engine.params.arrays["proj_bias"][EOS_ID] = -3.0
        engine.save(args.out)
        print(f"checkpoint -> {args.out}")
        return 0
    if not (args.out_src and args.out_trg):
        parser.error("corpus fixtures need --out-src and --out-trg")
    if args.what == "copy":
        src, tgt = fx.copy_task(args.n or 100, seed=args.seed)
        pairs = list(zip(src, tgt))
    elif args.what == "out-domain":
        src, tgt = fx.out_domain_training(args.n or 80, seed=args.seed)
        pairs = list(zip(src, tgt))
    elif args.what == "template":
        pairs = fx.template_test_corpus(args.n or 60)
    else:
        pairs = fx.control_test_corpus(args.n or 60, seed=args.seed)
    with open(args.out_src, "w", encoding="utf-8") as fs, \
            open(args.out_trg, "w", encoding="utf-8") as ft:
        for s, t in pairs:
            fs.write(" ".join(s) + "\n")
            ft.write(" ".join(t) + "\n")
    print(f"{len(pairs)} sentences -> {args.out_src}, {args.out_trg}")
    return 0


# -- parser assembly -----------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="imtforge",
        description="Interactive adaptive translation toolkit")
    parser.add_argument("--config", default=None,
                        help="INI file with per-subcommand default sections")
    subs = parser.add_subparsers(dest="command", required=True,
                                 metavar="{" + ",".join(PUBLIC_COMMANDS) + "}")
    table = {}

    def sub(name, func, **kwargs):
        p = subs.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        table[name] = p
        return p

    p = sub("learn-bpe", cmd_learn_bpe, help="learn a subword merge table")
    p.add_argument("--src", required=True)
    p.add_argument("--trg", default=None,
                   help="optional second corpus (joint table)")
    p.add_argument("--merges", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub("train", cmd_train, help="train a model from parallel text")
    p.add_argument("--src", required=True)
    p.add_argument("--trg", required=True)
    p.add_argument("--dev-src", required=True)
    p.add_argument("--dev-trg", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None)
    p.add_argument("--merges", type=int, default=40)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--hidden-dim", type=int, default=32)
    p.add_argument("--attention-dim", type=int, default=32)
    p.add_argument("--readout-dim", type=int, default=32)
    p.add_argument("--optimizer", choices=OPTIMIZERS, default="adam")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--max-updates", type=int, default=3000)
    p.add_argument("--eval-every", type=int, default=200)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub("translate", cmd_translate, help="decode text with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--beam", type=int, default=6)
    p.add_argument("--input", default="-")
    p.add_argument("--output", default="-")

    p = sub("interactive", cmd_interactive,
            help="terminal prefix-feedback session")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--beam", type=int, default=6)
    p.add_argument("--adapt", action="store_true")
    p.add_argument("--optimizer", choices=OPTIMIZERS, default="adadelta")
    p.add_argument("--lr", type=float, default=None)

    p = sub("simulate", cmd_simulate,
            help="simulated-user effort measurement")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--test-src", required=True)
    p.add_argument("--test-trg", required=True)
    p.add_argument("--level", choices=("char", "word"), default="char")
    p.add_argument("--adaptive", action="store_true")
    p.add_argument("--optimizer", choices=OPTIMIZERS, default="adadelta")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--compare", action="store_true",
                   help="paired static and adaptive runs")
    p.add_argument("--beam", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-sentences", type=int, default=None)
    p.add_argument("--report", default=None, help="per-sentence CSV path")
    p.add_argument("--metrics", default=None, help="metric report path")
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--timing", action="store_true",
                   help="record wall-clock columns (breaks reproducibility)")

    p = sub("evaluate", cmd_evaluate, help="score hypotheses against refs")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--metrics", default=None)
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)

    p = sub("serve", cmd_serve, help="run the HTTP session service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--addr", default="127.0.0.1:8077")
    p.add_argument("--adapt", action="store_true")
    p.add_argument("--optimizer", choices=OPTIMIZERS, default="adadelta")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--beam", type=int, default=6)
    p.add_argument("--max-sessions", type=int, default=8)
    p.add_argument("--ttl", type=float, default=3600.0)
    p.add_argument("--ui-dir", default=None)

    # hidden from the subcommand listing via the metavar above
    p = sub("fixture", cmd_fixture)
    p.add_argument("--what", required=True,
                   choices=("copy", "out-domain", "template", "control",
                            "checkpoint"))
    p.add_argument("--out", default=None)
    p.add_argument("--out-src", default=None)
    p.add_argument("--out-trg", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)

    return parser, table


def _overlay_config(parser, sub, path: str) -> None:
    """Config-file values become the subcommand's defaults; flags still win."""
    if not Path(path).is_file():
        parser.error(f"no such file: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        parser.error(f"bad config file {path}: {exc}")
    name = sub.prog.split()[-1]
    if name not in cp:
        return
    actions = {a.dest: a for a in sub._actions}
    overrides = {}
    for key, raw in cp[name].items():
        dest = key.replace("-", "_")
        action = actions.get(dest)
        if action is None:
            parser.error(f"config key [{name}] {key} matches no flag")
        if action.nargs == 0:
            overrides[dest] = raw.strip().lower() in ("1", "true", "yes",
                                                      "on")
        elif action.type is not None:
            try:
                overrides[dest] = action.type(raw)
            except ValueError:
                parser.error(f"config key [{name}] {key}: bad value {raw!r}")
        else:
            overrides[dest] = raw
        if action.choices and overrides[dest] not in action.choices:
            parser.error(f"config key [{name}] {key}: {raw!r} not in "
                         f"{sorted(action.choices)}")
    sub.set_defaults(**overrides)


def main(argv=None) -> int:
    parser, table = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        _overlay_config(parser, table[args.command], args.config)
        args = parser.parse_args(argv)
    try:
        return args.func(parser, args)
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 1


if __name__ == "__main__":
    sys.exit(main())
