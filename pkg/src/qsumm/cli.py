"""``qsumm`` command line.

Exit codes: 0 ok, 1 validation error, 2 IO or network failure, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness, nnr
from .corpus import AbstractStore, load_dataset
from .exceptions import QsummError, SourceError
from .rouge import su4_score
from .svr import GAMMA_GRID
from .systems import SYSTEMS, load_svr, make_system, save_svr
from .textproc import preprocess
from .vecspace import load_embeddings

log = logging.getLogger("qsumm")

NNR_GRID = [(d, e) for d in (0.0, 0.2, 0.5) for e in (5, 10, 20)]


def _parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--data", type=Path, help="BioASQ-style JSON input")
    shared.add_argument("--cache", type=Path, help="abstract cache directory (or $QSUMM_CACHE)")
    shared.add_argument("--offline", action="store_true", help="never access the network")
    shared.add_argument("--no-title", action="store_true", help="leave abstract titles out of candidates")
    shared.add_argument("--embeddings", type=Path, help="word2vec text-format vectors")
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--folds", type=int, default=10)
    shared.add_argument("--system", choices=sorted(SYSTEMS), default="trivial")
    shared.add_argument("--gamma", type=float, default=0.1)
    shared.add_argument("--c", type=float, default=1.0, dest="C")
    shared.add_argument("--epsilon", type=float, default=0.1)
    shared.add_argument("--dropout", type=float, default=0.0)
    shared.add_argument("--epochs", type=int, default=10)
    shared.add_argument("--reduction", choices=("mean", "cnn"), default="mean")
    shared.add_argument("--similarity", choices=("none", "sim", "simyu"), default="sim")
    shared.add_argument("--components", type=int, help="SVD components (200 simple, 100 svd-nn)")
    shared.add_argument("--model", type=Path)
    shared.add_argument("--out", type=Path)
    shared.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="qsumm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("rouge", parents=[shared],
                   help="score {id, candidate, references} records; TSV of id, P, R, F1")
    sub.add_parser("label", parents=[shared], help="SU4 targets for every abstract sentence")
    sub.add_parser("cv", parents=[shared], help="k-fold cross-validation of one system")
    g = sub.add_parser("grid", parents=[shared], help="grid search (gamma for svr, dropout x epochs for nn)")
    g.add_argument("--grid", help="comma-separated values (gamma) or d:e pairs (dropout:epochs)")
    sub.add_parser("train", parents=[shared], help="train svr or nnr and save the model")
    r = sub.add_parser("run", parents=[shared], help="write a BioASQ submission JSON")
    r.add_argument("--train", type=Path, help="training JSON for systems without --model")
    sub.add_parser("fetch", parents=[shared], help="download the abstracts of --data into the cache")
    return p


def _store(args):
    return AbstractStore(args.cache, offline=args.offline, include_title=not args.no_title)


def _need(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise QsummError(f"--{n} is required for this command")


def _system(args, store):
    params = dict(
        store=store, gamma=args.gamma, C=args.C, epsilon=args.epsilon, dropout=args.dropout,
        epochs=args.epochs, reduction=args.reduction, similarity=args.similarity,
        seed=args.seed, random_state=args.seed,
    )
    if args.components:
        params["n_components"] = args.components
    if args.system in ("simple-word2vec", "svr", "nnr"):
        _need(args, "embeddings")
    if args.embeddings:
        params["embeddings"] = load_embeddings(args.embeddings)
    return make_system(args.system, **params)


def _write(args, text):
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_rouge(args):
    _need(args, "data")
    records = json.loads(args.data.read_text(encoding="utf-8"))
    if isinstance(records, dict):
        records = records.get("records", [])
    lines = ["id\tP\tR\tF1"]
    for i, rec in enumerate(records):
        refs = [preprocess(r) for r in rec["references"]]
        s = su4_score(preprocess(rec["candidate"]), refs)
        lines.append(f"{rec.get('id', i)}\t{s.precision:.6f}\t{s.recall:.6f}\t{s.f1:.6f}")
    _write(args, "\n".join(lines) + "\n")


def cmd_label(args):
    _need(args, "data")
    labels = harness.label_targets(load_dataset(args.data), _store(args))
    lines = ["question\tindex\tdocument\ttarget\ttext"]
    for qid, pool in labels.items():
        for c in pool:
            o = c.sentence.origin
            lines.append(f"{qid}\t{c.sentence.global_index}\t{o.document_ref}\t"
                         f"{c.target_su4:.6f}\t{c.sentence.text}")
    for qid in labels.skipped:
        log.warning("no sources for %s", qid)
    _write(args, "\n".join(lines) + "\n")


def cmd_cv(args):
    _need(args, "data")
    dataset = load_dataset(args.data)
    system = _system(args, _store(args))
    rep = harness.run_experiment(system, dataset, k=args.folds, seed=args.seed, name=args.system)
    sys.stdout.write(rep.to_table())
    if args.out:
        args.out.write_text(rep.to_json(), encoding="utf-8")
        if rep.targets:
            harness.export_scatter(rep.targets, rep.predictions,
                                   args.out.with_suffix(".scatter.tsv"),
                                   {"system": args.system, "gamma": args.gamma})


def cmd_grid(args):
    _need(args, "data")
    dataset = load_dataset(args.data)
    system = _system(args, _store(args))
    if args.system == "svr":
        axis = "gamma"
        values = [float(v) for v in args.grid.split(",")] if args.grid else list(GAMMA_GRID)
    elif args.system in ("nnr", "tfidf-nn", "svd-nn"):
        axis = "dropout,epochs"
        if args.grid:
            values = [(float(a), int(b)) for a, b in (p.split(":") for p in args.grid.split(","))]
        else:
            values = NNR_GRID
    else:
        raise QsummError(f"no grid defined for {args.system}")
    res = harness.grid_search(system, axis, values, dataset, k=args.folds, seed=args.seed)
    _write(args, res.to_tsv())


def cmd_train(args):
    _need(args, "data", "model")
    if args.system not in ("svr", "nnr"):
        raise QsummError("train supports --system svr or nnr")
    system = _system(args, _store(args)).fit(list(load_dataset(args.data)))
    if args.system == "svr":
        save_svr(system, args.model)
    else:
        nnr.save_model(system.model_.model_, args.model)


def cmd_run(args):
    _need(args, "data", "out")
    store = _store(args)
    test = load_dataset(args.data, test_mode=True)
    if args.model:
        if args.system == "svr":
            _need(args, "embeddings")
            system = load_svr(args.model, store=store, embeddings=load_embeddings(args.embeddings))
        elif args.system == "nnr":
            system = make_system("nnr", store=store)
            reg = nnr.NeuralRegressor()
            reg.model_ = nnr.load_model(args.model)
            system.model_ = reg
        else:
            raise QsummError("--model applies to svr and nnr only")
    else:
        system = _system(args, store)
        if args.system != "trivial":
            _need(args, "train")
            system.fit(list(load_dataset(args.train)))
        else:
            system.fit([])
    harness.generate_run(system, test, args.out)


def cmd_fetch(args):
    _need(args, "data")
    store = _store(args)
    failures = 0
    for q in load_dataset(args.data, test_mode=True):
        for ref in q.document_refs:
            try:
                store.get(ref)
            except SourceError as exc:
                failures += 1
                log.error("%s", exc)
    if failures:
        raise SourceError(f"{failures} abstracts could not be retrieved")


COMMANDS = {
    "rouge": cmd_rouge, "label": cmd_label, "cv": cmd_cv, "grid": cmd_grid,
    "train": cmd_train, "run": cmd_run, "fetch": cmd_fetch,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except QsummError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return 2
    except (ArithmeticError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
