"""Command-line entry point: ``promptdp <subcommand> ...``.

Every subcommand that writes a file also writes ``<file>.manifest.json`` with
the parameters, seed, library versions and SHA-256 digests of inputs and
outputs. Exit codes: 0 ok, 1 data or configuration error, 2 usage error,
3 I/O error, 4 restorer transport or protocol error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import secrets
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (CorpusError, ParameterError, PromptDPError, ProtocolError, RestorerConfigurationError,
                     TransportError)
from .evaluation import RemoteEmbedder, UnigramEmbedder, evaluate, reports_to_csv, sweep
from .mechanism import PerturbationParams, PerturbedDocument, perturb_document, verify_dp_ratio
from .restoration import RestorationResult, RestorerConfig, read_toml, restore_corpus
from .text import DEFAULT_ALPHABET, CharAlphabet, iter_jsonl, load_corpus, word_length_histogram
from .theory import baseline_curve, epsilon_grid

logger = logging.getLogger("promptdp")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_IO, EXIT_TRANSPORT = 0, 1, 2, 3, 4

ENV_PREFIX = "PROMPTDP_"


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _epsilon_range(text: str) -> list[float]:
    try:
        a, b, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from None
    try:
        return epsilon_grid(a, b, step)
    except ParameterError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _check_inputs(*paths):
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise FileNotFoundError(f"input file not found: {p}")


def _check_outputs(outputs, inputs):
    """Outputs need an existing directory and must never overwrite an input."""
    resolved_inputs = {Path(p).resolve() for p in inputs if p is not None}
    for out in outputs:
        if out is None:
            continue
        parent = Path(out).resolve().parent
        if not parent.is_dir():
            raise FileNotFoundError(f"output directory does not exist: {parent}")
        if Path(out).resolve() in resolved_inputs:
            raise UsageError(f"refusing to overwrite input file {out}")


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_jsonl(path, records):
    _write_text(path, "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in records))


def _write_manifest(output, command, settings, inputs):
    manifest = {
        "command": command,
        "settings": settings,
        "versions": {"promptdp": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None},
        "outputs": {str(output): _sha256(output)},
    }
    _write_text(str(output) + ".manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _alphabet(args):
    return CharAlphabet.from_file(args.alphabet) if getattr(args, "alphabet", None) else DEFAULT_ALPHABET


def _restorer_config(args) -> RestorerConfig:
    """Defaults < environment < config file < flags."""
    settings: dict = {}
    env_keys = {"kind": "RESTORER_KIND", "endpoint_url": "ENDPOINT_URL", "model_name": "MODEL",
                "dictionary_path": "DICTIONARY"}
    for key, env in env_keys.items():
        if os.environ.get(ENV_PREFIX + env):
            settings[key] = os.environ[ENV_PREFIX + env]
    if getattr(args, "config", None):
        data = read_toml(args.config)
        settings.update(data.get("restorer", data))
    flags = {"kind": getattr(args, "restorer", None), "endpoint_url": getattr(args, "endpoint", None),
             "model_name": getattr(args, "model", None), "dictionary_path": getattr(args, "dictionary", None)}
    settings.update({k: v for k, v in flags.items() if v is not None})
    return RestorerConfig.from_mapping(settings)


def _read_perturbed(path):
    params = None
    docs = []
    for lineno, obj in iter_jsonl(path):
        if "params" in obj and "perturbed_text" not in obj:
            p = obj["params"]
            params = PerturbationParams(p["epsilon"], p["k"], p["seed"])
            continue
        if params is None:
            raise CorpusError(f"{path}: line {lineno} precedes the params header")
        if "text" in obj:
            raise CorpusError(f"{path}: line {lineno} carries original text; refusing to restore it")
        try:
            docs.append(PerturbedDocument.from_text(str(obj["id"]), obj["perturbed_text"], params))
        except KeyError as exc:
            raise CorpusError(f"{path}: line {lineno} lacks field {exc}") from None
    return params, docs


def _read_restored(path):
    header = {}
    results = {}
    for lineno, obj in iter_jsonl(path):
        if "params" in obj and "restored_text" not in obj:
            header = obj
            continue
        try:
            results[str(obj["id"])] = RestorationResult(str(obj["id"]), obj["restored_text"],
                                                        obj.get("summary", ""), int(obj.get("pass_index", 1)))
        except KeyError as exc:
            raise CorpusError(f"{path}: line {lineno} lacks field {exc}") from None
    return header, results


# -- subcommands -------------------------------------------------------------

def cmd_perturb(args):
    _check_inputs(args.input, args.alphabet)
    _check_outputs([args.out], [args.input])
    alphabet = _alphabet(args)
    seed = args.seed if args.seed is not None else secrets.randbits(64)
    params = PerturbationParams(args.epsilon, alphabet.k, seed)
    docs = load_corpus(args.input, strict=args.strict_annotations)
    records = [{"params": params.to_json()}]
    for doc in docs:
        pd = perturb_document(doc, params, alphabet, strict=args.strict_alphabet)
        entities = [{"start": doc.tokens[e.token_indices[0]].start_offset,
                     "end": doc.tokens[e.token_indices[-1]].end_offset,
                     "category": e.category, "entity_id": e.entity_id} for e in doc.entities]
        records.append(pd.to_json(entities))
    _write_jsonl(args.out, records)
    _write_manifest(args.out, "perturb", {**params.to_json(), "strict_annotations": args.strict_annotations,
                                          "strict_alphabet": args.strict_alphabet,
                                          "alphabet": alphabet.characters}, [args.input, args.alphabet])
    logger.info("perturbed %d documents at epsilon=%s (seed %d)", len(docs), args.epsilon, seed)


def cmd_baseline(args):
    _check_inputs(args.histogram_from)
    _check_outputs([args.out], [args.histogram_from])
    docs = load_corpus(args.histogram_from, strict=False)
    hist = word_length_histogram(docs)
    if not hist:
        raise CorpusError("corpus has no tokens")
    grid = args.epsilon_range if args.epsilon_range is not None else [args.epsilon]
    csv_text = baseline_curve(hist, args.alpha, grid, args.k).to_csv()
    if args.out:
        _write_text(args.out, csv_text)
        _write_manifest(args.out, "baseline", {"alpha": args.alpha, "k": args.k, "epsilons": grid},
                        [args.histogram_from])
    else:
        sys.stdout.write(csv_text)


def cmd_restore(args):
    _check_inputs(args.input, args.config)
    _check_outputs([args.out], [args.input, args.config])
    config = _restorer_config(args)
    params, docs = _read_perturbed(args.input)
    results = restore_corpus(docs, config, args.passes)
    records = [{"params": params.to_json() if params else None, "passes": args.passes}]
    for doc in docs:
        passes = results[doc.source_id]
        rec = passes[-1].to_json()
        if len(passes) == 2:
            rec["first_pass"] = passes[0].to_json()
        records.append(rec)
    _write_jsonl(args.out, records)
    _write_manifest(args.out, "restore", {"restorer": config.to_json(), "passes": args.passes},
                    [args.input, args.config])


def _embedder(args):
    if args.embedder == "remote":
        if not (args.embedding_endpoint and args.embedding_model):
            raise UsageError("--embedder remote needs --embedding-endpoint and --embedding-model")
        return RemoteEmbedder(args.embedding_endpoint, args.embedding_model)
    return UnigramEmbedder()


def cmd_evaluate(args):
    _check_inputs(args.in_original, args.in_restored)
    _check_outputs([args.report], [args.in_original, args.in_restored])
    docs = load_corpus(args.in_original, strict=args.strict_annotations)
    header, results = _read_restored(args.in_restored)
    epsilon = args.epsilon
    if epsilon is None and header.get("params"):
        epsilon = header["params"]["epsilon"]
    k = (header.get("params") or {}).get("k", DEFAULT_ALPHABET.k)
    report = evaluate(docs, results, epsilon, args.alpha, k, _embedder(args),
                      case_fold=args.case_fold, strip_punctuation=args.strip_punctuation)
    if args.report.endswith(".json"):
        _write_text(args.report, json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    else:
        _write_text(args.report, reports_to_csv([report]))
    _write_manifest(args.report, "evaluate", {"alpha": args.alpha, "epsilon": epsilon, "embedder": args.embedder,
                                              "case_fold": args.case_fold,
                                              "strip_punctuation": args.strip_punctuation},
                    [args.in_original, args.in_restored])


def cmd_sweep(args):
    _check_inputs(args.input, args.config, args.alphabet)
    _check_outputs([args.out], [args.input, args.config])
    config = _restorer_config(args)
    alphabet = _alphabet(args)
    seed = args.seed if args.seed is not None else secrets.randbits(64)
    docs = load_corpus(args.input, strict=args.strict_annotations)
    reports = sweep(docs, args.epsilon_range, config, args.alpha, seed, _embedder(args), alphabet,
                    strict=args.strict_alphabet, passes=args.passes,
                    progress=lambda e: logger.info("epsilon=%s", e))
    _write_text(args.out, reports_to_csv(reports))
    _write_manifest(args.out, "sweep", {"alpha": args.alpha, "seed": seed, "epsilons": args.epsilon_range,
                                        "restorer": config.to_json(), "passes": args.passes,
                                        "alphabet": alphabet.characters},
                    [args.input, args.config, args.alphabet])
    if any(r.error for r in reports):
        logger.warning("%d of %d epsilon values failed", sum(bool(r.error) for r in reports), len(reports))


def cmd_verify_dp(args):
    grid = args.epsilon_range if args.epsilon_range is not None else [args.epsilon]
    ok = True
    for eps in grid:
        rep = verify_dp_ratio(PerturbationParams(eps, args.k, 0))
        ok &= rep.ok
        print(f"epsilon={eps} k={args.k} max_ratio={rep.max_ratio!r} e^epsilon={rep.target!r} "
              f"relative_error={rep.relative_error:.3e} {'OK' if rep.ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_ERROR


# -- parser ------------------------------------------------------------------

def _epsilon_options(p, range_required=False):
    g = p.add_mutually_exclusive_group(required=True)
    if not range_required:
        g.add_argument("--epsilon", type=float, help="single privacy budget per character")
    g.add_argument("--epsilon-range", type=_epsilon_range, metavar="A:B:STEP", help="inclusive epsilon grid")


def _restorer_options(p):
    p.add_argument("--config", help="TOML file with a [restorer] table")
    p.add_argument("--restorer", choices=("mock", "remote"), help="restorer kind (overrides the config file)")
    p.add_argument("--endpoint", help="chat-completions base URL")
    p.add_argument("--model", help="model name sent to the endpoint")
    p.add_argument("--dictionary", help="word list for the mock restorer, one word per line")


def _embedder_options(p):
    p.add_argument("--embedder", choices=("unigram", "remote"), default="unigram")
    p.add_argument("--embedding-endpoint")
    p.add_argument("--embedding-model")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="promptdp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("perturb", help="apply character-level k-RR to a corpus")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--seed", type=_seed, help="64-bit seed; generated and recorded when omitted")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alphabet", help="file whose characters replace the printable-ASCII alphabet")
    p.add_argument("--strict-annotations", action="store_true")
    p.add_argument("--strict-alphabet", action="store_true")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("baseline", help="chance-level reconstruction curve for a corpus")
    p.add_argument("--alpha", type=float, default=0.0)
    _epsilon_options(p)
    p.add_argument("--histogram-from", required=True)
    p.add_argument("--k", type=int, default=DEFAULT_ALPHABET.k)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("restore", help="restore perturbed documents")
    _restorer_options(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--passes", type=int, choices=(1, 2), default=1)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("evaluate", help="reconstruction and similarity metrics")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--epsilon", type=float, help="defaults to the epsilon recorded in the restored file")
    p.add_argument("--in-original", required=True)
    p.add_argument("--in-restored", required=True)
    p.add_argument("--report", required=True, help="output path; .json for JSON, anything else for CSV")
    p.add_argument("--strict-annotations", action="store_true")
    p.add_argument("--case-fold", action="store_true")
    p.add_argument("--strip-punctuation", action="store_true")
    _embedder_options(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="perturb, restore and evaluate over an epsilon grid")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--epsilon-range", type=_epsilon_range, default=epsilon_grid(1.0, 10.0, 0.5))
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--seed", type=_seed)
    p.add_argument("--passes", type=int, choices=(1, 2), default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--alphabet")
    p.add_argument("--strict-annotations", action="store_true")
    p.add_argument("--strict-alphabet", action="store_true")
    _restorer_options(p)
    _embedder_options(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-dp", help="check the worst-case probability ratio equals e^epsilon")
    _epsilon_options(p)
    p.add_argument("--k", type=int, default=DEFAULT_ALPHABET.k)
    p.set_defaults(func=cmd_verify_dp)
    return parser


def _fail(category, code, exc):
    print(f"error[{category}]: {exc}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, exc)
    except (TransportError, ProtocolError) as exc:
        return _fail("transport", EXIT_TRANSPORT, exc)
    except OSError as exc:
        return _fail("io", EXIT_IO, exc)
    except RestorerConfigurationError as exc:
        return _fail("config", EXIT_ERROR, exc)
    except CorpusError as exc:
        return _fail("data", EXIT_ERROR, exc)
    except PromptDPError as exc:
        return _fail("error", EXIT_ERROR, exc)
    return EXIT_OK if code is None else code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
