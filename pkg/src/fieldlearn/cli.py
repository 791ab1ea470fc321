"""Command-line entry point: ``fieldlearn study|ansatz|train|synth-curlfree``.

Exit codes: 0 success, 1 configuration or input error, 2 training abort.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import diffops
from .ansatz import search_transformation
from .errors import FieldLearnError, TrainingAborted
from .fields import (DIVFREE_DOMAIN, Dataset, StrainParams, affine_field, divfree_field,
                     load_field_csv, prediction_grid, rmse, sample_dataset, strain_field)
from .model import ConstrainedModel, StandardModel, constraint_residual, default_tail_basis, save_model
from .network import MlpSpec
from .studies import (MICRO, STRAIN_LENGTH, STRAIN_UNIT, STUDIES, StudyConfig, default_config,
                      run_study, strain_operators, write_outputs, write_synthetic_curlfree)
from .training import TrainConfig, train

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2


def _load_study_config(study: str, path: str | None, trials: int | None) -> StudyConfig:
    over = {}
    if path:
        try:
            over = json.loads(Path(path).read_text())
        except OSError as exc:
            raise FieldLearnError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise FieldLearnError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(over, dict):
            raise FieldLearnError(f"{path}: config must be a JSON object")
        if over.pop("study", study) != study:
            raise FieldLearnError(f"{path}: config is for another study")
    if trials is not None:
        over["trials"] = trials
    cfg = default_config(study, **over)
    cfg.validate()
    return cfg


def cmd_study(args) -> int:
    cfg = _load_study_config(args.id, args.config, args.trials)
    start = time.perf_counter()
    result = run_study(cfg)
    paths = write_outputs(result, args.out, time.perf_counter() - start)
    for fam in cfg.family_list():
        for s in result.settings():
            med = result.median(fam, s)
            if not np.isnan(med):
                print(f"{s:>28s}  {fam:<11s}  median rmse {med:.4g}")
    print(f"wrote {paths['results']}")
    if args.figures:
        from .plotting import render_figures
        for p in render_figures(paths["results"], args.out):
            print(f"wrote {p}")
    return EXIT_OK


def cmd_ansatz(args) -> int:
    C = diffops.parse_operator(args.constraint, args.input_dim)
    found = search_transformation(C, args.max_degree, args.potential_dim, args.grow_dim)
    if found is None:
        print("NOT FOUND")
        return EXIT_OK
    G, _, _ = found
    print(diffops.format_operator(G))
    return EXIT_OK


def _field_setup(name: str, args):
    """Return ``(dataset, eval_inputs, eval_truth, transform, constraint, tail, scale)``."""
    n, sigma, seed = args.n, args.sigma, args.seed
    if name == "divfree":
        data = sample_dataset(divfree_field, n, DIVFREE_DOMAIN, 0.1 if sigma is None else sigma, seed)
        grid = prediction_grid(DIVFREE_DOMAIN, 20)
        return data, grid, divfree_field(grid), diffops.rot_grad2d(), diffops.div(2), False, 1.0
    if name == "affine":
        data = sample_dataset(affine_field, n, DIVFREE_DOMAIN, 0.1 if sigma is None else sigma, seed)
        grid = prediction_grid(DIVFREE_DOMAIN, 20)
        return data, grid, affine_field(grid), diffops.rot_grad2d(), diffops.div(2), True, 1.0
    if name == "strain":
        p = StrainParams()
        G, C = strain_operators(p.nu)
        raw = sample_dataset(strain_field(p), n, p.domain, 2.5e-4 if sigma is None else sigma, seed)
        data = Dataset(raw.inputs / STRAIN_LENGTH, raw.targets / STRAIN_UNIT, raw.noise_sigma, seed)
        grid = prediction_grid(p.domain, 50)
        truth = strain_field(p)(grid) / STRAIN_UNIT
        return data, grid / STRAIN_LENGTH, truth, G, C, False, STRAIN_UNIT * MICRO
    if name.startswith("csv:"):
        full = load_field_csv(name[4:])
        d = full.input_dim
        if full.output_dim != d:
            raise FieldLearnError(f"csv field maps {d} inputs to {full.output_dim} outputs; "
                                  "the default curl-free transform needs a square field")
        C = diffops.curl_constraint3d() if d == 3 else None
        if d == 2:
            C = diffops.parse_operator("[dx2, -dx1]")
        tr, va = full.take(min(n, len(full) - 1), seed)
        return tr, va.inputs, va.targets, diffops.grad(d), C, False, 1.0
    raise FieldLearnError(f"unknown field {name!r}; use divfree, strain, affine or csv:<path>")


def cmd_train(args) -> int:
    data, X_eval, truth, G, C, tail, scale = _field_setup(args.field, args)
    if args.transform:
        G = diffops.parse_operator(args.transform, data.input_dim)
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed, weight_decay=args.weight_decay)
    if args.model == "constrained":
        spec = MlpSpec((data.input_dim, *args.hidden, G.cols), args.activation)
        model = ConstrainedModel.create(spec, G, args.seed,
                                        default_tail_basis(data.input_dim) if tail else None)
        if model.output_dim != data.output_dim:
            raise FieldLearnError(f"transform produces {model.output_dim} outputs, "
                                  f"data has {data.output_dim}")
    else:
        spec = MlpSpec((data.input_dim, *args.hidden, data.output_dim), args.activation)
        model = StandardModel.create(spec, args.seed)
    tr, va = data.split(0.2, args.seed)
    fitted, report = train(model, tr, va, cfg)
    err = rmse(fitted.predict(X_eval), truth) * scale
    unit = " (microstrain)" if args.field == "strain" else ""
    print(f"rmse{unit}: {err:.6g}")
    if C is not None and C.max_derivative_order() + (G.max_derivative_order()
                                                     if args.model == "constrained" else 0) <= 2:
        viol = float(np.mean(np.abs(constraint_residual(fitted, C, X_eval[:2000]))))
        print(f"mean |constraint violation|: {viol:.3g}")
    elif C is not None:
        print(f"symbolic constraint check: {'PASS' if diffops.compose(C, G).is_zero() else 'FAIL'}")
    if args.model == "constrained" and tail:
        print(f"learned divergence: {float(np.sum(fitted.tail_coeffs)):.6g}")
    print(f"final lr {report.lr[-1]:.3g} after {report.epochs_run} epochs, {report.seconds:.1f} s")
    if args.out:
        save_model(args.out, fitted)
        report.write_csv(Path(args.out) / "history.csv")
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    data = write_synthetic_curlfree(args.out, args.n, args.seed, args.sigma)
    print(f"wrote {len(data)} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fieldlearn", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    st = sub.add_parser("study", help="run a comparison study and write CSV results")
    st.add_argument("id", choices=STUDIES)
    st.add_argument("--config", help="JSON file overriding the study defaults")
    st.add_argument("--out", required=True, help="output directory")
    st.add_argument("--trials", type=int, help="override the number of trials")
    st.add_argument("--figures", action="store_true", help="also render PNG summaries")
    st.set_defaults(func=cmd_study)

    an = sub.add_parser("ansatz", help="find G with C @ G == 0 for a constraint C")
    an.add_argument("--constraint", required=True, help='operator, e.g. "[dx1, dx2]"')
    an.add_argument("--max-degree", type=int, required=True)
    an.add_argument("--potential-dim", type=int, default=1)
    an.add_argument("--grow-dim", action="store_true",
                    help="also try smaller potential sizes first")
    an.add_argument("--input-dim", type=int, help="number of inputs (default: inferred)")
    an.set_defaults(func=cmd_ansatz)

    tr = sub.add_parser("train", help="train one model on a built-in or CSV field")
    tr.add_argument("--model", choices=("constrained", "standard"), required=True)
    tr.add_argument("--field", required=True, help="divfree | strain | affine | csv:<path>")
    tr.add_argument("--n", type=int, default=500, help="number of training measurements")
    tr.add_argument("--sigma", type=float, help="noise level (field default if omitted)")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--epochs", type=int, default=2000)
    tr.add_argument("--lr", type=float, default=1e-2)
    tr.add_argument("--weight-decay", type=float, default=0.0)
    tr.add_argument("--hidden", type=int, nargs="+", default=[100, 50])
    tr.add_argument("--activation", default="tanh")
    tr.add_argument("--transform", help="override the transform operator (DSL)")
    tr.add_argument("--out", help="directory for the model bundle and loss history")
    tr.set_defaults(func=cmd_train)

    sy = sub.add_parser("synth-curlfree", help="write a synthetic 3D curl-free field CSV")
    sy.add_argument("--out", required=True)
    sy.add_argument("--n", type=int, default=16000)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--sigma", type=float, default=0.05)
    sy.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (FieldLearnError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
