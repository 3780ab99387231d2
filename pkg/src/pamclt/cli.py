"""Command-line front end.

Exit status: 0 on success, 2 for configuration or domain errors, 3 for a
numerical failure (whatever was finished is still written out).
"""

import argparse
import csv
import io
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .chaos_analytics import chaos_table, k_limit, riesz_ball_integral, riesz_k_closed
from .clt_harness import ExperimentPlan, _jsonable, build_report, run_replicates
from .config import load_config
from .covariance_model import dalang_integral
from .errors import NumericalFailure, PamError, UnsupportedRegime
from .feynman_kac import rho_estimate, rho_profile
from .field_synth import dump_field, synthesize
from .parallel import set_threads
from .rng import seed_derive

COMMANDS = ("validate", "chaos-table", "covariance", "clt", "field-dump")


class Session:
    """Output directory plus the metadata stamped on every artifact."""

    def __init__(self, cfg, out_dir, command):
        self.cfg = cfg
        self.out_dir = out_dir
        self.command = command
        self.partial = {}
        self.metadata = {"config_hash": cfg.config_hash(), "master_seed": cfg.seed,
                         "version": __version__, "command": command}

    def path(self, suffix):
        os.makedirs(self.out_dir, exist_ok=True)
        name = f"{self.command.replace('-', '_')}_{self.cfg.model.regime}{suffix}"
        return os.path.join(self.out_dir, name)

    def write_json(self, payload, suffix=".json"):
        body = dict(payload)
        body["metadata"] = {**self.metadata, **body.get("metadata", {})}
        p = self.path(suffix)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(_jsonable(body), sort_keys=True, indent=2, ensure_ascii=False) + "\n")
        return p

    def write_text(self, text, suffix):
        p = self.path(suffix)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return p

    def csv_text(self, header, rows):
        buf = io.StringIO()
        for key in sorted(self.metadata):
            buf.write(f"# {key}={self.metadata[key]}\r\n")
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        return buf.getvalue()

    def flush_partial(self):
        if self.partial:
            return self.write_json({"partial": True, **self.partial}, ".partial.json")
        return None


def _resolve_out(args, cfg):
    return args.out or cfg.out or os.environ.get("PAMCLT_OUT") or "."


def _plan(cfg, allow_aliasing):
    return ExperimentPlan(
        model=cfg.model, t_list=cfg.t_list, R_list=cfg.R_list, grid=cfg.grid, eps=cfg.eps,
        n_replicates=cfg.replicates, n_paths=cfg.paths, master_seed=cfg.seed,
        s_list=cfg.s_list, n_pairs=cfg.n_pairs, allow_aliasing=allow_aliasing)


def cmd_validate(sess, args):
    cfg = sess.cfg
    dal = dalang_integral(cfg.model)
    cfg.grid.check_eps(cfg.eps, args.allow_aliasing)
    if cfg.model.d == 1:
        _plan(cfg, args.allow_aliasing)
    print(f"ok {cfg.model.tag} dalang={dal:.10g} L={cfg.grid.half_width:g} "
          f"n={cfg.grid.n_points} eps={cfg.eps:g} hash={sess.metadata['config_hash'][:12]}")


def cmd_chaos_table(sess, args):
    cfg = sess.cfg
    out = {"tables": []}
    for t in cfg.t_list:
        tab = chaos_table(cfg.model, t, seed=cfg.seed)
        out["tables"].append(tab.to_dict())
        sess.partial = dict(out)
        h = ", ".join(f"h_{n}={e.value:.6g}" for n, e in tab.h.items())
        print(f"chaos-table {cfg.model.tag} t={t:g}: {h}")
    print(f"wrote {sess.write_json(out)}")


def cmd_covariance(sess, args):
    cfg = sess.cfg
    model = cfg.model
    t0 = float(cfg.t_list[0])
    pairs = [(t0, t0)] + [(t0, float(s)) for s in cfg.s_list]
    out = {"k_limit": {}}
    if model.regime == "riesz":
        for t, s in pairs:
            start = time.perf_counter()
            quad = t * s * riesz_ball_integral(model.beta, model.d)
            entry = {"quadrature": quad}
            if model.d == 1:
                closed = riesz_k_closed(model.beta, t, s)
                entry.update(closed_form=closed, abs_diff=abs(closed - quad))
            entry["seconds"] = time.perf_counter() - start
            out["k_limit"][f"{t},{s}"] = entry
            print(f"covariance {model.tag} K({t:g},{s:g}) = {quad:.9f}"
                  + (f" closed={entry['closed_form']:.9f}" if model.d == 1 else ""))
        print(f"wrote {sess.write_json(out)}")
        return
    if model.d != 1:
        raise UnsupportedRegime("rho estimation runs in d = 1 only")
    cfg.grid.check_eps(cfg.eps, args.allow_aliasing)
    keep = np.abs(cfg.grid.x) <= cfg.grid.half_width / 4.0
    rows = []
    for t, s in pairs:
        prof = rho_profile(model, t, s, cfg.n_pairs, cfg.eps, cfg.grid,
                           seed_derive(cfg.seed, "covariance", t, s), R_list=cfg.R_list)
        order = np.argsort(prof.z[keep])
        z, m, se = prof.z[keep][order], prof.mean[keep][order], prof.se[keep][order]
        rows.extend((t, s, zi, mi, si) for zi, mi, si in zip(z, m, se))
        val, err = k_limit(model, t, s, prof)
        out["k_limit"][f"{t},{s}"] = {"value": val, "error": err, "n_pairs": prof.n_pairs}
        sess.partial = dict(out)
        print(f"covariance {model.tag} K({t:g},{s:g}) = {val:.6g} +- {err:.2g}")
    sess.write_text(sess.csv_text(("t", "s", "z", "rho", "se"), rows), ".csv")
    print(f"wrote {sess.write_json(out)}")


def cmd_clt(sess, args):
    cfg = sess.cfg
    plan = _plan(cfg, args.allow_aliasing)
    results = run_replicates(plan)
    sess.partial = {"replicates": plan.n_replicates, "R": list(plan.R_list),
                    "F_var": {str(t): np.var(v, axis=0, ddof=1).tolist()
                              for t, v in sorted(results.F.items())}}
    t0 = float(plan.t_list[0])
    profiles = {}
    pairs = [(float(t), float(t)) for t in plan.t_list] + [(t0, float(s)) for s in plan.s_list]
    for t, s in pairs:
        profiles[(t, s)] = rho_profile(cfg.model, t, s, plan.n_pairs, plan.eps, plan.grid,
                                       seed_derive(cfg.seed, "rho", t, s), R_list=plan.R_list)
    cross_rho = {c: rho_estimate(cfg.model, c[0], c[1], c[2], plan.n_pairs, plan.eps, plan.grid,
                                 seed_derive(cfg.seed, "cross", *c))
                 for c in plan.cross_points}
    report = build_report(plan, results, profiles, sess.metadata, cross_rho)
    sess.write_text(report.to_csv(), ".csv")
    p = sess.write_text(report.to_json(), ".json")
    for key, sl in sorted(report.slope.items()):
        print(f"clt {cfg.model.tag} t={key}: slope={sl['slope']:.4f} "
              f"CI=[{sl['lo']:.4f}, {sl['hi']:.4f}] target={sl['target']:g}")
    print(f"wrote {p}")


def cmd_field_dump(sess, args):
    cfg = sess.cfg
    field = synthesize(cfg.model, cfg.grid, cfg.eps, seed_derive(cfg.seed, "field", 0),
                       allow_aliasing=args.allow_aliasing)
    p = sess.path(".pamf")
    dump_field(field, p)
    sess.write_json({"file": os.path.basename(p), "field_seed": field.seed,
                     "grid": cfg.grid.to_dict(), "eps": cfg.eps, "model": cfg.model.to_dict()})
    print(f"field-dump {cfg.model.tag} n={cfg.grid.n_points} "
          f"std={float(np.std(field.real_samples)):.6g} wrote {p}")


HANDLERS = {"validate": cmd_validate, "chaos-table": cmd_chaos_table,
            "covariance": cmd_covariance, "clt": cmd_clt, "field-dump": cmd_field_dump}


def build_parser():
    ap = argparse.ArgumentParser(prog="pamclt", description="Parabolic Anderson model CLT lab")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, metavar="PATH")
    ap.add_argument("--out", metavar="DIR", help="output directory (falls back to $PAMCLT_OUT)")
    ap.add_argument("--seed", type=int, metavar="U64", help="override the config seed")
    ap.add_argument("--threads", type=int, default=1, metavar="N")
    ap.add_argument("--allow-aliasing", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    set_threads(args.threads)
    sess = None
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        sess = Session(cfg, _resolve_out(args, cfg), args.command)
        HANDLERS[args.command](sess, args)
    except NumericalFailure as exc:
        print(f"pamclt: numerical failure: {exc}", file=sys.stderr)
        if sess is not None:
            p = sess.flush_partial()
            if p:
                print(f"partial results in {p}", file=sys.stderr)
        return 3
    except PamError as exc:
        print(f"pamclt: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
