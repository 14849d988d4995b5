"""Run the suite from a YAML config and write report.json, verdicts.csv and plots.

    python3 scripts/run_default_suite.py configs/quick.yaml --out out/quick
"""
import argparse
import sys
import time
from dataclasses import replace

from torsionlab.harness import emit_report, exit_code, load_config, run_suite


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config", nargs="?", default="configs/default.yaml")
    ap.add_argument("--out")
    ap.add_argument("--workers", type=int)
    args = ap.parse_args()

    cfg = load_config(args.config)
    if args.workers:
        cfg = replace(cfg, workers=args.workers)
    t0 = time.perf_counter()
    report = run_suite(cfg)
    paths = emit_report(report, out_dir=args.out or cfg.output_dir)
    s = report.summary
    print(f"{s['verdicts']} verdicts, {s['violated']} violated ({s['failures']} at the finest level), "
          f"{s['case_errors']} case errors in {time.perf_counter() - t0:.1f}s")
    # the worst relative margin per check, finest level only
    finest = cfg.refinement_levels - 1
    worst = {}
    for v in report.all_verdicts():
        if v["level"] == finest and v["rhs"]:
            rel = v["margin"] / abs(v["rhs"])
            worst[v["name"]] = min(worst.get(v["name"], float("inf")), rel)
    for name in sorted(worst):
        print(f"  {name:<28} {worst[name]:+.3e}")
    for p in paths:
        print("wrote", p)
    return exit_code(report)


if __name__ == "__main__":
    sys.exit(main())
