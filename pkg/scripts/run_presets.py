"""Run the TOML presets in scripts/presets through the CLI code paths.

    python3 scripts/run_presets.py                  # everything, full size
    python3 scripts/run_presets.py --paths 2000 anderson_constant holder_power

``--paths`` caps grid.n_paths for a quick look; the config hash in every
CSV changes accordingly, so capped runs are never mistaken for full ones.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from wavemoments import cli  # noqa: E402

PRESETS = Path(__file__).with_name("presets")

COMMAND = {
    "anderson_constant": "simulate",
    "anderson_dirac": "simulate",
    "moment_table": "moment",
}


def run(name, out_root, paths, threads):
    flat = cli.load_flat(str(PRESETS / f"{name}.toml"))
    if paths is not None:
        flat["grid.n_paths"] = min(flat["grid.n_paths"], paths)
    cfg = cli.build_config(flat, str(out_root / name))
    cmd = COMMAND.get(name, "analyze")
    t0 = time.perf_counter()
    if cmd == "simulate":
        code = cli.cmd_simulate(cfg, threads)
    elif cmd == "moment":
        code = cli.cmd_moment(cfg)
    else:
        code = cli.cmd_analyze(cfg, threads)
    print(f"[{name}] {cmd} exit={code} in {time.perf_counter() - t0:.1f} s -> {cfg.out_dir}")
    return code


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help="preset names (default: all)")
    ap.add_argument("--out", default="out/presets")
    ap.add_argument("--paths", type=int, help="cap on grid.n_paths")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    names = args.names or sorted(p.stem for p in PRESETS.glob("*.toml"))
    unknown = [n for n in names if not (PRESETS / f"{n}.toml").exists()]
    if unknown:
        ap.error(f"unknown preset(s): {', '.join(unknown)}")
    codes = [run(n, Path(args.out), args.paths, args.threads) for n in names]
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
