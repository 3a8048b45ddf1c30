"""Synthesize the room preset, parse it, build the graph and ask one question.

    python scripts/run_room_demo.py [--out DIR] [--q "what is on the table"]
"""

import argparse
import tempfile
from pathlib import Path

from hpsg.cli import main


def run(*argv) -> None:
    code = main([str(a) for a in argv])
    if code != 0:
        raise SystemExit(f"hpsg {argv[0]} exited with {code}")


def demo():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", help="working directory (default: a temporary one)")
    ap.add_argument("--q", default="what is on the table")
    args = ap.parse_args()
    root = Path(args.out or tempfile.mkdtemp(prefix="hpsg_room_"))
    run("synth", "room", "--out", root / "scene")
    run("parse", root / "scene", "--out", root / "parsed")
    run("build-graph", root / "parsed", "--out", root / "graph.json")
    run("query", root / "graph.json", "--q", args.q, "--context-only")


if __name__ == "__main__":
    demo()
