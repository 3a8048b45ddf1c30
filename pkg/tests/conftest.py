import time

import pytest

from hpsg import synth
from hpsg.annotation import StubAnnotator
from hpsg.config import PipelineConfig
from hpsg.pipeline import run_build, run_parse


def captions_lookup(scene):
    return {(c["instance_id"], c["view_id"]): c["caption"] for c in scene.captions}


class Run:
    """A synthetic scene pushed through parse and build once per session."""

    def __init__(self, spec):
        self.scene = synth.generate(spec)
        ann = StubAnnotator()
        t0 = time.perf_counter()
        self.parsed = run_parse(self.scene.views, PipelineConfig(), captions_lookup(self.scene), ann)
        self.parse_seconds = time.perf_counter() - t0
        self.graph = run_build(self.parsed, ann)
        self.annotator = ann


@pytest.fixture(scope="session")
def room_run():
    return Run(synth.room_spec())


@pytest.fixture(scope="session")
def tilted_run():
    return Run(synth.room_spec(rotation_deg=15.0))


@pytest.fixture(scope="session")
def office_run():
    return Run(synth.office_spec())


@pytest.fixture(scope="session")
def room_scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("room_scene")
    synth.write_scene(synth.generate(synth.room_spec()), out)
    return out


def hpsg_cli(*args, env=None):
    """Run the CLI in a fresh interpreter; returns (code, stdout, stderr, seconds)."""
    import os
    import subprocess
    import sys

    full_env = {k: v for k, v in os.environ.items() if k not in ("HPSG_ANNOTATOR_CMD", "SOURCE_DATE_EPOCH")}
    full_env.update(env or {})
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "hpsg", *map(str, args)], capture_output=True, text=True,
                          env=full_env, timeout=600)
    return proc.returncode, proc.stdout, proc.stderr, time.perf_counter() - t0


class CliRoom:
    """synth room -> parse -> build-graph -> query, plus two repeat runs for determinism."""

    def __init__(self, root):
        self.root = root
        self.scene = root / "scene"
        self.seconds = {}
        self.codes = {}
        self._step("synth", "synth", "room", "--out", self.scene)
        for run, threads in (("a", 1), ("b", 1), ("c", 4)):
            self._step(f"parse_{run}", "parse", self.scene, "--out", root / run, "--threads", threads)
            self._step(f"build_{run}", "build-graph", root / run, "--out", root / run / "graph.json",
                       "--threads", threads)
        self.query_out = self._step("query", "query", self.graph("a"), "--q", "what is on the table")

    def _step(self, name, *args):
        code, out, err, secs = hpsg_cli(*args)
        self.codes[name] = code
        self.seconds[name] = secs
        assert code == 0, f"{name} failed: {err}"
        return out

    def graph(self, run):
        return self.root / run / "graph.json"

    def end_to_end_seconds(self):
        return sum(self.seconds[k] for k in ("synth", "parse_a", "build_a", "query"))


@pytest.fixture(scope="session")
def cli_room(tmp_path_factory):
    return CliRoom(tmp_path_factory.mktemp("cli_room"))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
