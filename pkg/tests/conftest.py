import os
import sys
import time
from dataclasses import dataclass, field

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from beolang import cli, pipeline  # noqa: E402

# Small pipeline used by CLI and pipeline tests: seconds, not minutes.
SMALL_FLAGS = ["--n-objects", "20", "--renders-per-object", "4", "--regressor-epochs", "2",
               "--regressor-hidden", "32,16", "--joint-renders-per-object", "3",
               "--images-per-object", "2", "--shuffle-images-per-object", "3",
               "--max-epochs", "5", "--resolution", "16", "--image-size", "32"]


def run_cli(*argv):
    """``cli.main`` with captured exit code (argparse exits via SystemExit)."""
    try:
        return cli.main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


@dataclass
class Run:
    workdir: str
    flags: list
    timings: dict = field(default_factory=dict)

    @property
    def config(self):
        args = cli.build_parser().parse_args(["eval", "--workdir", self.workdir, *self.flags])
        return cli.config_from_args(args)

    def cli(self, command, *extra):
        parts = command.split()
        return run_cli(*parts, "--workdir", self.workdir, *self.flags, *extra)


def full_run(workdir, flags):
    """gen-corpus, train all and eval through the CLI, timing each step."""
    run = Run(str(workdir), list(flags))
    for step in ("gen-corpus", "train all", "eval"):
        start = time.perf_counter()
        code = run.cli(step)
        run.timings[step] = time.perf_counter() - start
        if code != 0:
            raise RuntimeError(f"{step} exited with {code}")
    return run


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    return full_run(tmp_path_factory.mktemp("small"), SMALL_FLAGS)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """The default desk-scale configuration, trained once per session."""
    return full_run(tmp_path_factory.mktemp("desk"), [])


@pytest.fixture(scope="session")
def desk_workspace(desk_run):
    return pipeline.open_workspace(desk_run.config)


# Acceptance verdicts, echoed in the terminal summary so they show up in
# plain ``pytest -v`` output as well as with ``-s``.
ACCEPTANCE_LINES = []


def record_acceptance(number, name, ok, detail, elapsed):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {name}: {detail} [{elapsed:.2f}s]"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
