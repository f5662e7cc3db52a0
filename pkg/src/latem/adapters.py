"""Container-runtime adapters: one real, two for tests.

An adapter runs one shell command line and reports its outcome. The live
adapter shells out (plan lines are already full `docker ...` / `tc ...`
commands); the recording adapter succeeds silently while logging calls, and
the scripted adapter replays canned outcomes for fault injection.
"""

from __future__ import annotations

import subprocess
from dataclasses import dataclass, field
from typing import Callable, Protocol


@dataclass(frozen=True)
class CommandResult:
    exit_code: int
    stdout: str = ""
    stderr: str = ""

    @property
    def ok(self) -> bool:
        return self.exit_code == 0


class RuntimeAdapter(Protocol):
    def run(self, command: str) -> CommandResult:
        ...


class ShellAdapter:
    """Executes plan lines on the host via /bin/sh. Apply mode only."""

    def __init__(self, timeout_s: float = 600.0):
        self.timeout_s = timeout_s

    def run(self, command: str) -> CommandResult:
        proc = subprocess.run(
            ["/bin/sh", "-c", command],
            capture_output=True,
            text=True,
            timeout=self.timeout_s,
        )
        return CommandResult(proc.returncode, proc.stdout, proc.stderr)


@dataclass
class RecordingAdapter:
    """Succeeds at everything, remembers every command (a spy)."""

    calls: list[str] = field(default_factory=list)
    stdout_for: Callable[[str], str] | None = None

    def run(self, command: str) -> CommandResult:
        self.calls.append(command)
        out = self.stdout_for(command) if self.stdout_for else ""
        return CommandResult(0, out)


@dataclass
class ScriptedAdapter:
    """Replays outcomes by predicate; unmatched commands succeed.

    `failures` maps a substring to an exit code: the first command containing
    the substring fails with that code. `responses` maps a substring to
    canned stdout.
    """

    failures: dict[str, int] = field(default_factory=dict)
    responses: dict[str, str] = field(default_factory=dict)
    calls: list[str] = field(default_factory=list)

    def run(self, command: str) -> CommandResult:
        self.calls.append(command)
        for needle, code in self.failures.items():
            if needle in command:
                return CommandResult(code, "", f"scripted failure for {needle!r}")
        for needle, out in self.responses.items():
            if needle in command:
                return CommandResult(0, out)
        return CommandResult(0, "")
