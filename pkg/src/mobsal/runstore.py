"""Run directory bookkeeping: the manifest, its lock and stage input checks."""

from __future__ import annotations

import contextlib
import fcntl
import json
from dataclasses import dataclass, field
from pathlib import Path

from .io import atomic_open, file_sha256

MANIFEST = "manifest.json"
LOCK = ".manifest.lock"


class StageError(RuntimeError):
    """A failure reported to the user as one machine-parseable line."""

    def __init__(self, code: str, detail: str, stage: str = ""):
        super().__init__(detail)
        self.code, self.detail, self.stage = code, detail, stage

    def line(self) -> str:
        return "mobsal-error " + json.dumps({"code": self.code, "stage": self.stage, "detail": self.detail},
                                            sort_keys=True)


@dataclass
class RunManifest:
    tool_version: str = ""
    config: dict = field(default_factory=dict)  # {"path", "sha256"}
    seeds: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)  # name -> {"status", "inputs", "outputs"}
    cells: dict = field(default_factory=dict)  # cell key -> {"status", "selection", "input_hash", "outputs"}

    def to_json(self) -> str:
        return json.dumps({"tool_version": self.tool_version, "config": self.config, "seeds": self.seeds,
                           "stages": self.stages, "cells": self.cells}, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        return cls(d.get("tool_version", ""), d.get("config", {}), d.get("seeds", {}),
                   d.get("stages", {}), d.get("cells", {}))

    def known_hashes(self) -> dict:
        """Every recorded output path with its hash, the config echo included."""
        out = {}
        if self.config:
            out[self.config["path"]] = self.config["sha256"]
        for entry in list(self.stages.values()) + list(self.cells.values()):
            out.update(entry.get("outputs", {}))
        return out


def read_manifest(run: Path) -> RunManifest | None:
    p = Path(run) / MANIFEST
    if not p.exists():
        return None
    return RunManifest.from_json(p.read_text())


@contextlib.contextmanager
def locked_manifest(run: Path):
    """Exclusive read-modify-write access to the manifest across processes."""
    run = Path(run)
    run.mkdir(parents=True, exist_ok=True)
    with open(run / LOCK, "a") as lock:
        fcntl.flock(lock.fileno(), fcntl.LOCK_EX)
        try:
            man = read_manifest(run) or RunManifest()
            yield man
            with atomic_open(run / MANIFEST) as fh:
                fh.write(man.to_json())
        finally:
            fcntl.flock(lock.fileno(), fcntl.LOCK_UN)


def hash_files(run: Path, rel_paths) -> dict:
    return {p: file_sha256(Path(run) / p) for p in sorted(rel_paths)}


def check_inputs(run: Path, stage: str, rel_paths) -> dict:
    """Verify that declared inputs exist and match the hashes the manifest recorded."""
    run = Path(run)
    man = read_manifest(run)
    if man is None:
        raise StageError("missing_input", f"no {MANIFEST} in {run}; run the earlier stages first", stage)
    known = man.known_hashes()
    hashes = {}
    for rel in sorted(rel_paths):
        path = run / rel
        if not path.exists():
            raise StageError("missing_input", f"{rel} not found", stage)
        if rel not in known:
            raise StageError("missing_input", f"{rel} is not recorded in the manifest", stage)
        h = file_sha256(path)
        if h != known[rel]:
            raise StageError("hash_mismatch", f"{rel} changed since it was recorded", stage)
        hashes[rel] = h
    return hashes


def record_stage(run: Path, stage: str, inputs: dict, outputs) -> None:
    out_hashes = hash_files(run, outputs)
    with locked_manifest(run) as man:
        man.stages[stage] = {"status": "done", "inputs": inputs, "outputs": out_hashes}
