"""Skill directory integrity: content manifests and dropper indicator scans."""

from __future__ import annotations

import base64
import binascii
import hashlib
import math
import os
import posixpath
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from agentguard.errors import ManifestError
from agentguard.taxonomy import SkillReason

__all__ = [
    "Finding",
    "IndicatorReport",
    "ManifestEntry",
    "ManifestVerification",
    "SkillManifest",
    "build_manifest",
    "scan_indicators",
    "shannon_entropy",
    "verify_manifest",
]

MANIFEST_HEADER = "skill-manifest v1"
DEFAULT_ENTROPY_THRESHOLD = 7.9
MIN_ENTROPY_FILE_SIZE = 4096
MIN_BASE64_RUN = 120
MAX_BASE64_PROBE = 1 << 20
_SYMLINK_DOMAIN = b"symlink\x00"

_HEX64 = re.compile(r"[0-9a-f]{64}\Z")
_BASE64_RUN = re.compile(r"[A-Za-z0-9+/]{%d,}={0,2}" % MIN_BASE64_RUN)
_IP_URL = re.compile(
    r"\b[A-Za-z][A-Za-z0-9+.-]*://(?:[^\s/@]+@)?"
    r"(?P<host>\d{1,3}\.\d{1,3}\.\d{1,3}\.\d{1,3})"
    r"(?![\w.-])(?::\d+)?[^\s\"'<>)\]]*"
)
_COMMAND_MARKERS = (b"sh -c", b"curl ")


def _valid_relpath(path: str) -> bool:
    if not path or path.startswith("/") or "\n" in path or "\\" in path:
        return False
    parts = path.split("/")
    return all(p not in ("", ".", "..") for p in parts) and posixpath.normpath(path) == path


@dataclass(frozen=True, order=True)
class ManifestEntry:
    path: str
    size: int
    digest: str

    def __post_init__(self) -> None:
        if not _valid_relpath(self.path):
            raise ValueError(f"manifest path must be relative and normalized: {self.path!r}")
        if isinstance(self.size, bool) or not isinstance(self.size, int) or self.size < 0:
            raise ValueError(f"bad size for {self.path!r}")
        if not _HEX64.match(self.digest):
            raise ValueError(f"digest must be 64 lowercase hex characters: {self.digest!r}")


@dataclass(frozen=True)
class SkillManifest:
    entries: tuple[ManifestEntry, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        paths = [e.path for e in self.entries]
        if paths != sorted(paths):
            raise ValueError("manifest entries must be sorted by path")
        if len(set(paths)) != len(paths):
            raise ValueError("duplicate manifest path")

    def as_dict(self) -> dict[str, ManifestEntry]:
        return {e.path: e for e in self.entries}

    def dumps(self) -> str:
        lines = [MANIFEST_HEADER] + [f"{e.digest} {e.size} {e.path}" for e in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> SkillManifest:
        lines = text.split("\n")
        if not lines or lines[0] != MANIFEST_HEADER:
            raise ValueError("not a skill-manifest v1 document")
        if lines[-1] != "":
            raise ValueError("manifest must end with a newline")
        entries = []
        for lineno, line in enumerate(lines[1:-1], start=2):
            parts = line.split(" ", 2)
            if len(parts) != 3 or not parts[1].isdigit():
                raise ValueError(f"line {lineno}: expected '<digest> <size> <path>'")
            entries.append(ManifestEntry(parts[2], int(parts[1]), parts[0]))
        return cls(tuple(entries))


def _walk(root: Path, rel: str = "") -> Iterator[tuple[str, os.DirEntry[str]]]:
    try:
        with os.scandir(root / rel if rel else root) as it:
            items = list(it)
    except OSError as exc:
        raise ManifestError(f"cannot list {rel or '.'}: {exc}") from exc
    for entry in items:
        path = f"{rel}/{entry.name}" if rel else entry.name
        if entry.is_dir(follow_symlinks=False):
            yield from _walk(root, path)
        else:
            yield path, entry


def _utf8(name: str) -> bool:
    try:
        name.encode("utf-8")
    except UnicodeEncodeError:
        return False
    return True


def _hash_file(path: Path) -> tuple[int, str]:
    h = hashlib.sha256()
    size = 0
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
            size += len(chunk)
    return size, h.hexdigest()


def build_manifest(root: str | os.PathLike[str]) -> SkillManifest:
    """Hash every regular file under ``root`` with SHA-256.

    Symlinks are not followed; they are recorded by their target string in a
    separate hash domain, so a link and a file with the same text differ.

    Raises:
        ManifestError: on any unreadable entry or special file.
    """
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"not a directory: {root}")
    entries = []
    for rel, entry in _walk(root):
        if "\n" in rel or "\\" in rel or not _utf8(rel):
            raise ManifestError(f"unrepresentable file name: {rel!r}")
        try:
            if entry.is_symlink():
                target = os.fsencode(os.readlink(entry.path))
                digest = hashlib.sha256(_SYMLINK_DOMAIN + target).hexdigest()
                entries.append(ManifestEntry(rel, len(target), digest))
            elif entry.is_file(follow_symlinks=False):
                size, digest = _hash_file(Path(entry.path))
                entries.append(ManifestEntry(rel, size, digest))
            else:
                raise ManifestError(f"special file in skill directory: {rel}")
        except OSError as exc:
            raise ManifestError(f"cannot read {rel}: {exc}") from exc
    return SkillManifest(tuple(sorted(entries)))


@dataclass(frozen=True)
class ManifestVerification:
    changes: tuple[tuple[str, SkillReason], ...] = ()

    @property
    def intact(self) -> bool:
        return not self.changes


def verify_manifest(root: str | os.PathLike[str], manifest: SkillManifest) -> ManifestVerification:
    current = build_manifest(root).as_dict()
    expected = manifest.as_dict()
    changes = []
    for path in sorted(current.keys() | expected.keys()):
        if path not in expected:
            changes.append((path, SkillReason.MANIFEST_ADDED))
        elif path not in current:
            changes.append((path, SkillReason.MANIFEST_REMOVED))
        elif current[path] != expected[path]:
            changes.append((path, SkillReason.MANIFEST_CHANGED))
    return ManifestVerification(tuple(changes))


def shannon_entropy(data: bytes) -> float:
    """Byte-level Shannon entropy in bits per byte, in ``[0, 8]``."""
    n = len(data)
    if n == 0:
        return 0.0
    h = 0.0
    for count in Counter(data).values():
        p = count / n
        h -= p * math.log2(p)
    # -0.0 for single-symbol input
    return max(0.0, min(8.0, h))


@dataclass(frozen=True, order=True)
class Finding:
    path: str
    indicator: SkillReason
    detail: str = ""


@dataclass(frozen=True)
class IndicatorReport:
    findings: tuple[Finding, ...] = ()

    @property
    def clean(self) -> bool:
        return not self.findings


def _raw_ip_urls(text: str) -> list[str]:
    hits = []
    for m in _IP_URL.finditer(text):
        if all(int(octet) <= 255 for octet in m.group("host").split(".")):
            hits.append(m.group(0))
    return hits


def _base64_command_blocks(text: str) -> list[str]:
    hits = []
    for m in _BASE64_RUN.finditer(text):
        run = m.group(0)[:MAX_BASE64_PROBE]
        usable = run.rstrip("=")
        usable = usable[: len(usable) - len(usable) % 4]
        try:
            decoded = base64.b64decode(usable, validate=True)
        except (binascii.Error, ValueError):
            continue
        marker = next((mk for mk in _COMMAND_MARKERS if mk in decoded), None)
        if marker is not None:
            hits.append(f"decodes to {marker.decode().strip()!r} at offset {m.start()}")
    return hits


def scan_indicators(
    root: str | os.PathLike[str], entropy_threshold: float = DEFAULT_ENTROPY_THRESHOLD
) -> IndicatorReport:
    """Flag encrypted-looking blobs, raw-IPv4 URLs and base64-wrapped shell commands."""
    root = Path(root)
    findings: list[Finding] = []
    for rel, entry in _walk(root):
        if entry.is_symlink() or not entry.is_file(follow_symlinks=False):
            continue
        try:
            data = Path(entry.path).read_bytes()
        except OSError:
            findings.append(Finding(rel, SkillReason.UNREADABLE, "unreadable"))
            continue
        if len(data) >= MIN_ENTROPY_FILE_SIZE:
            h = shannon_entropy(data)
            if h >= entropy_threshold:
                findings.append(Finding(rel, SkillReason.HIGH_ENTROPY_BLOB, f"entropy={h:.3f} bits/byte"))
        if b"\x00" in data:
            continue
        text = data.decode("utf-8", errors="replace")
        for url in _raw_ip_urls(text):
            findings.append(Finding(rel, SkillReason.RAW_IP_URL, url))
        for detail in _base64_command_blocks(text):
            findings.append(Finding(rel, SkillReason.BASE64_COMMAND_BLOCK, detail))
    return IndicatorReport(tuple(sorted(findings)))
