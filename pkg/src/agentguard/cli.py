"""``agentguard`` command line: run engine checks and print an audit report.

Reports go to stdout, diagnostics to stderr.  Exit codes: 0 pass/allow,
1 fail/deny, 2 approval required (``check-exec`` only), 3 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Any, Callable, Sequence

from agentguard import __version__
from agentguard.allowlist import (
    ApprovalStore,
    ExecDecision,
    PathResolver,
    Scope,
    SearchPathResolver,
    TableResolver,
    Verdict,
    evaluate_argv,
    evaluate_shell_allowlist,
    pending_approvals,
)
from agentguard.errors import AgentGuardError, ConfigError, PolicyViolationError
from agentguard.gateway import NODE_INVOKE_COMMANDS, gate_node_invoke_method, validate_gateway_url_override
from agentguard.identity import RepairOutcome, SenderContext, repair_allow_from_handles, resolve_allowlist_identity
from agentguard.policy import PolicyDocument
from agentguard.report import AuditReport, CheckResult
from agentguard.sandbox import SandboxConfig, validate_sandbox_config
from agentguard.skills import SkillManifest, build_manifest, scan_indicators, verify_manifest
from agentguard.taxonomy import IdentityReason
from agentguard.webhook import DEFAULT_TOLERANCE_SECONDS, WebhookVerificationRequest, verify_webhook

__all__ = ["EXIT_ALLOW", "EXIT_APPROVAL", "EXIT_CONFIG", "EXIT_DENY", "main"]

EXIT_ALLOW = 0
EXIT_DENY = 1
EXIT_APPROVAL = 2
EXIT_CONFIG = 3

VERDICT_EXIT = {Verdict.ALLOW: EXIT_ALLOW, Verdict.DENY: EXIT_DENY, Verdict.REQUIRE_APPROVAL: EXIT_APPROVAL}

# Used when neither the policy nor the command line names a search path.
DEFAULT_SEARCH_PATH = ("/usr/local/sbin", "/usr/local/bin", "/usr/sbin", "/usr/bin", "/sbin", "/bin")


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage, which would collide with "approval required".
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _read_json(path: str, what: str) -> Any:
    try:
        return json.loads(Path(path).read_text("utf-8"))
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read {what} {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path!r} is not valid JSON: {exc}") from exc


def _read_table(path: str) -> dict[str, str]:
    """Two whitespace-separated columns per line; ``#`` starts a comment."""
    try:
        lines = Path(path).read_text("utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read table {path!r}: {exc}") from exc
    table: dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigError(f"{path}:{lineno}: expected two columns")
        table[parts[0]] = parts[1]
    return table


def _load_policy(path: str | None) -> PolicyDocument:
    if path is None:
        raise ConfigError("--policy is required")
    return PolicyDocument.load(path)


def _now(args: argparse.Namespace) -> int:
    return int(time.time()) if args.now is None else args.now


def _resolver(args: argparse.Namespace, policy: PolicyDocument) -> PathResolver:
    if args.resolver_table:
        table = _read_table(args.resolver_table)
        for name, path in table.items():
            if not path.startswith("/"):
                raise ConfigError(f"resolver table maps {name!r} to non-absolute {path!r}")
        return TableResolver(table)
    search = args.search_path or list(policy.search_path) or list(DEFAULT_SEARCH_PATH)
    return SearchPathResolver(search)


def _exec_decision(args: argparse.Namespace, policy: PolicyDocument, store: ApprovalStore) -> ExecDecision:
    resolver = _resolver(args, policy)
    if args.argv:
        return evaluate_argv(args.argv, policy, store, resolver)
    if args.command is None:
        raise ConfigError("give a command string or --argv")
    return evaluate_shell_allowlist(args.command, policy, store, resolver)


def cmd_check_exec(args: argparse.Namespace, report: AuditReport) -> int:
    policy = _load_policy(args.policy)
    store = ApprovalStore.load(args.store) if args.store else ApprovalStore()
    decision = _exec_decision(args, policy, store)
    report.add(CheckResult.labelled("exec", decision.verdict.value, decision.reason, decision.detail))
    return VERDICT_EXIT[decision.verdict]


def cmd_approve(args: argparse.Namespace, report: AuditReport) -> int:
    policy = _load_policy(args.policy)
    if not args.store:
        raise ConfigError("approve needs --store")
    store = ApprovalStore.load(args.store)
    decision = _exec_decision(args, policy, store)
    if decision.verdict is not Verdict.REQUIRE_APPROVAL:
        report.add(CheckResult.labelled("approve", decision.verdict.value, decision.reason, decision.detail))
        return EXIT_ALLOW if decision.verdict is Verdict.ALLOW else EXIT_DENY
    identities = pending_approvals(decision)
    if not identities:
        report.add(CheckResult.labelled("approve", "refused", decision.reason,
                                        "nothing approvable: " + decision.detail))
        return EXIT_DENY
    for identity in identities:
        try:
            store.record(identity, args.scope, _now(args))
        except PolicyViolationError as exc:
            report.add(CheckResult.labelled("approve", "refused", decision.reason, str(exc)))
            return EXIT_DENY
        report.add(CheckResult("approve", "recorded", None, None, None, f"{identity} ({args.scope})"))
    store.save(args.store)
    return EXIT_ALLOW


def cmd_check_sandbox(args: argparse.Namespace, report: AuditReport) -> int:
    policy = _load_policy(args.policy) if args.policy else PolicyDocument()
    cfg = SandboxConfig.from_dict(_read_json(args.config, "sandbox config"))
    probe: Callable[[str], str] | None = os.path.realpath if args.resolve_symlinks else None
    result = validate_sandbox_config(cfg, policy.sandbox_blocklist, probe)
    for v in result.violations:
        report.add(CheckResult.labelled(f"sandbox.{v.field}", "deny", v.kind, f"{v.value}: {v.reason}"))
    for w in result.warnings:
        report.add(CheckResult("sandbox.network", "warning", None, None, None, w))
    if result.ok and not result.warnings:
        report.add(CheckResult("sandbox", "allow"))
    return EXIT_ALLOW if result.ok else EXIT_DENY


def cmd_check_url(args: argparse.Namespace, report: AuditReport) -> int:
    policy = _load_policy(args.policy) if args.policy else PolicyDocument()
    decision = validate_gateway_url_override(args.url, policy.gateway)
    report.add(CheckResult.labelled("gateway.url", "allow" if decision.allowed else "deny",
                                    decision.reason, decision.detail))
    return EXIT_ALLOW if decision.allowed else EXIT_DENY


def cmd_check_method(args: argparse.Namespace, report: AuditReport) -> int:
    allowed = NODE_INVOKE_COMMANDS | frozenset(args.allow or ())
    decision = gate_node_invoke_method(args.method, allowed)
    report.add(CheckResult.labelled("gateway.method", "allow" if decision.dispatchable else "deny",
                                    decision.reason, args.method))
    return EXIT_ALLOW if decision.dispatchable else EXIT_DENY


def _allow_from(doc: Any) -> list[Any]:
    if not isinstance(doc, dict) or set(doc) - {"version", "allow_from"} or doc.get("version") != 1:
        raise ConfigError('channel config must be {"version": 1, "allow_from": [...]}')
    entries = doc.get("allow_from", [])
    if not isinstance(entries, list) or not all(
        isinstance(e, (str, int)) and not isinstance(e, bool) for e in entries
    ):
        raise ConfigError("'allow_from' must be a list of strings or integers")
    return entries


def cmd_check_identity(args: argparse.Namespace, report: AuditReport) -> int:
    entries = _allow_from(_read_json(args.config, "channel config"))
    try:
        sender = SenderContext(args.sender_id, args.raw_handle)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    match = resolve_allowlist_identity(entries, sender)
    if match.allowed:
        assert match.match_source is not None
        report.add(CheckResult("identity", "allow", None, None, None,
                               f"matched {match.match_source.value} {match.match_key}"))
        return EXIT_ALLOW
    report.add(CheckResult.labelled("identity", "deny", IdentityReason.SENDER_NOT_ALLOWED,
                                    f"sender id {sender.sender_id} not in allow_from"))
    return EXIT_DENY


def cmd_repair_config(args: argparse.Namespace, report: AuditReport) -> int:
    doc = _read_json(args.config, "channel config")
    entries = _allow_from(doc)
    table = _read_table(args.resolver_table)
    repaired, rows = repair_allow_from_handles(entries, table.get)
    unresolved = False
    for entry, outcome, detail in rows:
        if outcome is RepairOutcome.UNRESOLVED:
            unresolved = True
            report.add(CheckResult.labelled("repair", outcome.value, IdentityReason.HANDLE_UNRESOLVED,
                                            f"{entry}: {detail}"))
        else:
            report.add(CheckResult("repair", outcome.value, None, None, None,
                                   f"{entry} {detail}".rstrip()))
    src = Path(args.config)
    out = Path(args.output) if args.output else src.with_name(f"{src.stem}.repaired{src.suffix or '.json'}")
    out.write_text(json.dumps({**doc, "allow_from": repaired}, indent=2, sort_keys=True) + "\n", "utf-8")
    return EXIT_DENY if unresolved else EXIT_ALLOW


def _read_secret(args: argparse.Namespace) -> bytes:
    if args.secret_file:
        try:
            secret = Path(args.secret_file).read_bytes().rstrip(b"\r\n")
        except OSError as exc:
            raise ConfigError(f"cannot read secret file: {exc}") from exc
    else:
        value = os.environ.get(args.secret_env)
        if value is None:
            raise ConfigError(f"environment variable {args.secret_env} is not set")
        secret = value.encode("utf-8")
    if not secret:
        raise ConfigError("webhook secret is empty")
    return secret


def cmd_verify_webhook(args: argparse.Namespace, report: AuditReport) -> int:
    try:
        body = Path(args.body_file).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read body: {exc}") from exc
    try:
        req = WebhookVerificationRequest(body, args.signature, _read_secret(args), args.timestamp, args.tolerance)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    decision = verify_webhook(req, _now(args))
    report.add(CheckResult.labelled("webhook", "allow" if decision.authentic else "deny", decision.reason))
    return EXIT_ALLOW if decision.authentic else EXIT_DENY


def cmd_scan_skill(args: argparse.Namespace, report: AuditReport) -> int:
    policy = _load_policy(args.policy) if args.policy else PolicyDocument()
    threshold = args.threshold if args.threshold is not None else policy.entropy_threshold
    if not Path(args.directory).is_dir():
        raise ConfigError(f"not a directory: {args.directory}")
    failed = False
    if args.verify_manifest:
        try:
            manifest = SkillManifest.loads(Path(args.verify_manifest).read_text("utf-8"))
        except (OSError, UnicodeDecodeError, ValueError) as exc:
            raise ConfigError(f"cannot load manifest: {exc}") from exc
        for path, change in verify_manifest(args.directory, manifest).changes:
            failed = True
            report.add(CheckResult.labelled("skill.manifest", "deny", change, path))
    findings = scan_indicators(args.directory, threshold).findings
    for f in findings:
        failed = True
        report.add(CheckResult.labelled("skill.indicator", "deny", f.indicator, f"{f.path}: {f.detail}"))
    if args.write_manifest:
        Path(args.write_manifest).write_text(build_manifest(args.directory).dumps(), "utf-8")
    if not failed:
        report.add(CheckResult("skill", "allow"))
    return EXIT_DENY if failed else EXIT_ALLOW


def _exec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("command", nargs="?", help="shell command string to evaluate")
    p.add_argument("--policy", help="policy JSON file")
    p.add_argument("--store", help="approval store file (JSON lines)")
    p.add_argument("--argv", nargs=argparse.REMAINDER, help="direct-argv mode: remaining words are the argv")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--resolver-table", help="file of 'name /abs/path' lines")
    group.add_argument("--search-path", action="append", help="directory to search (repeatable)")
    p.add_argument("--now", type=int, help="epoch seconds used for new approvals")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="agentguard", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"agentguard {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("check-exec", help="evaluate a command against the exec allowlist")
    _exec_args(p)
    p.set_defaults(func=cmd_check_exec)

    p = sub.add_parser("approve", help="record approvals for a command's unapproved executables")
    _exec_args(p)
    p.add_argument("--scope", choices=[s.value for s in Scope], default=Scope.ALLOW_ALWAYS.value)
    p.set_defaults(func=cmd_approve)

    p = sub.add_parser("check-sandbox", help="validate a sandbox config file")
    p.add_argument("config")
    p.add_argument("--policy")
    p.add_argument("--resolve-symlinks", action="store_true",
                   help="also check bind sources after resolving symlinks on this host")
    p.set_defaults(func=cmd_check_sandbox)

    p = sub.add_parser("check-url", help="validate a gateway URL override")
    p.add_argument("url")
    p.add_argument("--policy")
    p.set_defaults(func=cmd_check_url)

    p = sub.add_parser("check-method", help="gate a node.invoke method name")
    p.add_argument("method")
    p.add_argument("--allow", action="append", help="extra dispatchable method (repeatable)")
    p.set_defaults(func=cmd_check_method)

    p = sub.add_parser("check-identity", help="authorize a sender id against a channel config")
    p.add_argument("config")
    p.add_argument("--sender-id", required=True)
    p.add_argument("--raw-handle", help="display handle; recorded, never used for the decision")
    p.set_defaults(func=cmd_check_identity)

    p = sub.add_parser("repair-config", help="rewrite @handle entries to immutable ids")
    p.add_argument("config")
    p.add_argument("--resolver-table", required=True, help="file of 'handle id' lines")
    p.add_argument("--output", help="repaired file (default: <config>.repaired.json)")
    p.set_defaults(func=cmd_repair_config)

    p = sub.add_parser("verify-webhook", help="verify a webhook HMAC-SHA256 signature")
    p.add_argument("--body-file", required=True)
    p.add_argument("--signature", required=True)
    secret = p.add_mutually_exclusive_group(required=True)
    secret.add_argument("--secret-file")
    secret.add_argument("--secret-env")
    p.add_argument("--timestamp")
    p.add_argument("--tolerance", type=int, default=DEFAULT_TOLERANCE_SECONDS)
    p.add_argument("--now", type=int)
    p.set_defaults(func=cmd_verify_webhook)

    p = sub.add_parser("scan-skill", help="scan a skill directory for dropper indicators")
    p.add_argument("directory")
    p.add_argument("--policy")
    p.add_argument("--threshold", type=float, help="entropy threshold in bits/byte")
    p.add_argument("--verify-manifest", help="compare against this manifest")
    p.add_argument("--write-manifest", help="write a fresh manifest here")
    p.set_defaults(func=cmd_scan_skill)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    report = AuditReport()
    try:
        code = args.func(args, report)
    except AgentGuardError as exc:
        print(f"agentguard: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(report.dumps())
    return code
