"""Scenario-aware accountability planning.

For every term that survived verification, propose checks an ordinary user
could carry out to see whether the service honors the term. Plans are
conditioned on a user scenario, and optionally on a jurisdiction profile
that steers attention toward regional privacy obligations.
"""

from __future__ import annotations

import enum
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .backends import PLAN_CHECKS_KEY, Backend, BackendError, BackendRequest
from .documents import SourceDocument, resolve_span
from .parsing import run_request
from .prompts import build_planner_request
from .terms import LifecycleError, Term, TermStatus, canonical_source_string

DEFAULT_MIN_CHECKS = 3
DEFAULT_WORKERS = 4
MAX_CHECK_CHARS = 500

PLANNABLE_STATUSES = (TermStatus.VERIFIED_SUPPORTED, TermStatus.RESOURCED)

# The plans are observational aids, not legal analysis; every serialized
# plan set carries this notice.
PLAN_DISCLAIMER = (
    "These checks describe what a user can observe. They are not a "
    "compliance determination or legal advice."
)


class JurisdictionId(enum.Enum):
    NONE = "none"
    GDPR = "gdpr"
    CCPA = "ccpa"


@dataclass(frozen=True)
class JurisdictionProfile:
    id: JurisdictionId
    prompt_addendum: str
    citation_note: str


JURISDICTION_PROFILES: dict[JurisdictionId, JurisdictionProfile] = {
    JurisdictionId.GDPR: JurisdictionProfile(
        id=JurisdictionId.GDPR,
        prompt_addendum=(
            "Weigh the data-protection obligations that apply to users in "
            "the European Union, such as consent to processing, access to "
            "one's personal data, erasure, and data portability. Prefer "
            "checks that let the user exercise or observe these rights."
        ),
        citation_note="General Data Protection Regulation (GDPR)",
    ),
    JurisdictionId.CCPA: JurisdictionProfile(
        id=JurisdictionId.CCPA,
        prompt_addendum=(
            "Weigh the privacy rights of California consumers, such as "
            "notice at collection, opting out of the sale or sharing of "
            "personal information, and deletion requests. Prefer checks "
            "that let the user exercise or observe these rights."
        ),
        citation_note="California Consumer Privacy Act (CCPA)",
    ),
}


class PlanError(Exception):
    """Planning failed for one term."""

    def __init__(self, term_id: str, message: str):
        self.term_id = term_id
        super().__init__(message)


@dataclass(frozen=True)
class Scenario:
    description: str
    persona: str | None = None
    jurisdiction: JurisdictionId = JurisdictionId.NONE

    def __post_init__(self):
        if not self.description or not self.description.strip():
            raise ValueError("scenario description must be non-empty")

    @property
    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "description": self.description,
                "persona": self.persona,
                "jurisdiction": self.jurisdiction.value,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]

    def to_json(self) -> dict:
        return {
            "description": self.description,
            "persona": self.persona,
            "jurisdiction": self.jurisdiction.value,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Scenario":
        return cls(
            description=data["description"],
            persona=data.get("persona"),
            jurisdiction=JurisdictionId(data.get("jurisdiction", "none")),
        )


@dataclass
class AccountabilityPlan:
    term_id: str
    checks: tuple[str, ...]
    scenario_fingerprint: str
    jurisdiction_used: JurisdictionId
    warnings: tuple[str, ...] = ()


def _valid_checks(raw_checks: list, warnings: list[str]) -> list[str]:
    checks = []
    for i, check in enumerate(raw_checks):
        if not isinstance(check, str) or not check.strip():
            warnings.append(f"dropped empty check at index {i}")
            continue
        if len(check) > MAX_CHECK_CHARS:
            warnings.append(
                f"dropped over-long check at index {i} "
                f"({len(check)} > {MAX_CHECK_CHARS} chars)"
            )
            continue
        checks.append(check)
    return checks


def plan_term(
    term: Term,
    doc: SourceDocument,
    scenario: Scenario,
    backend: Backend,
    *,
    min_checks: int = DEFAULT_MIN_CHECKS,
    cache_dir=None,
) -> AccountabilityPlan:
    """Plan checks for one surviving term.

    A response with fewer than min_checks checks earns one follow-up request
    for more; whatever count results is returned, with a shortfall warning
    rather than an error, since check count is a backend behavior.
    """
    if term.status not in PLANNABLE_STATUSES:
        raise LifecycleError(
            f"term {term.term_id}: cannot plan for status {term.status.value}; "
            "only verified_supported or resourced terms are eligible"
        )
    passage = resolve_span(doc, term.source)
    profile = JURISDICTION_PROFILES.get(scenario.jurisdiction)
    req = build_planner_request(
        term.statement,
        canonical_source_string(term.source),
        passage,
        scenario.description,
        jurisdiction_addendum=profile.prompt_addendum if profile else None,
        min_checks=min_checks,
    )
    try:
        resp = run_request(backend, req, cache_dir)
    except BackendError as exc:
        if exc.kind == "malformed_output":
            raise PlanError(term.term_id, str(exc)) from exc
        raise

    warnings: list[str] = []
    checks = _valid_checks(resp.parsed[PLAN_CHECKS_KEY], warnings)
    if len(checks) < min_checks:
        followup = BackendRequest(
            role_prompt=req.role_prompt,
            user_prompt=(
                req.user_prompt
                + f"\n\nThat list is too short. Propose at least {min_checks} "
                "distinct checks."
            ),
            response_schema=req.response_schema,
            temperature=req.temperature,
            max_output_tokens=req.max_output_tokens,
        )
        try:
            retry = run_request(backend, followup, cache_dir)
            retry_checks = _valid_checks(retry.parsed[PLAN_CHECKS_KEY], warnings)
            if len(retry_checks) > len(checks):
                checks = retry_checks
        except BackendError as exc:
            warnings.append(f"follow-up request for more checks failed: {exc}")
        if len(checks) < min_checks:
            warnings.append(
                f"only {len(checks)} checks produced; wanted at least {min_checks}"
            )
    if not checks:
        raise PlanError(term.term_id, "backend produced no usable checks")
    return AccountabilityPlan(
        term_id=term.term_id,
        checks=tuple(checks),
        scenario_fingerprint=scenario.fingerprint,
        jurisdiction_used=scenario.jurisdiction,
        warnings=tuple(warnings),
    )


def plan_all(
    terms: list[Term],
    doc: SourceDocument,
    scenario: Scenario,
    backend: Backend,
    *,
    min_checks: int = DEFAULT_MIN_CHECKS,
    workers: int = DEFAULT_WORKERS,
    best_effort: bool = False,
    cache_dir=None,
) -> tuple[list[AccountabilityPlan], list[str]]:
    """Plans for every eligible term in input order, plus skip notices for
    the ineligible ones."""
    notices: list[str] = []
    eligible: list[Term] = []
    for term in terms:
        if term.status in PLANNABLE_STATUSES:
            eligible.append(term)
        else:
            notices.append(
                f"term {term.term_id} skipped: status {term.status.value}"
            )

    def job(term: Term):
        try:
            return plan_term(
                term, doc, scenario, backend,
                min_checks=min_checks, cache_dir=cache_dir,
            ), None
        except (PlanError, BackendError) as exc:
            if not best_effort:
                raise
            return None, str(exc)

    plans: list[AccountabilityPlan] = []
    if eligible:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            futures = [pool.submit(job, t) for t in eligible]
            for term, future in zip(eligible, futures):
                plan, error = future.result()
                if plan is None:
                    notices.append(
                        f"term {term.term_id} skipped: planning failed: {error}"
                    )
                else:
                    plans.append(plan)
    return plans, notices


def plan_to_json(plan: AccountabilityPlan, *, statement: str | None = None) -> dict:
    record = {"term_id": plan.term_id}
    if statement is not None:
        record["term"] = statement
    record[PLAN_CHECKS_KEY] = list(plan.checks)
    record["scenario_fingerprint"] = plan.scenario_fingerprint
    record["jurisdiction_used"] = plan.jurisdiction_used.value
    record["warnings"] = list(plan.warnings)
    return record


def plan_from_json(record: dict) -> AccountabilityPlan:
    return AccountabilityPlan(
        term_id=record["term_id"],
        checks=tuple(record[PLAN_CHECKS_KEY]),
        scenario_fingerprint=record["scenario_fingerprint"],
        jurisdiction_used=JurisdictionId(record["jurisdiction_used"]),
        warnings=tuple(record.get("warnings", ())),
    )
