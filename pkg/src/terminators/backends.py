"""Text-generation backends behind one interface.

Two implementations: a live chat-completion HTTP client, and a scripted
backend that replays canned responses so every pipeline stage can run
offline and deterministically. Structured-output extraction and response
caching live here too, since both are properties of the backend boundary.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger(__name__)

SCHEMA_TERM_LIST = "term_list"
SCHEMA_VERIFICATION = "verification"
SCHEMA_PLAN = "plan"
SCHEMAS = (SCHEMA_TERM_LIST, SCHEMA_VERIFICATION, SCHEMA_PLAN)

VERIFICATION_LABELS = ("Supported", "Contradicted", "Unverifiable")

PLAN_CHECKS_KEY = "possible_accountability_checks"

# What the scripted backend says when not strict and nothing matches.
DEFAULT_REFUSAL = "I cannot help with that request."

# Matchers with this prefix compare against the request fingerprint
# instead of doing a substring test.
FINGERPRINT_MATCH_PREFIX = "fingerprint:"

FORMAT_REMINDERS = {
    SCHEMA_TERM_LIST: (
        "Reminder: respond with exactly one JSON array of term objects, "
        'each with the fields "term", "source", and "applicable_to". '
        "Output the JSON array and nothing else."
    ),
    SCHEMA_VERIFICATION: (
        "Reminder: respond with exactly one JSON object with the fields "
        '"verification" (one of "Supported", "Contradicted", "Unverifiable") '
        'and "justification". Output the JSON object and nothing else.'
    ),
    SCHEMA_PLAN: (
        "Reminder: respond with exactly one JSON object with the field "
        f'"{PLAN_CHECKS_KEY}" holding an array of strings. '
        "Output the JSON object and nothing else."
    ),
}


class BackendError(Exception):
    """Backend-boundary failure; kind distinguishes auth, transient, etc."""

    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(message)


@dataclass(frozen=True)
class BackendRequest:
    role_prompt: str
    user_prompt: str
    response_schema: str
    temperature: float = 0.0
    max_output_tokens: int = 2048

    def __post_init__(self):
        if self.response_schema not in SCHEMAS:
            raise ValueError(f"unknown response schema {self.response_schema!r}")
        if not (0.0 <= self.temperature <= 1.0):
            raise ValueError("temperature must be in [0, 1]")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")

    @property
    def request_fingerprint(self) -> str:
        """Deterministic digest of the request content; cache key and script
        matcher target. Contains no credential material."""
        payload = json.dumps(
            {
                "role_prompt": self.role_prompt,
                "user_prompt": self.user_prompt,
                "response_schema": self.response_schema,
                "temperature": self.temperature,
                "max_output_tokens": self.max_output_tokens,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class BackendResponse:
    raw_text: str
    parsed: object | None
    parse_error: str | None
    usage: dict
    latency_ms: float
    backend_id: str


def _schema_shape_ok(value, schema: str) -> str | None:
    """None when the value fits the schema's outer shape, else the problem."""
    if schema == SCHEMA_TERM_LIST:
        if not isinstance(value, list):
            return "expected a JSON array of term objects"
        for item in value:
            if not isinstance(item, dict):
                return "term array elements must be objects"
        return None
    if schema == SCHEMA_VERIFICATION:
        if not isinstance(value, dict):
            return "expected a JSON object"
        label = value.get("verification")
        if label not in VERIFICATION_LABELS:
            return f"field 'verification' must be one of {VERIFICATION_LABELS}"
        if not isinstance(value.get("justification"), str):
            return "field 'justification' must be a string"
        return None
    if schema == SCHEMA_PLAN:
        if not isinstance(value, dict):
            return "expected a JSON object"
        checks = value.get(PLAN_CHECKS_KEY)
        if not isinstance(checks, list) or not all(
            isinstance(c, str) for c in checks
        ):
            return f"field {PLAN_CHECKS_KEY!r} must be an array of strings"
        return None
    raise ValueError(f"unknown schema {schema!r}")


def extract_structured_value(raw_text: str, schema: str):
    """Pull exactly one schema-shaped JSON value out of model output.

    Scans for every top-level JSON object/array in the text (which makes
    code fences and surrounding prose harmless), keeps those matching the
    schema shape, and requires exactly one survivor.
    """
    decoder = json.JSONDecoder()
    candidates = []
    pos = 0
    while True:
        starts = [i for i in (raw_text.find("{", pos), raw_text.find("[", pos))
                  if i != -1]
        if not starts:
            break
        idx = min(starts)
        try:
            value, end = decoder.raw_decode(raw_text, idx)
        except json.JSONDecodeError:
            pos = idx + 1
            continue
        candidates.append(value)
        pos = end

    matches = [v for v in candidates if _schema_shape_ok(v, schema) is None]
    if not matches:
        if candidates:
            raise ValueError(_schema_shape_ok(candidates[0], schema))
        raise ValueError(f"no JSON value of schema {schema!r} found in output")
    if len(matches) > 1:
        raise ValueError(f"multiple {schema!r} values found in output")
    return matches[0]


def _attach_parse(raw_text: str, schema: str, usage: dict, latency_ms: float,
                  backend_id: str) -> BackendResponse:
    try:
        parsed = extract_structured_value(raw_text, schema)
        parse_error = None
    except ValueError as exc:
        parsed = None
        parse_error = str(exc)
    return BackendResponse(
        raw_text=raw_text,
        parsed=parsed,
        parse_error=parse_error,
        usage=usage,
        latency_ms=latency_ms,
        backend_id=backend_id,
    )


def _estimated_usage(req: BackendRequest, raw_text: str) -> dict:
    # Rough chars/4 token estimate; keeps scripted usage deterministic.
    prompt_chars = len(req.role_prompt) + len(req.user_prompt)
    return {
        "input_tokens": prompt_chars // 4,
        "output_tokens": len(raw_text) // 4,
    }


class Backend:
    """Interface: generate one response for one request."""

    backend_id: str = "backend"

    def generate(self, req: BackendRequest) -> BackendResponse:
        raise NotImplementedError


@dataclass(frozen=True)
class ScriptEntry:
    match: str
    response: str


class ScriptedBackend(Backend):
    """Replays canned responses chosen by ordered matchers.

    A matcher is a substring tested against the concatenated role and user
    prompts, or ``fingerprint:<hex>`` tested against the request fingerprint.
    First matching entry wins. Strict mode turns an unmatched request into an
    error; otherwise the backend answers with DEFAULT_REFUSAL.
    """

    backend_id = "scripted"

    def __init__(self, entries: list[ScriptEntry], *, strict: bool = True):
        self.entries = list(entries)
        self.strict = strict
        self.calls: list[str] = []
        self._lock = threading.Lock()

    def _select(self, req: BackendRequest) -> str | None:
        haystack = req.role_prompt + "\n" + req.user_prompt
        for entry in self.entries:
            if entry.match.startswith(FINGERPRINT_MATCH_PREFIX):
                want = entry.match[len(FINGERPRINT_MATCH_PREFIX):]
                if req.request_fingerprint == want:
                    return entry.response
            elif entry.match in haystack:
                return entry.response
        return None

    def generate(self, req: BackendRequest) -> BackendResponse:
        with self._lock:
            self.calls.append(req.request_fingerprint)
        raw_text = self._select(req)
        if raw_text is None:
            if self.strict:
                raise BackendError(
                    "unmatched",
                    "no script entry matches request "
                    f"{req.request_fingerprint[:12]} ({req.response_schema})",
                )
            raw_text = DEFAULT_REFUSAL
        return _attach_parse(
            raw_text,
            req.response_schema,
            _estimated_usage(req, raw_text),
            0.0,
            self.backend_id,
        )


def load_script(path) -> ScriptedBackend:
    """Load a script file: a JSON array of {match, response_file} entries,
    response paths relative to the script file."""
    script_path = Path(path)
    data = json.loads(script_path.read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ValueError(f"{script_path}: script must be a JSON array")
    entries = []
    for i, item in enumerate(data):
        if not isinstance(item, dict) or "match" not in item or "response_file" not in item:
            raise ValueError(
                f"{script_path}: entry {i} must be an object with "
                "'match' and 'response_file'"
            )
        response_path = script_path.parent / item["response_file"]
        entries.append(
            ScriptEntry(match=item["match"],
                        response=response_path.read_text(encoding="utf-8"))
        )
    return ScriptedBackend(entries)


class LiveBackend(Backend):
    """Chat-completion HTTP client.

    The credential is read from an environment variable at call time and
    never logged or embedded in fingerprints. Transient failures (429, 5xx,
    timeouts) retry with exponential backoff.
    """

    def __init__(
        self,
        model: str,
        endpoint: str,
        *,
        api_key_env: str = "TERMINATORS_API_KEY",
        max_attempts: int = 4,
        timeout_s: float = 60.0,
        backoff_base_s: float = 1.0,
        max_concurrency: int = 4,
    ):
        self.model = model
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.max_attempts = max_attempts
        self.timeout_s = timeout_s
        self.backoff_base_s = backoff_base_s
        self.backend_id = f"live:{model}"
        self._semaphore = threading.Semaphore(max_concurrency)

    def generate(self, req: BackendRequest) -> BackendResponse:
        import requests

        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise BackendError(
                "auth", f"credential variable {self.api_key_env} is not set"
            )
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.role_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        headers = {"Authorization": f"Bearer {api_key}"}

        last_failure = "no attempt made"
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_base_s * (2 ** (attempt - 1)))
            started = time.monotonic()
            try:
                with self._semaphore:
                    resp = requests.post(
                        self.endpoint,
                        json=payload,
                        headers=headers,
                        timeout=self.timeout_s,
                    )
            except requests.RequestException as exc:
                last_failure = f"request failed: {type(exc).__name__}"
                log.warning("backend attempt %d/%d failed: %s",
                            attempt + 1, self.max_attempts, last_failure)
                continue
            latency_ms = (time.monotonic() - started) * 1000.0
            if resp.status_code in (401, 403):
                raise BackendError("auth", f"endpoint rejected credential "
                                           f"(HTTP {resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_failure = f"HTTP {resp.status_code}"
                log.warning("backend attempt %d/%d failed: %s",
                            attempt + 1, self.max_attempts, last_failure)
                continue
            if resp.status_code != 200:
                raise BackendError(
                    "request", f"unexpected HTTP {resp.status_code}: "
                               f"{resp.text[:200]}"
                )
            try:
                data = resp.json()
                raw_text = data["choices"][0]["message"]["content"]
            except (ValueError, LookupError, TypeError) as exc:
                raise BackendError(
                    "request", f"unexpected response body shape: {exc}"
                ) from exc
            usage = data.get("usage") or _estimated_usage(req, raw_text)
            return _attach_parse(raw_text, req.response_schema, usage,
                                 latency_ms, self.backend_id)

        raise BackendError(
            "transient",
            f"gave up after {self.max_attempts} attempts; last: {last_failure}",
        )


def complete(backend: Backend, req: BackendRequest) -> BackendResponse:
    """One generation with structured output, allowing a single retry that
    restates the format when the first response does not parse."""
    resp = backend.generate(req)
    if resp.parsed is not None:
        return resp
    reminder = FORMAT_REMINDERS[req.response_schema]
    retry_req = BackendRequest(
        role_prompt=req.role_prompt,
        user_prompt=req.user_prompt + "\n\n" + reminder,
        response_schema=req.response_schema,
        temperature=req.temperature,
        max_output_tokens=req.max_output_tokens,
    )
    retry = backend.generate(retry_req)
    if retry.parsed is not None:
        return retry
    raise BackendError(
        "malformed_output",
        f"unparseable {req.response_schema} output after format reminder: "
        f"{retry.parse_error}",
    )


def _response_to_cache_entry(req: BackendRequest, resp: BackendResponse) -> dict:
    return {
        "request": {
            "role_prompt": req.role_prompt,
            "user_prompt": req.user_prompt,
            "response_schema": req.response_schema,
            "temperature": req.temperature,
            "max_output_tokens": req.max_output_tokens,
        },
        "response": {
            "raw_text": resp.raw_text,
            "usage": resp.usage,
            "latency_ms": resp.latency_ms,
            "backend_id": resp.backend_id,
        },
    }


def cached_complete(backend: Backend, req: BackendRequest,
                    cache_dir) -> BackendResponse:
    """complete() with a content-addressed response cache.

    One JSON file per request fingerprint, written atomically; a hit replays
    the stored raw text without touching the backend, so a cache populated
    by a live run makes later runs backend-free. Cache trouble degrades to
    an uncached call with a warning, never an error.
    """
    cache_path = Path(cache_dir) / f"{req.request_fingerprint}.json"
    try:
        if cache_path.exists():
            entry = json.loads(cache_path.read_text(encoding="utf-8"))
            stored = entry["response"]
            return _attach_parse(
                stored["raw_text"],
                req.response_schema,
                stored["usage"],
                0.0,
                stored["backend_id"],
            )
    except (OSError, ValueError, KeyError) as exc:
        log.warning("unreadable cache entry %s: %s", cache_path.name, exc)

    resp = complete(backend, req)
    try:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        tmp_path = cache_path.with_name(
            f".{cache_path.name}.{os.getpid()}.{threading.get_ident()}.tmp"
        )
        tmp_path.write_text(
            json.dumps(_response_to_cache_entry(req, resp),
                       indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        os.replace(tmp_path, cache_path)
    except OSError as exc:
        log.warning("cache write failed for %s: %s", cache_path.name, exc)
    return resp
