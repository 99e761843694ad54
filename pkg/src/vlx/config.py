"""Toolkit configuration: one versioned JSON document.

Loading is all-or-nothing. Every problem is collected with its field path
(``noise.shift_low``, ``tasks.door.choices[1]``) and raised together as a
ConfigError; nothing is defaulted past an error.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping
from urllib.parse import urlparse

from .backend import ALL_CAPABILITIES, Backend, Capability, HttpBackend, MockBackend
from .backend.mock import DEFAULT_EMBED_DIM
from .errors import ConfigError, VlxError
from .extractors import DEFAULT_DIC_THRESHOLD, ChoiceSet, DecisionPolicy
from .recognition import (
    DEFAULT_RELATIONS,
    Kind,
    Method,
    RecognitionTask,
    RefinementStep,
    RelationLexicon,
    SuiteSettings,
)
from .variation import DEFAULT_ARTICLES, DEFAULT_SEED, NoiseConfig

SCHEMA_VERSION = 1
ENDPOINT_ENV = "VLX_BACKEND_ENDPOINT"

_TOP_KEYS = {
    "schema_version", "backend", "seed", "noise", "articles", "decision_policy",
    "itr_temperature", "dic_threshold", "relation_lexicon", "tasks", "workers",
}
_TASK_KEYS = {"kind", "method", "template", "choices", "phrase", "attribute", "object", "part", "objects", "steps"}


@dataclass(frozen=True)
class BackendConfig:
    type: str = "mock"
    fixtures: Path | None = None
    endpoint: str | None = None
    capabilities: frozenset = ALL_CAPABILITIES
    embed_dim: int = DEFAULT_EMBED_DIM
    timeout: float = 30.0

    def build(self) -> Backend:
        if self.type == "http":
            return HttpBackend(self.endpoint, capabilities=self.capabilities, timeout=self.timeout)
        if self.fixtures is None:
            return MockBackend((), capabilities=self.capabilities, embed_dim=self.embed_dim)
        return MockBackend.from_file(self.fixtures, capabilities=self.capabilities, embed_dim=self.embed_dim)


@dataclass(frozen=True)
class ToolkitConfig:
    backend: BackendConfig = BackendConfig()
    seed: int | None = None
    noise: NoiseConfig = NoiseConfig()
    articles: tuple[str, ...] = DEFAULT_ARTICLES
    decision_policy: DecisionPolicy = DecisionPolicy()
    itr_temperature: float = 1.0
    dic_threshold: float = DEFAULT_DIC_THRESHOLD
    relation_lexicon: RelationLexicon = RelationLexicon()
    tasks: Mapping[str, RecognitionTask | RefinementStep] = field(default_factory=dict)
    workers: int = 1

    def effective_seed(self, flag: int | None = None) -> int:
        """Seed precedence: command-line flag, then config, then the fixed default."""
        if flag is not None:
            return flag
        return self.seed if self.seed is not None else DEFAULT_SEED

    def noise_for(self, seed_flag: int | None = None) -> NoiseConfig:
        n = self.noise
        return NoiseConfig(n.shift_low, n.shift_high, n.n_variants, self.effective_seed(seed_flag))

    def settings(self, seed_flag: int | None = None) -> SuiteSettings:
        return SuiteSettings(
            noise=self.noise_for(seed_flag),
            articles=self.articles,
            policy=self.decision_policy,
            itr_temperature=self.itr_temperature,
            lexicon=self.relation_lexicon,
            workers=self.workers,
        )


class _Checker:
    def __init__(self):
        self.issues: list[tuple[str, str]] = []

    def fail(self, path: str, msg: str) -> None:
        self.issues.append((path, msg))

    def number(self, doc: Mapping, key: str, path: str, default, lo=-math.inf, hi=math.inf, integer=False):
        if key not in doc:
            return default
        v = doc[key]
        ok_type = isinstance(v, int) if integer else isinstance(v, (int, float))
        if isinstance(v, bool) or not ok_type or not math.isfinite(v):
            self.fail(path, f"expected {'an integer' if integer else 'a number'}, got {v!r}")
            return default
        if not lo <= v <= hi:
            self.fail(path, f"{v!r} outside [{lo}, {hi}]")
            return default
        return v

    def string(self, doc: Mapping, key: str, path: str, required=False):
        v = doc.get(key)
        if v is None:
            if required:
                self.fail(path, "required")
            return None
        if not isinstance(v, str) or not v.strip():
            self.fail(path, f"expected a non-empty string, got {v!r}")
            return None
        return v

    def strings(self, doc: Mapping, key: str, path: str, default, min_len=1):
        if key not in doc:
            return default
        v = doc[key]
        if not isinstance(v, list) or len(v) < min_len:
            self.fail(path, f"expected a list of at least {min_len} strings")
            return default
        bad = [i for i, s in enumerate(v) if not isinstance(s, str) or not s.strip()]
        for i in bad:
            self.fail(f"{path}[{i}]", "expected a non-empty string")
        return default if bad else tuple(v)

    def section(self, doc: Mapping, key: str, path: str) -> dict:
        v = doc.get(key, {})
        if not isinstance(v, dict):
            self.fail(path, "expected an object")
            return {}
        return v

    def unknown(self, doc: Mapping, allowed: set, path: str) -> None:
        for k in sorted(set(doc) - allowed):
            self.fail(f"{path}.{k}" if path else k, "unknown field")


def _parse_backend(c: _Checker, doc: dict, base_dir: Path, env: Mapping[str, str]) -> BackendConfig:
    c.unknown(doc, {"type", "fixtures", "endpoint", "capabilities", "embed_dim", "timeout"}, "backend")
    kind = doc.get("type", "mock")
    endpoint = env.get(ENDPOINT_ENV) or None
    if endpoint:
        kind = "http"
    if kind not in ("mock", "http"):
        c.fail("backend.type", f"expected 'mock' or 'http', got {kind!r}")
        return BackendConfig()
    caps = ALL_CAPABILITIES
    if "capabilities" in doc:
        raw = doc["capabilities"]
        try:
            caps = frozenset(Capability(x) for x in raw)
        except (TypeError, ValueError):
            c.fail("backend.capabilities", f"expected a subset of {sorted(x.value for x in Capability)}")
    embed_dim = c.number(doc, "embed_dim", "backend.embed_dim", DEFAULT_EMBED_DIM, lo=1, integer=True)
    timeout = c.number(doc, "timeout", "backend.timeout", 30.0, lo=1e-3)
    fixtures = None
    if kind == "mock":
        rel = c.string(doc, "fixtures", "backend.fixtures")
        if rel is not None:
            fixtures = (base_dir / rel).resolve()
            if not fixtures.is_file():
                c.fail("backend.fixtures", f"file not found: {fixtures}")
            else:
                try:
                    MockBackend.from_file(fixtures)
                except (ValueError, VlxError) as exc:
                    c.fail("backend.fixtures", f"unusable fixture file: {exc}")
    else:
        endpoint = endpoint or c.string(doc, "endpoint", "backend.endpoint", required=True)
        if endpoint is not None:
            parsed = urlparse(endpoint)
            if parsed.scheme not in ("http", "https") or not parsed.netloc:
                c.fail("backend.endpoint", f"not an http(s) URL: {endpoint!r}")
    return BackendConfig(kind, fixtures, endpoint, caps, embed_dim, timeout)


def _parse_choices(c: _Checker, raw, path: str) -> ChoiceSet | None:
    if not isinstance(raw, list) or not raw:
        c.fail(path, "expected a non-empty list of choices")
        return None
    phrases, tokens, custom = [], [], False
    for i, item in enumerate(raw):
        if isinstance(item, str):
            phrases.append(item)
            tokens.append(None)
        elif isinstance(item, dict) and isinstance(item.get("phrase"), str):
            phrases.append(item["phrase"])
            match = item.get("match")
            if match is not None and not (isinstance(match, list) and all(isinstance(m, str) for m in match)):
                c.fail(f"{path}[{i}].match", "expected a list of strings")
                return None
            tokens.append(match)
            custom = custom or match is not None
        else:
            c.fail(f"{path}[{i}]", "expected a string or {\"phrase\", \"match\"}")
            return None
    try:
        if custom:
            defaults = ChoiceSet(tuple(phrases)).match_tokens
            merged = tuple(frozenset(t) if t is not None else d for t, d in zip(tokens, defaults))
            return ChoiceSet(tuple(phrases), merged)
        return ChoiceSet(tuple(phrases))
    except VlxError as exc:
        c.fail(path, str(exc))
        return None


def _parse_task(c: _Checker, doc, path: str, allow_chain: bool = True):
    if not isinstance(doc, dict):
        c.fail(path, "expected an object")
        return None
    c.unknown(doc, _TASK_KEYS, path)
    kind = doc.get("kind")
    if kind == "chain":
        if not allow_chain:
            c.fail(f"{path}.kind", "chains cannot nest")
            return None
        steps = doc.get("steps")
        if not isinstance(steps, list) or not steps:
            c.fail(f"{path}.steps", "expected a non-empty list of tasks")
            return None
        parsed = [_parse_task(c, s, f"{path}.steps[{i}]", allow_chain=False) for i, s in enumerate(steps)]
        return None if any(p is None for p in parsed) else RefinementStep(tuple(parsed))
    try:
        kind = Kind(kind)
    except ValueError:
        c.fail(f"{path}.kind", f"expected one of {[k.value for k in Kind] + ['chain']}, got {kind!r}")
        return None
    try:
        method = Method(doc.get("method"))
    except ValueError:
        c.fail(f"{path}.method", f"expected one of {[m.value for m in Method]}, got {doc.get('method')!r}")
        return None
    choices = _parse_choices(c, doc["choices"], f"{path}.choices") if "choices" in doc else None
    objects = doc.get("objects")
    if objects is not None and not (
        isinstance(objects, list) and len(objects) == 2 and all(isinstance(o, str) and o for o in objects)
    ):
        c.fail(f"{path}.objects", "expected two object names")
        return None
    kwargs = dict(
        template=c.string(doc, "template", f"{path}.template"),
        phrase=c.string(doc, "phrase", f"{path}.phrase"),
        attribute=c.string(doc, "attribute", f"{path}.attribute"),
        object_name=c.string(doc, "object", f"{path}.object"),
        part_name=c.string(doc, "part", f"{path}.part"),
        objects=tuple(objects) if objects else None,
        name=path.rsplit(".", 1)[-1],
    )
    if "choices" in doc and choices is None:
        return None
    try:
        return RecognitionTask(kind, method, choices=choices, **kwargs)
    except VlxError as exc:
        c.fail(path, str(exc))
        return None


def parse_config(doc, base_dir: Path | str = ".", env: Mapping[str, str] | None = None) -> ToolkitConfig:
    env = os.environ if env is None else env
    base_dir = Path(base_dir)
    c = _Checker()
    if not isinstance(doc, dict):
        raise ConfigError([("", "config must be a JSON object")])
    if doc.get("schema_version") != SCHEMA_VERSION:
        c.fail("schema_version", f"expected {SCHEMA_VERSION}, got {doc.get('schema_version')!r}")
    c.unknown(doc, _TOP_KEYS, "")

    backend = _parse_backend(c, c.section(doc, "backend", "backend"), base_dir, env)
    seed = c.number(doc, "seed", "seed", None, lo=0, integer=True)

    nd = c.section(doc, "noise", "noise")
    c.unknown(nd, {"shift_low", "shift_high", "n_variants"}, "noise")
    low = c.number(nd, "shift_low", "noise.shift_low", -0.1, lo=-1.0, hi=1.0)
    high = c.number(nd, "shift_high", "noise.shift_high", 0.1, lo=-1.0, hi=1.0)
    n_var = c.number(nd, "n_variants", "noise.n_variants", 5, lo=1, hi=1000, integer=True)
    if low > high:
        c.fail("noise", "shift_low must not exceed shift_high")

    articles = c.strings(doc, "articles", "articles", DEFAULT_ARTICLES)

    pd = c.section(doc, "decision_policy", "decision_policy")
    c.unknown(pd, {"min_valid_fraction", "aliases"}, "decision_policy")
    mvf = c.number(pd, "min_valid_fraction", "decision_policy.min_valid_fraction", 0.5, lo=0.0, hi=1.0)
    aliases = pd.get("aliases", {})
    if not isinstance(aliases, dict):
        c.fail("decision_policy.aliases", "expected an object")
        aliases = {}
    for k, v in aliases.items():
        if v not in ("yes", "no"):
            c.fail(f"decision_policy.aliases.{k}", f"must map to 'yes' or 'no', not {v!r}")
    aliases = {" ".join(k.lower().split()): v for k, v in aliases.items()}

    temp = c.number(doc, "itr_temperature", "itr_temperature", 1.0, lo=1e-6, hi=1e6)
    dic = c.number(doc, "dic_threshold", "dic_threshold", DEFAULT_DIC_THRESHOLD, lo=-1.0, hi=1.0)
    workers = c.number(doc, "workers", "workers", 1, lo=1, hi=64, integer=True)

    lex_phrases = c.strings(doc, "relation_lexicon", "relation_lexicon", DEFAULT_RELATIONS)
    lexicon = RelationLexicon()
    try:
        lexicon = RelationLexicon(tuple(lex_phrases))
    except VlxError as exc:
        c.fail("relation_lexicon", str(exc))

    tasks = {}
    td = c.section(doc, "tasks", "tasks")
    for name, tdoc in td.items():
        t = _parse_task(c, tdoc, f"tasks.{name}")
        if t is not None:
            tasks[name] = t

    if c.issues:
        raise ConfigError(c.issues)
    return ToolkitConfig(
        backend=backend,
        seed=seed,
        noise=NoiseConfig(float(low), float(high), int(n_var), seed if seed is not None else DEFAULT_SEED),
        articles=tuple(articles),
        decision_policy=DecisionPolicy(float(mvf), aliases),
        itr_temperature=float(temp),
        dic_threshold=float(dic),
        relation_lexicon=lexicon,
        tasks=tasks,
        workers=int(workers),
    )


def load_config(path, env: Mapping[str, str] | None = None) -> ToolkitConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError([("", f"cannot read {path}: {exc}")]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([("", f"{path} is not valid JSON: {exc}")]) from exc
    return parse_config(doc, path.parent, env)


def default_config(env: Mapping[str, str] | None = None) -> ToolkitConfig:
    return parse_config({"schema_version": SCHEMA_VERSION}, ".", env)
