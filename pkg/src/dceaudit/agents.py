"""Choosers and the experiment runner.

Three kinds of chooser answer choice-set prompts:

* ``remote``: an OpenAI-style chat-completion endpoint, one self-contained
  request per choice set;
* ``simulated``: a utility maximiser with linear utility over the dummy-coded
  profile and optional standard Gumbel noise (so choices follow the MNL
  softmax);
* ``scripted``: replays canned replies from a file.

``run_experiment`` drives a chooser over a design and appends one JSON line
per choice set to a records file. Runs resume by skipping set ids already on
disk.
"""

from __future__ import annotations

import json
import logging
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import httpx
import numpy as np

from .inference import encode_profiles
from .prompts import PromptTemplate, parse_choice, prompt_sha256, render_prompt
from .schema import AttributeSchema, ChoiceSet

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
DEFAULT_API_KEY_ENV = "OPENAI_API_KEY"
NOISE_KINDS = ("gumbel", "none")


class CredentialError(RuntimeError):
    pass


class AgentConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

@dataclass
class RetryPolicy:
    max_attempts: int = 5
    backoff_base: float = 1.0
    backoff_ceiling: float = 60.0
    jitter: bool = True

    def delay(self, attempt: int, retry_after: Optional[float] = None) -> float:
        """Seconds to wait after failed attempt number ``attempt`` (1-based)."""
        d = min(self.backoff_ceiling, self.backoff_base * 2 ** (attempt - 1))
        if self.jitter:
            d *= random.uniform(0.5, 1.0)
        if retry_after is not None:
            d = max(d, min(retry_after, self.backoff_ceiling))
        return d


@dataclass
class RemoteConfig:
    model: str
    endpoint: str = DEFAULT_ENDPOINT
    params: dict = field(default_factory=dict)
    api_key_env: str = DEFAULT_API_KEY_ENV
    max_in_flight: int = 4
    timeout: float = 60.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise AgentConfigError("max_in_flight must be >= 1")
        if isinstance(self.retry, dict):
            self.retry = RetryPolicy(**self.retry)


@dataclass
class SimulatedConfig:
    # coefficient vector in schema column order, or {attribute: {level: value}}
    beta: object
    noise: str = "gumbel"
    seed: int = 0

    def __post_init__(self):
        if self.noise not in NOISE_KINDS:
            raise AgentConfigError(f"noise must be one of {NOISE_KINDS}")


@dataclass
class ScriptedConfig:
    replies_path: str


@dataclass
class AgentConfig:
    kind: str
    remote: Optional[RemoteConfig] = None
    simulated: Optional[SimulatedConfig] = None
    scripted: Optional[ScriptedConfig] = None

    def __post_init__(self):
        slots = {"remote": self.remote, "simulated": self.simulated, "scripted": self.scripted}
        if self.kind not in slots:
            raise AgentConfigError(f"unknown agent kind {self.kind!r}")
        filled = [k for k, v in slots.items() if v is not None]
        if filled != [self.kind]:
            raise AgentConfigError(f"agent kind {self.kind!r} needs exactly its own settings, got {filled}")

    def snapshot(self) -> dict:
        """Config as plain data, safe to persist (holds no secrets)."""
        data = {"kind": self.kind}
        if self.remote is not None:
            rem = asdict(self.remote)
            rem["params"] = {k: ("<redacted>" if _looks_secret(k) else v)
                             for k, v in rem["params"].items()}
            data["remote"] = rem
        if self.simulated is not None:
            beta = self.simulated.beta
            if isinstance(beta, np.ndarray):
                beta = beta.tolist()
            data["simulated"] = {"beta": beta, "noise": self.simulated.noise,
                                 "seed": self.simulated.seed}
        if self.scripted is not None:
            data["scripted"] = asdict(self.scripted)
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "AgentConfig":
        kind = data.get("kind")
        kw = {}
        try:
            if "remote" in data:
                kw["remote"] = RemoteConfig(**data["remote"])
            if "simulated" in data:
                kw["simulated"] = SimulatedConfig(**data["simulated"])
            if "scripted" in data:
                kw["scripted"] = ScriptedConfig(**data["scripted"])
        except TypeError as exc:
            raise AgentConfigError(str(exc)) from exc
        return cls(kind=kind, **kw)


def _looks_secret(key: str) -> bool:
    k = key.lower()
    return any(s in k for s in ("key", "token", "secret", "password", "authorization"))


def load_agent_config(path: str | Path) -> AgentConfig:
    return AgentConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# simulated chooser

def beta_vector(schema: AttributeSchema, beta) -> np.ndarray:
    """Coerce ``beta`` to a vector in the schema's column order.

    Accepts a sequence of length P or a nested mapping
    ``{attribute: {level text: value}}`` covering every non-reference level.
    """
    labels = schema.parameter_labels()
    if isinstance(beta, Mapping):
        expected: dict[str, set] = {}
        for attr, level in labels:
            expected.setdefault(attr, set()).add(level)
        unknown = set(beta) - set(expected)
        if unknown:
            raise AgentConfigError(f"beta names unknown attributes: {sorted(unknown)}")
        out = []
        for attr, level in labels:
            levels = beta.get(attr, {})
            extra = set(levels) - expected[attr]
            if extra:
                raise AgentConfigError(f"beta for {attr!r} names non-coefficient levels: {sorted(extra)}")
            if level not in levels:
                raise AgentConfigError(f"beta lacks a value for {attr!r} = {level!r}")
            out.append(float(levels[level]))
        return np.array(out)
    vec = np.asarray(beta, dtype=float).ravel()
    if vec.shape != (len(labels),):
        raise AgentConfigError(f"beta has {vec.size} entries, schema has {len(labels)} coefficients")
    return vec


def simulate_choice(choice_set: ChoiceSet, beta, schema: AttributeSchema, noise: str = "gumbel",
                    rng: Optional[np.random.Generator] = None) -> int:
    """Index of the profile with the highest (noisy) utility.

    With ``noise="none"`` ties go to the lowest index.
    """
    b = beta_vector(schema, beta)
    util = encode_profiles(choice_set.profiles, schema) @ b
    if noise == "gumbel":
        rng = rng if rng is not None else np.random.default_rng()
        util = util + rng.gumbel(size=util.shape)
    elif noise != "none":
        raise AgentConfigError(f"unknown noise kind {noise!r}")
    return int(np.argmax(util))


def simulate_choices(X: np.ndarray, beta: np.ndarray, noise: str = "gumbel",
                     rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Vectorised ``simulate_choice`` over covariates of shape (S, J, P)."""
    util = np.asarray(X) @ np.asarray(beta, dtype=float)
    if noise == "gumbel":
        rng = rng if rng is not None else np.random.default_rng()
        util = util + rng.gumbel(size=util.shape)
    elif noise != "none":
        raise AgentConfigError(f"unknown noise kind {noise!r}")
    return np.argmax(util, axis=1)


def _set_rng(seed: int, set_id: int) -> np.random.Generator:
    # keyed per set so resumed or reordered runs reproduce the same choices
    return np.random.default_rng([seed, set_id])


# ---------------------------------------------------------------------------
# records

@dataclass
class ChoiceRecord:
    set_id: int
    prompt_sha256: str
    raw_reply: Optional[str]
    chosen_index: Optional[int]
    attempts: int
    latency_s: float
    agent_id: str
    error: Optional[str] = None

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: Mapping) -> "ChoiceRecord":
        return cls(set_id=int(data["set_id"]), prompt_sha256=data["prompt_sha256"],
                   raw_reply=data["raw_reply"], chosen_index=data["chosen_index"],
                   attempts=data["attempts"], latency_s=data["latency_s"],
                   agent_id=data["agent_id"], error=data.get("error"))


def read_records(path: str | Path) -> list[ChoiceRecord]:
    """Load a records file; a truncated final line (interrupted write) is skipped."""
    path = Path(path)
    if not path.exists():
        return []
    lines = path.read_text(encoding="utf-8").splitlines()
    out = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            out.append(ChoiceRecord.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError):
            if i == len(lines) - 1:
                log.warning("%s: ignoring truncated final line", path)
                continue
            raise ValueError(f"{path}:{i + 1}: malformed record")
    return out


def _repair_tail(path: Path) -> None:
    """Drop a partial last line so appends start on a fresh line."""
    if not path.exists():
        return
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        path.write_bytes(data[: data.rfind(b"\n") + 1])


def compact_records(path: str | Path) -> None:
    """Rewrite a records file ordered by set id."""
    recs = sorted(read_records(path), key=lambda r: r.set_id)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for r in recs:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False) + "\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# choosers

class SimulatedChooser:
    def __init__(self, cfg: SimulatedConfig, schema: AttributeSchema):
        self.cfg = cfg
        self.schema = schema
        self.beta = beta_vector(schema, cfg.beta)
        self.agent_id = f"simulated:{cfg.noise}:seed={cfg.seed}"

    def reply(self, choice_set: ChoiceSet, prompt: str):
        k = simulate_choice(choice_set, self.beta, self.schema, self.cfg.noise,
                            _set_rng(self.cfg.seed, choice_set.id))
        return f"Case {k + 1}", 1, None


class ScriptedChooser:
    """Replays replies from a JSONL file keyed by set id, or plain text lines.

    Plain text files are consumed in design order and cycled when exhausted.
    """

    def __init__(self, cfg: ScriptedConfig, design: Sequence[ChoiceSet]):
        path = Path(cfg.replies_path)
        self.agent_id = f"scripted:{path.name}"
        text = path.read_text(encoding="utf-8")
        self.by_id: dict[int, str] = {}
        if path.suffix == ".jsonl":
            for line in text.splitlines():
                if line.strip():
                    obj = json.loads(line)
                    self.by_id[int(obj["set_id"])] = obj["reply"]
        else:
            lines = text.splitlines()
            if not lines:
                raise AgentConfigError(f"{path} has no replies")
            for pos, cs in enumerate(design):
                self.by_id[cs.id] = lines[pos % len(lines)]

    def reply(self, choice_set: ChoiceSet, prompt: str):
        if choice_set.id not in self.by_id:
            return None, 0, "no scripted reply"
        return self.by_id[choice_set.id], 1, None


class RemoteChooser:
    """Chat-completion client: one stateless request per choice set."""

    def __init__(self, cfg: RemoteConfig, client: Optional[httpx.Client] = None,
                 sleep: Callable[[float], None] = time.sleep):
        key = os.environ.get(cfg.api_key_env)
        if not key:
            raise CredentialError(f"environment variable {cfg.api_key_env} is not set")
        self.cfg = cfg
        self._headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        self._client = client or httpx.Client(timeout=cfg.timeout)
        self._sleep = sleep
        self.agent_id = f"remote:{cfg.model}"

    def request_body(self, prompt: str) -> dict:
        body = {"model": self.cfg.model, "messages": [{"role": "user", "content": prompt}]}
        body.update(self.cfg.params)
        return body

    def reply(self, choice_set: ChoiceSet, prompt: str):
        body = self.request_body(prompt)
        policy = self.cfg.retry
        last_err = None
        for attempt in range(1, policy.max_attempts + 1):
            retry_after = None
            try:
                resp = self._client.post(self.cfg.endpoint, json=body, headers=self._headers)
            except httpx.TransportError as exc:
                last_err = f"transport error: {type(exc).__name__}"
            else:
                if resp.status_code == 200:
                    try:
                        content = resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError):
                        return None, attempt, "malformed response body"
                    return content, attempt, None
                last_err = f"HTTP {resp.status_code}"
                if resp.status_code != 429 and resp.status_code < 500:
                    return None, attempt, last_err
                ra = resp.headers.get("retry-after")
                if ra:
                    try:
                        retry_after = float(ra)
                    except ValueError:
                        pass
            if attempt < policy.max_attempts:
                self._sleep(policy.delay(attempt, retry_after))
        return None, policy.max_attempts, f"retries exhausted ({last_err})"


def make_chooser(agent: AgentConfig, schema: AttributeSchema, design: Sequence[ChoiceSet],
                 http_client: Optional[httpx.Client] = None,
                 sleep: Callable[[float], None] = time.sleep):
    if agent.kind == "simulated":
        return SimulatedChooser(agent.simulated, schema)
    if agent.kind == "scripted":
        return ScriptedChooser(agent.scripted, design)
    return RemoteChooser(agent.remote, http_client, sleep)


# ---------------------------------------------------------------------------
# runner

@dataclass
class RunSummary:
    n_sets: int
    n_new: int
    n_skipped: int
    n_effective: int
    n_errors: int
    response_rate: float


def _one(chooser, cs: ChoiceSet, schema, template) -> ChoiceRecord:
    prompt = render_prompt(cs, schema, template)
    t0 = time.perf_counter()
    raw, attempts, err = chooser.reply(cs, prompt)
    latency = time.perf_counter() - t0
    chosen = None if raw is None else parse_choice(raw, cs.j_profiles, cs.id).chosen_index
    return ChoiceRecord(cs.id, prompt_sha256(prompt), raw, chosen, attempts,
                        round(latency, 6), chooser.agent_id, err)


def run_manifest(agent: AgentConfig, template: PromptTemplate, schema: AttributeSchema,
                 design_ref: Optional[Mapping] = None) -> dict:
    return {
        "design": dict(design_ref or {}),
        "schema_version": schema.version,
        "agent": agent.snapshot(),
        "template_sha256": template.sha256,
        "started_at": datetime.now(timezone.utc).isoformat(),
    }


def run_experiment(design: Sequence[ChoiceSet], agent: AgentConfig, template: PromptTemplate,
                   schema: AttributeSchema, out: str | Path, *, resume: bool = True,
                   http_client: Optional[httpx.Client] = None,
                   sleep: Callable[[float], None] = time.sleep,
                   manifest_path: str | Path | None = None,
                   design_ref: Optional[Mapping] = None) -> RunSummary:
    """Collect one record per choice set into the JSONL file ``out``.

    Records already present in ``out`` are kept and their sets skipped when
    ``resume`` is true; otherwise the file is started afresh. Remote agents
    dispatch up to ``max_in_flight`` requests at once, and this function is
    the only writer of the file.
    """
    if not design:
        raise ValueError("design is empty")
    out = Path(out)
    # fails fast on missing credentials, before any request
    chooser = make_chooser(agent, schema, design, http_client, sleep)

    if not resume and out.exists():
        out.unlink()
    _repair_tail(out)
    done = {r.set_id for r in read_records(out)}
    valid_ids = {cs.id for cs in design}
    todo = [cs for cs in design if cs.id not in done]

    manifest = run_manifest(agent, template, schema, design_ref)
    n_new = 0
    with open(out, "a", encoding="utf-8") as fh:
        def emit(rec: ChoiceRecord):
            nonlocal n_new
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")
            fh.flush()
            n_new += 1

        if agent.kind == "remote" and agent.remote.max_in_flight > 1:
            with ThreadPoolExecutor(max_workers=agent.remote.max_in_flight) as pool:
                futures = [pool.submit(_one, chooser, cs, schema, template) for cs in todo]
                for fut in as_completed(futures):
                    emit(fut.result())
        else:
            for cs in todo:
                emit(_one(chooser, cs, schema, template))

    records = [r for r in read_records(out) if r.set_id in valid_ids]
    n_eff = sum(r.chosen_index is not None for r in records)
    summary = RunSummary(
        n_sets=len(design), n_new=n_new, n_skipped=len(design) - len(todo), n_effective=n_eff,
        n_errors=sum(r.error is not None for r in records),
        response_rate=n_eff / len(records) if records else 0.0,
    )
    if manifest_path is not None:
        manifest["finished_at"] = datetime.now(timezone.utc).isoformat()
        manifest["summary"] = asdict(summary)
        Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return summary
