"""LLM-backed minority-class sample generation with quality gating.

Candidates come from a chat-completion client (a deterministic template
stub for offline runs, or an HTTP backend).  Each candidate is scored for
label consistency (fraction of its nearest labeled neighbors sharing its
exact label vector) and diversity (one minus mean cosine similarity to
those neighbors); a weighted score against a threshold decides keep/drop.

Candidate scoring is embarrassingly parallel over candidates and pure:
identical candidates and settings always produce identical verdicts.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .config import AugmentConfig
from .data import Dataset, DatasetKind, Sample, check_label_vector
from .encoding import DocumentEncoder, tokenize
from .errors import BackendError, DataFormatError

DEFAULT_BALANCE_DIRECTIVE = (
    "Across the whole set, keep the number of true instances of each label "
    "as close to equal as possible."
)


@dataclass(frozen=True)
class GenerationBatchSpec:
    few_shot: tuple[Sample, ...]
    requested_count: int
    classes: tuple[str, ...]
    balance_directive: str = DEFAULT_BALANCE_DIRECTIVE


@dataclass
class AugCandidate:
    question_text: str
    claimed_label: tuple[int, ...]
    embedding: np.ndarray | None = None
    neighbor_ids: tuple[str, ...] = ()
    neighbor_sims: tuple[float, ...] = ()
    consistency: float | None = None
    diversity: float | None = None
    score: float | None = None
    kept: bool = False
    provenance: dict = field(default_factory=dict)

    def candidate_id(self, fallback_index: int = 0) -> str:
        prompt_hash = self.provenance.get("prompt_hash", "none")[:8]
        batch = self.provenance.get("batch", 0)
        item = self.provenance.get("item", fallback_index)
        return f"aug-{prompt_hash}-{batch:03d}-{item:03d}"


def _few_shot_record(sample: Sample, classes: tuple[str, ...]) -> dict:
    best = sample.best_index
    return {
        "question": sample.question_text,
        "best_answer": sample.answers[best].text if best is not None else None,
        "labels": {
            name: bool(v) for name, v in zip(classes, sample.label or ())
        },
    }


def build_prompt(spec: GenerationBatchSpec) -> str:
    """Deterministic prompt: context, instruction, few-shot block, count."""
    if not spec.few_shot:
        raise DataFormatError("few-shot example list must be non-empty")
    if spec.requested_count < 1:
        raise DataFormatError("requested_count must be >= 1")
    few_shot_json = json.dumps(
        [_few_shot_record(s, spec.classes) for s in spec.few_shot],
        ensure_ascii=False,
        indent=2,
        sort_keys=True,
    )
    label_list = ", ".join(spec.classes)
    return (
        "Context\n"
        "You are a data generator for an online health question community. "
        "Each few-shot sample below pairs a question with its best answer and "
        f"binary support-need labels: {label_list}. Produce brand-new labeled "
        "questions of the same shape.\n"
        "\n"
        "Instruction\n"
        f"Generate exactly {spec.requested_count} new samples. Requirements:\n"
        f"1. {spec.balance_directive}\n"
        "2. The labels must never all be true in the same sample.\n"
        "3. Every sample must be novel: do not rephrase or copy the few-shot "
        "samples; introduce new scenarios and phrasings.\n"
        "4. Keep each question realistic and of high quality for an online "
        "health community.\n"
        "Respond with a JSON array; each element is an object with fields "
        '"question" (string) and "labels" (object mapping each label name to '
        "true or false).\n"
        "\n"
        "Few-shot Samples\n"
        f"{few_shot_json}\n"
        "\n"
        f"{spec.requested_count} new samples:\n"
    )


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass
class ParsedGeneration:
    candidates: list[AugCandidate]
    skipped_malformed: int = 0
    rejected_all_true: int = 0


def parse_generated(
    response_text: str, classes: tuple[str, ...]
) -> ParsedGeneration:
    """Parse an LLM response into pre-scoring candidates.

    Accepts a JSON array or one JSON object per line.  Malformed items are
    skipped and counted; items with every label true violate the prompt
    contract and are rejected.  A response with zero parseable items is a
    batch error; the raw text rides on the exception for audit.
    """
    items: list = []
    try:
        doc = json.loads(response_text)
        if isinstance(doc, list):
            items = doc
        elif isinstance(doc, dict):
            items = [doc]
    except json.JSONDecodeError:
        for line in response_text.splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                items.append(json.loads(line))
            except json.JSONDecodeError:
                items.append(None)  # counted as malformed below

    parsed = ParsedGeneration(candidates=[])
    for item in items:
        if not isinstance(item, dict):
            parsed.skipped_malformed += 1
            continue
        question = item.get("question")
        labels_raw = item.get("labels")
        if not isinstance(question, str) or not question.strip():
            parsed.skipped_malformed += 1
            continue
        if not isinstance(labels_raw, dict):
            parsed.skipped_malformed += 1
            continue
        try:
            vec = check_label_vector(
                [int(bool(labels_raw.get(name, False))) for name in classes],
                len(classes),
            )
        except DataFormatError:
            parsed.skipped_malformed += 1
            continue
        if all(v == 1 for v in vec):
            parsed.rejected_all_true += 1
            continue
        parsed.candidates.append(
            AugCandidate(question_text=question.strip(), claimed_label=vec)
        )
    if not parsed.candidates:
        error = BackendError(
            "generation batch contained no parseable samples "
            f"({parsed.skipped_malformed} malformed, "
            f"{parsed.rejected_all_true} all-true)"
        )
        error.raw_response = response_text
        raise error
    return parsed


class LLMClient:
    """Port: maps a prompt to raw response text."""

    def generate(self, prompt: str) -> str:
        raise NotImplementedError


class StubLLMClient(LLMClient):
    """Deterministic offline generator.

    Plays the LLM role by reading the few-shot block out of the prompt,
    pooling tokens per label, and recombining them into new questions.
    Label combinations are chosen greedily to keep per-label true counts
    balanced, matching the prompt's balance directive.  Output depends
    only on (prompt bytes, seed).
    """

    def __init__(self, seed: int = 0):
        self.seed = seed

    def generate(self, prompt: str) -> str:
        few_shot, count = self._read_prompt(prompt)
        class_names = sorted(few_shot[0]["labels"].keys()) if few_shot else []
        pools: dict[str, list[str]] = {name: [] for name in class_names}
        neutral: list[str] = []
        for record in few_shot:
            tokens = tokenize(record.get("question", ""))
            active = [n for n in class_names if record["labels"].get(n)]
            for name in active:
                pools[name].extend(tokens)
            if not active:
                neutral.extend(tokens)
        neutral = neutral or [t for pool in pools.values() for t in pool]

        digest = hashlib.blake2b(
            prompt.encode("utf-8") + self.seed.to_bytes(8, "big", signed=True),
            digest_size=8,
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))

        combos = self._allowed_combos(len(class_names))
        true_counts = np.zeros(len(class_names), dtype=np.int64)
        items = []
        for _ in range(count):
            combo = self._pick_balanced(combos, true_counts, rng)
            true_counts += np.array(combo)
            words: list[str] = []
            for c, name in enumerate(class_names):
                if combo[c]:
                    pool = pools[name] or neutral or [name]
                    take = min(len(pool), int(rng.integers(3, 6)))
                    words.extend(rng.choice(pool, size=take, replace=True).tolist())
            if not words:
                pool = neutral or ["health", "question"]
                words.extend(rng.choice(pool, size=min(len(pool), 5), replace=True).tolist())
            rng.shuffle(words)
            items.append(
                {
                    "question": " ".join(words).capitalize() + "?",
                    "labels": {n: bool(combo[c]) for c, n in enumerate(class_names)},
                }
            )
        return json.dumps(items, ensure_ascii=False, indent=2, sort_keys=True)

    @staticmethod
    def _allowed_combos(n_classes: int) -> list[tuple[int, ...]]:
        combos = []
        for bits in range(1, 2**n_classes):
            combo = tuple((bits >> c) & 1 for c in range(n_classes))
            if sum(combo) == n_classes and n_classes > 1:
                continue  # all-true is forbidden by the prompt contract
            combos.append(combo)
        return combos

    @staticmethod
    def _pick_balanced(
        combos: list[tuple[int, ...]],
        true_counts: np.ndarray,
        rng: np.random.Generator,
    ) -> tuple[int, ...]:
        best_spread: float | None = None
        best: list[tuple[int, ...]] = []
        for combo in combos:
            after = true_counts + np.array(combo)
            spread = float(after.max() - after.min())
            if best_spread is None or spread < best_spread:
                best_spread, best = spread, [combo]
            elif spread == best_spread:
                best.append(combo)
        return best[int(rng.integers(0, len(best)))]

    @staticmethod
    def _read_prompt(prompt: str) -> tuple[list[dict], int]:
        marker = "Few-shot Samples\n"
        start = prompt.find(marker)
        few_shot: list[dict] = []
        if start >= 0:
            block = prompt[start + len(marker):]
            end = block.rfind("\n\n")
            if end >= 0:
                block = block[:end]
            try:
                few_shot = json.loads(block)
            except json.JSONDecodeError:
                few_shot = []
        count = 20
        for line in prompt.splitlines():
            if line.startswith("Generate exactly "):
                try:
                    count = int(line.split()[2])
                except (IndexError, ValueError):
                    pass
                break
        return few_shot, count


class ChatCompletionClient(LLMClient):
    """HTTP chat-completion backend with bounded idempotent retries.

    Credentials come from an environment variable, never from config
    files.  Every request/response pair is appended to an audit log with
    the authorization header redacted.
    """

    RETRYABLE = (429, 500, 502, 503, 504)

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "LLM_API_KEY",
        timeout: float = 30.0,
        max_retries: int = 3,
        audit_path: str | None = None,
        session=None,
        sleep=time.sleep,
    ):
        api_key = os.environ.get(api_key_env)
        if not api_key:
            raise BackendError(
                f"LLM credential not found: set the {api_key_env} environment variable"
            )
        if session is None:
            import requests

            session = requests.Session()
        self._session = session
        self._api_key = api_key
        self._sleep = sleep
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self.max_retries = max_retries
        self.audit_path = audit_path

    def generate(self, prompt: str) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        url = f"{self.base_url}/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                response = self._session.post(
                    url,
                    json=payload,
                    headers={"Authorization": f"Bearer {self._api_key}"},
                    timeout=self.timeout,
                )
            except Exception as e:  # connection-level failure, retryable
                last_error = e
                self._audit(payload, status=None, response_id=None, error=str(e))
                self._sleep(min(2.0**attempt, 10.0))
                continue
            if response.status_code in self.RETRYABLE:
                last_error = BackendError(f"HTTP {response.status_code} from backend")
                self._audit(payload, status=response.status_code, response_id=None)
                self._sleep(min(2.0**attempt, 10.0))
                continue
            if response.status_code != 200:
                self._audit(payload, status=response.status_code, response_id=None)
                raise BackendError(
                    f"backend returned HTTP {response.status_code}: {response.text[:500]}"
                )
            body = response.json()
            try:
                content = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as e:
                raise BackendError(f"malformed chat-completion response: {e}") from e
            self._audit(payload, status=200, response_id=body.get("id"))
            return content
        raise BackendError(
            f"backend unavailable after {self.max_retries + 1} attempts: {last_error}"
        )

    def _audit(self, payload, status, response_id, error=None) -> None:
        if not self.audit_path:
            return
        record = {
            "request": {**payload, "authorization": "REDACTED"},
            "status": status,
            "response_id": response_id,
        }
        if error:
            record["error"] = error
        with open(self.audit_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def build_llm_client(cfg: AugmentConfig, seed: int, audit_path: str | None = None) -> LLMClient:
    if cfg.backend == "stub":
        return StubLLMClient(seed=seed)
    return ChatCompletionClient(
        base_url=cfg.base_url,
        model=cfg.model,
        api_key_env=cfg.api_key_env,
        timeout=cfg.timeout,
        max_retries=cfg.max_retries,
        audit_path=audit_path,
    )


def _stratified_few_shot(
    d_l: Dataset, take: int, rng: np.random.Generator
) -> list[int]:
    """Few-shot indices covering every class at least once when possible.

    Rare classes are seeded first so minority-targeted generation always
    sees in-domain examples; remaining slots are filled uniformly.
    """
    n_classes = len(d_l.classes)
    per_class = {
        c: [i for i, s in enumerate(d_l.samples) if s.label and s.label[c] == 1]
        for c in range(n_classes)
    }
    chosen: list[int] = []
    for c in sorted(per_class, key=lambda c: len(per_class[c])):
        if len(chosen) >= take:
            break
        pool = [i for i in per_class[c] if i not in chosen]
        if pool:
            chosen.append(int(rng.choice(pool)))
    rest = [i for i in range(len(d_l)) if i not in chosen]
    if rest and len(chosen) < take:
        fill = rng.choice(rest, size=min(take - len(chosen), len(rest)), replace=False)
        chosen.extend(int(i) for i in fill)
    return sorted(chosen)


def generate_candidates(
    d_l: Dataset,
    cfg: AugmentConfig,
    client: LLMClient,
    seed: int,
) -> tuple[list[AugCandidate], dict]:
    """Run the configured number of generation batches against the client."""
    if len(d_l) == 0:
        raise DataFormatError("augmentation needs a non-empty labeled dataset")
    rng = np.random.default_rng(seed)
    candidates: list[AugCandidate] = []
    stats = {"batches": 0, "skipped_malformed": 0, "rejected_all_true": 0}
    for batch in range(cfg.batches):
        take = min(cfg.few_shot, len(d_l))
        idx = _stratified_few_shot(d_l, take, rng)
        spec = GenerationBatchSpec(
            few_shot=tuple(d_l.samples[int(i)] for i in idx),
            requested_count=cfg.batch_size,
            classes=d_l.classes,
        )
        prompt = build_prompt(spec)
        response = client.generate(prompt)
        parsed = parse_generated(response, d_l.classes)
        digest = prompt_hash(prompt)
        for item, candidate in enumerate(parsed.candidates):
            candidate.provenance = {
                "prompt_hash": digest,
                "batch": batch,
                "item": item,
                "response_id": f"batch-{batch:03d}",
            }
        candidates.extend(parsed.candidates)
        stats["batches"] += 1
        stats["skipped_malformed"] += parsed.skipped_malformed
        stats["rejected_all_true"] += parsed.rejected_all_true
    return candidates, stats


def _normalize(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return matrix / norms


def embed_questions(encoder: DocumentEncoder, texts: list[str]) -> np.ndarray:
    matrix = np.stack([encoder.encode_document(t) for t in texts]).astype(np.float64)
    return _normalize(matrix)


def nearest_neighbors(
    embedding: np.ndarray,
    labeled_embeddings: np.ndarray,
    labeled_ids: list[str],
    k: int,
) -> tuple[list[int], list[float]]:
    """Top-k by cosine similarity; ties broken by ascending sample id."""
    if k < 1:
        raise DataFormatError(f"neighbor count must be >= 1, got {k}")
    if len(labeled_ids) < k:
        raise DataFormatError(
            f"labeled set of {len(labeled_ids)} is smaller than k={k}"
        )
    sims = labeled_embeddings @ embedding
    order = sorted(range(len(labeled_ids)), key=lambda i: (-sims[i], labeled_ids[i]))
    top = order[:k]
    return top, [float(sims[i]) for i in top]


def consistency_score(
    claimed: tuple[int, ...], neighbor_labels: list[tuple[int, ...]]
) -> float:
    """Fraction of neighbors whose label vector equals the claim exactly."""
    if not neighbor_labels:
        raise DataFormatError("consistency needs at least one neighbor")
    matches = sum(1 for lab in neighbor_labels if tuple(lab) == tuple(claimed))
    return matches / len(neighbor_labels)


def diversity_score(neighbor_sims: list[float]) -> float:
    """One minus mean cosine similarity to the retrieved neighbors."""
    if not neighbor_sims:
        raise DataFormatError("diversity needs at least one neighbor")
    return 1.0 - float(np.mean(neighbor_sims))


def evaluate_candidates(
    candidates: list[AugCandidate],
    d_l: Dataset,
    encoder: DocumentEncoder,
    k: int,
) -> list[AugCandidate]:
    """Fill embeddings, neighbors, consistency, and diversity in place."""
    if len(d_l) < k:
        raise DataFormatError(f"labeled set of {len(d_l)} is smaller than k={k}")
    labeled_embeddings = embed_questions(encoder, [s.question_text for s in d_l])
    labeled_ids = d_l.ids()
    labeled_labels = [s.label for s in d_l]
    for candidate in candidates:
        candidate.embedding = embed_questions(encoder, [candidate.question_text])[0]
        top, sims = nearest_neighbors(
            candidate.embedding, labeled_embeddings, labeled_ids, k
        )
        candidate.neighbor_ids = tuple(labeled_ids[i] for i in top)
        candidate.neighbor_sims = tuple(sims)
        candidate.consistency = consistency_score(
            candidate.claimed_label, [labeled_labels[i] for i in top]
        )
        candidate.diversity = diversity_score(sims)
    return candidates


def score_and_select(
    candidates: list[AugCandidate],
    delta: float,
    eta: float,
    classes: tuple[str, ...],
) -> Dataset:
    """Weighted score, strict threshold, selected-augmented dataset out."""
    if not 0.0 <= delta <= 1.0:
        raise DataFormatError(f"delta must lie in [0, 1], got {delta}")
    selected: list[Sample] = []
    for i, candidate in enumerate(candidates):
        if candidate.consistency is None or candidate.diversity is None:
            raise DataFormatError("candidates must be evaluated before selection")
        candidate.score = delta * candidate.consistency + (1.0 - delta) * candidate.diversity
        candidate.kept = candidate.score > eta
        if candidate.kept:
            selected.append(
                Sample(
                    id=candidate.candidate_id(i),
                    question_text=candidate.question_text,
                    answers=(),
                    label=candidate.claimed_label,
                    provenance="augmented",
                )
            )
    return Dataset(tuple(selected), DatasetKind.SELECTED, classes)


def sweep_eta(
    candidates: list[AugCandidate],
    delta: float,
    etas: list[float],
    classes: tuple[str, ...],
) -> list[tuple[float, int]]:
    """Selection-size curve over the threshold; non-increasing by construction."""
    return [
        (eta, len(score_and_select(candidates, delta, eta, classes)))
        for eta in etas
    ]


def sweep_delta(
    candidates: list[AugCandidate],
    deltas: list[float],
    eta: float,
    classes: tuple[str, ...],
) -> list[tuple[float, int]]:
    return [
        (delta, len(score_and_select(candidates, delta, eta, classes)))
        for delta in deltas
    ]


def candidates_to_jsonl(candidates: list[AugCandidate]) -> str:
    lines = []
    for i, candidate in enumerate(candidates):
        record = {
            "id": candidate.candidate_id(i),
            "question": candidate.question_text,
            "answers": [],
            "labels": list(candidate.claimed_label),
            "consistency": candidate.consistency,
            "diversity": candidate.diversity,
            "score": candidate.score,
            "kept": candidate.kept,
            "provenance": candidate.provenance,
        }
        lines.append(json.dumps(record, ensure_ascii=False, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")


def candidates_from_jsonl(
    text: str, classes: tuple[str, ...]
) -> list[AugCandidate]:
    candidates = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"candidate archive line {line_no}: {e.msg}") from e
        try:
            vec = check_label_vector(raw["labels"], len(classes))
            question = raw["question"]
        except (KeyError, DataFormatError) as e:
            raise DataFormatError(f"candidate archive line {line_no}: {e}") from e
        candidate = AugCandidate(
            question_text=question,
            claimed_label=vec,
            consistency=raw.get("consistency"),
            diversity=raw.get("diversity"),
            score=raw.get("score"),
            kept=bool(raw.get("kept", False)),
            provenance=raw.get("provenance", {}),
        )
        candidates.append(candidate)
    return candidates
