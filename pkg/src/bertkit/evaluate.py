"""Base-vs-tuned model comparison: per-pair cosine similarities, improvement
rates, anchor-difference profiles, summary statistics, epoch sweeps, and
CSV/SVG report emission.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, svg
from .embeddings import PoolingPolicy, cosine, embed_sentence
from .pretrain_data import Dataset
from .training import Checkpoint, TrainConfig, finetune
from .wordpiece import Vocabulary


@dataclass(frozen=True)
class SentencePair:
    pair_id: str
    source_sentence: str
    target_sentence: str


@dataclass
class ComparisonRow:
    """Per-pair cosines under both models; derived fields are recomputed, not stored."""

    pair_id: str
    cos_base: float | None
    cos_tuned: float | None
    error: str | None = None

    @property
    def difference(self) -> float | None:
        if self.error is not None:
            return None
        return self.cos_tuned - self.cos_base

    @property
    def improvement_pct(self) -> float | None:
        if self.error is not None:
            return None
        return improvement_rate(self.cos_base, self.cos_tuned)


@dataclass(frozen=True)
class SummaryStats:
    mean_difference: float
    std_difference: float  # population std
    n_pairs: int
    mean_improvement_pct: float


@dataclass
class SweepReport:
    budgets: list[int]
    pair_ids: list[str]
    cos_base: list[float]
    cos_by_budget: dict[int, list[float]]
    checkpoints: dict[int, Checkpoint] = dataclasses.field(default_factory=dict)


@dataclass(frozen=True)
class PublishedRow:
    """A published base-vs-tuned comparison row with its originally printed rate."""

    pair_id: str
    source_sentence: str
    target_sentence: str
    cos_base: float
    cos_tuned: float
    printed_rate_pct: float


# Bundled reference rows. Only S1 and S4's printed rates agree with the
# base-relative improvement formula; the other three are flagged by
# check_published_rates as internally inconsistent.
PUBLISHED_ROWS = (
    PublishedRow("S1",
                 "Create user registration allowing to Include a photo and digital",
                 "Create a button that allows you to retrieve the last record deleted from the order",
                 0.59, 0.71, 20.33),
    PublishedRow("S2",
                 "Create a method that allows the user to customize sales reports",
                 "List all store products by category",
                 0.71, 0.84, 15.4),
    PublishedRow("S3",
                 "Include calculation button by product in the sales order",
                 "Create a button that allows you to retrieve the last record deleted from the order",
                 0.65, 0.80, 18.75),
    PublishedRow("S4",
                 "As a salesperson, I want to include sales orders",
                 "Create user registration allowing to include a photo and digital",
                 0.58, 0.70, 20.7),
    PublishedRow("S5",
                 "Add user authentication function for accessing the system",
                 "As an administrator, I need to have access to a sales report to find out how much I received in a given period",
                 0.75, 0.84, 10.12),
)


def improvement_rate(cos_base: float, cos_tuned: float) -> float:
    """Percent change of the tuned cosine relative to the base cosine."""
    if cos_base == 0.0:
        raise ValueError("improvement rate undefined for cos_base == 0")
    return 100.0 * (cos_tuned - cos_base) / cos_base


def check_published_rates(tolerance: float = 0.05) -> list[tuple[PublishedRow, float, bool]]:
    """(row, computed_rate, matches_printed) for every bundled reference row."""
    out = []
    for row in PUBLISHED_ROWS:
        computed = improvement_rate(row.cos_base, row.cos_tuned)
        out.append((row, computed, abs(computed - row.printed_rate_pct) <= tolerance))
    return out


def published_comparison_rows() -> list[ComparisonRow]:
    return [ComparisonRow(r.pair_id, r.cos_base, r.cos_tuned) for r in PUBLISHED_ROWS]


class _EmbeddingCache:
    def __init__(self, ckpt: Checkpoint, vocab: Vocabulary, policy: PoolingPolicy):
        self.params = ckpt.to_params()
        self.vocab = vocab
        self.policy = policy
        self._cache: dict[str, np.ndarray] = {}

    def vector(self, sentence: str) -> np.ndarray:
        if sentence not in self._cache:
            self._cache[sentence] = embed_sentence(
                self.params, sentence, self.vocab, self.policy).vector
        return self._cache[sentence]


def _check_compatible(base: Checkpoint, tuned: Checkpoint, vocab: Vocabulary) -> None:
    for name, ckpt in (("base", base), ("tuned", tuned)):
        if ckpt.config.vocab_size != len(vocab):
            raise ValueError(
                f"{name} checkpoint vocab_size {ckpt.config.vocab_size} does not "
                f"match vocabulary of {len(vocab)} tokens")
    if base.config.hidden_size != tuned.config.hidden_size:
        raise ValueError(
            f"hidden_size mismatch: base {base.config.hidden_size} vs "
            f"tuned {tuned.config.hidden_size}")


def compare_models(pairs: Sequence[SentencePair], ckpt_base: Checkpoint,
                   ckpt_tuned: Checkpoint, vocab: Vocabulary,
                   policy: PoolingPolicy = PoolingPolicy()) -> list[ComparisonRow]:
    """Cosine of each pair under both checkpoints, in input order.

    A pair whose sentences cannot be embedded yields a row with an error
    message instead of aborting the whole run.
    """
    _check_compatible(ckpt_base, ckpt_tuned, vocab)
    base = _EmbeddingCache(ckpt_base, vocab, policy)
    tuned = _EmbeddingCache(ckpt_tuned, vocab, policy)
    rows = []
    for pair in pairs:
        try:
            cb = cosine(base.vector(pair.source_sentence), base.vector(pair.target_sentence))
            ct = cosine(tuned.vector(pair.source_sentence), tuned.vector(pair.target_sentence))
            rows.append(ComparisonRow(pair.pair_id, cb, ct))
        except ValueError as err:
            rows.append(ComparisonRow(pair.pair_id, None, None, error=str(err)))
    return rows


def anchor_differences(anchor_id: str, pairs: Sequence[SentencePair],
                       ckpt_base: Checkpoint, ckpt_tuned: Checkpoint, vocab: Vocabulary,
                       policy: PoolingPolicy = PoolingPolicy()) -> list[tuple[str, float]]:
    """Tuned-minus-base cosine of the anchor's source sentence vs every other
    pair's source sentence. The anchor itself is excluded; zero differences are
    reported as zero.
    """
    sentences = {p.pair_id: p.source_sentence for p in pairs}
    if anchor_id not in sentences:
        raise ValueError(f"unknown anchor id {anchor_id!r}; have {sorted(sentences)}")
    _check_compatible(ckpt_base, ckpt_tuned, vocab)
    base = _EmbeddingCache(ckpt_base, vocab, policy)
    tuned = _EmbeddingCache(ckpt_tuned, vocab, policy)
    anchor = sentences[anchor_id]
    out = []
    for pid, sentence in sentences.items():
        if pid == anchor_id:
            continue
        cb = cosine(base.vector(anchor), base.vector(sentence))
        ct = cosine(tuned.vector(anchor), tuned.vector(sentence))
        out.append((pid, ct - cb))
    return out


def summarize(rows: Sequence[ComparisonRow]) -> SummaryStats:
    """Mean and population std of differences; mean improvement percent."""
    valid = [r for r in rows if r.error is None]
    if not valid:
        raise ValueError("no valid rows to summarize")
    diffs = np.array([r.difference for r in valid])
    rates = np.array([r.improvement_pct for r in valid])
    return SummaryStats(
        mean_difference=float(diffs.mean()),
        std_difference=float(diffs.std()),
        n_pairs=len(valid),
        mean_improvement_pct=float(rates.mean()),
    )


def epochs_sweep(budgets: Sequence[int], base_ckpt: Checkpoint, domain_dataset: Dataset,
                 pairs: Sequence[SentencePair], vocab: Vocabulary, train_cfg: TrainConfig,
                 policy: PoolingPolicy = PoolingPolicy()) -> SweepReport:
    """Fine-tune the base once per epoch budget (shared seed) and compare each.

    train_cfg.warmup_fraction of 0 keeps the learning rate constant, so shorter
    budgets are exact prefixes of longer ones.
    """
    budgets = sorted(set(int(b) for b in budgets))
    if not budgets or budgets[0] < 1:
        raise ValueError(f"budgets must be positive integers, got {budgets}")
    base_cache = _EmbeddingCache(base_ckpt, vocab, policy)

    def pair_cosines(cache: _EmbeddingCache) -> list[float]:
        return [cosine(cache.vector(p.source_sentence), cache.vector(p.target_sentence))
                for p in pairs]

    report = SweepReport(
        budgets=budgets,
        pair_ids=[p.pair_id for p in pairs],
        cos_base=pair_cosines(base_cache),
        cos_by_budget={},
    )
    for budget in budgets:
        cfg = dataclasses.replace(train_cfg, epochs=budget)
        ckpt, _ = finetune(base_ckpt, domain_dataset, cfg)
        report.cos_by_budget[budget] = pair_cosines(_EmbeddingCache(ckpt, vocab, policy))
        report.checkpoints[budget] = ckpt
    return report


def read_pairs_tsv(path: str | Path) -> list[SentencePair]:
    """TSV pair file: pair_id<TAB>source<TAB>target, UTF-8, one pair per line."""
    pairs = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValueError(f"{path}: line {i} has {len(fields)} fields, expected 3")
        pairs.append(SentencePair(*fields))
    return pairs


def write_pairs_tsv(pairs: Sequence[SentencePair], path: str | Path) -> None:
    lines = [f"{p.pair_id}\t{p.source_sentence}\t{p.target_sentence}" for p in pairs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cell(x: float | None) -> str:
    return "" if x is None else repr(x)


def write_comparison_csv(rows: Sequence[ComparisonRow], path: str | Path) -> None:
    lines = ["pair_id,cos_base,cos_tuned,difference,improvement_pct"]
    for r in rows:
        lines.append(",".join([r.pair_id, _cell(r.cos_base), _cell(r.cos_tuned),
                               _cell(r.difference), _cell(r.improvement_pct)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_summary_csv(stats: SummaryStats, path: str | Path) -> None:
    Path(path).write_text(
        "mean_difference,std_difference,n_pairs,mean_improvement_pct\n"
        f"{stats.mean_difference!r},{stats.std_difference!r},{stats.n_pairs},"
        f"{stats.mean_improvement_pct!r}\n",
        encoding="utf-8")


def write_anchor_csv(differences: Sequence[tuple[str, float]], path: str | Path) -> None:
    lines = ["pair_id,difference"]
    lines += [f"{pid},{diff!r}" for pid, diff in differences]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_sweep_csv(report: SweepReport, path: str | Path) -> None:
    header = ["pair_id", "cos_base"] + [f"cos_epochs_{b}" for b in report.budgets]
    lines = [",".join(header)]
    for i, pid in enumerate(report.pair_ids):
        cells = [pid, repr(report.cos_base[i])]
        cells += [repr(report.cos_by_budget[b][i]) for b in report.budgets]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def comparison_chart(rows: Sequence[ComparisonRow], path: str | Path) -> None:
    valid = [r for r in rows if r.error is None]
    svg.bar_chart([r.pair_id for r in valid], [r.difference for r in valid],
                  title="Cosine difference per pair (tuned - base)",
                  ylabel="cosine difference", xlabel="sentence pair", path=path)


def anchor_chart(anchor_id: str, differences: Sequence[tuple[str, float]],
                 path: str | Path) -> None:
    svg.bar_chart([pid for pid, _ in differences], [d for _, d in differences],
                  title=f"Cosine difference vs anchor {anchor_id} (tuned - base)",
                  ylabel="cosine difference", xlabel="sentence pair", path=path)


def sweep_chart(report: SweepReport, path: str | Path) -> None:
    series: dict[str, Sequence[float]] = {"base": report.cos_base}
    for b in report.budgets:
        series[f"epochs {b}"] = report.cos_by_budget[b]
    svg.line_chart(report.pair_ids, series,
                   title="Cosine per pair across fine-tuning budgets",
                   ylabel="cosine similarity", xlabel="sentence pair", path=path)


def emit_report(data, fmt: str, path: str | Path) -> None:
    """Write rows / stats / sweep data as csv or chart (dispatch on type)."""
    if fmt not in ("csv", "chart"):
        raise ValueError(f"format must be 'csv' or 'chart', got {fmt!r}")
    if isinstance(data, SummaryStats):
        if fmt == "chart":
            svg.bar_chart(["mean", "std"], [data.mean_difference, data.std_difference],
                          title="Cosine difference: mean and std",
                          ylabel="cosine difference", xlabel="statistic", path=path)
        else:
            write_summary_csv(data, path)
    elif isinstance(data, SweepReport):
        sweep_chart(data, path) if fmt == "chart" else write_sweep_csv(data, path)
    else:
        rows = list(data)
        if not rows:
            raise ValueError("emit_report called with no rows")
        comparison_chart(rows, path) if fmt == "chart" else write_comparison_csv(rows, path)


def write_run_manifest(path: str | Path, *, seed: int | None = None,
                       inputs: dict[str, str | Path] | None = None,
                       extra: dict | None = None) -> None:
    """Sidecar manifest: input hashes, seed, version, and the only timestamp."""
    manifest: dict = {
        "tool_version": __version__,
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "seed": seed,
    }
    if inputs:
        manifest["input_sha256"] = {
            name: hashlib.sha256(Path(p).read_bytes()).hexdigest()
            for name, p in sorted(inputs.items())
        }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
