"""Batch pipelines behind the CLI subcommands, plus run manifests.

Every pipeline writes a manifest (config digest, input digests, seed)
sufficient to reproduce its outputs byte-identically.
"""

from __future__ import annotations

import datetime
import hashlib
import json
from collections import Counter
from pathlib import Path
from typing import Optional, Sequence

from .. import __version__
from ..corpus import (
    BuildConfig,
    ContextInstance,
    Document,
    ORIGIN_GOLD,
    ORIGIN_HARD_NEGATIVE,
    ORIGIN_PROMOTED,
    WhitespaceTokenCounter,
    filter_by_length,
    instance_token_count,
    judge_filter,
    promote_hard_negatives,
    read_candidates,
    read_instances,
    read_token_sidecar,
    shuffle_instance,
    split_dataset,
    write_instances,
)
from ..evaluation import (
    EvalReport,
    aggregate,
    doc_attention_scores,
    drop_table,
    mc_accuracy,
    ndcg_at_k,
    pearson,
    read_attention_dump,
    rouge_l,
    simulate_topk_retention,
    subem_score,
)
from ..rewards import JudgeClient, RewardKind
from .config import RunConfig
from .scoring import RewardScorer

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

LENGTH_BUCKETS = [4096, 8192, 16384, 32768, 65536, 131072]


class PipelineError(RuntimeError):
    """Fatal validation or configuration failure; maps to exit code 2."""


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(
    outdir: Path,
    config: RunConfig,
    inputs: Sequence[str | Path],
    seed: int,
    filename: str = "manifest.json",
) -> None:
    manifest = {
        "config_digest": config.digest(),
        "input_digests": {str(p): file_digest(p) for p in inputs},
        "seed": seed,
        "version": __version__,
        "started_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    (outdir / filename).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# --- build-data -------------------------------------------------------------


def build_data(
    candidates_path: str | Path,
    outdir: str | Path,
    config: RunConfig,
    judge: Optional[JudgeClient] = None,
    approve_all: bool = False,
    token_sidecar: Optional[str | Path] = None,
) -> dict:
    """Candidates file -> refined, shuffled, budgeted train/dev instance files.

    Stages per candidate: hard-negative promotion against the golds, judge
    filtering of the promotions (an all-approve stand-in when
    ``approve_all``), document shuffling seeded by (seed, id), and the
    context-length gate. Ends with the deterministic train/dev split.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    build_cfg = BuildConfig(
        max_context_tokens=config.max_context_tokens,
        shuffle_seed=config.seed,
        retriever_top_k=config.retriever_top_k,
        fuzzy_threshold=config.fuzzy_threshold,
        ngram_n=config.ngram_n,
        split_ratio=config.split_ratio,
    )
    if judge is None and not approve_all:
        raise PipelineError("build-data needs a judge fixture or --approve-all")
    sidecar = read_token_sidecar(token_sidecar) if token_sidecar else {}
    counter = WhitespaceTokenCounter()

    total_lines = 0
    malformed: list[dict] = []
    rejected: list[dict] = []
    kept: list[ContextInstance] = []
    promotion_stats = Counter()
    gold_sizes_before: list[int] = []
    gold_sizes_after: list[int] = []

    for lineno, record, error in read_candidates(candidates_path):
        total_lines += 1
        if record is None:
            malformed.append({"line": lineno, "error": error})
            continue
        if not record.gold_docs:
            rejected.append({"id": record.id, "reason": "no gold documents"})
            continue

        golds = [
            Document(index=i, text=text, origin=ORIGIN_GOLD)
            for i, text in enumerate(record.gold_docs)
        ]
        seen = set(record.gold_docs)
        negative_texts = []
        for text in record.retrieved:
            if text in seen:
                promotion_stats["duplicates_removed"] += 1
                continue
            seen.add(text)
            negative_texts.append(text)
        negative_texts = negative_texts[: build_cfg.retriever_top_k]
        negatives = [
            Document(index=len(golds) + i, text=text, origin=ORIGIN_HARD_NEGATIVE)
            for i, text in enumerate(negative_texts)
        ]

        promotions = promote_hard_negatives(
            golds, negatives, build_cfg, question=record.question
        )
        promotion_stats["negatives_scored"] += len(promotions)
        promoted = [c for c in promotions if c.promoted]
        promotion_stats["promoted_stage1"] += len(promoted)
        if approve_all:
            approved = {c.negative_index for c in promoted}
        else:
            decisions = judge_filter(promotions, judge)
            approved = {
                d["candidate"].negative_index for d in decisions if d["kept"]
            }
            promotion_stats["rejected_by_judge"] += sum(
                1 for d in decisions if not d["kept"]
            )
            promotion_stats["judge_unparseable"] += sum(
                1 for d in decisions if not d["verdict_parsed"]
            )
        promotion_stats["approved"] += len(approved)

        documents = list(golds)
        gold_ids = {d.index for d in golds}
        for neg in negatives:
            if neg.index in approved:
                documents.append(
                    Document(index=neg.index, text=neg.text, origin=ORIGIN_PROMOTED)
                )
                gold_ids.add(neg.index)
            else:
                documents.append(neg)

        inst = ContextInstance(
            id=record.id,
            question=record.question,
            answers=record.answers,
            documents=documents,
            gold_ids=gold_ids,
            source=Path(candidates_path).name,
        ).validate()
        gold_sizes_before.append(len(golds))
        gold_sizes_after.append(len(gold_ids))

        inst = shuffle_instance(inst, config.seed)
        if record.id in sidecar:
            fits = sidecar[record.id] <= build_cfg.max_context_tokens
        else:
            fits = filter_by_length(inst, counter, build_cfg)
        if not fits:
            rejected.append({"id": record.id, "reason": "over token budget"})
            continue
        kept.append(inst)

    if total_lines and len(malformed) / total_lines > 0.10:
        raise PipelineError(
            f"{len(malformed)}/{total_lines} malformed candidate lines (>10%)"
        )
    if not kept:
        raise PipelineError("no valid instances after refinement and filtering")

    train, dev = split_dataset(kept, build_cfg.split_ratio, config.seed)
    write_instances(outdir / "train.jsonl", train)
    write_instances(outdir / "dev.jsonl", dev)

    report = {
        "candidates_read": total_lines,
        "malformed_lines": malformed,
        "rejected": rejected,
        "instances_built": len(kept),
        "train": len(train),
        "dev": len(dev),
        "promotion": dict(sorted(promotion_stats.items())),
        "mean_gold_before_refinement": _mean(gold_sizes_before),
        "mean_gold_after_refinement": _mean(gold_sizes_after),
    }
    (outdir / "build_report.json").write_text(
        json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    inputs = [candidates_path] + ([token_sidecar] if token_sidecar else [])
    write_manifest(outdir, config, inputs, config.seed)
    return report


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


# --- reward batch -----------------------------------------------------------


def run_reward_batch(
    scorer: RewardScorer,
    predictions_path: str | Path,
    kind: RewardKind,
    out_path: str | Path,
) -> tuple[int, dict]:
    """Score a prediction file; returns (exit code, summary)."""
    out_path = Path(out_path)
    responses = []
    failures = 0
    with open(predictions_path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                request = {
                    "request_id": str(obj["id"]),
                    "instance_id": str(obj["id"]),
                    "output_text": obj["output"],
                    "kind": kind.value,
                }
            except (KeyError, TypeError, ValueError) as exc:
                responses.append(
                    {"request_id": None, "error": f"malformed prediction: {exc}", "line": lineno}
                )
                failures += 1
                continue
            response = scorer.score_request(request)
            if "error" in response:
                failures += 1
            responses.append(response)

    with open(out_path, "w", encoding="utf-8") as f:
        for response in responses:
            f.write(json.dumps(response, ensure_ascii=False) + "\n")

    totals = [r["total"] for r in responses if "total" in r]
    summary = {
        "kind": kind.value,
        "requests": len(responses),
        "failures": failures,
        "mean_total": {kind.value: _mean(totals)},
    }
    summary_path = Path(str(out_path) + ".summary.json")
    summary_path.write_text(
        json.dumps(summary, indent=2) + "\n", encoding="utf-8"
    )
    inputs = list(scorer.config.corpus_paths) + [predictions_path]
    write_manifest(
        out_path.parent,
        scorer.config,
        [p for p in inputs if Path(p).exists()],
        scorer.config.seed,
        filename=out_path.name + ".manifest.json",
    )
    return (EXIT_PARTIAL if failures else EXIT_OK), summary


# --- eval -------------------------------------------------------------------


def length_bucket(tokens: int) -> str:
    for bucket in LENGTH_BUCKETS:
        if tokens <= bucket:
            return f"{bucket // 1024}k"
    return ">128k"


def _load_predictions(path: str | Path) -> dict[str, str]:
    preds: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            preds[str(obj["id"])] = obj["output"]
    return preds


def _load_raw_instances(path: str | Path) -> dict[str, dict]:
    raw: dict[str, dict] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                obj = json.loads(line)
                raw[str(obj["id"])] = obj
    return raw


def run_eval(
    run_id: str,
    config: RunConfig,
    outdir: str | Path,
    instances_path: Optional[str | Path] = None,
    predictions_path: Optional[str | Path] = None,
    metric: str = "subem",
    attention_path: Optional[str | Path] = None,
    retention_budgets: Sequence[float] = (),
    drop_full_path: Optional[str | Path] = None,
    drop_compressed_path: Optional[str | Path] = None,
    correlate_path: Optional[str | Path] = None,
) -> EvalReport:
    """Assemble an EvalReport from whichever analysis inputs are present."""
    if (
        predictions_path is None
        and attention_path is None
        and drop_full_path is None
        and correlate_path is None
    ):
        raise PipelineError(
            "nothing to evaluate: provide --predictions, --attention, "
            "--drop-full/--drop-compressed, or --correlate"
        )
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    counter = WhitespaceTokenCounter()

    report = EvalReport(run_id=run_id, metric=metric)
    inputs: list[str | Path] = []

    if predictions_path is not None:
        if instances_path is None:
            raise PipelineError("scoring predictions requires --instances")
        instances = {i.id: i for i in read_instances(instances_path)}
        raw = _load_raw_instances(instances_path)
        predictions = _load_predictions(predictions_path)
        missing = sorted(set(predictions) - set(instances))
        if missing:
            raise PipelineError(f"predictions reference unknown instances: {missing[:5]}")
        groups: dict[str, list[float]] = {}
        per_instance = []
        for pid in sorted(predictions):
            inst = instances[pid]
            output = predictions[pid]
            if metric == "subem":
                score = float(subem_score(output, inst.answers))
            elif metric == "rouge":
                score = rouge_l(output, inst.answers[0])
            elif metric == "mc":
                extra = raw[pid]
                if "choices" not in extra or "gold_letter" not in extra:
                    raise PipelineError(
                        "mc metric requires 'choices' and 'gold_letter' fields on instances"
                    )
                score = float(
                    mc_accuracy(output, extra["choices"], extra["gold_letter"])
                )
            else:
                raise PipelineError(f"unknown metric: {metric}")
            bucket = length_bucket(instance_token_count(inst, counter))
            groups.setdefault(bucket, []).append(score)
            per_instance.append({"id": pid, "score": score, "length": bucket})
        scored = aggregate(run_id, metric, groups, per_instance)
        report.per_instance = scored.per_instance
        report.group_means = scored.group_means
        report.average = scored.average
        inputs += [instances_path, predictions_path]

    if attention_path is not None:
        if instances_path is None:
            raise PipelineError("NDCG over attention dumps requires --instances")
        instances = {i.id: i for i in read_instances(instances_path)}
        records = read_attention_dump(attention_path)
        known = [r for r in records if r.instance_id in instances]
        if not known:
            raise PipelineError("attention dump shares no ids with the instance file")
        ndcg_rows = []
        for rec in sorted(known, key=lambda r: r.instance_id):
            ranking = [doc for doc, _ in doc_attention_scores(rec)]
            value = ndcg_at_k(
                ranking, instances[rec.instance_id].gold_ids, k=config.ndcg_k
            )
            ndcg_rows.append({"id": rec.instance_id, "ndcg": value})
        report.ndcg = {
            "k": config.ndcg_k,
            "mean": _mean([row["ndcg"] for row in ndcg_rows]),
            "per_instance": ndcg_rows,
        }
        if retention_budgets:
            report.retention = _retention_analysis(known, instances, retention_budgets)
        inputs.append(attention_path)
    elif retention_budgets:
        raise PipelineError("retention analysis requires --attention")

    if (drop_full_path is None) != (drop_compressed_path is None):
        raise PipelineError("drop analysis requires both --drop-full and --drop-compressed")
    if drop_full_path is not None:
        full = json.loads(Path(drop_full_path).read_text(encoding="utf-8"))
        compressed = json.loads(Path(drop_compressed_path).read_text(encoding="utf-8"))
        if full and all(isinstance(v, dict) for v in full.values()):
            report.drop = {
                row: drop_table(full[row], compressed[row])
                for row in full
                if row in compressed
            }
        else:
            report.drop = {"all": drop_table(full, compressed)}
        inputs += [drop_full_path, drop_compressed_path]

    if correlate_path is not None:
        pair = json.loads(Path(correlate_path).read_text(encoding="utf-8"))
        r, p = pearson(pair["x"], pair["y"])
        report.correlation = {"r": r, "p": p, "n": len(pair["x"])}
        inputs.append(correlate_path)

    write_report(report, outdir)
    write_manifest(outdir, config, inputs, config.seed)
    return report


def _retention_analysis(
    records: Sequence, instances: dict, budgets: Sequence[float]
) -> list[dict]:
    rows = []
    for fraction in budgets:
        if not 0.0 <= fraction <= 1.0:
            raise PipelineError(f"retention budget fractions must be in [0,1]: {fraction}")
        gold_survival: list[float] = []
        other_survival: list[float] = []
        for rec in records:
            budget = round(fraction * len(rec.token_scores))
            _, survival = simulate_topk_retention(rec, budget)
            gold = instances[rec.instance_id].gold_ids
            for doc, frac in survival.items():
                (gold_survival if doc in gold else other_survival).append(frac)
        rows.append(
            {
                "budget_fraction": fraction,
                "gold_doc_survival": _mean(gold_survival),
                "other_doc_survival": _mean(other_survival),
            }
        )
    return rows


# --- report persistence -----------------------------------------------------


def write_report(report: EvalReport, outdir: str | Path) -> None:
    """JSON report plus flat TSV tables of each populated section."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    if report.group_means:
        keys = sorted(report.group_means, key=_bucket_sort_key)
        lines = [
            "\t".join(["metric", *keys, "Avg"]),
            "\t".join(
                [report.metric]
                + [f"{report.group_means[k]:.4f}" for k in keys]
                + [f"{report.average:.4f}"]
            ),
        ]
        (outdir / "scores.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if report.drop:
        tasks = sorted({t for row in report.drop.values() for t in row if t != "Avg"})
        lines = ["\t".join(["row", *tasks, "Avg"])]
        for row, drops in report.drop.items():
            cells = [f"{drops[t]:.1f}" if t in drops else "" for t in tasks]
            lines.append("\t".join([row, *cells, f"{drops['Avg']:.1f}"]))
        (outdir / "drop.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if report.ndcg:
        lines = ["\t".join(["id", f"ndcg@{report.ndcg['k']}"])]
        lines += [f"{row['id']}\t{row['ndcg']:.4f}" for row in report.ndcg["per_instance"]]
        lines.append(f"mean\t{report.ndcg['mean']:.4f}")
        (outdir / "ndcg.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if report.retention:
        lines = ["budget_fraction\tgold_doc_survival\tother_doc_survival"]
        lines += [
            f"{r['budget_fraction']:.4f}\t{r['gold_doc_survival']:.4f}\t{r['other_doc_survival']:.4f}"
            for r in report.retention
        ]
        (outdir / "retention.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _bucket_sort_key(label: str):
    if label.endswith("k") and label[:-1].isdigit():
        return (0, int(label[:-1]))
    return (1, label)
