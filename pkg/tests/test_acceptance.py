"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with its measured quantities."""

import itertools
import json
import math
import random
import time
from pathlib import Path

import pytest
from click.testing import CliRunner

from icrkit.corpus import ContextInstance, Document, read_instances
from icrkit.evaluation import drop_table, ndcg_at_k, pearson, rouge_l, simulate_topk_retention
from icrkit.evaluation import AttentionRecord
from icrkit.rewards import JudgeClient, RewardKind, compute_reward, judge_payload
from icrkit.service.cli import main as cli_main
from icrkit.service.config import RunConfig
from icrkit.service.pipelines import build_data

from _fixtures import make_all_relevant_judge_fixture
from _oracle import oracle_ndcg, oracle_reward
from _render import (
    render_ao,
    render_id,
    render_id_c,
    render_id_q,
    render_reasoning,
    render_verdict,
)

DATA = Path(__file__).parent / "data"
CANDIDATES = DATA / "candidates_20.jsonl"


def report(name: str, detail: str = "") -> None:
    print(f"ACCEPTANCE {name}: PASS" + (f" ({detail})" if detail else ""))


# --- 1. correlation reproduction ---------------------------------------------

TABLE4_AVG = [83.4, 83.7, 83.7, 83.9, 84.1, 83.6]
TABLE1_AVG = [69.6, 80.3, 77.2, 70.2, 72.9, 78.6]


def test_correlation_reproduction():
    start = time.monotonic()
    r, p = pearson(TABLE4_AVG, TABLE1_AVG)
    elapsed = time.monotonic() - start
    assert r == pytest.approx(-0.09, abs=0.01)
    assert p == pytest.approx(0.86, abs=0.02)
    assert elapsed < 1.0
    report("correlation", f"r={r:.4f} p={p:.4f} in {elapsed * 1000:.0f}ms")


# --- 2. drop-table reproduction ----------------------------------------------

# Full-context and RetrievalAttention rows (MC, QA, Sum, ALL, Fin per model).
FULL_ROWS = {
    "Base": {"MC": 72.0, "QA": 30.0, "Sum": 31.2, "ALL": 32.0, "Fin": 49.9},
    "AO": {"MC": 70.3, "QA": 38.2, "Sum": 31.0, "ALL": 31.2, "Fin": 55.3},
    "ID": {"MC": 71.6, "QA": 34.7, "Sum": 29.7, "ALL": 31.0, "Fin": 51.2},
    "ID_C": {"MC": 70.7, "QA": 31.3, "Sum": 30.2, "ALL": 31.4, "Fin": 47.5},
    "ID_Q": {"MC": 70.7, "QA": 30.8, "Sum": 30.5, "ALL": 32.0, "Fin": 51.5},
    "R_JUDGE": {"MC": 72.5, "QA": 30.7, "Sum": 31.7, "ALL": 32.6, "Fin": 58.8},
}
RA_ROWS = {
    "Base": {"MC": 62.0, "QA": 27.6, "Sum": 27.3, "ALL": 30.2, "Fin": 39.5},
    "AO": {"MC": 65.5, "QA": 33.6, "Sum": 28.0, "ALL": 29.6, "Fin": 41.7},
    "ID": {"MC": 64.2, "QA": 29.3, "Sum": 26.0, "ALL": 30.0, "Fin": 43.0},
    "ID_C": {"MC": 63.3, "QA": 27.1, "Sum": 27.7, "ALL": 29.6, "Fin": 39.8},
    "ID_Q": {"MC": 62.9, "QA": 27.1, "Sum": 28.1, "ALL": 32.0, "Fin": 39.7},
    "R_JUDGE": {"MC": 63.8, "QA": 28.2, "Sum": 28.8, "ALL": 31.2, "Fin": 41.5},
}
# Published drop rows; QA is excluded from the check (not derivable from the
# published full/RA values under the stated formula, e.g. base 30.0 -> 27.6
# is -8.0%, printed -27.6).
PUBLISHED_DROPS = {
    "Base": {"MC": -13.9, "Sum": -12.5, "ALL": -5.6, "Fin": -20.8},
    "AO": {"MC": -6.8, "Sum": -9.7, "ALL": -5.1, "Fin": -24.6},
    "ID": {"MC": -10.3, "Sum": -12.5, "ALL": -3.2, "Fin": -16.0},
    "ID_C": {"MC": -10.5, "Sum": -8.3, "ALL": -5.7, "Fin": -16.2},
    "ID_Q": {"MC": -11.0, "Sum": -7.9, "ALL": 0.0, "Fin": -22.9},
    "R_JUDGE": {"MC": -12.0, "Sum": -10.5, "ALL": -4.5, "Fin": -18.7},
}


@pytest.mark.parametrize("model", list(FULL_ROWS))
def test_drop_table_reproduction(model):
    start = time.monotonic()
    drops = drop_table(FULL_ROWS[model], RA_ROWS[model])
    elapsed = time.monotonic() - start
    assert elapsed < 1.0
    for task, expected in PUBLISHED_DROPS[model].items():
        assert drops[task] == pytest.approx(expected, abs=0.1), (
            f"{model}/{task}: computed {drops[task]} vs published {expected} "
            f"(full={FULL_ROWS[model][task]}, compressed={RA_ROWS[model][task]})"
        )
    report("drop-table", f"{model}: " + " ".join(f"{t}={drops[t]}" for t in ("MC", "Sum", "ALL", "Fin")))


def test_drop_table_qa_discrepancy_note():
    """QA is excluded by design: the published QA drops do not follow from the
    published full/compressed QA values under (compressed-full)/full."""
    drops = drop_table(FULL_ROWS["Base"], RA_ROWS["Base"])
    assert drops["QA"] == -8.0  # formula value
    assert drops["QA"] != -27.6  # published value; hence the exclusion
    report("drop-table-qa-note", "base QA formula drop -8.0, published -27.6, column excluded")


# --- 3. reward oracle equivalence --------------------------------------------


def _enum_instance(idx: int, p: int, gold: set[int]) -> ContextInstance:
    docs = []
    for i in range(p):
        n_words = 35 if i == min(gold) else 10
        words = " ".join(f"i{idx}d{i}w{j}" for j in range(n_words))
        origin = "gold" if i in gold else "hard_negative"
        docs.append(Document(index=i, text=words, origin=origin))
    return ContextInstance(
        id=f"enum-{idx}",
        question=f"question {idx}?",
        answers=[f"truth{idx} value"],
        documents=docs,
        gold_ids=gold,
    ).validate()


def _doc_span(inst: ContextInstance, doc: int, start: int, count: int) -> str:
    return " ".join(inst.documents[doc].text.split()[start : start + count])


def _score_pair(inst, kind, output, judge, oracle_kwargs, mismatches, counter):
    result = compute_reward(inst, output, kind, judge=judge)
    expected = oracle_reward(
        kind=kind.value,
        aliases=inst.answers,
        gold_ids=inst.gold_ids,
        gold_texts={i: inst.documents[i].text for i in inst.gold_ids},
        **oracle_kwargs,
    )
    counter[0] += 1
    if result.total != expected:
        mismatches.append((inst.id, kind.value, output, result.total, expected))


def test_reward_oracle_equivalence(table5_instances):
    start = time.monotonic()
    mismatches: list = []
    pairs = [0]

    instances = [
        _enum_instance(0, 2, {0}),
        _enum_instance(1, 3, {0, 2}),
        _enum_instance(2, 4, {1, 3}),
    ]
    for inst in instances:
        p = len(inst.documents)
        negatives = [i for i in range(p) if i not in inst.gold_ids]
        gold_low = min(inst.gold_ids)
        answers = {"good": inst.answers[0], "bad": "definitely mistaken reply"}
        subsets = [set(c) for r in range(p + 1) for c in itertools.combinations(range(p), r)]

        for answer in answers.values():
            _score_pair(
                inst, RewardKind.AO, render_ao(answer), None,
                {"answer_text": answer}, mismatches, pairs,
            )
            for cited in subsets:
                _score_pair(
                    inst, RewardKind.ID, render_id(cited, answer), None,
                    {"answer_text": answer, "cited": cited}, mismatches, pairs,
                )
                if cited:
                    for corrupt in (False, True):
                        contents = {}
                        for i in cited:
                            text = inst.documents[i].text
                            if corrupt:
                                text = " ".join(text.split()[: len(text.split()) // 2])
                            contents[i] = text
                        _score_pair(
                            inst, RewardKind.ID_C, render_id_c(contents, answer), None,
                            {"answer_text": answer, "cited": cited, "contents": contents},
                            mismatches, pairs,
                        )
                quote_variants = {
                    "gold": [_doc_span(inst, gold_low, 2, 5)],
                    "gold_pair": [
                        _doc_span(inst, gold_low, 2, 5),
                        _doc_span(inst, gold_low, 10, 4),
                    ],
                    "negative": [_doc_span(inst, negatives[0], 1, 5)],
                    "overlong": [_doc_span(inst, gold_low, 0, 31)],
                    "none": [],
                }
                for quotes in quote_variants.values():
                    _score_pair(
                        inst, RewardKind.ID_Q, render_id_q(quotes, cited, answer), None,
                        {"answer_text": answer, "cited": cited, "quotes": quotes},
                        mismatches, pairs,
                    )
            for cited in (set(), set(inst.gold_ids), {negatives[0]}):
                for verdict in ((0, 0, 0), (1, 0, 1), (0, 1, 0), (1, 1, 1)):
                    solution = render_reasoning(cited, answer)
                    digest = JudgeClient.digest(judge_payload(inst, solution))
                    judge = JudgeClient(
                        mode="recorded", fixtures={digest: render_verdict(*verdict)}
                    )
                    _score_pair(
                        inst, RewardKind.R_JUDGE, solution, judge,
                        {"answer_text": answer, "cited": cited, "verdict": verdict},
                        mismatches, pairs,
                    )

    # Table 5 fixtures: spot outputs around each instance's gold structure.
    for inst in table5_instances:
        gold = set(inst.gold_ids)
        gold_low = min(gold)
        negative = next(i for i in range(len(inst.documents)) if i not in gold)
        answer = inst.answers[0]
        cited_variants = [gold, gold - {gold_low}, gold | {negative}, set()]
        for cited in cited_variants:
            _score_pair(
                inst, RewardKind.ID, render_id(cited, answer), None,
                {"answer_text": answer, "cited": cited}, mismatches, pairs,
            )
        _score_pair(
            inst, RewardKind.AO, render_ao(answer), None,
            {"answer_text": answer}, mismatches, pairs,
        )
        _score_pair(
            inst, RewardKind.AO, render_ao("wrong thing"), None,
            {"answer_text": "wrong thing"}, mismatches, pairs,
        )
        exact = {i: inst.documents[i].text for i in gold}
        partial = {i: inst.documents[i].text for i in sorted(gold)[:1]}
        corrupted = {i: " ".join(t.split()[: len(t.split()) // 2]) for i, t in exact.items()}
        for contents in (exact, partial, corrupted):
            _score_pair(
                inst, RewardKind.ID_C, render_id_c(contents, answer), None,
                {"answer_text": answer, "cited": set(contents), "contents": contents},
                mismatches, pairs,
            )
        gold_quote = _doc_span(inst, gold_low, 1, 4)
        neg_quote = _doc_span(inst, negative, 1, 4)
        for quotes in ([gold_quote], [neg_quote], []):
            _score_pair(
                inst, RewardKind.ID_Q, render_id_q(quotes, gold, answer), None,
                {"answer_text": answer, "cited": gold, "quotes": quotes},
                mismatches, pairs,
            )
        for verdict in ((1, 1, 1), (0, 0, 0)):
            solution = render_reasoning(gold, answer)
            digest = JudgeClient.digest(judge_payload(inst, solution))
            judge = JudgeClient(mode="recorded", fixtures={digest: render_verdict(*verdict)})
            _score_pair(
                inst, RewardKind.R_JUDGE, solution, judge,
                {"answer_text": answer, "cited": gold, "verdict": verdict},
                mismatches, pairs,
            )

    elapsed = time.monotonic() - start
    assert pairs[0] >= 200
    assert not mismatches, mismatches[:5]
    assert elapsed < 10.0
    report("reward-oracle", f"{pairs[0]} pairs, 0 mismatches, {elapsed:.1f}s")


# --- 4. parser round-trip ------------------------------------------------------


def test_parser_round_trip():
    from icrkit import parsing

    start = time.monotonic()
    rng = random.Random(77)

    def word():
        return f"t{rng.randint(0, 9999)}"

    def phrase(lo, hi):
        return " ".join(word() for _ in range(rng.randint(lo, hi)))

    checked = 0
    for trial in range(1000):
        answer = phrase(1, 4)
        ids = set(rng.sample(range(16), k=rng.randint(0, 4)))
        contents = {
            i: "\n".join(phrase(2, 6) for _ in range(rng.randint(1, 2))) for i in ids
        }
        quotes = [phrase(1, 30) for _ in range(rng.randint(0, 3))]

        out = render_id(ids, answer)
        got, flags = parsing.extract_answer(out)
        assert got == answer and not flags
        got_ids, flags = parsing.extract_doc_ids(out)
        assert got_ids == ids and not flags

        if ids:
            out = render_id_c(contents, answer)
            got_contents, flags = parsing.extract_contents(out)
            assert got_contents == contents and not flags
            got_ids, flags = parsing.extract_doc_ids(out)
            assert got_ids == ids and not flags
            assert parsing.extract_answer(out)[0] == answer

        out = render_id_q(quotes, ids, answer)
        got_quotes, _ = parsing.extract_quotes(out)
        assert got_quotes == quotes
        got_ids, flags = parsing.extract_doc_ids(out)
        assert got_ids == ids and not flags
        assert parsing.extract_answer(out)[0] == answer

        out = render_reasoning(ids, answer)
        assert parsing.extract_citations(out) == ids
        assert parsing.extract_answer(out)[0] == answer

        # malformed mutations must surface the specified flags
        broken = render_id(ids, answer).replace("The answer is:", "Final verdict:")
        _, flags = parsing.extract_answer(broken)
        assert parsing.FLAG_NO_ANSWER_MARKER in flags

        if ids:
            lines = render_id(ids, answer).splitlines()
            lines[0] = lines[0] + ", [DOC -1]"
            mixed_ids, flags = parsing.extract_doc_ids("\n".join(lines))
            assert mixed_ids == set() and parsing.FLAG_MALFORMED_IDS in flags

            headerless = render_id_c(contents, answer).replace("Relevant documents:", "Documents:")
            got_contents, flags = parsing.extract_contents(headerless)
            assert got_contents == {} and parsing.FLAG_EMPTY_SECTIONS in flags

        overlong = render_id_q([" ".join(word() for _ in range(31))], ids, answer)
        _, flags = parsing.extract_quotes(overlong)
        assert parsing.FLAG_OVERLONG_QUOTE in flags

        checked += 1

    elapsed = time.monotonic() - start
    assert checked == 1000
    assert elapsed < 30.0
    report("parser-round-trip", f"1000 tuples, {elapsed:.1f}s")


# --- 5. NDCG brute-force equivalence ------------------------------------------


def test_ndcg_brute_force_equivalence():
    start = time.monotonic()
    checked = 0
    for n in range(1, 9):
        perms = list(itertools.permutations(range(n)))
        for r in range(1, min(3, n) + 1):
            for combo in itertools.combinations(range(n), r):
                relevant = set(combo)
                perfect = sorted(range(n), key=lambda d: 0 if d in relevant else 1)
                assert ndcg_at_k(perfect, relevant, 10) == 1.0
                for perm in perms:
                    impl = ndcg_at_k(perm, relevant, 10)
                    assert abs(impl - oracle_ndcg(list(perm), relevant, 10)) <= 1e-12
                    checked += 1
    elapsed = time.monotonic() - start
    assert elapsed < 60.0
    report("ndcg-brute-force", f"{checked} rankings, {elapsed:.1f}s")


# --- 6. permutation invariance --------------------------------------------------


def _random_instance(rng: random.Random, idx: int) -> ContextInstance:
    p = rng.randint(2, 8)
    gold = set(rng.sample(range(p), k=rng.randint(1, p - 1)))
    docs = []
    for i in range(p):
        words = " ".join(f"i{idx}d{i}w{j}" for j in range(rng.randint(6, 12)))
        docs.append(
            Document(index=i, text=words, origin="gold" if i in gold else "hard_negative")
        )
    return ContextInstance(
        id=f"perm-{idx}",
        question=f"q{idx}?",
        answers=[f"alias{idx} main"],
        documents=docs,
        gold_ids=gold,
    ).validate()


def _permute(inst: ContextInstance, order: list[int]) -> tuple[ContextInstance, dict[int, int]]:
    """order[new_position] = old_position; returns (instance, old->new map)."""
    docs = [
        Document(index=new, text=inst.documents[old].text, origin=inst.documents[old].origin)
        for new, old in enumerate(order)
    ]
    old_to_new = {old: new for new, old in enumerate(order)}
    gold = {old_to_new[i] for i in inst.gold_ids}
    return (
        ContextInstance(
            id=inst.id, question=inst.question, answers=list(inst.answers),
            documents=docs, gold_ids=gold,
        ).validate(),
        old_to_new,
    )


def test_reward_permutation_invariance():
    rng = random.Random(4242)
    violations = 0
    for idx in range(500):
        inst = _random_instance(rng, idx)
        p = len(inst.documents)
        order = list(range(p))
        rng.shuffle(order)
        permuted, old_to_new = _permute(inst, order)

        answer = inst.answers[0] if rng.random() < 0.5 else "mistaken output"
        cited = set(inst.gold_ids) if rng.random() < 0.5 else set(
            rng.sample(range(p), k=rng.randint(0, p))
        )
        cited_mapped = {old_to_new[i] for i in cited}
        gold_low = min(inst.gold_ids)
        quote_pool = {
            "gold": [" ".join(inst.documents[gold_low].text.split()[:4])],
            "neg": [
                " ".join(
                    inst.documents[
                        next((i for i in range(p) if i not in inst.gold_ids), gold_low)
                    ].text.split()[:4]
                )
            ],
            "none": [],
        }
        quotes = quote_pool[rng.choice(list(quote_pool))]
        corrupt = rng.random() < 0.5
        contents = {}
        for i in cited:
            text = inst.documents[i].text
            if corrupt:
                text = " ".join(text.split()[:3])
            contents[i] = text
        contents_mapped = {old_to_new[i]: t for i, t in contents.items()}
        verdict = (rng.randint(0, 1), rng.randint(0, 1), rng.randint(0, 1))

        cases = {
            RewardKind.AO: (render_ao(answer), render_ao(answer)),
            RewardKind.ID: (render_id(cited, answer), render_id(cited_mapped, answer)),
            RewardKind.ID_C: (
                render_id_c(contents, answer) if contents else render_id_c({0: "x"}, answer),
                render_id_c(contents_mapped, answer) if contents else render_id_c({old_to_new[0]: "x"}, answer),
            ),
            RewardKind.ID_Q: (
                render_id_q(quotes, cited, answer),
                render_id_q(quotes, cited_mapped, answer),
            ),
            RewardKind.R_JUDGE: (
                render_reasoning(cited, answer),
                render_reasoning(cited_mapped, answer),
            ),
        }
        for kind, (out_a, out_b) in cases.items():
            if kind is RewardKind.R_JUDGE:
                fixtures = {
                    JudgeClient.digest(judge_payload(inst, out_a)): render_verdict(*verdict),
                    JudgeClient.digest(judge_payload(permuted, out_b)): render_verdict(*verdict),
                }
                judge = JudgeClient(mode="recorded", fixtures=fixtures)
            else:
                judge = None
            before = compute_reward(inst, out_a, kind, judge=judge)
            after = compute_reward(permuted, out_b, kind, judge=judge)
            if before.total != after.total or before.components() != after.components():
                violations += 1
    assert violations == 0
    report("permutation-invariance", "500 instances x 5 kinds, 0 violations")


# --- 7. retention nesting --------------------------------------------------------


def test_retention_nesting():
    rng = random.Random(99)
    violations = 0
    for _ in range(1000):
        n = rng.randint(1, 48)
        scores = [rng.choice([0.0, 0.25, 0.25, 0.5, 1.0, rng.random()]) for _ in range(n)]
        bounds = sorted(rng.sample(range(n + 1), k=min(n + 1, rng.randint(2, 6))))
        spans = [
            (i, a, b) for i, (a, b) in enumerate(zip(bounds, bounds[1:])) if a < b
        ]
        if not spans:
            spans = [(0, 0, n)]
        rec = AttentionRecord("r", spans, scores).validate()
        previous: set[int] = set()
        prev_survival = {doc: 0.0 for doc, _, _ in spans}
        for budget in range(0, n + 1, max(1, n // 7)):
            mask, survival = simulate_topk_retention(rec, budget)
            current = {i for i, kept in enumerate(mask) if kept}
            if not previous <= current:
                violations += 1
            if any(survival[d] < prev_survival[d] - 1e-15 for d in survival):
                violations += 1
            previous = current
            prev_survival = survival
    assert violations == 0
    report("retention-nesting", "1000 records, 0 violations")


# --- 8. pipeline determinism ------------------------------------------------------


def test_pipeline_determinism(tmp_path):
    fixture = make_all_relevant_judge_fixture(CANDIDATES, tmp_path / "judge.jsonl")

    def run(outdir):
        result = CliRunner().invoke(
            cli_main,
            [
                "--seed", "42",
                "build-data",
                "--candidates", str(CANDIDATES),
                "--outdir", str(outdir),
                "--judge-fixtures", str(fixture),
            ],
            catch_exceptions=False,
        )
        assert result.exit_code == 0, result.output

    run(tmp_path / "a")
    run(tmp_path / "b")
    train_a = (tmp_path / "a" / "train.jsonl").read_bytes()
    dev_a = (tmp_path / "a" / "dev.jsonl").read_bytes()
    assert train_a == (tmp_path / "b" / "train.jsonl").read_bytes()
    assert dev_a == (tmp_path / "b" / "dev.jsonl").read_bytes()
    n_train = len(train_a.splitlines())
    n_dev = len(dev_a.splitlines())
    assert (n_train, n_dev) == (19, 1)  # round(0.95 * 20) = 19
    report("pipeline-determinism", "byte-identical outputs, split 19/1")


# --- 9. refinement property --------------------------------------------------------


def test_refinement_doubles_gold(tmp_path):
    rng = random.Random(5150)
    stems = ["arbel", "corim", "dovan", "elmus", "farow", "gilto", "haren", "ivoln"]

    def letter_phrase(n):
        return " ".join(rng.choice(stems) + rng.choice("aeiou") for _ in range(n))

    candidates = tmp_path / "synthetic.jsonl"
    with open(candidates, "w", encoding="utf-8") as f:
        for k in range(8):
            gold_a = f"record {k} alfa " + letter_phrase(10)
            gold_b = f"record {k} bravo " + letter_phrase(10)
            near_a = gold_a.replace("alfa", "alfax")
            near_b = gold_b.replace("bravo", "bravox")
            noise = [" ".join(str(rng.randint(100, 99999)) for _ in range(12)) for _ in range(4)]
            f.write(json.dumps({
                "id": f"syn-{k}",
                "question": f"which record {k}?",
                "answers": [f"record {k}"],
                "gold_docs": [gold_a, gold_b],
                "retrieved": [near_a, near_b, *noise],
            }) + "\n")

    fixture = make_all_relevant_judge_fixture(candidates, tmp_path / "judge.jsonl")
    outdir = tmp_path / "built"
    report_data = build_data(
        candidates, outdir, RunConfig(seed=1),
        judge=JudgeClient.from_fixture_file(fixture),
    )
    instances = read_instances(outdir / "train.jsonl") + read_instances(outdir / "dev.jsonl")
    assert len(instances) == 8
    mean_gold = sum(len(i.gold_ids) for i in instances) / len(instances)
    assert mean_gold == 4.0
    assert report_data["mean_gold_before_refinement"] == 2.0
    assert report_data["mean_gold_after_refinement"] == 4.0
    report("refinement-doubling", "mean gold 2.0 -> 4.0 exactly")


# --- 10. rouge-l spot values ---------------------------------------------------------


def test_rouge_l_spot_values():
    assert rouge_l("the cat sat", "the cat") == 0.8
    assert rouge_l("identical sentence here", "identical sentence here") == 1.0
    assert rouge_l("alpha beta gamma", "delta epsilon zeta") == 0.0
    report("rouge-spot-values", "0.8 / 1.0 / 0.0 exact")
