"""Acceptance suite: one test per release criterion, one PASS line each.

Run with `pytest tests/test_acceptance.py -v -s`. Every tolerance is pinned
here; the fixture expectations live in fixtures/oracle_counts.json and come
from scripts/oracle_counts.py, an independent re-implementation.
"""

import json
import math
import threading
import time

import numpy as np

from mmdial.builder import Instance, load_instances
from mmdial.calibrate import filter_instances, interpolate_threshold, spearman_rho
from mmdial.cli import main
from mmdial.corpus import EmbeddingStore, Turn
from mmdial.evalharness import evaluate, score
from mmdial.preprocess import is_question
from mmdial.reference import REFERENCE_THRESHOLDS
from mmdial.service import AnnotationLog, AnnotationService, make_server

from conftest import FIXTURES, make_image, unit_vectors
from test_calibrate import make_instance as make_plain_instance
from test_calibrate import proportional_q3_annotations, spread_instances
from test_service import HttpClient
from test_service import make_instance as make_service_instance


def ok(num, name):
    print(f"\nACCEPTANCE {num} ({name}): PASS")


# -------------------------------------------------------------------------
# 1. top-k exactness, determinism across workers, runtime

def test_criterion_1_topk_exactness():
    n_images, n_queries, dim, k = 10_000, 1_000, 64, 5
    image_matrix = unit_vectors(n_images, dim, seed=101)
    ids = tuple(f"img{j:05d}" for j in range(n_images))
    store = EmbeddingStore(dim, ids, np.ascontiguousarray(image_matrix), True)
    queries = [(f"q{j:04d}", v) for j, v in enumerate(unit_vectors(n_queries, dim, seed=202))]

    def oracle(query, floor):
        # independent route: elementwise multiply-sum + stable argsort
        sims = (image_matrix * query).sum(axis=1)
        order = np.argsort(-sims, kind="stable")
        out = []
        for idx in order:
            if sims[idx] >= floor:
                out.append((ids[idx], float(sims[idx])))
            if len(out) == k:
                break
        return out

    from mmdial.simsearch import topk_batch

    elapsed = 0.0
    for floor in (-1.0, 0.0, 0.3):
        start = time.perf_counter()
        per_worker = [topk_batch(queries, store, k, floor, workers=w) for w in (1, 4, 8)]
        elapsed += time.perf_counter() - start
        assert per_worker[0] == per_worker[1] == per_worker[2]
        for res, (qid, query) in zip(per_worker[0], queries):
            expected = oracle(query, floor)
            assert res.query_id == qid
            assert [m.image_id for m in res.matches] == [eid for eid, _ in expected]
            for match, (_, sim) in zip(res.matches, expected):
                assert abs(match.similarity - sim) <= 1e-9
    assert elapsed < 10.0, f"nine batch runs took {elapsed:.1f}s"
    ok(1, f"top-k exactness, {elapsed:.1f}s for 9 runs")


# -------------------------------------------------------------------------
# 2. Spearman against rank-then-Pearson oracle

def rank_then_pearson(x, y):
    def ranks(values):
        order = sorted(range(len(values)), key=lambda i: values[i])
        out = [0.0] * len(values)
        i = 0
        while i < len(values):
            j = i
            while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
                j += 1
            for t in range(i, j + 1):
                out[order[t]] = (i + j) / 2 + 1
            i = j + 1
        return out

    rx, ry = ranks(x), ranks(y)
    mx = sum(rx) / len(rx)
    my = sum(ry) / len(ry)
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx)
    vy = sum((b - my) ** 2 for b in ry)
    return cov / math.sqrt(vx * vy)


def test_criterion_2_spearman_oracle():
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 500:
        n = int(rng.integers(2, 51))
        x = rng.integers(-6, 7, size=n).astype(float)  # coarse grid forces ties
        y = rng.integers(-6, 7, size=n).astype(float)
        if np.all(x == x[0]) or np.all(y == y[0]):
            continue
        got = spearman_rho(x, y)
        assert abs(got - rank_then_pearson(list(x), list(y))) <= 1e-12
        # strictly monotone transforms preserve ranks exactly
        assert spearman_rho(np.exp(x / 10), y ** 3) == got
        checked += 1
    ok(2, "spearman rank-then-pearson oracle, 500 pairs")


# -------------------------------------------------------------------------
# 3. threshold interpolation

def test_criterion_3_threshold_interpolation():
    got = interpolate_threshold([(0.2, 1.0), (0.4, 2.5), (0.6, 3.0)], 2.0)
    assert abs(got - 1 / 3) <= 1e-9
    got = interpolate_threshold([(0.2, 2.5), (0.4, 1.5), (0.6, 2.5)], 2.0)
    assert abs(got - 0.5) <= 1e-9

    from mmdial.calibrate import calibrate

    instances = spread_instances(400, lo=0.2, hi=1.0)
    annotations = proportional_q3_annotations(instances)
    report = calibrate(instances, annotations, seed=11, per_segment=40)
    threshold = report.combinations[("daily", "coco")].thresholds["q3"]
    segment_width = (1.0 - 0.2) / 10
    assert abs(threshold - 0.6) <= segment_width
    ok(3, "threshold interpolation")


# -------------------------------------------------------------------------
# 4. end-to-end determinism on the bundled fixture

def run_pipeline(out_dir):
    config = json.loads((FIXTURES / "pipeline_config.json").read_text())
    build = ["build",
             "--dialogues", f"daily={FIXTURES}/dialogues_daily.jsonl",
             "--dialogues", f"persona={FIXTURES}/dialogues_persona.jsonl",
             "--images", f"coco={FIXTURES}/images_coco.jsonl",
             "--images", f"flickr={FIXTURES}/images_flickr.jsonl",
             "--embeddings", f"sentences={FIXTURES}/embeddings_sentences.jsonl",
             "--embeddings", f"images={FIXTURES}/embeddings_images.emb",
             "--topk", str(config["topk"]), "--floor", str(config["floor"]),
             "--seed", str(config["seed"]), "--out", str(out_dir)]
    assert main(build) == 0
    assert main(["calibrate", "--instances", str(out_dir / "instances.jsonl"),
                 "--annotations", str(FIXTURES / "annotations.csv"),
                 "--seed", str(config["seed"]),
                 "--out", str(out_dir / "thresholds.json")]) == 0
    assert main(["filter", "--instances", str(out_dir / "instances.jsonl"),
                 "--thresholds", str(out_dir / "thresholds.json"),
                 "--out", str(out_dir / "filtered.jsonl")]) == 0
    assert main(["stats", "--instances", str(out_dir / "filtered.jsonl"),
                 "--dialogues", f"daily={FIXTURES}/dialogues_daily.jsonl",
                 "--dialogues", f"persona={FIXTURES}/dialogues_persona.jsonl",
                 "--out", str(out_dir / "stats.json")]) == 0
    for task in ("current", "next"):
        assert main(["eval", "--instances", str(out_dir / "filtered.jsonl"),
                     "--images", f"coco={FIXTURES}/images_coco.jsonl",
                     "--images", f"flickr={FIXTURES}/images_flickr.jsonl",
                     "--task", task, "--split", "test",
                     "--seed", str(config["seed"]),
                     "--out", str(out_dir / f"eval_{task}.json")]) == 0
    return ["instances.jsonl", "sims.jsonl", "thresholds.json", "filtered.jsonl",
            "stats.json", "eval_current.json", "eval_next.json"]


def test_criterion_4_end_to_end_determinism(tmp_path, capsys):
    run_a = tmp_path / "a"
    run_b = tmp_path / "b"
    artifacts = run_pipeline(run_a)
    run_pipeline(run_b)
    for name in artifacts:
        assert (run_a / name).read_bytes() == (run_b / name).read_bytes(), name

    expected = json.loads((FIXTURES / "oracle_counts.json").read_text())
    instances = load_instances(run_a / "instances.jsonl")
    assert len(instances) == expected["instances"]
    by_split = {s: sum(1 for i in instances if i.split == s)
                for s in ("train", "valid", "test")}
    assert by_split == expected["instances_by_split"]

    kept = load_instances(run_a / "filtered.jsonl")
    assert len(kept) == expected["kept_total"]
    kept_by_split = {s: sum(1 for i in kept if i.split == s)
                     for s in ("train", "valid", "test")}
    assert kept_by_split == expected["kept_by_split"]

    thresholds = json.loads((run_a / "thresholds.json").read_text())
    for label, want in expected["thresholds"].items():
        entry = thresholds["combinations"][label]
        for question in ("q1", "q2", "q3", "chosen"):
            if want[question] is None:
                assert entry[question] is None
            else:
                assert abs(entry[question] - want[question]) <= 1e-9
        assert entry["kept"] == expected["kept_by_combination"][label]

    for task in ("current", "next"):
        report = json.loads((run_a / f"eval_{task}.json").read_text())
        assert report["n"] == expected["eval_n"][task]

    # corpus-level oracle counts (independent line/turn counting)
    for source, want in expected["dialogues"].items():
        records = [json.loads(line) for line in
                   (FIXTURES / f"dialogues_{source}.jsonl").read_text().splitlines()]
        assert len(records) == want["dialogues"]
        assert sum(len(r["turns"]) for r in records) == want["turns"]
    ok(4, "end-to-end determinism + oracle counts")


# -------------------------------------------------------------------------
# 5. strict filtering semantics with the reference thresholds

def test_criterion_5_filtering_semantics():
    rng = np.random.default_rng(77)
    combos = sorted(REFERENCE_THRESHOLDS)
    instances = []
    for n in range(10_000):
        dsrc, isrc = combos[int(rng.integers(len(combos)))]
        sim = float(rng.uniform(-1.0, 1.0))
        instances.append(make_plain_instance(n, sim, dsrc=dsrc, isrc=isrc))
    kept = filter_instances(instances, REFERENCE_THRESHOLDS)
    assert all(inst.similarity > REFERENCE_THRESHOLDS[inst.combination] for inst in kept)
    assert not any(inst.similarity <= REFERENCE_THRESHOLDS[inst.combination]
                   for inst in kept)
    expected = sum(1 for inst in instances
                   if inst.similarity > REFERENCE_THRESHOLDS[inst.combination])
    assert len(kept) == expected
    boundary = make_plain_instance(10_001, 0.546, dsrc="persona", isrc="coco")
    assert filter_instances([boundary], REFERENCE_THRESHOLDS) == []
    ok(5, f"strict filtering, kept {len(kept)}/10000")


# -------------------------------------------------------------------------
# 6. evaluation metrics

def test_criterion_6_eval_metrics():
    instances, images = [], []
    for n in range(120):
        target = f"planted unique sentence {n} quartz nimbus"
        instances.append(Instance(
            instance_id=f"d{n}#1#pm{n}", dialogue_id=f"d{n}",
            dialogue_source="daily", image_source="coco", split="test",
            context_turns=(Turn(0, "zz unrelated filler"),),
            target_sentence=target, image_id=f"pm{n}", similarity=0.9,
            next_sentence=None))
        images.append(make_image(f"pm{n}", caption=target))
    metrics, _ = evaluate(instances, images, "current", seed=5)
    assert metrics.r_at_1 == 1.0

    hand = score([1, 3, 10])
    assert abs(hand.r_at_1 - 0.3333) <= 1e-4
    assert abs(hand.r_at_5 - 0.6667) <= 1e-4
    assert abs(hand.mean_rank - 4.6667) <= 1e-4
    assert abs(hand.mrr - 0.4778) <= 1e-4

    rng = np.random.default_rng(6)
    for _ in range(100):
        ranks = [int(r) for r in rng.integers(1, 101, size=int(rng.integers(1, 60)))]
        metrics = score(ranks)
        assert metrics.r_at_1 <= metrics.r_at_5
    ok(6, "eval metrics")


# -------------------------------------------------------------------------
# 7. pipeline structural invariants

def test_criterion_7_structural_invariants(tmp_path):
    out = tmp_path / "run"
    run_pipeline(out)
    for name in ("instances.jsonl", "filtered.jsonl"):
        raw_lines = (out / name).read_text().splitlines()
        instances = load_instances(out / name)
        assert len(raw_lines) == len(instances)
        for line, inst in zip(raw_lines, instances):
            record = json.loads(line)
            assert not is_question(inst.target_sentence)
            assert len(inst.context_turns) >= 1
            assert isinstance(record["image_id"], str)  # exactly one image field
            assert record["instance_id"].count("#") == 2

    # multiplicity: instances per candidate == qualifying match count
    sims = [json.loads(line) for line in (out / "sims.jsonl").read_text().splitlines()]
    instances = load_instances(out / "instances.jsonl")
    per_candidate = {}
    for inst in instances:
        key = inst.instance_id.rsplit("#", 1)[0]
        per_candidate[key] = per_candidate.get(key, 0) + 1
    for rec in sims:
        assert per_candidate.get(rec["query_id"], 0) == len(rec["matches"])
    ok(7, "structural invariants")


# -------------------------------------------------------------------------
# 8. annotation service under concurrency and restart

def test_criterion_8_annotation_service(tmp_path, capsys):
    instances = [make_service_instance(n, sim=0.3 + 0.004 * n) for n in range(100)]
    from mmdial.builder import write_instances
    write_instances(tmp_path / "sample.jsonl", instances)
    log_path = tmp_path / "answers.csv"

    log = AnnotationLog(log_path)
    server = make_server(AnnotationService(instances, log), 0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    client = HttpClient(server.server_address[1])

    failures = []

    def annotate(annotator):
        try:
            status, batch = client.get(f"/api/batch?annotator={annotator}&limit=100")
            assert status == 200 and len(batch["items"]) == 100
            for item in batch["items"]:
                status, _ = client.post("/api/answer", {
                    "instance_id": item["instance_id"], "annotator_id": annotator,
                    "q1": 2, "q2": 2, "q3": 4})
                assert status == 200
        except Exception as exc:
            failures.append(exc)

    threads = [threading.Thread(target=annotate, args=(f"ann{k}",)) for k in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=120)
    assert not failures
    dup_status, _ = client.post("/api/answer", {
        "instance_id": instances[0].instance_id, "annotator_id": "ann0",
        "q1": 1, "q2": 1, "q3": 1})
    assert dup_status == 409
    server.shutdown()
    server.server_close()
    log.close()

    rows = log_path.read_text().splitlines()
    assert len(rows) == 1 + 300  # header + 3 annotators x 100 instances

    # restart: replayed log still rejects the duplicate, progress intact
    log2 = AnnotationLog(log_path)
    server2 = make_server(AnnotationService(instances, log2), 0)
    thread2 = threading.Thread(target=server2.serve_forever, daemon=True)
    thread2.start()
    client2 = HttpClient(server2.server_address[1])
    status, progress = client2.get("/api/progress?annotator=ann1")
    assert status == 200 and progress == {"answered": 100, "total": 100}
    dup_status, _ = client2.post("/api/answer", {
        "instance_id": instances[3].instance_id, "annotator_id": "ann2",
        "q1": 1, "q2": 1, "q3": 1})
    assert dup_status == 409
    server2.shutdown()
    server2.server_close()
    log2.close()

    # the calibrate command ingests the service log without error
    assert main(["calibrate", "--instances", str(tmp_path / "sample.jsonl"),
                 "--annotations", str(log_path), "--seed", "17",
                 "--out", str(tmp_path / "thresholds.json")]) == 0
    payload = json.loads((tmp_path / "thresholds.json").read_text())
    assert payload["combinations"]["daily+coco"]["total"] == 100
    ok(8, "annotation service concurrency + restart")
