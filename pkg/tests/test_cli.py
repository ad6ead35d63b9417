import json
import subprocess
import sys

import pytest

from mtforge.align import train_align, save_align
from mtforge.cli import main
from mtforge.corpus import Corpus, SentencePair
from mtforge.lm import save_lm, train_ngram


def _write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")


def _clean_rows(n=6):
    return [{"id": i, "src": f"src{i} a b", "tgt": f"tgt{i} c d"} for i in range(n)]


def _report(out_path):
    return json.loads((out_path.parent / (out_path.name + ".report.json")).read_text())


# exit codes ------------------------------------------------------------

def test_unknown_subcommand_exits_1(capsys):
    assert main(["frobnicate"]) == 1
    assert "invalid choice" in capsys.readouterr().err


def test_missing_required_flag_exits_1(capsys):
    assert main(["train-lm"]) == 1


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "filter" in capsys.readouterr().out


def test_unknown_config_key_exits_1(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"frobs": {}}')
    infile = tmp_path / "in.txt"
    infile.write_text("a b\n")
    rc = main(["train-lm", "--in", str(infile), "--out", str(tmp_path / "lm"),
               "--config", str(cfg)])
    assert rc == 1
    assert "unknown key" in capsys.readouterr().err


def test_unknown_key_inside_section_exits_1(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"lm": {"bogus": 1}}')
    infile = tmp_path / "in.txt"
    infile.write_text("a b\n")
    rc = main(["train-lm", "--in", str(infile), "--out", str(tmp_path / "lm"),
               "--config", str(cfg)])
    assert rc == 1
    assert "bogus" in capsys.readouterr().err


def test_non_object_config_exits_1(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2]")
    infile = tmp_path / "in.txt"
    infile.write_text("a b\n")
    assert main(["train-lm", "--in", str(infile), "--out", str(tmp_path / "lm"),
                 "--config", str(cfg)]) == 1


def test_missing_config_file_exits_1(tmp_path, capsys):
    infile = tmp_path / "in.txt"
    infile.write_text("a b\n")
    assert main(["train-lm", "--in", str(infile), "--out", str(tmp_path / "lm"),
                 "--config", str(tmp_path / "nope.json")]) == 1


def test_workers_below_one_exits_1(tmp_path, capsys):
    infile = tmp_path / "in.txt"
    infile.write_text("a b\n")
    assert main(["train-lm", "--in", str(infile), "--out", str(tmp_path / "lm"),
                 "--workers", "0"]) == 1


def test_malformed_input_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("this is not json\n")
    rc = main(["filter", "--in", str(bad), "--out", str(tmp_path / "out.jsonl")])
    assert rc == 2
    assert capsys.readouterr().err.startswith("mtforge:")


# reports and figures ---------------------------------------------------

def test_filter_success_writes_report(tmp_path, capsys):
    infile = tmp_path / "in.jsonl"
    _write_jsonl(infile, _clean_rows())
    out = tmp_path / "out.jsonl"
    assert main(["filter", "--in", str(infile), "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 6
    report = _report(out)
    assert report["stage"] == "filter"
    assert report["count_in"] == 6
    assert report["count_out"] == 6
    assert report["drops"] == {}
    assert report["config"]["command"] == "filter"
    assert report["config"]["max_words"] == 120


def test_filter_reports_drop_reasons(tmp_path):
    rows = _clean_rows()
    rows.append({"id": 6, "src": " ".join(f"w{i}" for i in range(121)),
                 "tgt": "short enough sentence here maybe ok"})
    infile = tmp_path / "in.jsonl"
    _write_jsonl(infile, rows)
    out = tmp_path / "out.jsonl"
    assert main(["filter", "--in", str(infile), "--out", str(out)]) == 0
    report = _report(out)
    assert report["drops"] == {"length": 1}
    assert report["count_in"] == report["count_out"] + 1


def test_explicit_report_path(tmp_path):
    infile = tmp_path / "in.jsonl"
    _write_jsonl(infile, _clean_rows())
    out = tmp_path / "out.jsonl"
    rpath = tmp_path / "custom-report.json"
    assert main(["filter", "--in", str(infile), "--out", str(out),
                 "--report", str(rpath)]) == 0
    assert rpath.exists()
    assert not (tmp_path / "out.jsonl.report.json").exists()


def test_plot_renders_png(tmp_path):
    infile = tmp_path / "in.jsonl"
    _write_jsonl(infile, _clean_rows())
    out = tmp_path / "out.jsonl"
    assert main(["filter", "--in", str(infile), "--out", str(out), "--plot"]) == 0
    png = tmp_path / "out.jsonl.report.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_config_flag_precedence(tmp_path):
    infile = tmp_path / "in.txt"
    infile.write_text("the cat sat\nthe dog sat\n" * 4)
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"seed": 5, "lm": {"order": 4}}')
    out = tmp_path / "a.lm"
    assert main(["train-lm", "--in", str(infile), "--out", str(out),
                 "--config", str(cfg)]) == 0
    report = _report(out)
    assert report["config"]["order"] == 4
    assert report["config"]["seed"] == 5

    out2 = tmp_path / "b.lm"
    assert main(["train-lm", "--in", str(infile), "--out", str(out2),
                 "--config", str(cfg), "--order", "2", "--seed", "9"]) == 0
    report2 = _report(out2)
    assert report2["config"]["order"] == 2
    assert report2["config"]["seed"] == 9


# metrics ---------------------------------------------------------------

def test_bleu_identical_files_score_100(tmp_path, capsys):
    f = tmp_path / "t.txt"
    f.write_text("a b c d\ne f g\n")
    saved = tmp_path / "bleu.json"
    assert main(["bleu", "--hyp", str(f), "--ref", str(f), "--out", str(saved)]) == 0
    detail = json.loads(capsys.readouterr().out)
    assert detail["bleu"] == 100.0
    assert json.loads(saved.read_text()) == detail


def test_bleu_count_mismatch_exits_2(tmp_path, capsys):
    hyp = tmp_path / "h.txt"
    ref = tmp_path / "r.txt"
    hyp.write_text("a b\n")
    ref.write_text("a b\nc d\n")
    assert main(["bleu", "--hyp", str(hyp), "--ref", str(ref)]) == 2
    assert "mismatch" in capsys.readouterr().err


# stage chains ----------------------------------------------------------

def test_lm_score_then_topk_chain(tmp_path):
    text = tmp_path / "train.txt"
    text.write_text("the cat sat on the mat\nthe dog sat on the rug\n" * 5)
    lm_path = tmp_path / "word.lm"
    assert main(["train-lm", "--in", str(text), "--out", str(lm_path),
                 "--order", "2", "--min-count", "1"]) == 0

    corpus = tmp_path / "corpus.jsonl"
    _write_jsonl(corpus, [
        {"id": 0, "src": "the cat sat on the mat", "tgt": "x"},
        {"id": 1, "src": "zebras argue quantum pottery", "tgt": "x"},
        {"id": 2, "src": "the dog sat on the rug", "tgt": "x"},
    ])
    scored = tmp_path / "scored.jsonl"
    assert main(["score-lm", "--in", str(corpus), "--lm", str(lm_path),
                 "--out", str(scored)]) == 0
    rows = [json.loads(line) for line in scored.read_text().splitlines()]
    assert all("ce_src" in r["scores"] for r in rows)
    assert rows[1]["scores"]["ce_src"] > rows[0]["scores"]["ce_src"]

    kept = tmp_path / "kept.jsonl"
    assert main(["select-topk", "--in", str(scored), "--score-name", "ce_src",
                 "--k", "2", "--criterion", "lowest", "--out", str(kept)]) == 0
    kept_ids = [json.loads(line)["id"] for line in kept.read_text().splitlines()]
    assert kept_ids == [0, 2]
    report = _report(kept)
    assert report["count_out"] == 2
    assert sum(report["drops"].values()) == 1


def test_noise_seed_reproducible(tmp_path):
    text = tmp_path / "mono.txt"
    text.write_text("".join(f"tok{i} " for i in range(200)).strip() + "\n")
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"noise": {"p_drop": 0.3}}')
    outs = []
    for name in ("a.txt", "b.txt"):
        out = tmp_path / name
        assert main(["noise", "--in", str(text), "--format", "text",
                     "--side", "src", "--out", str(out),
                     "--config", str(cfg), "--seed", "7"]) == 0
        outs.append(out.read_text())
    assert outs[0] == outs[1]
    assert outs[0] != text.read_text()


def test_bpe_cli_round_trip(tmp_path):
    text = tmp_path / "train.txt"
    text.write_text("low lower lowest\nnew newer newest\n" * 10)
    model = tmp_path / "codes.bpe"
    assert main(["bpe-learn", "--in", str(text), "--merges", "50",
                 "--out", str(model)]) == 0

    corpus = tmp_path / "c.jsonl"
    _write_jsonl(corpus, [{"id": 0, "src": "lower new", "tgt": "newest low"}])
    split = tmp_path / "split.jsonl"
    assert main(["bpe-apply", "--in", str(corpus), "--model", str(model),
                 "--out", str(split)]) == 0
    restored = tmp_path / "restored.jsonl"
    assert main(["bpe-apply", "--in", str(split), "--model", str(model),
                 "--decode", "--out", str(restored)]) == 0
    assert restored.read_text() == corpus.read_text()


def test_reverse_src_text(tmp_path):
    text = tmp_path / "in.txt"
    text.write_text("a b c\nx y\n")
    out = tmp_path / "out.txt"
    assert main(["reverse-src", "--in", str(text), "--format", "text",
                 "--out", str(out)]) == 0
    assert out.read_text() == "c b a\ny x\n"


def test_postprocess_strips_unk_and_detokenizes(tmp_path):
    text = tmp_path / "in.txt"
    text.write_text("hello <unk> world !\n")
    out = tmp_path / "out.txt"
    assert main(["postprocess", "--in", str(text), "--out", str(out)]) == 0
    assert out.read_text() == "hello world!\n"


def test_ingest_scores_cli(tmp_path, capsys):
    corpus = tmp_path / "c.jsonl"
    _write_jsonl(corpus, _clean_rows(2))
    scores = tmp_path / "s.jsonl"
    _write_jsonl(scores, [{"id": 0, "score": 1.5}, {"id": 1, "score": -2.0}])
    out = tmp_path / "out.jsonl"
    assert main(["ingest-scores", "--in", str(corpus), "--scores", str(scores),
                 "--score-name", "ext", "--out", str(out)]) == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert [r["scores"]["ext"] for r in rows] == [1.5, -2.0]

    short = tmp_path / "short.jsonl"
    _write_jsonl(short, [{"id": 0, "score": 1.5}])
    assert main(["ingest-scores", "--in", str(corpus), "--scores", str(short),
                 "--score-name", "ext", "--out", str(out)]) == 2


def test_kd_filter_cli(tmp_path):
    corpus = tmp_path / "hyps.jsonl"
    _write_jsonl(corpus, [
        {"id": 0, "src": "s", "tgt": "a b c d"},
        {"id": 1, "src": "s", "tgt": "x y z w"},
    ])
    refs = tmp_path / "refs.txt"
    refs.write_text("a b c d\na b c d\n")
    out = tmp_path / "kept.jsonl"
    assert main(["kd-filter", "--in", str(corpus), "--refs", str(refs),
                 "--threshold", "50", "--out", str(out)]) == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert [r["id"] for r in rows] == [0]
    assert sum(_report(out)["drops"].values()) == 1


def test_train_langid_then_filter_drops_wrong_language(tmp_path):
    aa = tmp_path / "aa.txt"
    zz = tmp_path / "zz.txt"
    aa.write_text("".join("abe bad cafe dab ace\n" for _ in range(30)))
    zz.write_text("".join("noon spoon toss runt upon\n" for _ in range(30)))
    model = tmp_path / "langid.json"
    assert main(["train-langid", "--train", f"aa={aa}", "--train", f"zz={zz}",
                 "--out", str(model)]) == 0

    fillers = ("abe", "bad", "cafe", "dab")
    rows = [{"id": i, "src": f"{fillers[i]} bad cafe dab", "tgt": f"ace dab {fillers[i]}"}
            for i in range(4)]
    rows.append({"id": 4, "src": "noon spoon toss runt", "tgt": "ace dab bad cafe"})
    corpus = tmp_path / "c.jsonl"
    _write_jsonl(corpus, rows)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "filter": {"expected_src_lang": "aa", "expected_tgt_lang": "aa"}
    }))
    out = tmp_path / "out.jsonl"
    assert main(["filter", "--in", str(corpus), "--out", str(out),
                 "--langid-model", str(model), "--config", str(cfg)]) == 0
    report = _report(out)
    assert report["drops"] == {"langid": 1}
    kept_ids = [json.loads(line)["id"] for line in out.read_text().splitlines()]
    assert kept_ids == [0, 1, 2, 3]


def test_train_langid_bad_spec_exits_1(tmp_path):
    assert main(["train-langid", "--train", "nopath", "--out",
                 str(tmp_path / "m.json")]) == 1


def test_train_and_score_align(tmp_path):
    corpus = tmp_path / "bi.jsonl"
    _write_jsonl(corpus, [
        {"id": i, "src": "aa bb", "tgt": "xx yy"} for i in range(4)
    ] + [{"id": 4, "src": "bb aa", "tgt": "yy xx"}])
    model = tmp_path / "fwd.tsv"
    assert main(["train-align", "--in", str(corpus), "--iterations", "3",
                 "--out", str(model)]) == 0
    report = _report(model)
    assert len(report["details"]["loglik_trace"]) == 3

    scored = tmp_path / "scored.jsonl"
    assert main(["score-align", "--in", str(corpus), "--model", str(model),
                 "--out", str(scored)]) == 0
    rows = [json.loads(line) for line in scored.read_text().splitlines()]
    assert all("align" in r["scores"] for r in rows)


# decoding, ensembles, reranking ---------------------------------------

def _write_table(path, n_src):
    rows = []
    for sid in range(n_src):
        rows.append({"src_id": sid, "prefix": [],
                     "dist": {"b": 0.9, "</s>": 0.1}})
        rows.append({"src_id": sid, "prefix": ["b"],
                     "dist": {"</s>": 0.9, "b": 0.1}})
    _write_jsonl(path, rows)


def test_decode_rerank_chain(tmp_path):
    table = tmp_path / "table.jsonl"
    _write_table(table, 2)
    src = tmp_path / "src.txt"
    src.write_text("s t\ns t\n")
    refs = tmp_path / "refs.txt"
    refs.write_text("b\nb\n")

    nbest = tmp_path / "out.nbest"
    assert main(["decode", "--src", str(src), "--table-model", str(table),
                 "--mode", "beam", "--beam-size", "4", "--n-best", "2",
                 "--max-len", "2", "--out", str(nbest)]) == 0
    assert _report(nbest)["count_out"] == 2

    weights = tmp_path / "w.json"
    assert main(["rerank-train", "--nbest", str(nbest), "--src", str(src),
                 "--refs", str(refs), "--out", str(weights)]) == 0
    assert "weights" in json.loads(weights.read_text())

    reranked = tmp_path / "reranked.nbest"
    best = tmp_path / "best.txt"
    assert main(["rerank-apply", "--nbest", str(nbest), "--src", str(src),
                 "--weights", str(weights), "--best", str(best),
                 "--out", str(reranked)]) == 0
    assert best.read_text() == "b\nb\n"


def test_decode_without_models_exits_1(tmp_path, capsys):
    src = tmp_path / "src.txt"
    src.write_text("s\n")
    assert main(["decode", "--src", str(src),
                 "--out", str(tmp_path / "o.nbest")]) == 1


def _write_chain_table(path, keep_prob):
    # favors "b" for four steps, then the end marker
    rows = []
    for k in range(4):
        rows.append({"src_id": 0, "prefix": ["b"] * k,
                     "dist": {"b": keep_prob, "</s>": 1.0 - keep_prob}})
    rows.append({"src_id": 0, "prefix": ["b"] * 4,
                 "dist": {"</s>": keep_prob, "b": 1.0 - keep_prob}})
    _write_jsonl(path, rows)


def test_ensemble_select_cli(tmp_path):
    strong = tmp_path / "strong.jsonl"
    weak = tmp_path / "weak.jsonl"
    _write_chain_table(strong, 0.9)
    _write_chain_table(weak, 0.8)
    dev_src = tmp_path / "dev.src"
    dev_ref = tmp_path / "dev.ref"
    dev_src.write_text("s\n")
    dev_ref.write_text("b b b b\n")
    out = tmp_path / "selection.json"
    assert main(["ensemble-select", "--dev-src", str(dev_src),
                 "--dev-ref", str(dev_ref), "--table-model", str(strong),
                 "--table-model", str(weak), "--mode", "greedy",
                 "--max-len", "6", "--out", str(out)]) == 0
    selection = json.loads(out.read_text())
    assert sorted(selection["members"]) == ["strong", "weak"]
    assert selection["bleu"] == 100.0
    assert len(selection["trace"]) == 1


def test_cluster_and_domain_probs_cli(tmp_path):
    rows = [{"id": i, "src": "alpha beta gamma delta", "tgt": "x"}
            for i in range(4)]
    rows += [{"id": 4 + i, "src": "nine eight seven six", "tgt": "x"}
             for i in range(4)]
    corpus = tmp_path / "c.jsonl"
    _write_jsonl(corpus, rows)
    model = tmp_path / "domains.json"
    assert main(["cluster", "--in", str(corpus), "--k", "2",
                 "--out", str(model)]) == 0
    sse = _report(model)["details"]["sse_trace"]
    assert all(b <= a + 1e-12 for a, b in zip(sse, sse[1:]))

    probs_out = tmp_path / "probs.jsonl"
    assert main(["domain-probs", "--in", str(corpus), "--model", str(model),
                 "--out", str(probs_out)]) == 0
    out_rows = [json.loads(line) for line in probs_out.read_text().splitlines()]
    assert len(out_rows) == 8
    for r in out_rows:
        assert sum(r["probs"]) == pytest.approx(1.0, abs=1e-9)
    first = {r["label"] for r in out_rows[:4]}
    second = {r["label"] for r in out_rows[4:]}
    assert len(first) == 1 and len(second) == 1 and first != second


def test_bt_iterate_cli(tmp_path):
    src_sents = [("aa", "bb"), ("bb", "aa"), ("aa", "bb")] * 2
    tgt_sents = [("xx", "yy"), ("yy", "xx"), ("xx", "yy")] * 2
    bitext = tmp_path / "bitext.jsonl"
    _write_jsonl(bitext, [
        {"id": i, "src": " ".join(s), "tgt": " ".join(t)}
        for i, (s, t) in enumerate(zip(src_sents, tgt_sents))
    ])
    fwd_corpus = Corpus([SentencePair(i, s, t)
                         for i, (s, t) in enumerate(zip(src_sents, tgt_sents))])
    rev_corpus = Corpus([SentencePair(i, t, s)
                         for i, (s, t) in enumerate(zip(src_sents, tgt_sents))])
    save_lm(train_ngram(tgt_sents, order=2, min_count=1), tmp_path / "s2t.lm")
    save_lm(train_ngram(src_sents, order=2, min_count=1), tmp_path / "t2s.lm")
    save_align(train_align(fwd_corpus, iterations=3), tmp_path / "s2t.tsv")
    save_align(train_align(rev_corpus, iterations=3), tmp_path / "t2s.tsv")
    (tmp_path / "src-mono.txt").write_text("aa bb\nbb aa\naa bb\n")
    (tmp_path / "tgt-mono.txt").write_text("xx yy\nyy xx\nxx yy\n")
    (tmp_path / "dev.src").write_text("aa bb\n")
    (tmp_path / "dev.ref").write_text("xx yy\n")

    out_dir = tmp_path / "bt"
    assert main([
        "bt-iterate",
        "--s2t-lm", str(tmp_path / "s2t.lm"),
        "--s2t-ttable", str(tmp_path / "s2t.tsv"),
        "--t2s-lm", str(tmp_path / "t2s.lm"),
        "--t2s-ttable", str(tmp_path / "t2s.tsv"),
        "--bitext", str(bitext),
        "--src-mono", str(tmp_path / "src-mono.txt"),
        "--tgt-mono", str(tmp_path / "tgt-mono.txt"),
        "--dev-src", str(tmp_path / "dev.src"),
        "--dev-ref", str(tmp_path / "dev.ref"),
        "--rounds", "1", "--mode", "greedy", "--max-len", "4",
        "--out-dir", str(out_dir),
    ]) == 0
    fwd = (out_dir / "round-1.forward.jsonl").read_text().splitlines()
    rev = (out_dir / "round-1.reverse.jsonl").read_text().splitlines()
    assert len(fwd) == 3 and len(rev) == 3
    trace = json.loads((out_dir / "trace.json").read_text())
    assert trace["dev_bleu"]
    assert json.loads((out_dir / "report.json").read_text())["stage"] == "bt-iterate"


# process-level entry ---------------------------------------------------

def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "mtforge", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "mtforge" in proc.stdout


def test_log_env_variable(tmp_path):
    infile = tmp_path / "in.jsonl"
    _write_jsonl(infile, _clean_rows(2))
    out = tmp_path / "out.jsonl"
    proc = subprocess.run(
        [sys.executable, "-m", "mtforge", "filter", "--in", str(infile),
         "--out", str(out)],
        capture_output=True, text=True, env={"MTFORGE_LOG": "INFO", "PATH": "/usr/bin:/bin"},
    )
    assert proc.returncode == 0
    assert "INFO mtforge" in proc.stderr
