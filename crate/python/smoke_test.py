"""Quick check that the dimlink_py extension loads and agrees with known values.

Build and install first:

    cd crates/py && maturin develop --release
"""

import math
import os
import tempfile

import dimlink_py as dl


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    assert dl.expert_concat("A man in a suit", "Joe Biden") == "[CLS]A man in a suit[SEP]Joe Biden"
    assert close(dl.similarity_ratio("kitten", "sitting"), dl.similarity_ratio("sitting", "kitten"))
    assert close(dl.similarity_ratio("Trump", "Donald Trump"), 1.0)
    assert close(dl.cosine([1.0, 0.0], [0.0, 1.0]), 0.0)
    assert close(sum(dl.softmax([1.0, 2.0, 3.0])), 1.0)
    assert dl.truncate_chars("abcdef", 3) == "abc"

    system, user = dl.build_prompt("Joe Biden")
    assert user == "Joe Biden" and system.startswith("You are a helpful assistant")
    assert dl.classify_response("Sorry, I cannot provide information on that.") == "refusal"
    assert dl.classify_response("") == "empty"
    assert dl.classify_response("Joe Biden is the 46th president.") == "enhanced"

    s = 1 / math.sqrt(2)
    loss = dl.npair_loss([1.0, 0.0], [1.0, 0.0], [[s, s]])
    assert close(loss, math.log(1 + math.exp(s - 1)), 1e-12)

    rank = dl.rank_of_gold([1.0, 0.0], "g", [("a", [1.0, 0.0]), ("g", [1.0, 0.0]), ("b", [0.0, 1.0])])
    assert rank == 2, rank
    assert dl.topk_accuracy([1, 2, 6], [1, 5]) == [1 / 3, 2 / 3]

    ids, scores, gold = dl.generate_candidates("Trump", [("Q1", "Donald Trump"), ("Q2", "Joe Biden")], k=1, gold_id="Q2")
    assert ids == ["Q2"] and gold, (ids, scores)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "e.emb")
        dl.write_embeddings(path, 2, [("x", [0.5, -1.0]), ("y", [2.0, 3.0])])
        dim, table = dl.read_embeddings(path)
        assert dim == 2 and table == {"x": [0.5, -1.0], "y": [2.0, 3.0]}

        data = os.path.join(tmp, "mock")
        dl.mock_generate(data, samples=20, entities=30, dim=8, heads=2)
        stats = dl.compute_stats(os.path.join(data, "samples.jsonl"), os.path.join(data, "entities.jsonl"))
        assert stats["samples"] == 20 and stats["entities"] == 30, stats

        params = dl.AttentionParams.init(3, 8, 2)
        ckpt = os.path.join(tmp, "p.ckpt")
        params.save(ckpt)
        again = dl.AttentionParams.load(ckpt, dim=8)
        assert again.names() == params.names()
        assert all(again.weight(n) == params.weight(n) for n in params.names())
        out = again.forward([[0.1] * 8, [0.2] * 8], [[0.3] * 8], [0.4] * 8)
        assert len(out["fused"]) == 8
        assert all(close(f, t + i + e) for f, t, i, e in zip(out["fused"], out["f_text"], out["f_image"], [0.4] * 8))

    try:
        dl.build_prompt("   ")
    except ValueError as e:
        assert str(e).startswith("input:"), e
    else:
        raise AssertionError("empty name accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
