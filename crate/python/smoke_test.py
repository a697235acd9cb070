"""Smoke test for the `genex` Python extension.

Builds the extension with cargo unless GENEX_LIB points at a built library,
then exercises each exposed entry point once.
"""

import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module():
    lib = os.environ.get("GENEX_LIB")
    if lib is None:
        subprocess.run(
            ["cargo", "build", "--release", "-p", "genex-py", "--features", "extension-module"],
            cwd=ROOT,
            check=True,
        )
        ext = {"darwin": "libgenex.dylib", "win32": "genex.dll"}.get(sys.platform, "libgenex.so")
        lib = os.path.join(ROOT, "target", "release", ext)
    tmp = tempfile.mkdtemp()
    shutil.copy(lib, os.path.join(tmp, "genex.pyd" if sys.platform == "win32" else "genex.so"))
    sys.path.insert(0, tmp)
    import genex

    return genex, tmp


def main():
    genex, tmp = load_module()

    data = genex.synth(40, seed=3)
    assert len(data) == 40 and all(e and e not in q for q, _, e in data)
    assert genex.synth(40, seed=3) == data

    texts = [t for row in data for t in row]
    vocab = genex.Vocab.train(texts, 400)
    assert vocab.decode(vocab.encode("baba is bebe")) == "baba is bebe"

    cfg = genex.ModelConfig("genex", d_model=16, head_dim=8, ffn_dim=32, dropout=0.0)
    trainer = genex.Trainer(cfg, vocab, lr=1e-3, batch_tokens=256, seed=5)
    losses = [trainer.train_epoch(data, vocab) for _ in range(3)]
    assert losses[-1] < losses[0], losses
    acc = trainer.teacher_forced_accuracy(data, vocab)
    assert 0.0 <= acc <= 1.0
    q, d, _ = data[0]
    print("decoded:", repr(trainer.decode(q, d, vocab, max_len=4)))

    path = os.path.join(tmp, "run.ckpt")
    trainer.save(path)
    again = genex.Trainer.load(path)
    assert again.checkpoint_bytes() == trainer.checkpoint_bytes()
    assert again.epoch == 3

    assert genex.corpus_bleu(["a b c"], [["a b c"]], 2) == 1.0
    assert genex.rouge_l("a b c", "a b c")[2] == 1.0
    assert abs(genex.rouge_n("a b", "a b c", 1)[2] - 0.8) < 1e-12
    t, df, p = genex.paired_ttest([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    assert df == 2 and abs(p - 0.0742) < 1e-4
    assert genex.select_top_tokens([("a", 10.0), ("b", 5.0), ("c", 0.9)]) == ["a", "b"]
    assert genex.porter_stem("running") == "run"

    doc = "solar panels convert sunlight into electricity while solar farms feed the grid"
    assert genex.textrank(doc, 3)
    assert genex.ts_textrank(doc, "volcano", 5) == genex.textrank(doc, 5)
    corpus = [doc, "wind turbines feed the grid", "apples grow on trees"]
    assert genex.lime("solar grid", doc, corpus, 50, 1)
    assert genex.sensitivity("solar grid", doc, corpus)

    failed = [r for r in genex.run_selftest(1) if not r[1]]
    assert not failed, failed
    try:
        genex.ModelConfig("nope")
    except ValueError:
        pass
    else:
        raise AssertionError("bad variant accepted")
    print("python smoke test passed")


if __name__ == "__main__":
    main()
