"""
Command line and checkpoints
============================

The steps a shell session would take, driven through ``datm.cli.main`` in a
scratch directory: generate data, train from a config file, evaluate and
export the topic tree.  Along the way a run is stopped, checkpointed and
resumed from Python to show that resuming is exact.
"""

import tempfile
from pathlib import Path

from datm.cli import main
from datm.corpus import load_uci_bow
from datm.trainer import TrainConfig, Trainer, load_checkpoint, save_checkpoint


def run(*argv):
    argv = [str(a) for a in argv]
    print("$ python -m datm", " ".join(argv))
    main(argv)


work = Path(tempfile.mkdtemp(prefix="datm-demo-"))
docs = work / "docword.txt"
run("--seed", 4, "generate", "--vocab-size", 200, "--widths", "12,4", "--num-docs", 500,
    "--out", docs)

# a config file holds the defaults; flags on the command line win
conf = work / "model.conf"
conf.write_text("widths = 12 4\nbatch_size = 100\niterations = 600\nburn_in = 300\n"
                "num_samples = 5\nstep_a = 0.1\n")
run("--config", conf, "train", "--input", docs, "--out", work / "full.ckpt")
tr = load_checkpoint(work / "full.ckpt")
print("checkpoint at iteration", tr.iteration, "with", len(tr.samples), "posterior samples")

# the same run from Python, stopped after 200 iterations and resumed from disk
corpus = load_uci_bow(docs)
cfg = TrainConfig(widths=(12, 4), batch_size=100, iterations=600, burn_in=300, num_samples=5,
                  step_a=0.1)
first = Trainer(corpus, cfg)
first.run(iterations=200)
save_checkpoint(work / "stop.ckpt", first)
resumed = load_checkpoint(work / "stop.ckpt", corpus)
resumed.run(iterations=400)
save_checkpoint(work / "resumed.ckpt", resumed)
same = (work / "resumed.ckpt").read_bytes() == (work / "full.ckpt").read_bytes()
print("resumed run identical to the command-line run:", same)

run("eval-ppl", "--model", work / "full.ckpt", "--input", docs, "--test-frac", 0.3)
run("topics", "--model", work / "full.ckpt", "--out-prefix", work / "tree", "--top-words", 6)
print((work / "tree.txt").read_text()[:600])
run("bench", "--model", work / "full.ckpt", "--input", docs, "--n-docs", 100,
    "--gibbs-sweeps", 50)
