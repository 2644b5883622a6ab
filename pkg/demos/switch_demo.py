"""Switching GRUs: one network pair learns MR -> text and text -> MR.

After training with the switch enabled, the same parameters generate a
sentence from an MR (forward roles) and rebuild an MR from that sentence
(backward roles).

    python3 demos/switch_demo.py [steps]
"""

import sys

from char2text import synthetic as S
from char2text import training as TR
from char2text.model import ModelConfig, init_params

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 500
task = S.copy_task(40, 5, 5, seed=1)
sources = [i.source for i in task.train]
mc = ModelConfig(hidden_size=64, embedding_size=32)
cfg = TR.TrainConfig(max_epochs=10_000, batch_size=20, learning_rate=0.005, eval_every=50, max_iterations=steps, max_decode_len=60,
                     patience=1000).variant("eda_s")
mcfg = cfg.model_config(mc)


def rebuilt(p, m):
    return sum(a == b for a, b in zip(TR.reconstruct(p, m, sources, 60), sources)) / len(sources)


def show(rec):
    print(f"step {rec['iteration']:4d}  L_fwd {rec['l_forward']:.3f}  L_bwd {rec['l_backward']:.3f}  rebuilt {rec['bleu']:.2f}")


res = TR.train(task.pairs(), task.validation, init_params(mcfg, 0), mc, cfg, sink=show, evaluator=rebuilt)
for src in sources[:3]:
    sentence = TR.decode_all(res.params, mcfg, [src], 60)[0]
    back = TR.decode_all(res.params, mcfg, [sentence], 60, phase="backward")[0]
    print(f"{src}\n  F -> {sentence}\n  G -> {back}")
