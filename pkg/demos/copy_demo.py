"""Copying unseen names, with and without the copy mechanism.

Trains two small models on the synthetic copy task for the same number of
steps, prints a few test generations from each and writes the attention /
copy-gate heatmap of the first one to ``copy_demo.pgm``.

    python3 demos/copy_demo.py [steps]
"""

import sys

from char2text import synthetic as S
from char2text import training as TR
from char2text import viz
from char2text.model import FORWARD, ModelConfig, greedy_decode, init_params

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 150
task = S.copy_task(2000, 50, 50, seed=0)
mc = ModelConfig(hidden_size=64, embedding_size=32)
base = TR.TrainConfig(batch_size=32, learning_rate=0.003, eval_every=steps, max_iterations=steps, max_decode_len=60)
test_src = [i.source for i in task.test]

for variant in ("eda_cs", "eda"):
    cfg = base.variant(variant)
    mcfg = cfg.model_config(mc)
    res = TR.train(task.pairs(), task.validation, init_params(mcfg, 0), mc, cfg,
                   evaluator=lambda p, m: S.substring_exact_match(TR.decode_all(p, m, [i.source for i in task.validation], 60), task.validation))
    outputs = TR.decode_all(res.params, mcfg, test_src, 60)
    print(f"== {variant}: test exact-match {S.substring_exact_match(outputs, task.test):.2f} after {steps} steps")
    for src, out in list(zip(test_src, outputs))[:3]:
        print(f"  {src}\n    -> {out}")
    if variant == "eda_cs":
        _, trace = greedy_decode(res.params, FORWARD, test_src[0], 60, mcfg)
        print("  heatmap:", viz.render(trace, "copy_demo.pgm"))
