#!/usr/bin/env python

# Train on a synthetic planted-alignment corpus, then compare retrieval with
# and without the token and fusion stages.

import sys
import traceback

import tokalign
from tokalign.util import Rng


# setup logging
tokalign.util.log_to_file("demo_simple.log")

steps = 300
if len(sys.argv) > 1:
    steps = int(sys.argv[1])

try:
    spec = tokalign.SyntheticSpec(num_pairs=400, seed=1)
    records = tokalign.generate_synthetic(spec)
    config = tokalign.RunConfig()
    config.apply_overrides(
        [
            "optimizer.total_steps={}".format(steps),
            "encoder.d_video_in={}".format(spec.d_video_in),
        ]
    )
    config.validate()
    train, held_out = tokalign.split_corpus(
        records, config.eval.held_out, Rng(config.seed).spawn("split")
    )
    print("*** Training on {} pairs...".format(len(train)))
    result = tokalign.Trainer(config, train).run()
    print("*** Final loss: {total:.4f}".format(**result.history[-1]))

    for stages in ("sentence", "sentence+token", "all"):
        combined, _ = tokalign.evaluate(
            result.model,
            result.vocab,
            result.idf,
            held_out,
            tokalign.InferenceWeights.main_default(),
            tokalign.StageMask.parse(stages),
        )
        print("{:<16} {}".format(stages, combined.as_dict()))

except tokalign.AlignException as e:
    print("*** Caught exception: %s: %s" % (e.__class__, e))
    traceback.print_exc()
    sys.exit(1)
