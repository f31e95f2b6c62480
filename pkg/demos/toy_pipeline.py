"""Train a small model on the bundled hotel reviews, then summarize and score.

    python3 demos/toy_pipeline.py [workdir]

Takes well under a minute on one core. Everything goes through the ``qt``
command-line entry point, so this doubles as a CLI walkthrough.
"""

import json
import sys
import tempfile
from pathlib import Path

from qtsum.cli import main
from qtsum.corpus import load_reviews
from qtsum.toydata import bundled_toy_path

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="qt-demo-"))
work.mkdir(parents=True, exist_ok=True)
reviews = bundled_toy_path()

config = {
    "dim": 32, "ff_dim": 64, "layers": 2, "attn_heads": 2, "sentence_heads": 4,
    "vocab_size": 256, "codebook_size": 32, "soft_samples": 10, "batch_size": 8,
    "commitment_weight": 0.05, "train_path": str(reviews),
    "checkpoint": str(work / "toy.ckpt"), "output_dir": str(work),
}
(work / "config.json").write_text(json.dumps(config, indent=2))
main(["train", str(work / "config.json")])

for line in (work / "train_log.jsonl").read_text().splitlines()[::4]:
    e = json.loads(line)
    print(f"epoch {e['epoch']:2d}  recon {e['recon']:.3f}  commit {e['commitment']:.3f}  quantized={e['quantized']}")

main(["summarize", str(work / "toy.ckpt"), str(reviews), "-o", str(work / "general.jsonl")])
main(["summarize", str(work / "toy.ckpt"), str(reviews), "--aspect", "rooms",
      "--aspect-map", str(work / "aspect_map.json"), "-o", str(work / "rooms.jsonl")])

first = json.loads((work / "general.jsonl").read_text().splitlines()[0])
rooms = json.loads((work / "rooms.jsonl").read_text().splitlines()[0])
print(f"\n{first['entity_id']} general: {' '.join(first['sentences'])}")
print(f"{rooms['entity_id']} rooms:   {' '.join(rooms['sentences'])}")

# the toy corpus has no gold summaries; score against each hotel's first review
refs = work / "refs.jsonl"
with refs.open("w") as fh:
    for ent in load_reviews(reviews).entities:
        fh.write(json.dumps({"entity_id": ent.entity_id, "references": [" ".join(s.text for s in ent.reviews[0].sentences)]}) + "\n")
main(["eval", str(work / "general.jsonl"), str(refs), "-o", str(work / "metrics.json")])
print(f"\noutputs in {work}")
