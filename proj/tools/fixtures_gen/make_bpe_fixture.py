"""Regenerates tests/fixtures/bpe/ with HuggingFace `tokenizers` as the reference."""
import json
import pathlib

from tokenizers import Tokenizer, models, pre_tokenizers, trainers, decoders

OUT = pathlib.Path(__file__).resolve().parents[2] / "tests" / "fixtures" / "bpe"

corpus = [
    "Baseline 90 5.32 ± 0.43 89 5.41 ± 0.35 0.29",
    "6 months 79 5.22 ± 0.21 77 5.33 ± 0.46 0.31",
    "12 months 72 5.33 ± 0.42 71 5.16 ± 0.42 0.03",
    "Subjects (n) Mean ± SD p value one-way ANOVA",
    "<table><tr><td>Polyol</td><td>Xylitol</td></tr></table>",
    "Treatment group   placebo\tdose mg/kg [95% CI] {adverse events}",
    "Ångström naïve café 東京 データ résumé",
] * 20

tok = Tokenizer(models.BPE())
tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False, use_regex=True)
tok.decoder = decoders.ByteLevel()
trainer = trainers.BpeTrainer(vocab_size=420, min_frequency=2,
                              initial_alphabet=pre_tokenizers.ByteLevel.alphabet(), show_progress=False)
tok.train_from_iterator(corpus, trainer)

OUT.mkdir(parents=True, exist_ok=True)
tok.save(str(OUT / "tokenizer.json"))
model = json.loads((OUT / "tokenizer.json").read_text())["model"]
(OUT / "vocab.json").write_text(json.dumps(model["vocab"], ensure_ascii=False))
merges = ["{} {}".format(*m) if isinstance(m, list) else m for m in model["merges"]]
(OUT / "merges.txt").write_text("#version: 0.2\n" + "\n".join(merges) + "\n")

probes = [
    "",
    "Baseline",
    "5.33 ± 0.46",
    "Subjects (n)",
    "p value one-way ANOVA",
    "<td>Polyol</td><td>Xylitol</td>",
    "a  b",
    "x \ty",
    "trailing   ",
    "   leading",
    "Treatment group   placebo\tdose mg/kg [95% CI]",
    "unseen words zebra quokka",
    "Ångström naïve café 東京 データ",
    "emoji 🙂 and 12345.678",
    "line1\nline2\r\n\nline3",
]
expected = [{"text": p, "ids": tok.encode(p).ids} for p in probes]
(OUT / "expected.json").write_text(json.dumps(expected, ensure_ascii=False, indent=1) + "\n")
print(len(model["vocab"]), "tokens,", len(merges), "merges")
