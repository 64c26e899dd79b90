"""
Scoring a restored clinical note
================================

Sensitive tokens are those inside an annotated entity. A multi-part entity
such as a street address only counts as recovered when every part is.
"""

# %%
from pathlib import Path

from promptdp import PerturbationParams, RestorerConfig, evaluate, perturb_document, restore
from promptdp.evaluation import entity_reconstruction
from promptdp.text import load_corpus

corpus = Path(__file__).resolve().parent.parent / "tests" / "data" / "fixture_corpus.jsonl"
docs = load_corpus(corpus)

# %% perturb, then let the offline restorer try
params = PerturbationParams(6.0, 94, seed=11)
restored = {}
for d in docs:
    pd = perturb_document(d, params)
    restored[d.id] = restore(pd, RestorerConfig())
    print(pd.perturbed_text)
    print(restored[d.id].restored_text, end="\n\n")

# %%
report = evaluate(docs, restored, epsilon=params.epsilon)
print("sensitive", report.sensitive_rate, "non-sensitive", report.non_sensitive_rate)
print("privacy preserved", report.privacy_preserved)
print("chance level", round(report.baseline_prob, 2))

# %% single part versus whole entity
for cat, e in entity_reconstruction(docs, restored).per_category.items():
    print(f"{cat:16s} part={e.single_part.percent:6.1f}  whole={e.full_entity.percent:6.1f}")
