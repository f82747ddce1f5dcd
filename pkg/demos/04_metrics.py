"""
Scoring generated questions
===========================

BLEU, ROUGE-L and CIDEr-D follow the usual caption-evaluation toolkit; METEOR
is an exact-match variant; DEHN counts diagram elements named in a question.
"""
from hkidqg.metrics import EvalPair, element_hits, evaluate_run, tokenize_eval

print(tokenize_eval("What does the heart's left ventricle do?"))

pairs = [
    EvalPair("What structure pumps blood through the heart?",
             ["What structure pumps blood through the heart?"], ["heart", "valve"], "q1"),
    EvalPair("Which valve closes when the heart relaxes?",
             ["Which valve stops blood from flowing back into the heart?"], ["heart", "valve"], "q2"),
    EvalPair("What do mussels eat?",
             ["What does the sea star eat in this food web?"], ["sea star", "mussels"], "q3"),
]
report = evaluate_run(pairs)
print(report.to_text())

# %%
# Element matching respects word boundaries: "art" is not found in "heart".
print(element_hits("How does the heart beat?", ["art", "heart"]))
