"""
Selecting knowledge sentences with attention
=============================================

Sentences produced for the selected patches compete for the attention of the
constraint prompt. The softmax runs over sentences, so each prompt token
spreads one unit of attention across them; a sentence's score is its mean share.
"""
import numpy as np

from hkidqg.backends import ToyTextEncoder
from hkidqg.knowsel import KnowledgeSet, build_knowsel_prompt, select_knowledge

encoder = ToyTextEncoder(seed=1, hidden_dim=24)
layers = {
    1: ["The heart pumps blood through the body.", "Arteries carry blood away from the heart."],
    2: ["Valves stop blood from flowing backwards.", "Mussels filter water for food."],
    3: ["The aorta is the largest artery."],
}
ks = KnowledgeSet.from_layers(layers, encoder)

prompt = build_knowsel_prompt("heart", "Circulation")
print(prompt)

selected, _, a = select_knowledge(ks, "heart", "Circulation", encoder, m=3)
print("attention shape (sentences x prompt tokens):", a.shape)
print("columns sum to one:", np.allclose(a.sum(axis=0), 1.0))
for text, score in selected.items:
    print(f"{score:.4f}  {text}")
