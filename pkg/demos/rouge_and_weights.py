"""
Scoring overlap and turning it into a sentence weight distribution
==================================================================

ROUGE works on any sequence of hashable units, so Chinese text is scored
character by character without a tokenizer.  The same scores, pushed through
a softmax, become the gold weights a summarizer is trained to predict.
"""

# %%
# ROUGE on characters
# -------------------

from swdsum import lcs_length, rouge_l, rouge_n

candidate, reference = "今天天气很好", "今天的天气很好"
for n in (1, 2):
    print(f"ROUGE-{n}:", rouge_n(candidate, reference, n))
print("ROUGE-L:", rouge_l(candidate, reference))

# %%
# The longest common subsequence is order-aware but allows gaps.  The
# classic textbook pair has an LCS of length 4 ("BCBA" is one witness).

print(lcs_length("ABCBDAB", "BDCABA"))

# %%
# From sentence scores to weights
# -------------------------------
#
# Each sentence of a document is scored against the reference summary and
# the scores are normalized with a softmax.  Because ROUGE lies in [0, 1],
# no weight can exceed another by more than a factor of e: the distribution
# is soft even when one sentence matches the summary perfectly.

from swdsum import RawPair, build_vocab, encode_corpus, estimate_corpus_weights

pair = RawPair("猫坐在垫子上。今天下雨了。狗在院子里跑。", "狗在院子里跑")
vocab = build_vocab([pair])
[example] = encode_corpus([pair], vocab)
[weights] = estimate_corpus_weights([example])
for sentence, w in zip(pair.text.split("。"), weights):
    print(f"{w:.3f}  {sentence}")

# %%
# The third sentence carries the largest weight.  The first shares one
# character with the summary and edges out the second, and even the
# unrelated second sentence keeps about 0.2.  A model that reproduces this
# distribution learns which sentence matters without a hard choice.
