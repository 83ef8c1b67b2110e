"""Scripted agent conversations shared by the unit and acceptance suites."""

from __future__ import annotations

from fractions import Fraction

VANISHING_QUERY = "Which languages were used in the films directed by the same directors as [The Vanishing American]?"

VANISHING_OPERATOR = [
    "Step 1\nThe query starts from the film.\nGetRelation(The Vanishing American)",
    "Step 2\nExploreKG(The Vanishing American, [directed_by])",
    "Step 3\nGetRelation(George B. Seitz)",
    "Step 4\nThe inverse relation lists the director's other films.\nExploreKG(George B. Seitz, [~directed_by])",
    "Step 5\nExploreKG(The Last of the Mohicans, [in_language])\nExploreKG(Love Finds Andy Hardy, [in_language])",
    "Step 6\nVerification()",
]

VANISHING_SUPERVISOR = [
    {
        "response": (
            "Reasoning paths: The Vanishing American-George B. Seitz-The Last of the Mohicans-English; "
            "The Vanishing American-George B. Seitz-Love Finds Andy Hardy-French.\nANSWER: English | French"
        ),
        "expect": "[Love Finds Andy Hardy, in_language, French]",
    }
]

PROSE = "Let me reflect on the question before touching the graph."

INCEPTION_QUERY = "Who is the director of Inception?"
INCEPTION_OPERATOR = ["GetRelation(Inception)", "ExploreKG(Inception, [directed_by])", "Verification()"]
INCEPTION_SUPERVISOR = [
    {"response": "The graph states [Inception, directed_by, Mario Van Peebles].\nANSWER: Mario Van Peebles",
     "expect": "[Inception, directed_by, Mario Van Peebles]"}
]

# Hand-counted from toy_scripts.json (per-sample operator/supervisor calls):
# t01 6/1, t02 3/1, t03 2/1, t04 3/1, t05 4/2, t06 3/1, t07 3/1, t08 3/1,
# t09 8/0 (prose, T=8), t10 8/2, t11 2/0 (script runs dry), t12 2/1.
TOY_OPERATOR_CALLS = 47
TOY_SUPERVISOR_CALLS = 12
TOY_ANSWERED_SUPERVISOR_CALLS = 10
TOY_ANSWERED = 9
# Answered samples: 6 exact, t06 1 of 2 genres, t07 wrong, t08 one extra label.
# TP = 11, FP = 2, FN = 2; per-sample F1 = 1 x6, 2/3, 0, 4/5.
TOY_COVERAGE = Fraction(9, 12)
TOY_MICRO_F1 = Fraction(11, 13)
TOY_SAMPLEWISE_F1 = (6 + Fraction(2, 3) + 0 + Fraction(4, 5)) / 9
TOY_HIT = Fraction(8, 9)
