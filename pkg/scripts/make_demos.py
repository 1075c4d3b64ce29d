"""Regenerate src/kgplan/prompts/planning/demonstrations.txt.

Examples 0 and 1 are the hand-written planning demos; the rest are filled
templates built from the verbalization demos, one per remaining pattern.
"""

from pathlib import Path

from kgplan.plandata import demonstration_block, fill_template

HANDWRITTEN = '''###################
# Example 0:
###################

Original_Question: str = "What is the ethnic group of Booker T. Jones?"
### Question Type: One Projection
### Decompose the original question into sub-questions.

Thought1: str = "An atomic question, no need to decompose. Search directly."
Sub_Question_1: str = "What is the ethnic group of Booker T. Jones?"
Info_1: str = Search(query = Sub_Question_1, thought = Thought1)
Ans_1: str = Get_Answer(query = Sub_Question_1, info = Info_1)

Final_Answer: str = Finish_The_Plan(Answer = Ans_1)

###################
# Example 1:
###################

Original_Question: str = "Who succeeded the first President of Namibia?"
### Question Type: Two Projection
### Decompose the original question into sub-questions.

Thought1: str = "If I want to know who succeeded the first President of Namibia, I need to first know who is the first President of Namibia."
Sub_Question_1: str = "Who is the first President of Namibia?"
Info_1: str = Search(query = Sub_Question_1, thought = Thought1)
Ans_1: str = Get_Answer(query = Sub_Question_1, info = Info_1)

Thought2: str = "After knowing who is the first President of Namibia, I need to know who succeeded him."
Sub_Question_2: str = f"Who succeeded {Ans_1}?"
Info_2: str = Search(query = Sub_Question_2, thought = Thought2)
Ans_2: str = Get_Answer(query = Sub_Question_2, info = Info_2)

Final_Answer: str = Finish_The_Plan(Answer = Ans_2)

'''

GENERATED = [
    ("3p", "What is the foundational text of the Android developer's country?",
     ["Who is the developer of Android?", "What is the country of {A1}?",
      "What is the foundational text of country {A2}?"]),
    ("2i", "Where did both Jimmy Carter and John Wells receive education?",
     ["Where did Jimmy Carter receive education?", "Where did John Wells receive education?"]),
    ("3i", "What are the same genre shared between Alice in Wonderland, Blues Brothers 2000 and Pinocchio?",
     ["What are the genre of Alice in Wonderland?", "What are the genre of Blues Brothers 2000?",
      "What are the genre of Pinocchio?"]),
    ("2u", "Who are all the cast members from Wuthering Heights combined with the cast members from Traffic?",
     ["Who are the cast members of Wuthering Heights?", "Who are the cast members of Traffic?"]),
    ("ip", "The place where John Williams and John Milton both received education was named after what?",
     ["Where did John Williams receive education?", "Where did John Milton receive education?",
      "The {Inter_A} was named after what?"]),
    ("pi", "Which regions border Drake Bell's birthplace and Santa Ana at the same time?",
     ["What is the birthplace of Drake Bell?", "Which areas border with {A1}?",
      "Which areas border with Santa Ana?"]),
    ("compare", "Which has less population, Vietnam or Halifax?",
     ["What is the population of Vietnam?", "What is the population of Halifax?"]),
]

TRAILER = (
    "###################\n"
    "# Your turn! Just complete the code below and do not return other things.\n"
    "###################\n\n"
)


def build() -> str:
    blocks = [HANDWRITTEN]
    for i, (pattern, question, subs) in enumerate(GENERATED, start=2):
        blocks.append(demonstration_block(i, question, fill_template(pattern, subs)))
    return "".join(blocks) + TRAILER


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src/kgplan/prompts/planning/demonstrations.txt"
    out.write_text(build(), encoding="utf-8")
    print(f"wrote {out}")
