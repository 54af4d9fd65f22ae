import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from icrkit.corpus import ContextInstance, Document


def _instance(inst_id, question, answer, gold, p, gold_texts):
    docs = []
    for i in range(p):
        if i in gold:
            docs.append(Document(index=i, text=gold_texts[i], origin="gold"))
        else:
            docs.append(
                Document(
                    index=i,
                    text=f"Distractor passage {i} mentions related topics without the key fact.",
                    origin="hard_negative",
                )
            )
    return ContextInstance(
        id=inst_id,
        question=question,
        answers=[answer],
        documents=docs,
        gold_ids=set(gold),
        source="fixture",
    ).validate()


@pytest.fixture(scope="session")
def magazine_instance():
    return _instance(
        "hotpot-magazine",
        "Which magazine was started first Arthur's Magazine or First for Women?",
        "Arthur's Magazine",
        {10, 11},
        12,
        {
            10: "Arthur's Magazine (1844-1846) was an American literary periodical published in Philadelphia in the 19th century.",
            11: "First for Women is a woman's magazine published by Bauer Media Group in the USA, launched in 1989.",
        },
    )


@pytest.fixture(scope="session")
def oberoi_instance():
    return _instance(
        "hotpot-oberoi",
        "The Oberoi family is part of a hotel company that has a head office in what city?",
        "Delhi",
        {0, 4},
        11,
        {
            0: "The Oberoi Group is a hotel company with its head office in Delhi.",
            4: "The Oberoi family is an Indian family that is famous for its involvement in hotels, namely through The Oberoi Group.",
        },
    )


@pytest.fixture(scope="session")
def milhouse_instance():
    return _instance(
        "hotpot-milhouse",
        'Musician and satirist Allie Goertz wrote a song about the "The Simpsons" character Milhouse, who Matt Groening named after who?',
        "Richard Nixon",
        {2, 4, 6, 8},
        14,
        {
            2: 'Allison Beth "Allie" Goertz (born March 2, 1991) is an American musician.',
            4: "Her videos are posted on YouTube under the name Cossbysweater.",
            6: "Goertz is known for her satirical songs based on pop culture topics.",
            8: "Milhouse Mussolini van Houten is a fictional character created by Matt Groening, named after President Richard Nixon's middle name.",
        },
    )


@pytest.fixture(scope="session")
def table5_instances(magazine_instance, oberoi_instance, milhouse_instance):
    return [magazine_instance, oberoi_instance, milhouse_instance]
