"""Regenerate the caption corpora and planted models under fixtures/."""

import json
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent / "fixtures"

PROFESSIONS = [
    "pilot", "teacher", "nurse", "engineer", "chef",
    "doctor", "firefighter", "librarian", "farmer", "scientist",
]

SUBJECTS = [
    ("a female {p}", "a male {p}"),
    ("a woman {p}", "a man {p}"),
    ("a {p} and her colleague", "a {p} and his colleague"),
    ("the girl who became a {p}", "the boy who became a {p}"),
]

SCENES = [
    "at work", "smiling at the camera", "in a busy city", "during a night shift",
    "with her tools", "in front of a window", "on a rainy morning", "in her office",
    "holding a coffee", "walking down the street",
]

HAIR = ["short", "long", "curly", "braided", "red", "blonde", "grey", "dark"]
HAIR_STYLE = ["hair in a ponytail", "hair tied back", "hair under a hat", "hair over one shoulder"]
FOODS = ["pizza", "ramen", "salad", "pancakes", "sushi", "tacos", "curry", "soup"]
FOOD_SCENE = ["on a wooden table", "in a bowl", "at a street market", "on a white plate"]


def profession_captions(rng):
    out = []
    for p in PROFESSIONS:
        for female, male in SUBJECTS:
            for subject in (female, male):
                scene = rng.choice(SCENES)
                if subject is male:
                    scene = scene.replace("her ", "his ")
                out.append(f"{subject.format(p=p)} {scene}")
    for p in PROFESSIONS:
        out.append(f"Mr. Smith the {p}")
        out.append(f"Ms. Jones the {p}")
        out.append(f"a {p}, a mother of two")
        out.append(f"a {p}, a father of two")
        out.append(f"a woman's portrait as a {p}")
        out.append(f"two {p}s, a man and a woman")
        out.append(f"the {p} herself, {rng.choice(SCENES)}")
        out.append(f"the {p} himself, {rng.choice(SCENES)}")
        out.append(f"A GIRL dreaming of being a {p}")
        out.append(f"a {p} with his daughter")
        out.append(f"a {p} with her son")
        out.append(f"men and women working as {p}s")
    return out


def main():
    rng = random.Random(7)
    (ROOT / "captions").mkdir(parents=True, exist_ok=True)
    captions = profession_captions(rng)
    assert len(captions) == 200, len(captions)
    (ROOT / "captions" / "professions.txt").write_text("\n".join(captions) + "\n")

    hair = [f"a portrait of a person with {c} {s}" for c in HAIR for s in HAIR_STYLE]
    (ROOT / "captions" / "hair.txt").write_text("\n".join(hair) + "\n")
    food = [f"a photo of {f} {s}" for f in FOODS for s in FOOD_SCENE]
    (ROOT / "captions" / "food.txt").write_text("\n".join(food) + "\n")

    # One record per (profession, concept) so groups come out as professions.
    records = []
    for p in PROFESSIONS:
        records.append({"id": f"female-{p}", "caption": f"a photo of a female {p}", "group": p, "concept": "female"})
        records.append({"id": f"male-{p}", "caption": f"a photo of a male {p}", "group": p, "concept": "male"})
    (ROOT / "captions" / "profession_pairs.json").write_text(json.dumps(records, indent=2) + "\n")

    # Planted bias: per-profession interaction with "female" shrinks or grows
    # the female direction, so gap differences vary in a known way.
    (ROOT / "planted").mkdir(parents=True, exist_ok=True)
    bias = {p: round(0.8 * i / 9, 3) for i, p in enumerate(PROFESSIONS)}
    model = {
        "shape": [8, 4, 4],
        "base_scale": 1.0,
        "default_weight": 0.0,
        "terms": {"female": 0.6, "male": 0.6, "photo": 0.2} | {p: 0.5 for p in PROFESSIONS},
        "interactions": [{"terms": ["female", p], "weight": w} for p, w in bias.items()],
    }
    (ROOT / "planted" / "professions.json").write_text(json.dumps(model, indent=2) + "\n")
    backend = {
        "backend": "planted",
        "model": "fixtures/planted/professions.json",
        "adapter": "none",
        "num_inference_steps": 4,
        "guidance_scale": 1.0,
        "image_size": 64,
    }
    (ROOT / "planted" / "backend.json").write_text(json.dumps(backend, indent=2) + "\n")


if __name__ == "__main__":
    main()
