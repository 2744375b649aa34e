#!/usr/bin/env python3
"""Generate the bundled expert trajectory corpus and its manifest.

The manifest carries the numbers the compiler is checked against: record
counts, the number of distinct skills, and a country histogram obtained by
an independent scan of the gazetteer table (not the Rust lookup).

    python3 scripts/gen_expert_fixture.py [--out fixtures/expert]
"""

import argparse
import json
import random
import re
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
GAZETTEER = ROOT / "crates/core/data/gazetteer.tsv"
TARGET_SKILLS = 1080
SEED = 20240611

CUES = {
    "bollards": ["reflector strip", "cap", "post body", "stripe band", "base collar", "number plate"],
    "utility poles": ["crossarm", "insulator", "pole foot", "stencil mark", "guy wire", "transformer box"],
    "road lines": ["centre line", "edge line", "dash rhythm", "stop bar", "shoulder line", "lane arrow"],
    "licence plates": ["background", "side band", "lettering", "frame", "sticker", "font"],
    "chevrons": ["arrow panel", "border", "backing board", "mount", "stripe", "reflective film"],
    "speed signs": ["outer ring", "digit style", "plate shape", "backboard", "post clamp", "unit text"],
    "house roofs": ["tiles", "ridge cap", "gutter", "eaves", "chimney pot", "roof slope"],
    "guardrails": ["beam profile", "post spacing", "end terminal", "reflector tab", "bolt plates", "paint"],
    "street name plates": ["plate colour", "typeface", "border trim", "mounting bracket", "arrow tip", "district label"],
    "pedestrian crossings": ["zebra bars", "kerb paint", "signal head", "beacon globe", "tactile paving", "stop line"],
    "bus stops": ["shelter roof", "timetable board", "pole sign", "bench", "route panel", "kerb marking"],
    "fences": ["rail pattern", "post caps", "wire mesh", "gate latch", "panel colour", "stone base"],
    "mailboxes": ["box colour", "slot flap", "post stand", "horn logo", "door handle", "pillar shape"],
    "traffic lights": ["backplate", "housing colour", "visor", "pole arm", "countdown timer", "cyclist lamp"],
    "soil": ["surface colour", "crust texture", "verge dust", "rock fragments", "clay tone", "ditch edges"],
}

COLOURS = [
    "yellow", "white", "black", "red", "blue", "green", "orange", "grey", "brown",
    "silver", "maroon", "teal", "cream", "purple",
]

DETAILS = [
    "with a thin {c} rim", "painted {c} all over", "carrying a {c} diagonal",
    "topped with a {c} square", "showing faded {c} paint", "marked by a {c} triangle",
    "with {c} vertical bars", "edged in {c} tape", "split into {c} halves",
]

VERBS = [
    "Look at the {cue}: the {part} is {detail}.",
    "Check the {cue}; the {part} stands out {detail}.",
    "Notice how the {part} on the {cue} appears {detail}.",
    "The {part} of the {cue} is {detail}.",
]

MARKERS = ["definitely", "clearly", "certainly", "likely", "probably", "possibly", "maybe", "perhaps", "", ""]

COUNTRY_TAILS = [
    "{m} {name}.", "That is {m} {name}.", "Pattern fits {name}, {m}.",
    "{m} {name} based on this detail.", "Points {m} to {name}.",
]

LOCAL_FEATURES = [
    "street", "village", "church", "town square", "shop", "house", "district", "landmark", "avenue", "storefront",
]

LOCAL_TEMPLATES = [
    "The {feat} shows {detail} {part} near the {cue}.",
    "Near the {feat}, the {cue} has a {part} {detail}.",
    "A {feat} with a {part} {detail} sits beside the {cue}.",
]

GLOBAL_TEMPLATES = [
    ("Vegetation looks {v} and the climate feels {w}.", "This narrows the search to {r}."),
    ("Sun position and {v} plants suggest a {w} hemisphere reading.", "Probably somewhere in {r}."),
    ("The biome is {v} with {w} weather on the horizon.", "Most likely {r}."),
    ("Terrain is {v}; the climate looks {w} for this latitude.", "Maybe {r}."),
]
GLOBAL_V = ["lush", "dry", "sparse", "dense", "scrubby", "grassy", "rocky", "swampy", "wind-bent", "evergreen",
            "deciduous", "sandy"]
GLOBAL_W = ["humid", "arid", "temperate", "monsoon-like", "subtropical", "cold", "mild", "hot", "continental"]
GLOBAL_REGIONS = [
    "the alps", "the andes", "the balkans", "the baltics", "the benelux area", "the caribbean",
    "the caucasus", "central america", "central asia", "east africa", "east asia", "eastern europe",
    "western europe", "latin america", "the mediterranean", "the middle east", "the nordics",
    "north america", "oceania", "patagonia", "the prairies", "the pyrenees", "the sahara", "the sahel",
    "siberia", "south america", "southeast asia", "southern africa", "the tropics", "west africa",
]

FILLERS = ["hmm, not sure what this is", "okay, looking again", "Hmm.", "let me zoom", "wait"]


def load_gazetteer():
    rows = []
    for line in GAZETTEER.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        code, names = line.split("\t")
        rows.append((code, names.split("|")))
    return rows


def tokens(text):
    return [t.lower() for t in re.split(r"[^\w]|_", text) if t]


def scan_countries(text, rows):
    """Longest-match scan of every alias over the token stream."""
    toks = tokens(text)
    aliases = sorted(((tokens(a), code) for code, names in rows for a in names), key=lambda x: -len(x[0]))
    used = [False] * len(toks)
    found = set()
    for alias, code in aliases:
        n = len(alias)
        for i in range(len(toks) - n + 1):
            if toks[i:i + n] == alias and not any(used[i:i + n]):
                for j in range(i, i + n):
                    used[j] = True
                found.add(code)
    return found


def key(reasoning, conclusion):
    return (" ".join(reasoning.lower().split()), " ".join(conclusion.lower().split()))


class Corpus:
    def __init__(self, rng, rows):
        self.rng = rng
        self.rows = rows
        self.names = {code: names[0].title() for code, names in rows}
        self.seen = {}
        self.used_combo = set()

    def detail(self):
        return self.rng.choice(DETAILS).format(c=self.rng.choice(COLOURS))

    def fresh_combo(self):
        while True:
            cue = self.rng.choice(sorted(CUES))
            part = self.rng.choice(CUES[cue])
            detail = self.detail()
            if (cue, part, detail) not in self.used_combo:
                self.used_combo.add((cue, part, detail))
                return cue, part, detail

    def country_step(self, code):
        cue, part, detail = self.fresh_combo()
        reasoning = self.rng.choice(VERBS).format(cue=cue, part=part, detail=detail)
        tail = self.rng.choice(COUNTRY_TAILS).format(m=self.rng.choice(MARKERS), name=self.names[code])
        return reasoning, " ".join(tail.split())

    def local_step(self, code):
        cue, part, detail = self.fresh_combo()
        feat = self.rng.choice(LOCAL_FEATURES)
        reasoning = self.rng.choice(LOCAL_TEMPLATES).format(feat=feat, part=part, detail=detail, cue=cue)
        tail = self.rng.choice(COUNTRY_TAILS).format(m=self.rng.choice(MARKERS), name=self.names[code])
        return reasoning, " ".join(tail.split())

    def global_step(self):
        """A climate step; each (template, region) pair is used once."""
        free = [(t, r) for t in range(len(GLOBAL_TEMPLATES)) for r in GLOBAL_REGIONS
                if (t, r) not in self.used_combo]
        if not free:
            return None
        t, region = self.rng.choice(free)
        self.used_combo.add((t, region))
        r_tpl, c_tpl = GLOBAL_TEMPLATES[t]
        reasoning = r_tpl.format(v=self.rng.choice(GLOBAL_V), w=self.rng.choice(GLOBAL_W))
        return reasoning, c_tpl.format(r=region)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(ROOT / "fixtures/expert"))
    args = ap.parse_args()
    rng = random.Random(SEED)
    rows = load_gazetteer()
    codes = [code for code, _ in rows]
    corpus = Corpus(rng, rows)

    records = []
    skills = {}  # key -> conclusion, first-seen order
    duplicates = 0
    fillers = 0
    n = 0
    while len(skills) < TARGET_SKILLS:
        code = codes[n % len(codes)]
        n += 1
        steps = []
        if rng.random() < 0.35:
            g = corpus.global_step()
            if g is not None:
                steps.append(g)
        steps.append(corpus.country_step(code))
        steps.append(corpus.country_step(code))
        if rng.random() < 0.6:
            steps.append(corpus.local_step(code))
        if skills and rng.random() < 0.15:
            steps.insert(rng.randrange(len(steps) + 1), list(skills)[rng.randrange(len(skills))])
        room = TARGET_SKILLS - len(skills)
        fresh = [s for s in steps if key(*s) not in skills]
        if len(fresh) > room:
            drop = {key(*s) for s in fresh[room:]}
            steps = [s for s in steps if key(*s) not in drop]
        rounds = []
        for s in steps:
            k = key(*s)
            if k in skills:
                duplicates += 1
            else:
                skills[k] = s[1]
            corpus.seen[k] = True
            rounds.append({"reasoning": s[0], "conclusion": s[1]})
        if rng.random() < 0.2:
            fillers += 1
            rounds.insert(rng.randrange(len(rounds) + 1), {"reasoning": rng.choice(FILLERS), "conclusion": ""})
        records.append({
            "trajectory_id": f"exp-{len(records):04d}",
            "rounds": rounds,
            "outcome": "success",
            "ground_truth": None,
        })

    # Brittle trajectories: replays of known steps plus wrong new guesses.
    pool = list(skills)
    brittle = 0
    for _ in range(40):
        picked = rng.sample(pool, 2)
        wrong = corpus.country_step(rng.choice(codes))
        rounds = [{"reasoning": r, "conclusion": c} for r, c in picked]
        rounds.append({"reasoning": wrong[0], "conclusion": wrong[1]})
        brittle += 1
        records.append({
            "trajectory_id": f"exp-{len(records):04d}",
            "rounds": rounds,
            "outcome": "brittle",
            "ground_truth": None,
        })

    hist = {}
    for conclusion in skills.values():
        for code in scan_countries(conclusion, rows):
            hist[code] = hist.get(code, 0) + 1

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trajectories.jsonl", "w", encoding="utf-8") as f:
        for r in records:
            if r["ground_truth"] is None:
                del r["ground_truth"]
            f.write(json.dumps(r, ensure_ascii=False, separators=(",", ":")) + "\n")
    manifest = {
        "file": "trajectories.jsonl",
        "seed": SEED,
        "records": len(records),
        "success_records": len(records) - brittle,
        "brittle_records": brittle,
        "skills": len(skills),
        "duplicate_steps": duplicates,
        "filler_steps": fillers,
        "country_histogram": dict(sorted(hist.items())),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"{len(records)} records, {len(skills)} skills -> {out}")


if __name__ == "__main__":
    main()
