#!/usr/bin/env python3
"""Generate the synthetic gated-CT report corpus with expected extraction labels.

Usage: make_nlp_corpus.py [--seed N] [--out PATH]
"""
import argparse
import datetime
import json
import random

HEADER = [
    "EXAM: CT CARDIAC CALCIUM SCORING WITHOUT CONTRAST.",
    "CT HEART FOR CALCIUM SCORING.",
    "CARDIAC CT, CORONARY CALCIUM SCORE.",
    "PROCEDURE: ECG-gated non-contrast CT of the heart.",
]
CLINICAL = [
    "CLINICAL HISTORY: chest pain.",
    "INDICATION: Hyperlipidemia, family history of CAD.",
    "HISTORY: 62 year old male with hypertension.",
    "INDICATION: Risk stratification.",
    "HISTORY: Shortness of breath, 3 months duration.",
]
TECHNIQUE = [
    "TECHNIQUE: Prospective ECG triggering, 3 mm slices, 120 kVp.",
    "TECHNIQUE: Axial images at 3.0 mm slice thickness were obtained.",
    "TECHNIQUE: Non-contrast images of the heart were acquired with 2.5 mm collimation.",
    "",
]
INCIDENTAL = [
    "Lungs are clear.",
    "No pericardial effusion.",
    "Mild emphysema in the upper lobes.",
    "A 4 mm nodule in the right lower lobe is unchanged.",
    "Heart size is normal.",
    "",
]
VESSELS = [("LAD", "Left anterior descending"), ("LCX", "Circumflex"), ("RCA", "Right coronary"), ("LM", "Left main")]

SCORE_TEMPLATES = [
    "Total calcium score: {s}.",
    "The total Agatston score is {s}.",
    "Coronary artery calcium score = {s}",
    "CAC score of {s}.",
    "Agatston: {s}",
    "Calcium score (Agatston): {s}.",
    "Total agatston {s}",
    "The coronary calcium score was {s}.",
    "Total coronary artery calcium score: {s}",
    "IMPRESSION: Agatston score {s}.",
    "Calcium score {s}.",
    "Total CAC score is {s}.",
]
ZERO_TEMPLATES = [
    "Total calcium score: 0.",
    "The Agatston score is zero.",
    "Coronary artery calcium score = 0",
    "CAC score of 0. No detectable coronary calcium.",
    "IMPRESSION: Total calcium score zero.",
    "Agatston: 0",
]
HARDWARE_TEMPLATES = [
    "Calcium scoring not performed due to presence of coronary stent.",
    "Scoring was not performed due to the presence of a stent in the LAD.",
    "Status post CABG. Calcium score not reported.",
    "Patient has coronary artery bypass grafts; calcium scoring not performed.",
    "Stents are present in the RCA. Total calcium score: {s}.",
    "History of bypass surgery. Agatston score {s} excluding grafts.",
    "Prior stenting of the LAD. Calcium score: {s}.",
]
NONE_TEMPLATES = [
    "Calcium score could not be computed due to motion artifact.",
    "Study is nondiagnostic for calcium scoring.",
    "Severe coronary calcification is present.",
    "Images degraded by noise; scoring deferred.",
]


def fmt(v, rng):
    if v >= 1000 and rng.random() < 0.6:
        return f"{v:,}"
    return str(v)


def score_value(rng):
    r = rng.random()
    if r < 0.3:
        return rng.randint(1, 100)
    if r < 0.55:
        return rng.randint(101, 400)
    if r < 0.9:
        return rng.randint(401, 3000)
    return round(rng.uniform(1, 900), 1)


def wrap(rng, body):
    parts = [rng.choice(HEADER), rng.choice(CLINICAL), rng.choice(TECHNIQUE), "FINDINGS:"]
    parts += [p for p in rng.sample(INCIDENTAL, 2) if p]
    parts += body
    return "\n".join(p for p in parts if p)


def plain(rng):
    s = score_value(rng)
    return wrap(rng, [rng.choice(SCORE_TEMPLATES).format(s=fmt(s, rng))]), ("extracted", s, None)


def zero(rng):
    return wrap(rng, [rng.choice(ZERO_TEMPLATES)]), ("extracted", 0, None)


def hardware(rng):
    s = score_value(rng)
    return wrap(rng, [rng.choice(HARDWARE_TEMPLATES).format(s=fmt(s, rng))]), ("not_extractable", None,
                                                                             "hardware_mention")


def trap(rng):
    total = score_value(rng)
    kind = rng.randrange(5)
    if kind == 0:
        lines = [f"{short}: {rng.randint(0, 300)}" for short, _ in rng.sample(VESSELS, 3)]
        body = lines + [rng.choice(SCORE_TEMPLATES).format(s=fmt(total, rng))]
    elif kind == 1:
        _, long = rng.choice(VESSELS)
        body = [f"{long} artery calcium score is {rng.randint(1, 200)}.",
                rng.choice(SCORE_TEMPLATES).format(s=fmt(total, rng))]
    elif kind == 2:
        body = [rng.choice(SCORE_TEMPLATES).format(s=fmt(total, rng)),
                f"This places the patient in the {rng.randint(10, 99)}th percentile for age and sex.",
                f"Age-matched median calcium score: {rng.randint(0, 150)}."]
    elif kind == 3:
        body = [f"Prior calcium score was {rng.randint(0, 500)} in {rng.randint(2010, 2018)}.",
                f"Current total calcium score: {fmt(total, rng)}."]
    else:
        body = [f"Total calcium score: {fmt(total, rng)}.",
                f"Expected calcium score (MESA) is {rng.randint(0, 200)}."]
    return wrap(rng, body), ("extracted", total, None)


def none(rng):
    return wrap(rng, [rng.choice(NONE_TEMPLATES)]), ("not_extractable", None, "no_score_pattern")


def ambiguous(rng):
    a = score_value(rng)
    b = a + rng.randint(5, 50)
    body = [f"Calcium score: {fmt(a, rng)}.", f"On repeat reconstruction, calcium score: {fmt(b, rng)}."]
    return wrap(rng, body), ("not_extractable", None, "ambiguous_multiple")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=20240611)
    ap.add_argument("--out", default="data/corpus/nlp_reports_300.jsonl")
    args = ap.parse_args()
    rng = random.Random(args.seed)

    plan = [plain] * 140 + [zero] * 40 + [hardware] * 45 + [trap] * 55 + [none] * 12 + [ambiguous] * 8
    rng.shuffle(plan)
    start = datetime.date(2012, 1, 1)
    with open(args.out, "w") as f:
        for i, make in enumerate(plan):
            text, (status, score, reason) = make(rng)
            rec = {
                "report_id": f"R{i + 1:04d}",
                "patient_id": f"P{i + 1:04d}",
                "study_uid": f"1.2.826.0.1.9001.{i + 1}",
                "report_text": text,
                "report_date": (start + datetime.timedelta(days=rng.randrange(3650))).isoformat(),
                "expected_status": status,
                "expected_score": score,
                "expected_reason": reason,
            }
            f.write(json.dumps(rec) + "\n")


if __name__ == "__main__":
    main()
