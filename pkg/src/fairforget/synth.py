"""Synthetic stand-ins for the three raw datasets.

Generates files in the exact on-disk schema of each distribution so the
loaders and the full pipeline can run without the real data. The planted
signal: a latent ability/engagement variable drives both the informative
features and the label, plus a small group-dependent shift so the trained
models show a modest fairness gap. These are NOT the real datasets and
reproduce none of their published statistics.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

_OULAD_INFO_HEADER = ["code_module", "code_presentation", "id_student", "gender",
                      "region", "highest_education", "imd_band", "age_band",
                      "num_of_prev_attempts", "studied_credits", "disability",
                      "final_result"]
_OULAD_VLE_HEADER = ["code_module", "code_presentation", "id_student", "id_site",
                     "date", "sum_click"]

_REGIONS = ["East Anglian Region", "Scotland", "North Western Region", "Wales",
            "South Region", "Ireland", "London Region"]
_EDU = ["No Formal quals", "Lower Than A Level", "A Level or Equivalent",
        "HE Qualification", "Post Graduate Qualification"]
_IMD = ["0-10%", "10-20", "20-30%", "30-40%", "40-50%",
        "50-60%", "60-70%", "70-80%", "80-90%", "90-100%"]
_AGE = ["0-35", "35-55", "55<="]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def synth_oulad(out_dir: str | Path, n_students: int = 1200, seed: int = 0,
                missing_rate: float = 0.02, duplicate_rate: float = 0.02) -> None:
    """Write studentInfo.csv and studentVle.csv with a planted pass/fail signal."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    info_rows = []
    vle_rows = []
    for i in range(n_students):
        sid = str(100000 + i)
        module = rng.choice(["AAA", "BBB", "CCC"])
        pres = rng.choice(["2013J", "2014B"])
        gender = "M" if rng.random() < 0.52 else "F"
        edu_idx = int(rng.choice(5, p=[0.05, 0.35, 0.35, 0.2, 0.05]))
        imd_idx = int(rng.integers(0, 10))
        age = _AGE[int(rng.choice(3, p=[0.7, 0.27, 0.03]))]
        attempts = int(min(rng.geometric(0.8) - 1, 4))
        credits = int(rng.choice([30, 60, 90, 120], p=[0.3, 0.45, 0.15, 0.1]))
        disability = "Y" if rng.random() < 0.08 else "N"

        engagement = rng.normal()
        total_clicks = max(0, int(np.round(90 + 45 * engagement + 12 * rng.normal())))
        n_sessions = int(rng.integers(1, 6))
        remaining = total_clicks
        for s in range(n_sessions):
            part = remaining if s == n_sessions - 1 else int(rng.integers(0, remaining + 1))
            remaining -= part
            if part > 0 or s == 0:
                vle_rows.append([module, pres, sid, str(int(rng.integers(500000, 600000))),
                                 str(int(rng.integers(-10, 260))), str(part)])

        logit = (1.5 * engagement + 0.4 * (edu_idx - 1.8)
                 - 0.4 * (imd_idx < 5) + 0.35 * (gender == "M")
                 - 0.3 * (disability == "Y") + 0.5 * rng.normal())
        passed = rng.random() < _sigmoid(logit)
        result = (rng.choice(["Pass", "Distinction"], p=[0.8, 0.2]) if passed
                  else rng.choice(["Fail", "Withdrawn"], p=[0.6, 0.4]))
        imd = _IMD[imd_idx] if rng.random() > missing_rate else "?"
        info_rows.append([module, pres, sid, gender, str(rng.choice(_REGIONS)),
                          _EDU[edu_idx], imd, age, str(attempts), str(credits),
                          disability, result])
        if rng.random() < duplicate_rate:
            dup = list(info_rows[-1])
            dup[1] = "2014J"
            info_rows.append(dup)

    with open(out_dir / "studentInfo.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_OULAD_INFO_HEADER)
        w.writerows(info_rows)
    with open(out_dir / "studentVle.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_OULAD_VLE_HEADER)
        w.writerows(vle_rows)


_SP_HEADER = ["school", "sex", "age", "address", "famsize", "Pstatus", "Medu", "Fedu",
              "Mjob", "Fjob", "reason", "guardian", "traveltime", "studytime",
              "failures", "schoolsup", "famsup", "paid", "activities", "nursery",
              "higher", "internet", "romantic", "famrel", "freetime", "goout",
              "Dalc", "Walc", "health", "absences", "G1", "G2", "G3"]

_JOBS = ["teacher", "health", "services", "at_home", "other"]


def synth_student_performance(out_file: str | Path, n: int = 649, seed: int = 0) -> None:
    """Write a student-por.csv lookalike (semicolon separated, quoted strings)."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        ability = rng.normal()
        sex = "M" if rng.random() < 0.41 else "F"
        yn = lambda p: "yes" if rng.random() < p else "no"
        g1 = int(np.clip(np.round(11.5 + 2.6 * ability + rng.normal(0, 1.3)), 0, 20))
        g2 = int(np.clip(np.round(0.8 * g1 + 0.2 * 11.5 + 0.8 * ability + rng.normal(0, 1.0)), 0, 20))
        g3 = int(np.clip(np.round(0.35 * g1 + 0.55 * g2 + 0.7
                                  + 0.8 * (sex == "F") + rng.normal(0, 1.5)), 0, 20))
        rows.append([
            "GP" if rng.random() < 0.72 else "MS",
            sex,
            str(int(rng.integers(15, 23))),
            "U" if rng.random() < 0.7 else "R",
            "GT3" if rng.random() < 0.7 else "LE3",
            "T" if rng.random() < 0.88 else "A",
            str(int(np.clip(np.round(2.2 + 0.7 * ability + rng.normal()), 0, 4))),
            str(int(np.clip(np.round(2.0 + 0.6 * ability + rng.normal()), 0, 4))),
            str(rng.choice(_JOBS)),
            str(rng.choice(_JOBS)),
            str(rng.choice(["home", "reputation", "course", "other"])),
            str(rng.choice(["mother", "father", "other"], p=[0.7, 0.25, 0.05])),
            str(int(rng.integers(1, 5))),
            str(int(np.clip(np.round(2.0 + 0.5 * ability + rng.normal(0, 0.8)), 1, 4))),
            str(int(np.clip(rng.poisson(max(0.05, 0.3 - 0.2 * ability)), 0, 3))),
            yn(0.1), yn(0.6), yn(0.06), yn(0.5), yn(0.8), yn(0.89), yn(0.77), yn(0.37),
            str(int(rng.integers(1, 6))),
            str(int(rng.integers(1, 6))),
            str(int(rng.integers(1, 6))),
            str(int(np.clip(rng.poisson(1.0), 1, 5))),
            str(int(np.clip(rng.poisson(1.8), 1, 5))),
            str(int(rng.integers(1, 6))),
            str(int(np.clip(rng.poisson(3.5), 0, 32))),
            str(g1), str(g2), str(g3),
        ])
    out_file = Path(out_file)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    with open(out_file, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=";", quoting=csv.QUOTE_NONNUMERIC)
        w.writerow(_SP_HEADER)
        for row in rows:
            w.writerow(row)


_XAPI_HEADER = ["gender", "NationalITy", "PlaceofBirth", "StageID", "GradeID",
                "SectionID", "Topic", "Semester", "Relation", "raisedhands",
                "VisITedResources", "AnnouncementsView", "Discussion",
                "ParentAnsweringSurvey", "ParentschoolSatisfaction",
                "StudentAbsenceDays", "Class"]

_NATIONS = ["KW", "Jordan", "Palestine", "Iraq", "lebanon", "Egypt", "SaudiArabia",
            "USA", "Syria"]
_TOPICS = ["IT", "Math", "Arabic", "Science", "English", "Quran", "Spanish",
           "French", "History", "Biology", "Chemistry", "Geology"]


def synth_xapi(out_file: str | Path, n: int = 480, seed: int = 0) -> None:
    """Write an xAPI-Edu-Data.csv lookalike with a planted L/M/H signal."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        engagement = rng.normal()
        gender = "M" if rng.random() < 0.64 else "F"
        nat = str(rng.choice(_NATIONS))
        stage = str(rng.choice(["lowerlevel", "MiddleSchool", "HighSchool"], p=[0.4, 0.5, 0.1]))
        grade = str(rng.choice(["G-02", "G-04", "G-06", "G-07", "G-08", "G-11", "G-12"]))
        perf = (1.1 * engagement + 0.35 * (gender == "F")
                + 0.45 * rng.normal())
        cls = "H" if perf > 0.75 else ("M" if perf > -0.55 else "L")
        clip100 = lambda c: str(int(np.clip(np.round(c), 0, 100)))
        rows.append([
            gender, nat, nat if rng.random() < 0.9 else str(rng.choice(_NATIONS)),
            stage, grade, str(rng.choice(["A", "B", "C"], p=[0.58, 0.35, 0.07])),
            str(rng.choice(_TOPICS)),
            "F" if rng.random() < 0.52 else "S",
            "Father" if rng.random() < 0.6 else "Mum",
            clip100(48 + 26 * engagement + rng.normal(0, 12)),
            clip100(52 + 27 * engagement + rng.normal(0, 12)),
            clip100(38 + 20 * engagement + rng.normal(0, 14)),
            clip100(43 + 15 * engagement + rng.normal(0, 16)),
            "Yes" if rng.random() < _sigmoid(0.8 * engagement) else "No",
            "Good" if rng.random() < _sigmoid(0.6 * engagement + 0.2) else "Bad",
            "Under-7" if rng.random() < _sigmoid(1.2 * engagement + 0.4) else "Above-7",
            cls,
        ])
    out_file = Path(out_file)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    with open(out_file, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_XAPI_HEADER)
        w.writerows(rows)
