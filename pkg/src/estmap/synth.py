"""Deterministic synthetic case study used by the bundled manifest and the tests.

``python -m estmap.synth OUTDIR`` writes a MEDLINE file, a WoS export, a
patent file, gazetteer and alias tables, four small basemaps and a manifest.
The corpus mimics an RNA-interference field: most titles match the title
query, a slice are microRNA papers for the trend comparison, and a Boston
cluster is planted with extra highly cited papers.
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

import numpy as np

from estmap.records import atomic_write

# organisation, address tail (city, region, country) as it appears on records
ORGS = [
    ("Univ Massachusetts", "Sch Med, Worcester, MA 01655 USA"),
    ("Harvard Univ", "Sch Med, Boston, MA 02115 USA"),
    ("MIT", "Dept Biol, Cambridge, MA 02139 USA"),
    ("Whitehead Inst Biomed Res", "Cambridge, MA 02142 USA"),
    ("Dana Farber Canc Inst", "Boston, MA 02215 USA"),
    ("Johns Hopkins Univ", "Sch Med, Baltimore, MD 21205 USA"),
    ("Carnegie Inst Washington", "Dept Embryol, Baltimore, MD 21218 USA"),
    ("Rockefeller Univ", "New York, NY 10065 USA"),
    ("Cold Spring Harbor Lab", "New York, NY 11724 USA"),
    ("Univ Penn", "Philadelphia, PA 19104 USA"),
    ("Univ Colorado", "Boulder, CO 80309 USA"),
    ("Dharmacon Inc", "Denver, CO 80202 USA"),
    ("Stanford Univ", "San Francisco, CA 94305 USA"),
    ("Natl Canc Inst", "Bethesda, MD 20892 USA"),
    ("Univ Manchester", "Manchester, England"),
    ("Univ Sheffield", "Sheffield, England"),
    ("Univ Sussex", "Brighton, England"),
    ("Univ Cambridge", "Wellcome Trust, Cambridge, England"),
    ("Univ Dundee", "Dundee, Scotland"),
    ("Max Planck Inst Biophys Chem", "Göttingen, Germany"),
    ("Dr Margarete Fischer Bosch Inst Clin Pharmacol", "Stuttgart, Germany"),
    ("Deutsch Krebsforschungszentrum", "Heidelberg, Germany"),
    ("Inst Pasteur", "Paris, France"),
    ("Karolinska Inst", "Stockholm, Sweden"),
    ("Univ Tokyo", "Tokyo, Japan"),
    ("Chinese Acad Sci", "Shanghai, Peoples R China"),
    ("Univ Toronto", "Toronto, ON M5S 1A8, Canada"),
    ("Univ Sydney", "Sydney, NSW 2006, Australia"),
]
# labs that only ever publish alone: isolated nodes in the co-authorship graph
SOLO_ORGS = [
    ("Univ Colorado Hlth Sci Ctr", "Denver, CO 80262 USA"),
    ("St Jude Childrens Res Hosp", "Memphis, TN 38105 USA"),
    ("Univ Rochester", "Rochester, NY 14642 USA"),
    ("Baylor Coll Med", "Houston, TX 77030 USA"),
    ("Fred Hutchinson Canc Res Ctr", "Seattle, WA 98109 USA"),
    ("Univ Oxford", "Oxford, England"),
    ("Leiden Univ", "Leiden, Netherlands"),
    ("Univ Milan", "Milan, Italy"),
    ("Seoul Natl Univ", "Seoul, South Korea"),
    ("Univ Sao Paulo", "São Paulo, Brazil"),
]
ORGS_ALL = dict(ORGS + SOLO_ORGS)
# raw spellings that a reviewed alias table folds back onto one organisation
ORG_VARIANTS = {
    "Univ Sussex": ["University of Sussex"],
    "Univ Manchester": ["University of Manchester"],
    "Harvard Univ": ["Harvard University"],
}
BOSTON_AREA = {"Harvard Univ", "MIT", "Whitehead Inst Biomed Res", "Dana Farber Canc Inst"}

RNAI_TITLES = [
    "Silencing of {gene} expression by siRNA in {cell} cells",
    "RNA interference screen identifies {gene} as a regulator of {process}",
    "Efficient RNAi knockdown of {gene} in {cell} cells",
    "Chemically modified siRNA improves {process} in vivo",
    "Off-target effects of RNA interference in {cell} cells",
    "Delivery of siRNA targeting {gene} by lipid nanoparticles",
    "Mechanism of interference RNA processing by Dicer",
    "Genome-wide RNAi analysis of {process}",
]
MIRNA_TITLES = [
    "A microRNA cluster regulates {process}",
    "miRNA expression profiling in {cell} cells",
    "The microRNA let-7 controls {gene} during {process}",
]
OTHER_TITLES = [
    "Potent and specific genetic interference by double-stranded RNA in {cell} cells",
    "Structure of the {gene} promoter",
    "Antisense oligonucleotides against {gene}",
]
GENES = ["VEGF", "p53", "BCL2", "MYC", "KRAS", "EGFR", "HIF1A", "STAT3", "Dicer", "Argonaute"]
CELLS = ["HeLa", "HEK293", "mammalian", "neuronal", "tumour", "Drosophila S2", "C. elegans"]
PROCESSES = ["apoptosis", "cell migration", "viral replication", "development", "angiogenesis"]

WOS_CATEGORIES = [
    "Biochemistry & Molecular Biology", "Cell Biology", "Genetics & Heredity", "Oncology",
    "Virology", "Biotechnology & Applied Microbiology", "Pharmacology & Pharmacy",
    "Medicine, Research & Experimental", "Neurosciences", "Immunology", "Plant Sciences",
    "Developmental Biology", "Chemistry, Multidisciplinary", "Nanoscience & Nanotechnology",
    "Biophysics", "Microbiology", "Multidisciplinary Sciences", "Hematology",
]
JOURNALS = [
    "Nature", "Science", "Cell", "Nucleic Acids Research", "RNA", "Molecular Cell",
    "Genes & Development", "Nature Biotechnology", "Molecular Therapy", "Oncogene",
    "Journal of Virology", "Cancer Research", "Plant Cell", "Development",
    "Journal of Controlled Release", "Biomaterials",
]
MESH_POOL = [
    "RNA Interference", "RNA, Small Interfering", "MicroRNAs", "Gene Silencing", "Neoplasms",
    "Leukemia", "HIV Infections", "Hepatitis B", "RNA, Messenger", "Oligonucleotides, Antisense",
    "Genetic Therapy", "Drug Delivery Systems", "Gene Transfer Techniques",
    "Polymerase Chain Reaction", "Antineoplastic Agents", "Humans", "Genotype",
]
IPC_POOL = ["C12N15/11", "C12N15/113", "A61K31/713", "A61K48/00", "C07H21/02", "C12Q1/68",
            "A61P35/00", "A61P31/12", "G01N33/50", "C07K14/47", "A01H5/00", "A61K9/127"]


def _title(rng: random.Random, templates: list[str]) -> str:
    return rng.choice(templates).format(gene=rng.choice(GENES), cell=rng.choice(CELLS),
                                        process=rng.choice(PROCESSES))


def _pick_orgs(rng: random.Random, k: int, boston_bias: bool) -> list[str]:
    names = [o for o, _ in ORGS]
    weights = [4.0 if (boston_bias and o in BOSTON_AREA) else 1.0 for o in names]
    chosen: list[str] = []
    while len(chosen) < k:
        o = rng.choices(names, weights)[0]
        if o not in chosen:
            chosen.append(o)
    return chosen


def _spell(rng: random.Random, org: str) -> str:
    variants = ORG_VARIANTS.get(org)
    return rng.choice([org] + variants) if variants and rng.random() < 0.4 else org


def _address(org_spelling: str, org: str) -> str:
    return f"{org_spelling}, {ORGS_ALL[org]}"


def _year_weights(years: range, growth: float) -> list[float]:
    return [growth ** (y - years.start) for y in years]


def generate(outdir: Path | str, seed: int = 2013) -> dict[str, Path]:
    outdir = Path(outdir)
    rng = random.Random(seed)
    years = range(1996, 2012)
    yw = _year_weights(years, 1.18)

    # --- WoS export -------------------------------------------------------
    header = ["UT", "TI", "AB", "AU", "C1", "PY", "TC", "WC", "SO"]
    rows = ["\t".join(header)]
    for i in range(300):
        kind = rng.random()
        title = _title(rng, RNAI_TITLES if kind < 0.78 else MIRNA_TITLES if kind < 0.92 else OTHER_TITLES)
        year = rng.choices(years, yw)[0]
        if i < 40:
            year = rng.choice(range(1998, 2002))
        n_org = rng.choice([1, 1, 2, 2, 2, 3, 3, 4])
        orgs = _pick_orgs(rng, n_org, boston_bias=rng.random() < 0.5)
        if n_org == 1 and rng.random() < 0.35:
            orgs = [rng.choice(SOLO_ORGS)[0]]
        boston = any(o in BOSTON_AREA for o in orgs)
        base = rng.expovariate(1 / 12)
        cites = int(base * (4.0 if boston and rng.random() < 0.6 else 1.0)) + (2011 - year)
        authors = "; ".join(f"{rng.choice('ABCDEFGHKLMNPRST')}{rng.choice('aeiou')}{rng.choice('lmnrst')}k, "
                            f"{rng.choice('ABCDEFGHJKLMNPRSTW')}" for _ in range(rng.randint(1, 5)))
        c1 = "; ".join(f"[{authors.split(';')[0]}] {_address(_spell(rng, o), o)}" for o in orgs)
        if rng.random() < 0.05:
            c1 = ""  # no address: kept for counts, skipped by maps
        cats = "; ".join(rng.sample(WOS_CATEGORIES[:8] if rng.random() < 0.7 else WOS_CATEGORIES, rng.randint(1, 3)))
        journal = rng.choice(JOURNALS)
        abstract = f"We studied {rng.choice(GENES)} using {rng.choice(['siRNA', 'shRNA', 'antisense', 'CRISPR'])}."
        rows.append("\t".join([f"WOS:{100000000 + i:012d}", title, abstract, authors, c1, str(year),
                               str(cites), cats, journal]))
    # two malformed rows exercise the skip path
    rows.append("\t".join(["WOS:999999999999", "siRNA odds and ends", "", "", "", "in press", "0", "", ""]))

    # --- MEDLINE ------------------------------------------------------------
    blocks = []
    for i in range(110):
        kind = rng.random()
        title = _title(rng, RNAI_TITLES if kind < 0.8 else MIRNA_TITLES if kind < 0.93 else OTHER_TITLES)
        year = rng.choices(years, yw)[0]
        orgs = _pick_orgs(rng, rng.choice([1, 2, 2, 3]), boston_bias=False)
        lines = [f"PMID- {20000000 + i}", "OWN - NLM", f"DP  - {year} {rng.choice(['Jan', 'Mar', 'Jul', 'Oct'])}",
                 f"TI  - {title}"]
        if rng.random() < 0.7:
            lines.append(f"AB  - Background. We report experiments on {rng.choice(GENES)} silencing in "
                         f"{rng.choice(CELLS)} cells\n      with follow-up assays.")
        for a in range(rng.randint(1, 4)):
            lines.append(f"AU  - {rng.choice(['Smith', 'Tanaka', 'Muller', 'Rossi', 'Chen'])} {'ABCDE'[a]}")
        for o in orgs:
            lines.append(f"AD  - {_address(_spell(rng, o), o)}.")
        for term in rng.sample(MESH_POOL, rng.randint(2, 5)):
            lines.append(f"MH  - {'*' if rng.random() < 0.3 else ''}{term}{'/genetics' if rng.random() < 0.3 else ''}")
        lines.append(f"JT  - {rng.choice(JOURNALS)}")
        blocks.append("\n".join(lines))
    medline = "\n\n".join(blocks) + "\n"

    # --- patents --------------------------------------------------------------
    patent_lines = []
    assignees = [("Dharmacon Inc", "Denver, CO 80202 USA"), ("Univ Colorado", "Boulder, CO 80309 USA"),
                 ("Alnylam Pharmaceut", "Cambridge, MA 02142 USA"), ("Sirna Therapeut", "Boulder, CO 80301 USA"),
                 ("Univ Massachusetts", "Worcester, MA 01655 USA"), ("Isis Pharmaceut", "San Francisco, CA 94158 USA"),
                 ("Benitec", "Sydney, NSW 2000, Australia"), ("Max Planck Inst", "Göttingen, Germany"),
                 ("Univ Penn", "Philadelphia, PA 19104 USA"), ("Rockefeller Univ", "New York, NY 10065 USA")]
    filing_years = [1998, 1999, 2000, 2000, 2001, 2001, 2001, 2001, 2000, 1999, 2001]
    filing_years += [rng.choice(range(2002, 2007)) for _ in range(36)]
    filing_years += [rng.choice(range(2007, 2012)) for _ in range(34)]
    for i, fy in enumerate(filing_years):
        holders = rng.sample(assignees, rng.choice([1, 1, 2]))
        denver = any("CO 80" in a for _, a in holders)
        claims = (f"1. A method of inhibiting expression of {rng.choice(GENES)} comprising administering "
                  f"{rng.choice(['an siRNA', 'an RNAi agent', 'an interference RNA molecule'])}.")
        # the first eleven (1998-2001) all match the claims query; later ones carry some noise
        if i >= 11 and i % 7 == 3:
            claims = "1. A method comprising administering a double-stranded RNA."
        if i >= 11 and i % 9 == 8:
            claims = f"1. An antisense oligonucleotide complementary to {rng.choice(GENES)}."
        patent_lines.append(json.dumps({
            "id": f"US{7000000 + i}",
            "title": f"Compositions for {rng.choice(PROCESSES)} modulation",
            "claims": claims,
            "filing_year": fy,
            "citation_count": int(rng.expovariate(1 / 6)) + (8 if denver and rng.random() < 0.6 else 0),
            "ipc": rng.sample(IPC_POOL, rng.randint(1, 3)),
            "inventors": [f"Inventor {i}-{k}" for k in range(rng.randint(1, 3))],
            "addresses": [f"{h}, {a}" for h, a in holders],
        }))
    patent_lines.insert(5, json.dumps({"id": "US6999999", "title": "Undated", "claims": "1. An siRNA.",
                                       "filing_year": "n/a", "citation_count": 0, "ipc": ["C12N15/11"]}))
    patents = "\n".join(patent_lines) + "\n"

    files = {
        "wos": outdir / "inputs" / "wos_export.txt",
        "medline": outdir / "inputs" / "medline.txt",
        "patents": outdir / "inputs" / "patents.jsonl",
    }
    atomic_write(files["wos"], "\n".join(rows) + "\n")
    atomic_write(files["medline"], medline)
    atomic_write(files["patents"], patents)

    aliases = ["# raw name\tcanonical name (reviewed)"]
    for canon, variants in ORG_VARIANTS.items():
        for v in variants:
            aliases.append(f"{v}\t{canon}")
    files["org_aliases"] = outdir / "org_aliases.tsv"
    atomic_write(files["org_aliases"], "\n".join(aliases) + "\n")

    files.update(write_basemaps(outdir / "basemaps", seed))
    files["manifest"] = outdir / "rnai.ini"
    atomic_write(files["manifest"], MANIFEST)
    return files


def _block_matrix(rng: np.random.Generator, k: int, blocks: int) -> np.ndarray:
    groups = np.arange(k) % blocks
    M = rng.random((k, k)) * 0.3
    M += (groups[:, None] == groups[None, :]) * (2.0 + rng.random((k, k)))
    M = (M + M.T) / 2
    return M


def write_basemaps(outdir: Path, seed: int) -> dict[str, Path]:
    from estmap.overlay import build_basemap, mesh_truncate
    from estmap.data import default_mesh_trees

    rng = np.random.default_rng(seed)
    out = {}
    mesh_codes = sorted({m.code for trees in default_mesh_trees().values()
                         for m in mesh_truncate(trees).codes})
    ipc_codes = sorted({c[:4] for c in IPC_POOL} | {"A61B", "C12M", "G06F", "B01J"})
    specs = {
        "wos_category": (WOS_CATEGORIES, 4),
        "journal": (JOURNALS, 3),
        "mesh": (mesh_codes, 3),
        "ipc": (ipc_codes, 3),
    }
    for scheme, (codes, blocks) in specs.items():
        M = _block_matrix(rng, len(codes), blocks)
        bm = build_basemap(M, list(codes), scheme, seed=seed, threshold=0.05, basemap_id=f"synthetic-{scheme}")
        path = outdir / f"{scheme}.json"
        atomic_write(path, bm.dumps())
        out[f"basemap_{scheme}"] = path
    return out


def reference_mesh_stub(seed: int = 7) -> dict:
    """822-node MeSH-shaped basemap document (C, D and E branches, two levels).

    Node codes and geometry are synthetic; only the shape matches the
    published map, which is not redistributable.
    """
    rng = random.Random(seed)
    tops = [("C", 26), ("D", 27), ("E", 7)]
    per_top = {"C": 16, "D": 12, "E": 13}
    codes = []
    for branch, n_top in tops:
        for t in range(1, n_top + 1):
            for s in range(1, per_top[branch] + 1):
                codes.append(f"{branch}{t:02d}.{s * 7:03d}")
    codes = codes[:822]
    assert len(codes) == 822, len(codes)
    nodes = []
    for i, c in enumerate(codes):
        nodes.append({"code": c, "label": c, "cluster": "CDE".index(c[0]), "branch": c[0],
                      "x": round(rng.gauss("CDE".index(c[0]) * 3.0, 1.0), 4),
                      "y": round(rng.gauss(0.0, 1.0), 4)})
    edges = [{"i": i, "j": i + 1, "s": 0.5} for i in range(len(codes) - 1) if codes[i][:3] == codes[i + 1][:3]]
    return {"id": "mesh-822-stub", "scheme": "mesh", "nodes": nodes, "edges": edges}


MANIFEST = """\
# Synthetic RNA-interference case study.
[case]
name = rnai-synthetic
seed = 7
retrieved_on = 2013-01-15
output = out

[queries]
wos = TI=siRNA or TI=RNAi or TI="RNA interference" or TI="interference RNA"
medline = TI=siRNA or TI=RNAi or TI="RNA interference" or TI="interference RNA"
uspto = CLM=(siRNA or RNAi or "RNA interference" or "interference RNA")

[trends]
label = miRNA
query = TI=microRNA or TI=miRNA

[windows]
width = 5
anchor = 2002
first_window = 1998-2001

[thresholds]
top_share_publications = 0.10
top_share_patents = 0.25
alpha = 0.05
min_sample = 20

[inputs]
wos = inputs/wos_export.txt
medline = inputs/medline.txt
patents = inputs/patents.jsonl

[geo]
org_aliases = org_aliases.tsv

[basemaps]
wos_category = basemaps/wos_category.json
journal = basemaps/journal.json
mesh = basemaps/mesh.json
ipc = basemaps/ipc.json
"""


if __name__ == "__main__":
    target = Path(sys.argv[1] if len(sys.argv) > 1 else "casestudy")
    for name, p in generate(target).items():
        print(f"{name}\t{p}")
