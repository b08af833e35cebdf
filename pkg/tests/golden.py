"""Published search strings and co-authorship table values used as golden data."""

from __future__ import annotations

# (case, dialect) -> search string, exactly as published (the USPTO wildcard is '$')
SEARCH_STRINGS = {
    ("RNAi", "wos"): 'TI=siRNA or TI=RNAi or TI="RNA interference" or TI="interference RNA"',
    ("RNAi", "pubmed"): 'siRNA[Title] or RNAi[Title] or "RNA interference"[Title] or "interference RNA" [Title]',
    ("RNAi", "uspto"): 'ACLM/(siRNA or RNAi or "RNA interference" or "interference RNA")',
    ("HPV", "wos"): '(TI=HPV* or TI="Human Papilloma Virus*" or TI="Human Papillomavirus*" or '
                    'TI="Human Papilloma*virus*") and (TI=Cervical or TI=Cervix) and (TI=diagnos* or TI=test* '
                    'or TI=assay or TI=detect* or TI=screen* or TI=predict*)',
    ("HPV", "pubmed"): '(HPV*[Title] or "Human Papilloma Virus*" [Title] or "Human Papillomavirus*" [Title] and '
                       '(Cervical[Title] or Cervix[Title]) and (diagnos*[Title] or test*[Title] or assay[Title] or '
                       'detect*[Title] or screen*[Title] or predict*[Title])',
    ("HPV", "uspto"): 'ACLM/((HPV or "Human Papilloma Virus$" or "Human Papillomavirus$") and (Cervical or Cervix) '
                      'and (diagnos$ or test$ or assay or detect$ or screen$ or predict$))',
    ("TPMT", "wos"): 'TI=TPMT or TI= "Thiopurine Methyltransferase"',
    ("TPMT", "pubmed"): 'TPMT[Title] or "Thiopurine Methyltransferase"[Title]',
    ("TPMT", "uspto"): 'ACLM/(TPMT or "Thiopurine Methyltransferase")',
}

CASES = ("RNAi", "HPV", "TPMT")

# co-authorship table: case -> window -> (nodes, giant, giant %, isolated, isolated %)
COMPONENT_TABLE = {
    "HPV": {
        "1982-1986": (20, 0, "0.00", 8, "4.00"),
        "1987-1991": (130, 7, "5.38", 35, "26.92"),
        "1992-1996": (173, 62, "35.83", 43, "24.85"),
        "1997-2001": (265, 83, "31.32", 47, "17.73"),
        "2002-2006": (471, 239, "50.74", 55, "11.68"),
        "2007-2011": (816, 504, "61.75", 83, "10.17"),
    },
    "TPMT": {
        "1982-1986": (6, 5, "83.33", 1, "16.67"),
        "1987-1991": (8, 0, "0.00", 2, "25.00"),
        "1992-1996": (36, 9, "25.00", 7, "19.44"),
        "1997-2001": (111, 25, "22.52", 19, "17.12"),
        "2002-2006": (200, 15, "7.50", 43, "21.50"),
        "2007-2011": (232, 82, "35.34", 33, "14.22"),
    },
}
