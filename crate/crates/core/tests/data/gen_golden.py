# Regenerates golden_smiles.tsv from RDKit heavy-atom and bond counts.
# Usage: python3 gen_golden.py > golden_smiles.tsv
from rdkit import Chem

CORPUS = [
    "CCO",                              # ethanol
    "c1ccccc1",                         # benzene
    "C1CC1",                            # cyclopropane
    "CC(C)C",                           # isobutane
    "Cc1ccccc1",                        # toluene
    "CC(=O)Oc1ccccc1C(=O)O",            # aspirin
    "Cn1cnc2c1c(=O)n(C)c(=O)n2C",       # caffeine
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",       # ibuprofen
    "CC(=O)Nc1ccc(O)cc1",               # paracetamol
    "CN1CCCC1c1cccnc1",                 # nicotine
    "c1ccc2ccccc2c1",                   # naphthalene
    "c1cc[nH]c1",                       # pyrrole
    "NCC(=O)O",                         # glycine
    "ClC(Cl)Cl",                        # chloroform
    "FC(F)(F)c1ccccc1",                 # benzotrifluoride
    "NCCc1ccc(O)c(O)c1",                # dopamine
    "C#C",                              # acetylene
    "[O-][N+](=O)c1ccccc1",             # nitrobenzene
    "C12C3C4C1C5C2C3C45",               # cubane
    "C%10CCCCC%10",                     # cyclohexane, two-digit ring label
]

print("# smiles\tatom_count\tbond_count")
for smi in CORPUS:
    mol = Chem.MolFromSmiles(smi)
    print(f"{smi}\t{mol.GetNumAtoms()}\t{mol.GetNumBonds()}")
