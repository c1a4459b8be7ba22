# Python translation of COBOL program ST101
import sys

records = [line.rstrip("\n") for line in sys.stdin if line.strip()]
records.sort(key=lambda r: r[:6])
with open("SORTED.DAT", "w") as out:
    for r in records:
        out.write(r + "\n")
print(f"SORTED {len(records):04d} RECORDS")
