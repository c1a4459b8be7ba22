import sys

records = [line.rstrip("\n") for line in sys.stdin if line.strip()]
records.sort()
with open("SORTED.DAT", "w") as out:
    for r in records:
        out.write(r + "\n")
print(f"SORTED {len(records):04d} RECORDS")
