# Python translation of COBOL program SQ101
import sys

count = 0
with open("OUT.DAT", "w") as out:
    for line in sys.stdin:
        line = line.rstrip("\n")
        if not line:
            continue
        rec_id, name, amount = line.split(",")
        out.write(f"{int(rec_id):05d}{name[:15]:<15}{int(amount):010d}\n")
        count += 1
print(f"RECORDS WRITTEN: {count:04d}")
