import sys

accepted = rejected = 0
with open("ACCEPTED.DAT", "w") as acc, open("REJECTED.DAT", "w") as rej:
    for line in sys.stdin:
        line = line.rstrip("\n")
        parts = line.split()
        if len(parts) < 2:
            continue
        if int(parts[1]) > 100:
            acc.write(line + "\n")
            accepted += 1
        else:
            rej.write(line + "\n")
            rejected += 1
print(f"ACCEPTED {accepted:04d} REJECTED {rejected:04d}")
