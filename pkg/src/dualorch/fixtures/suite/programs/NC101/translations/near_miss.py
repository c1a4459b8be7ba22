import sys


def main():
    for line in sys.stdin:
        parts = line.split()
        if len(parts) < 2:
            continue
        a, b = int(parts[0]), int(parts[1])
        print(f"SUM={a + b:06d}")


main()
