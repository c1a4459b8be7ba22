# Python translation of COBOL program IF101
import sys

for line in sys.stdin:
    field = line.rstrip("\n")[:20].ljust(20)
    print("UPPER=" + field.upper())
    print("REVERSE=[" + field[::-1] + "]")
