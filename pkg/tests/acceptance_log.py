LINES: list[str] = []


def report(number, name, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {name}  ({detail})"
    LINES.append(line)
    print(line)
    return ok
