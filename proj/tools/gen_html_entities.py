"""Regenerates src/html_entities.inc from Python's HTML5 entity tables."""
import html
import html.entities
import sys


def c_string(s: str) -> str:
    out = []
    for b in s.encode("utf-8"):
        c = chr(b)
        if c in '"\\' or b < 0x20 or b >= 0x7F or c == "?":
            out.append("\\%03o" % b)
        else:
            out.append(c)
    return '"' + "".join(out) + '"'


def main(path: str) -> None:
    lines = ["// Generated by tools/gen_html_entities.py. Do not edit.", ""]
    lines.append("struct NamedEntity { const char* name; const char* value; };")
    lines.append("inline constexpr NamedEntity kNamedEntities[] = {")
    for name in sorted(html.entities.html5):
        lines.append("    {%s, %s}," % (c_string(name), c_string(html.entities.html5[name])))
    lines.append("};")
    lines.append("")
    lines.append("struct CharrefOverride { unsigned code; const char* value; };")
    lines.append("inline constexpr CharrefOverride kInvalidCharrefs[] = {")
    for num in sorted(html._invalid_charrefs):
        lines.append("    {0x%X, %s}," % (num, c_string(html._invalid_charrefs[num])))
    lines.append("};")
    lines.append("")
    lines.append("inline constexpr unsigned kInvalidCodepoints[] = {")
    cps = sorted(html._invalid_codepoints)
    for i in range(0, len(cps), 8):
        lines.append("    " + " ".join("0x%X," % c for c in cps[i:i + 8]))
    lines.append("};")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/html_entities.inc")
