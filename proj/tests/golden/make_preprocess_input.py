# SPDX-License-Identifier: Apache-2.0
"""Writes the 20-record golden preprocessing input corpus.

Each record targets one rule or boundary. Rerunning the script reproduces
preprocess_input.jsonl byte for byte.
"""
import json
import os
import sys


def padded(name, total):
    head = 'static const char %s_pad[] = "' % name
    tail = '";\nint %s_size(void)\n{\n    return sizeof %s_pad;\n}\n' % (name, name)
    return head + "a" * (total - len(head) - len(tail)) + tail


def records():
    r = []

    def add(oid, code, label="vulnerable", cwe="CWE-190", language="c", ds="juliet-golden"):
        r.append({"code": code, "language": language, "label": label, "cwe_id": cwe,
                  "dataset_name": ds, "original_id": oid})

    # length boundaries
    add("g01-max-bytes", padded("keep", 32765), label="benign", cwe=None)
    add("g02-over-max-bytes", padded("drop", 32766), label="benign", cwe=None)
    add("g03-two-lines", "int two(void)\n{ return 2; }\n", label="benign", cwe=None)
    add("g04-three-lines", "int three(void)\n{\n    return 3; }\n", label="benign", cwe=None)
    # marker comments
    add("g05-potential-flaw",
        "void copy(char *dst, const char *src)\n{\n    /* allocate buffer */\n    char tmp[8];\n"
        "    /* POTENTIAL FLAW: no bound */\n    strcpy(tmp, src);\n    strcpy(dst, tmp);\n}\n", cwe="CWE-787")
    add("g06-inline-cwe", "/* CWE-190 */ int x;\nint y;\nint z;\n")
    add("g07-trailing-flaw",
        "int sum(int a, int b)\n{\n    int s = a + b; // flaw: may wrap\n    return s;\n}\n")
    add("g08-mid-fix",
        "int clamp(int v)\n{\n    int w = /* FIX: bound it */ v;\n    return w;\n}\n", label="benign", cwe=None)
    add("g09-marker-in-string",
        "void note(void)\n{\n    puts(\"FLAW: this text stays\"); // ordinary comment\n    puts(\"/* CWE */\");\n}\n",
        label="benign", cwe=None)
    # marker identifiers
    add("g10-bad-def-and-call",
        "void CWE190_Integer_bad(int n)\n{\n    use(n * n);\n}\n\nint main(void)\n{\n"
        "    CWE190_Integer_bad(7);\n    return 0;\n}\n")
    add("g11-good-and-bad",
        "static int badSource(void)\n{\n    return read_int();\n}\n\nvoid goodSink(int v)\n{\n"
        "    use(v);\n}\n\nvoid run(void)\n{\n    goodSink(badSource());\n}\n", cwe="CWE-20")
    add("g12-marked-variable",
        "int total(int badCount)\n{\n    int goodness = badCount * 2;\n    return goodness;\n}\n",
        label="benign", cwe=None)
    add("g13-func-taken",
        "int func(int v);\nint vuln_helper(int v)\n{\n    return func(v) + 1;\n}\n\nint patched_helper(int v)\n"
        "{\n    return vuln_helper(v) - 1;\n}\n", language="cpp", cwe="CWE-190")
    # duplicates
    add("g14-exact-dup-of-g05", r[4]["code"], cwe="CWE-787")
    add("g15-trailing-space-dup-of-g10", r[9]["code"].replace("{\n    use(n * n);", "{   \n    use(n * n);  "))
    add("g16-marker-only-dup-of-g07",
        "int sum(int a, int b)\n{\n    int s = a + b;\n    return s;\n}\n")
    add("g17-blank-run-dup-of-g11", r[10]["code"].replace("}\n\nvoid goodSink", "}\n\n\n\nvoid goodSink"), cwe="CWE-20")
    # order of application: too short and also a duplicate of g03
    add("g18-short-dup-of-g03", "int two(void)\n{ return 2; }\n", label="benign", cwe=None)
    # three lines as supplied, two once the marker comment is gone
    add("g19-short-after-strip", "// FLAW: this line goes\nint a;\nint b;\n")
    add("g20-clean-cpp",
        "#include <string>\nstd::string path(const std::string& d)\n{\n    return d + \"//x\";\n}\n",
        label="unknown", cwe=None, language="cpp", ds="misc-golden")
    return r


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "preprocess_input.jsonl")
    with open(out, "w", encoding="ascii", newline="\n") as f:
        for rec in records():
            f.write(json.dumps(rec) + "\n")


if __name__ == "__main__":
    main()
