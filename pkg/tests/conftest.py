def pytest_terminal_summary(terminalreporter):
    # acceptance tests attach ("acceptance", (criterion, ok, detail)) via record_property
    merged = {}
    for key in ("passed", "failed", "xfailed", "xpassed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            for name, value in getattr(rep, "user_properties", []):
                if name != "acceptance" or getattr(rep, "when", "call") != "call":
                    continue
                crit, ok, detail = value
                prev = merged.get(crit, (True, []))
                merged[crit] = (prev[0] and ok, prev[1] + [detail])
    if not merged:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(merged):
        ok, details = merged[crit]
        terminalreporter.write_line(f"criterion {crit:>2}: {'PASS' if ok else 'FAIL'}  {'; '.join(details)}")
