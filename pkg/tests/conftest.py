import pytest

from flowmine.packet_model import PacketRecord


def pkt(index, src, dst, flags, ts=None):
    """Packet from 'ip:port' strings and a flag mask."""
    sip, sport = src.split(":")
    dip, dport = dst.split(":")
    return PacketRecord(index, float(index if ts is None else ts), sip, int(sport), dip, int(dport), flags)


@pytest.fixture
def make_pkt():
    return pkt


_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.fixture
def criterion():
    """Record an acceptance outcome: criterion(n, title, ok, detail); asserts ok."""
    def record(n, title, ok, detail=""):
        status = "PASS" if ok else "FAIL"
        _CRITERIA[n] = (status, title, detail)
        print(f"[criterion {n}] {status}: {title} -- {detail}")
        assert ok, f"criterion {n} ({title}) failed: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[n]
        terminalreporter.write_line(f"{n}. {status:4} {title}: {detail}")
