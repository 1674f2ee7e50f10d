"""SYN fingerprint matching and the bundled signature database."""

from __future__ import annotations

import random

import pytest

from netcarta import fingerprint as fp
from netcarta.ir import ParseError

MSS_SOK_TS_NOP_WS = [2, 4, 8, 1, 3]
MSS_NOP_WS_NOP_NOP_SOK = [2, 1, 3, 1, 1, 4]


def linux_syn(mss=1460, mult=20, wscale=7) -> fp.SynFeatures:
    return fp.SynFeatures(ttl=64, window=mss * mult, options=list(MSS_SOK_TS_NOP_WS),
                          mss=mss, wscale=wscale, df=True)


def windows_syn(window=8192, wscale=8) -> fp.SynFeatures:
    return fp.SynFeatures(ttl=128, window=window, options=list(MSS_NOP_WS_NOP_NOP_SOK),
                          mss=1460, wscale=wscale, df=True)


class TestTtlBucket:
    def test_exact_and_decremented(self):
        assert fp.SynFeatures(ttl=64, window=0).ttl_bucket == 64
        assert fp.SynFeatures(ttl=57, window=0).ttl_bucket == 64
        assert fp.SynFeatures(ttl=128, window=0).ttl_bucket == 128
        assert fp.SynFeatures(ttl=119, window=0).ttl_bucket == 128
        assert fp.SynFeatures(ttl=250, window=0).ttl_bucket == 255
        assert fp.SynFeatures(ttl=2, window=0).ttl_bucket == 32
        assert fp.SynFeatures(ttl=65, window=0).ttl_bucket == 128

    def test_bucket_is_smallest_at_or_above(self):
        rng = random.Random(3)
        for _ in range(200):
            ttl = rng.randrange(1, 256)
            bucket = fp.SynFeatures(ttl=ttl, window=0).ttl_bucket
            candidates = [b for b in (32, 64, 128, 255) if b >= ttl]
            assert bucket == min(candidates)


class TestSignatureParsing:
    def test_round_trip_fields(self):
        sig = fp.parse_signature_line("linux:64:mss*20:*:*:1:mss,sok,ts,nop,ws", "t")
        assert sig.label == "linux"
        assert sig.ttl == 64
        assert sig.window == "mss*20"
        assert sig.options == ["mss", "sok", "ts", "nop", "ws"]

    def test_empty_options_allowed(self):
        sig = fp.parse_signature_line("bare:255:4128:*:*:0:", "t")
        assert sig.options == []

    def test_errors_name_location(self):
        bad = [
            "too:few:fields",
            ":64:*:*:*:1:mss",
            "x:63:*:*:*:1:mss",          # ttl not a bucket
            "x:64:huge:*:*:1:mss",       # bad window
            "x:64:mss*:*:*:1:mss",       # bad multiple
            "x:64:*:abc:*:1:mss",        # bad mss
            "x:64:*:*:*:2:mss",          # bad df
            "x:64:*:*:*:1:mss,wombat",   # unknown option
        ]
        for line in bad:
            with pytest.raises(ParseError) as err:
                fp.parse_signature_line(line, "db line 9")
            assert "db line 9" in str(err.value)

    def test_db_skips_comments_and_blanks(self):
        text = "# header\n\nlinux:64:*:*:*:1:mss\n  # indented comment\nwindows:128:*:*:*:1:mss\n"
        sigs = fp.parse_signature_db(text)
        assert [s.label for s in sigs] == ["linux", "windows"]

    def test_db_error_reports_line_number(self):
        with pytest.raises(ParseError) as err:
            fp.parse_signature_db("# ok\nlinux:64:*:*:*:1:mss\nbroken line\n", "f")
        assert "f line 3" in str(err.value)


class TestMatching:
    def test_exact_window(self):
        sig = fp.parse_signature_line("w:128:8192:*:8:1:mss,nop,ws,nop,nop,sok", "t")
        assert sig.matches(windows_syn(window=8192))
        assert not sig.matches(windows_syn(window=8193))

    def test_mss_multiple_window(self):
        sig = fp.parse_signature_line("l:64:mss*20:*:*:1:mss,sok,ts,nop,ws", "t")
        assert sig.matches(linux_syn(mss=1460, mult=20))
        assert sig.matches(linux_syn(mss=1400, mult=20))
        assert not sig.matches(linux_syn(mss=1460, mult=10))
        # No MSS on the wire: multiple can never match.
        f = linux_syn()
        f.mss = None
        assert not sig.matches(f)

    def test_option_order_is_significant(self):
        sig = fp.parse_signature_line("l:64:*:*:*:1:mss,sok,ts,nop,ws", "t")
        f = linux_syn()
        f.options = [2, 8, 4, 1, 3]  # ts and sok swapped
        assert not sig.matches(f)

    def test_wildcards(self):
        sig = fp.parse_signature_line("any:64:*:*:*:*:mss,sok,ts,nop,ws", "t")
        f = linux_syn()
        f.df = False
        f.wscale = None
        assert sig.matches(f)

    def test_wildcard_mss_with_concrete_wscale(self):
        sig = fp.parse_signature_line("w:128:8192:*:8:1:mss,nop,ws,nop,nop,sok", "t")
        assert sig.matches(windows_syn(wscale=8))
        assert not sig.matches(windows_syn(wscale=2))

    def test_first_match_wins(self):
        db = fp.parse_signature_db(
            "specific:64:mss*20:1460:*:1:mss,sok,ts,nop,ws\n"
            "general:64:*:*:*:*:mss,sok,ts,nop,ws\n"
        )
        assert fp.classify(linux_syn(mss=1460), db) == "specific"
        assert fp.classify(linux_syn(mss=1400), db) == "general"

    def test_no_match_returns_none(self):
        db = fp.parse_signature_db("linux:64:mss*20:*:*:1:mss,sok,ts,nop,ws\n")
        assert fp.classify(fp.SynFeatures(ttl=128, window=123), db) is None


class TestBundledDb:
    def test_loads(self):
        db = fp.load_default_db()
        assert len(db) >= 8
        assert {"linux", "windows", "macos"} <= {s.label for s in db}

    def test_classifies_linux_syn(self):
        db = fp.load_default_db()
        assert fp.classify(linux_syn(), db) == "linux"
        # One router hop away.
        f = linux_syn()
        f.ttl = 63
        assert fp.classify(f, db) == "linux"

    def test_classifies_windows_syn(self):
        db = fp.load_default_db()
        assert fp.classify(windows_syn(window=8192), db) == "windows"
        assert fp.classify(windows_syn(window=64240), db) == "windows"

    def test_classifies_macos_syn(self):
        db = fp.load_default_db()
        f = fp.SynFeatures(ttl=64, window=65535, options=[2, 1, 3, 1, 1, 8, 4, 0],
                           mss=1460, wscale=5, df=True)
        assert fp.classify(f, db) == "macos"

    def test_linux_beats_macos_on_shared_ttl(self):
        # Both live in the ttl=64 bucket; option order separates them.
        db = fp.load_default_db()
        f = linux_syn(mss=1460, mult=4)  # window 5840, old-style Linux
        assert fp.classify(f, db) == "linux"
