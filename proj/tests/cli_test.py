"""End-to-end checks of the teleop executable. Usage: cli_test.py <path-to-teleop>"""

import json
import math
import socket
import subprocess
import sys
import tempfile
import time
import unittest
from pathlib import Path

TELEOP = None


def run(*args, **kw):
    return subprocess.run([TELEOP, *map(str, args)], capture_output=True, text=True, timeout=120, **kw)


def rot_z(deg, p):
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]


class Cli(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def write_pairs(self, n):
        pts = [[0.1, 0, 0], [0, 0.2, 0], [0, 0, 0.15], [0.1, 0.1, 0.1], [-0.05, 0.1, 0.2]][:n]
        pairs = [{"operator_m": p, "robot_mm": [a + b for a, b in zip(rot_z(30, [v * 1000 for v in p]), [400, -20, 150])]}
                 for p in pts]
        path = self.dir / "pairs.json"
        path.write_text(json.dumps({"pairs": pairs}))
        return path

    def test_help_exits_zero(self):
        r = run("--help")
        self.assertEqual(r.returncode, 0)
        for sub in ("serve", "gen-task", "replay", "calibrate", "plot"):
            self.assertIn(sub, r.stdout)

    def test_unknown_flag_is_usage_error(self):
        r = run("gen-task", "--bogus")
        self.assertEqual(r.returncode, 2)

    def test_calibrate_round_trip(self):
        out = self.dir / "calibration.json"
        r = run("calibrate", "--pairs", self.write_pairs(5), "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        summary = json.loads(r.stdout)
        self.assertEqual(summary["n_pairs"], 5)
        self.assertLess(summary["residual_rms_mm"], 1e-6)
        cal = json.loads(out.read_text())
        w, x, y, z = cal["rotation_wxyz"]
        self.assertAlmostEqual(abs(w), math.cos(math.radians(15)), places=9)
        self.assertAlmostEqual(abs(z), math.sin(math.radians(15)), places=9)
        for got, want in zip(cal["translation_mm"], [400, -20, 150]):
            self.assertAlmostEqual(got, want, places=6)

    def test_two_pairs_is_bad_input(self):
        r = run("calibrate", "--pairs", self.write_pairs(2), "--out", self.dir / "c.json")
        self.assertEqual(r.returncode, 2)
        self.assertEqual(json.loads(r.stderr.strip())["error"], "TooFewPairs")

    def test_gen_replay_plot(self):
        script = self.dir / "task1.json"
        self.assertEqual(run("gen-task", "--task", 1, "--seed", 3, "--out", script).returncode, 0)
        again = self.dir / "again.json"
        run("gen-task", "--task", 1, "--seed", 3, "--out", again)
        self.assertEqual(script.read_bytes(), again.read_bytes())

        report, csv, svg = self.dir / "r.json", self.dir / "t.csv", self.dir / "t.svg"
        r = run("replay", script, "--report", report, "--csv", csv)
        self.assertEqual(r.returncode, 0, r.stderr)
        rep = json.loads(report.read_text())
        self.assertEqual(rep["task"], 1)
        self.assertLessEqual(rep["positional_error_mm"]["mean"], 0.7)
        self.assertTrue(csv.read_text().startswith("t_ms,hand_x"))

        self.assertEqual(run("plot", "--csv", csv, "--out", svg).returncode, 0)
        self.assertIn("<svg", svg.read_text())

    def test_replay_to_stdout(self):
        script = self.dir / "task3.json"
        run("gen-task", "--task", 3, "--seed", 1, "--out", script)
        r = run("replay", script)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertEqual(json.loads(r.stdout)["task"], 3)

    def test_unknown_task(self):
        r = run("gen-task", "--task", 9, "--out", self.dir / "x.json")
        self.assertEqual(r.returncode, 2)
        self.assertEqual(json.loads(r.stderr.strip())["error"], "UnknownTask")

    def test_tampered_script_is_rejected(self):
        script = self.dir / "s.json"
        run("gen-task", "--task", 1, "--seed", 2, "--out", script)
        doc = json.loads(script.read_text())
        doc["events"] = [e for e in doc["events"] if e["msg"]["type"] != "pinch_start"]
        script.write_text(json.dumps(doc))
        r = run("replay", script)
        self.assertEqual(r.returncode, 2)
        self.assertEqual(json.loads(r.stderr.strip())["error"], "ScriptViolation")

    def test_missing_calibration_names_the_path(self):
        missing = self.dir / "nope" / "calibration.json"
        r = run("serve", "--listen", "127.0.0.1:0", "--calibration", missing)
        self.assertEqual(r.returncode, 2)
        err = json.loads(r.stderr.strip())
        self.assertEqual(err["error"], "BadConfig")
        self.assertIn(str(missing), err["detail"])

    def test_serve_with_fresh_calibration_answers_hello_and_stops_on_sigterm(self):
        cal = self.dir / "calibration.json"
        self.assertEqual(run("calibrate", "--pairs", self.write_pairs(4), "--out", cal).returncode, 0)
        proc = subprocess.Popen([TELEOP, "serve", "--listen", "127.0.0.1:0", "--calibration", cal],
                                stderr=subprocess.PIPE, text=True)
        try:
            host, port = json.loads(proc.stderr.readline())["listening"].rsplit(":", 1)
            with socket.create_connection((host, int(port)), timeout=5) as s:
                s.sendall(b'{"client_id":"cli","role":"operator","type":"hello"}\n')
                line = s.makefile().readline()
                self.assertEqual(json.loads(line)["type"], "hello_ack")
            proc.terminate()
            self.assertEqual(proc.wait(timeout=10), 0)
        finally:
            if proc.poll() is None:
                proc.kill()
            proc.stderr.close()

    def test_port_in_use_is_runtime_error(self):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            s.listen()
            port = s.getsockname()[1]
            start = time.monotonic()
            r = run("serve", "--listen", f"127.0.0.1:{port}")
            self.assertLess(time.monotonic() - start, 30)
        self.assertEqual(r.returncode, 1)
        self.assertEqual(json.loads(r.stderr.strip())["error"], "BindFailure")


if __name__ == "__main__":
    TELEOP = sys.argv.pop(1)
    unittest.main()
