/**
 * End-to-end: a scripted annotator drives a real experiment through the
 * labeling service, then the same label sequence is replayed through the
 * in-process oracle path; artifacts must match byte for byte.
 *
 * Requires the Python package to be installed (pip install -e ..).
 */

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, describe, expect, it } from "vitest";

import { LabelingClient } from "../src/api.js";
import { AnnotationSession, Choice } from "../src/session.js";

const PORT = 8740 + (process.pid % 37);
const BASE = `http://127.0.0.1:${PORT}`;
const CHOICES: Choice[] = ["A", "B", "A", "A", "B"];
const EXPECTED_LABELS = [1, 0, 1, 1, 0];

const experiment = {
  horizon: 10,
  n_controllers: 3,
  n_initial_pairs: 4,
  pool_size: 8,
  iterations: CHOICES.length,
  n_eval_states: 2,
  greedy_candidates: 32,
  strategy: "pool",
  human_timeout: 120.0,
  port: PORT,
};

let child: ChildProcess | null = null;

function runPython(args: string[], cwd: string): Promise<number> {
  return new Promise((resolve, reject) => {
    const proc = spawn("python3", ["-m", "prefmpc", ...args], {
      cwd,
      stdio: ["ignore", "pipe", "pipe"],
    });
    let logs = "";
    proc.stdout?.on("data", (d) => (logs += d));
    proc.stderr?.on("data", (d) => (logs += d));
    proc.on("error", reject);
    proc.on("exit", (code) => {
      if (code === 0) {
        resolve(0);
      } else {
        reject(new Error(`python exited with ${code}\n${logs}`));
      }
    });
  });
}

async function sleep(ms: number): Promise<void> {
  return new Promise((r) => setTimeout(r, ms));
}

afterAll(() => {
  if (child && child.exitCode === null) {
    child.kill("SIGKILL");
  }
});

describe("scripted annotator end to end", () => {
  it(
    "human-labeled run matches the replayed label sequence bit for bit",
    async () => {
      const work = mkdtempSync(join(tmpdir(), "prefmpc-e2e-"));
      const cfgPath = join(work, "cfg.json");
      writeFileSync(cfgPath, JSON.stringify({ ...experiment, oracle: "human" }));

      let exited = false;
      let runError: Error | null = null;
      const humanRun = new Promise<void>((resolve, reject) => {
        child = spawn(
          "python3",
          ["-m", "prefmpc", "run", "--config", cfgPath, "--out", join(work, "human")],
          { cwd: work, stdio: ["ignore", "pipe", "pipe"] },
        );
        let logs = "";
        child.stdout?.on("data", (d) => (logs += d));
        child.stderr?.on("data", (d) => (logs += d));
        child.on("exit", (code) => {
          exited = true;
          if (code === 0) {
            resolve();
          } else {
            runError = new Error(`run exited with ${code}\n${logs}`);
            reject(runError);
          }
        });
      });

      // Wait for the service to come up.
      const client = new LabelingClient(BASE);
      const deadline = Date.now() + 60_000;
      for (;;) {
        try {
          await client.status();
          break;
        } catch {
          if (Date.now() > deadline || exited) {
            throw runError ?? new Error("service did not come up");
          }
          await sleep(100);
        }
      }

      // Scripted annotator using the real client + session machinery.
      let posts = 0;
      const counting = new LabelingClient(BASE, async (url, init) => {
        if (init?.method === "POST") {
          posts += 1;
        }
        return fetch(url, init);
      });
      const submitted: Array<{ id: string; label: 0 | 1 }> = [];
      const session = new AnnotationSession(counting, {
        onSubmitted: (id, label) => submitted.push({ id, label }),
      });

      let answered = 0;
      const answerDeadline = Date.now() + 180_000;
      while (answered < CHOICES.length) {
        expect(Date.now()).toBeLessThan(answerDeadline);
        await session.pollOnce();
        const query = session.currentQuery;
        if (!query) {
          await sleep(50);
          continue;
        }
        if (answered === 2) {
          // Double-click: the guard must allow exactly one POST.
          const before = posts;
          const [first, second] = await Promise.all([
            session.choose(CHOICES[answered]),
            session.choose(CHOICES[answered]),
          ]);
          expect(first).toBe(true);
          expect(second).toBe(false);
          expect(posts - before).toBe(1);
          // A later direct re-post for the same id must conflict and the
          // stored label must stand.
          expect(await client.submitLabel(query.id, 0)).toBe("conflict");
        } else {
          expect(await session.choose(CHOICES[answered])).toBe(true);
        }
        answered += 1;
      }

      expect(submitted.map((s) => s.label)).toEqual(EXPECTED_LABELS);
      await humanRun;

      // Same labels through the in-process replay path.
      const replayCfg = join(work, "replay.json");
      writeFileSync(
        replayCfg,
        JSON.stringify({
          ...experiment,
          oracle: "replay",
          replay_labels: EXPECTED_LABELS,
        }),
      );
      await runPython(
        ["run", "--config", replayCfg, "--out", join(work, "replay")],
        work,
      );

      for (const name of ["dataset.jsonl", "theta_final.json", "metrics.csv"]) {
        const human = readFileSync(join(work, "human", name));
        const replay = readFileSync(join(work, "replay", name));
        expect(human.equals(replay), `${name} differs`).toBe(true);
      }
    },
    300_000,
  );
});
