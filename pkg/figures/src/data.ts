/**
 * Loading and metrics for harness run directories.
 *
 * A run directory holds manifest.json plus run_<seed>.csv files (columns
 * seed, step, episode_return, train_return, drift_value, slip_p) and
 * optionally attention_<seed>.csv. A collection directory holds several run
 * directories, one per agent. Everything here consumes only those documented
 * files; the AUC uses the same normalized trapezoid as the harness
 * summarize command so the two report identical numbers.
 */

import * as fs from "fs";
import * as path from "path";
import Papa from "papaparse";

export interface Manifest {
    config_hash: string;
    code_version: string;
    agent: string;
    seeds: number[];
    steps_per_task: number;
    tasks_per_exposure: number;
    exposures: number;
    eval_every: number;
    threshold: number;
    threshold_window: number;
    drift: { kind: string; regime: string };
    runs: Record<string, string>;
}

export interface SeedSeries {
    seed: number;
    steps: number[];
    returns: number[];
    drift: number[];
    slip: number[];
}

export interface RunData {
    dir: string;
    name: string;
    manifest: Manifest;
    seeds: SeedSeries[];
    attention: { steps: number[]; columns: string[]; probs: number[][] }[];
}

function parseCsv(file: string): Record<string, string>[] {
    const text = fs.readFileSync(file, "utf8");
    const parsed = Papa.parse<Record<string, string>>(text.trim(), {
        header: true,
        skipEmptyLines: true,
    });
    if (parsed.errors.length > 0) {
        throw new Error(`failed to parse ${file}: ${parsed.errors[0].message}`);
    }
    return parsed.data;
}

export function loadRunDir(dir: string): RunData {
    const manifestPath = path.join(dir, "manifest.json");
    if (!fs.existsSync(manifestPath)) {
        throw new Error(`missing manifest: ${manifestPath}`);
    }
    const manifest = JSON.parse(fs.readFileSync(manifestPath, "utf8")) as Manifest;
    const seeds: SeedSeries[] = manifest.seeds.map((seed) => {
        const rows = parseCsv(path.join(dir, manifest.runs[String(seed)]));
        return {
            seed,
            steps: rows.map((r) => Number(r.step)),
            returns: rows.map((r) => Number(r.episode_return)),
            drift: rows.map((r) => Number(r.drift_value)),
            slip: rows.map((r) => Number(r.slip_p)),
        };
    });
    const attention = [];
    for (const seed of manifest.seeds) {
        const file = path.join(dir, `attention_${seed}.csv`);
        if (fs.existsSync(file)) {
            const rows = parseCsv(file);
            const columns = Object.keys(rows[0]).filter((c) => c !== "step");
            attention.push({
                steps: rows.map((r) => Number(r.step)),
                columns,
                probs: rows.map((r) => columns.map((c) => Number(r[c]))),
            });
        }
    }
    return { dir, name: path.basename(dir), manifest, seeds, attention };
}

/** Run directories directly under `dir`, or `dir` itself if it is one. */
export function discoverRuns(dir: string): RunData[] {
    if (fs.existsSync(path.join(dir, "manifest.json"))) {
        return [loadRunDir(dir)];
    }
    const runs: RunData[] = [];
    for (const entry of fs.readdirSync(dir).sort()) {
        const child = path.join(dir, entry);
        if (fs.statSync(child).isDirectory() &&
            fs.existsSync(path.join(child, "manifest.json"))) {
            runs.push(loadRunDir(child));
        }
    }
    if (runs.length === 0) {
        throw new Error(`no run directories with manifests under ${dir}`);
    }
    return runs;
}

/** Trapezoidal area under return-vs-step, normalized by the step span. */
export function auc(steps: number[], returns: number[]): number {
    if (steps.length < 2) {
        throw new Error("need at least two records for an AUC");
    }
    let area = 0;
    for (let i = 1; i < steps.length; i++) {
        area += (steps[i] - steps[i - 1]) * (returns[i] + returns[i - 1]) / 2;
    }
    return area / (steps[steps.length - 1] - steps[0]);
}

/** First step whose trailing windowed mean clears the threshold, else null. */
export function stepsToThreshold(
    steps: number[], returns: number[], threshold: number, window: number,
): number | null {
    for (let i = 0; i < returns.length; i++) {
        const lo = Math.max(0, i - window + 1);
        let sum = 0;
        for (let j = lo; j <= i; j++) sum += returns[j];
        if (sum / (i - lo + 1) >= threshold) return steps[i];
    }
    return null;
}

export function mean(xs: number[]): number {
    return xs.reduce((a, b) => a + b, 0) / xs.length;
}

/** Per-step mean and min/max band across seeds (steps assumed aligned). */
export function seedBand(run: RunData): {
    steps: number[]; mean: number[]; lo: number[]; hi: number[];
} {
    const steps = run.seeds[0].steps;
    const meanVals: number[] = [];
    const lo: number[] = [];
    const hi: number[] = [];
    for (let i = 0; i < steps.length; i++) {
        const vals = run.seeds.map((s) => s.returns[i]);
        meanVals.push(mean(vals));
        lo.push(Math.min(...vals));
        hi.push(Math.max(...vals));
    }
    return { steps, mean: meanVals, lo, hi };
}
