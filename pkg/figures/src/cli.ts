#!/usr/bin/env node
/**
 * figures <run-dir-or-collection> --out <dir>
 *
 * Renders learning-curve, AUC-bar, steps-to-threshold, attention (when
 * logged) and drift-trace SVGs from harness output directories.
 */

import * as fs from "fs";
import * as path from "path";
import {
    attentionBars,
    aucBars,
    driftTrace,
    learningCurves,
    stepsToThresholdBars,
} from "./charts.js";
import { discoverRuns } from "./data.js";

export function main(argv: string[]): number {
    const args = argv.slice();
    let out = "figures-out";
    const outIdx = args.indexOf("--out");
    if (outIdx >= 0) {
        out = args[outIdx + 1];
        if (!out) {
            console.error("--out needs a directory argument");
            return 2;
        }
        args.splice(outIdx, 2);
    }
    const input = args[0];
    if (!input) {
        console.error("usage: figures <run-dir-or-collection> --out <dir>");
        return 2;
    }
    const runs = discoverRuns(input);
    fs.mkdirSync(out, { recursive: true });

    const products: [string, () => string][] = [
        ["learning_curves.svg", () => learningCurves(runs)],
        ["auc_bars.svg", () => aucBars(runs)],
        ["steps_to_threshold.svg", () => stepsToThresholdBars(runs)],
        ["drift_trace.svg", () => driftTrace(runs)],
    ];
    if (runs.some((r) => r.attention.length > 0)) {
        products.push(["attention.svg", () => attentionBars(runs)]);
    }
    for (const [name, make] of products) {
        const file = path.join(out, name);
        fs.writeFileSync(file, make());
        console.log(`wrote ${file}`);
    }
    return 0;
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
    process.exit(main(process.argv.slice(2)));
}
