/**
 * SVG chart rendering with echarts in server-side mode.
 *
 * Each renderer takes loaded run data and returns an SVG string; writing is
 * left to the caller. Styling is fixed so identical inputs give identical
 * files.
 */

import * as echarts from "echarts";
import {
    RunData,
    auc,
    mean,
    seedBand,
    stepsToThreshold,
} from "./data.js";

const PALETTE = [
    "#7b2d8b", "#1f77b4", "#2ca02c", "#ff7f0e", "#d62728",
    "#8c564b", "#e377c2", "#17becf",
];

function render(option: echarts.EChartsOption, width = 860, height = 520): string {
    const chart = echarts.init(null, undefined, {
        renderer: "svg",
        ssr: true,
        width,
        height,
    });
    chart.setOption({ animation: false, ...option });
    const svg = chart.renderToSVGString();
    chart.dispose();
    return svg;
}

/** Mean learning curve per agent with a min/max band across seeds. */
export function learningCurves(runs: RunData[]): string {
    const series: echarts.SeriesOption[] = [];
    runs.forEach((run, i) => {
        const band = seedBand(run);
        const color = PALETTE[i % PALETTE.length];
        if (run.seeds.length > 1) {
            // Band drawn as a stacked pair: invisible floor plus shaded span.
            series.push({
                name: `${run.name}-band-lo`,
                type: "line",
                data: band.steps.map((s, j) => [s, band.lo[j]]),
                lineStyle: { opacity: 0 },
                stack: `band-${run.name}`,
                symbol: "none",
                silent: true,
            });
            series.push({
                name: `${run.name}-band`,
                type: "line",
                data: band.steps.map((s, j) => [s, band.hi[j] - band.lo[j]]),
                lineStyle: { opacity: 0 },
                areaStyle: { color, opacity: 0.15 },
                stack: `band-${run.name}`,
                symbol: "none",
                silent: true,
            });
        }
        series.push({
            name: run.name,
            type: "line",
            data: band.steps.map((s, j) => [s, band.mean[j]]),
            itemStyle: { color },
            lineStyle: { color, width: 2 },
            symbol: "none",
        });
    });
    return render({
        title: { text: "Greedy evaluation return (mean, min-max band across seeds)" },
        legend: { data: runs.map((r) => r.name), top: 28 },
        xAxis: { type: "value", name: "environment step" },
        yAxis: { type: "value", name: "episode return", min: -1, max: 1 },
        series,
    });
}

/** Bar per agent of mean AUC, with one dot per seed; sorted descending. */
export function aucBars(runs: RunData[]): string {
    const entries = runs.map((run) => {
        const seedAucs = run.seeds.map((s) => auc(s.steps, s.returns));
        return { name: run.name, mean: mean(seedAucs), seeds: seedAucs };
    });
    entries.sort((a, b) => b.mean - a.mean);
    const dots: [number, number][] = [];
    entries.forEach((e, i) => e.seeds.forEach((v) => dots.push([i, v])));
    return render({
        title: { text: "Normalized AUC of evaluation return (dots: seeds)" },
        xAxis: { type: "category", data: entries.map((e) => e.name) },
        yAxis: { type: "value", name: "AUC" },
        series: [
            {
                type: "bar",
                data: entries.map((e, i) => ({
                    value: e.mean,
                    itemStyle: { color: PALETTE[i % PALETTE.length], opacity: 0.75 },
                })),
                barWidth: "55%",
            },
            {
                type: "scatter",
                data: dots,
                symbolSize: 7,
                itemStyle: { color: "#222" },
            },
        ],
    });
}

/** Steps-to-threshold per agent and exposure; censored runs marked at cap. */
export function stepsToThresholdBars(runs: RunData[]): string {
    const exposures = runs[0].manifest.exposures;
    const perExposure = (run: RunData, exposure: number): (number | null)[] => {
        const m = run.manifest;
        const span = m.steps_per_task * m.tasks_per_exposure;
        const lo = (exposure - 1) * span;
        const hi = exposure * span;
        return run.seeds.map((s) => {
            const idx = s.steps.map((v, i) => i).filter(
                (i) => s.steps[i] > lo && s.steps[i] <= hi);
            const stt = stepsToThreshold(
                idx.map((i) => s.steps[i]), idx.map((i) => s.returns[i]),
                m.threshold, m.threshold_window);
            return stt === null ? null : stt - lo;
        });
    };
    const cap = runs[0].manifest.steps_per_task * runs[0].manifest.tasks_per_exposure;
    const series: echarts.SeriesOption[] = [];
    for (let e = 1; e <= exposures; e++) {
        series.push({
            name: `exposure ${e}`,
            type: "bar",
            data: runs.map((run) => {
                const vals = perExposure(run, e);
                const filled = vals.map((v) => (v === null ? cap : v));
                return {
                    value: mean(filled),
                    itemStyle: vals.some((v) => v === null)
                        ? { opacity: 0.4, borderType: "dashed" as const,
                            borderColor: "#333", borderWidth: 1 }
                        : {},
                };
            }),
        });
    }
    return render({
        title: {
            text: "Steps to threshold by exposure (lower is better; "
                + "faded = censored at exposure length)",
        },
        legend: { top: 28 },
        xAxis: { type: "category", data: runs.map((r) => r.name) },
        yAxis: { type: "value", name: "steps" },
        color: ["#4c72b0", "#dd8452", "#55a868"],
        series,
    });
}

/** Mean attention probability per consolidation variable. */
export function attentionBars(runs: RunData[]): string {
    const withAttention = runs.filter((r) => r.attention.length > 0);
    if (withAttention.length === 0) {
        throw new Error("no attention logs in these runs");
    }
    const run = withAttention[0];
    const columns = run.attention[0].columns;
    const sums = new Array(columns.length).fill(0);
    let count = 0;
    for (const log of run.attention) {
        for (const row of log.probs) {
            row.forEach((v, i) => { sums[i] += v; });
            count += 1;
        }
    }
    const means = sums.map((v) => v / count);
    return render({
        title: { text: `Mean attention probability per variable (${run.name})` },
        xAxis: { type: "category", data: columns.map((c) => c.replace("p_", "")) },
        yAxis: { type: "value", name: "probability" },
        series: [{
            type: "bar",
            data: means,
            itemStyle: { color: "#7b2d8b", opacity: 0.8 },
            barWidth: "55%",
        }],
    });
}

/** Drift signal and slip probability traces from the first seed's log. */
export function driftTrace(runs: RunData[]): string {
    const run = runs[0];
    const s = run.seeds[0];
    return render({
        title: {
            text: `Drift trace: ${run.manifest.drift.kind} / `
                + `${run.manifest.drift.regime} (seed ${s.seed})`,
        },
        legend: { top: 28 },
        xAxis: { type: "value", name: "environment step" },
        yAxis: { type: "value", name: "slip probability" },
        series: [
            {
                name: "drift value",
                type: "line",
                data: s.steps.map((st, i) => [st, s.drift[i]]),
                symbol: "none",
                lineStyle: { color: "#1f77b4", width: 2 },
            },
            {
                name: "slip p",
                type: "line",
                data: s.steps.map((st, i) => [st, s.slip[i]]),
                symbol: "none",
                lineStyle: { color: "#d62728", width: 1, type: "dashed" },
            },
        ],
    });
}
