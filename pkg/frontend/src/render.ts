/**
 * Reads a benchmark summary CSV and writes vector figures plus their
 * machine-readable point-array sidecars. Output bytes are a pure
 * function of the input CSV.
 */

import * as fs from 'fs';
import * as path from 'path';
import { aggregateRows, parseSummary, SummaryRow } from './schema.js';
import {
    buildBarData,
    buildScalingData,
    distinctK,
    renderBarSvg,
    renderScalingSvg,
} from './figures.js';

export interface RenderResult {
    figures: string[];
    sidecars: string[];
    notices: string[];
}

function writeJson(file: string, value: unknown): void {
    fs.writeFileSync(file, JSON.stringify(value, null, 2) + '\n');
}

export function render(reportCsv: string, outDir: string): RenderResult {
    const text = fs.readFileSync(reportCsv, 'utf-8');
    const rows: SummaryRow[] = parseSummary(text);
    const aggregates = aggregateRows(rows);
    if (aggregates.length === 0) {
        throw new Error('summary CSV has no task="all" aggregate rows');
    }
    fs.mkdirSync(outDir, { recursive: true });

    const figures: string[] = [];
    const sidecars: string[] = [];
    const notices: string[] = [];

    const ks = distinctK(aggregates);
    if (ks.length > 1) {
        const scaling = buildScalingData(aggregates);
        const svgPath = path.join(outDir, 'scaling.svg');
        fs.writeFileSync(svgPath, renderScalingSvg(scaling));
        figures.push(svgPath);
        const sidecarPath = path.join(outDir, 'scaling_points.json');
        writeJson(sidecarPath, scaling);
        sidecars.push(sidecarPath);
    } else {
        notices.push(`single k value (${ks[0]}); scaling figure skipped`);
    }

    const suites = [...new Set(aggregates.map(r => r.suite))].sort();
    for (const suite of suites) {
        const bars = buildBarData(aggregates, suite);
        const svgPath = path.join(outDir, `bars_${suite}.svg`);
        fs.writeFileSync(svgPath, renderBarSvg(bars));
        figures.push(svgPath);
        const sidecarPath = path.join(outDir, `bars_${suite}_points.json`);
        writeJson(sidecarPath, bars);
        sidecars.push(sidecarPath);
    }
    return { figures, sidecars, notices };
}
