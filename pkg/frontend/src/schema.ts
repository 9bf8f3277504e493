/**
 * Summary CSV schema: one row per (suite, task, strategy, k) cell plus
 * task="all" aggregates, as written by the benchmark runner.
 */

import Papa from 'papaparse';

export interface SummaryRow {
    suite: string;
    task: string;
    strategy: string;
    k: number;
    trials: number;
    successes: number;
    success_rate: number;
    ci_lo: number;
    ci_hi: number;
    mean_steps: number;
    sample_ms_per_step: number;
    verify_ms_per_step: number;
    total_ms_per_step: number;
}

export const SUMMARY_COLUMNS: readonly string[] = [
    'suite',
    'task',
    'strategy',
    'k',
    'trials',
    'successes',
    'success_rate',
    'ci_lo',
    'ci_hi',
    'mean_steps',
    'sample_ms_per_step',
    'verify_ms_per_step',
    'total_ms_per_step',
];

const NUMERIC_COLUMNS = SUMMARY_COLUMNS.slice(3);

export class SchemaError extends Error {
    constructor(
        message: string,
        readonly missing: string[],
        readonly unexpected: string[],
    ) {
        super(message);
    }
}

export function columnDiff(header: string[]): { missing: string[]; unexpected: string[] } {
    const have = new Set(header);
    const want = new Set(SUMMARY_COLUMNS);
    return {
        missing: SUMMARY_COLUMNS.filter(c => !have.has(c)),
        unexpected: header.filter(c => !want.has(c)),
    };
}

export function parseSummary(csvText: string): SummaryRow[] {
    const parsed = Papa.parse<Record<string, string>>(csvText.trim(), {
        header: true,
        skipEmptyLines: true,
    });
    if (parsed.errors.length > 0) {
        const first = parsed.errors[0];
        throw new SchemaError(`CSV parse error: ${first.message}`, [], []);
    }
    const header = parsed.meta.fields ?? [];
    const diff = columnDiff(header);
    if (diff.missing.length > 0 || diff.unexpected.length > 0) {
        throw new SchemaError(
            `summary CSV columns do not match the schema; ` +
            `missing: [${diff.missing.join(', ')}] unexpected: [${diff.unexpected.join(', ')}]`,
            diff.missing,
            diff.unexpected,
        );
    }
    return parsed.data.map((raw, i) => {
        const row: Record<string, string | number> = {
            suite: raw.suite,
            task: raw.task,
            strategy: raw.strategy,
        };
        for (const col of NUMERIC_COLUMNS) {
            const value = Number(raw[col]);
            if (!Number.isFinite(value)) {
                throw new SchemaError(`row ${i + 1}: column ${col} is not numeric (${raw[col]})`, [], []);
            }
            row[col] = value;
        }
        return row as unknown as SummaryRow;
    });
}

/** Aggregate rows (task="all"), the ones the figures are built from. */
export function aggregateRows(rows: SummaryRow[]): SummaryRow[] {
    return rows.filter(r => r.task === 'all');
}
