#!/usr/bin/env node
/**
 * plots --in summary.csv --out figs/
 */

import { render } from './render.js';
import { SchemaError } from './schema.js';

function parseArgs(argv: string[]): { input: string; outDir: string } {
    let input: string | undefined;
    let outDir: string | undefined;
    for (let i = 0; i < argv.length; i++) {
        if (argv[i] === '--in') input = argv[++i];
        else if (argv[i] === '--out') outDir = argv[++i];
        else {
            throw new Error(`unknown argument ${argv[i]} (usage: plots --in summary.csv --out figs/)`);
        }
    }
    if (!input || !outDir) {
        throw new Error('usage: plots --in summary.csv --out figs/');
    }
    return { input, outDir };
}

export function main(argv: string[]): number {
    let args;
    try {
        args = parseArgs(argv);
    } catch (e) {
        console.error((e as Error).message);
        return 2;
    }
    try {
        const result = render(args.input, args.outDir);
        for (const notice of result.notices) console.log(`notice: ${notice}`);
        for (const f of result.figures) console.log(`figure: ${f}`);
        for (const s of result.sidecars) console.log(`sidecar: ${s}`);
        return 0;
    } catch (e) {
        if (e instanceof SchemaError) {
            console.error(e.message);
            if (e.missing.length) console.error(`missing columns: ${e.missing.join(', ')}`);
            if (e.unexpected.length) console.error(`unexpected columns: ${e.unexpected.join(', ')}`);
            return 1;
        }
        console.error((e as Error).message);
        return 1;
    }
}

const invokedDirectly =
    process.argv[1] !== undefined &&
    import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
    process.exit(main(process.argv.slice(2)));
}
