/* tslint:disable */
/* eslint-disable */

/**
 * Every coordinate of α-entmax(z) for α on an even grid over [1, 2].
 */
export function alpha_sweep(logits: string, steps: number): string;

/**
 * Toy one-head self-attention over a sentence: random but stable query and
 * key vectors per token, scaled dot products, and `boost` added to the
 * score of every directive column before the mapping.
 */
export function attention_heatmap(sentence: string, mapping: string, boost: number): string;

/**
 * Comma- or space-separated logits mapped by softmax, 1.5-entmax,
 * sparsemax and α-entmax for the given α.
 */
export function map_logits(logits: string, alpha: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly alpha_sweep: (a: number, b: number, c: number) => [number, number];
    readonly attention_heatmap: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly map_logits: (a: number, b: number, c: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
