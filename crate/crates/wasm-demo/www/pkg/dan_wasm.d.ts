/* tslint:disable */
/* eslint-disable */

/**
 * Decision regions of every layer of a model fitted on a toy set.
 */
export class Regions {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Training accuracy of `argmax p^(ℓ)` for every layer.
     */
    accuracy(): Float64Array;
    depth(): number;
    grid(): number;
    labels(): Uint8Array;
    /**
     * `p_1 - p_0` of layer `layer` (1-based) over the lattice.
     */
    margin(layer: number): Float64Array;
    constructor(dataset: string, n: number, noise: number, seed: bigint, model: string, depth: number, lambda: number, gamma: number, grid: number);
    /**
     * Interleaved `x, y` of the training points.
     */
    points(): Float64Array;
}

/**
 * Distance dynamics of a model fitted on a toy set, flattened as
 * `layer, w_phys, b_phys, w_theo, b_theo` rows.
 */
export function dynamics(dataset: string, n: number, noise: number, seed: bigint, model: string, depth: number, lambda: number, gamma: number): Float64Array;

/**
 * `[E[relu(t+ε)], E[relu(t+ε)²], Var]` for `ε ~ N(0, σ²)`.
 */
export function moments(t: number, sigma: number): Float64Array;

/**
 * Exact tail `P(Z > |t|/σ)` and its closed-form upper bound, sampled at
 * `n` points of `t` in `[0, t_max]`; returned as `t, exact, bound` triples.
 */
export function tail_curve(sigma: number, t_max: number, n: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_regions_free: (a: number, b: number) => void;
    readonly dynamics: (a: number, b: number, c: number, d: number, e: bigint, f: number, g: number, h: number, i: number, j: number) => [number, number, number, number];
    readonly moments: (a: number, b: number) => [number, number];
    readonly regions_accuracy: (a: number) => [number, number];
    readonly regions_depth: (a: number) => number;
    readonly regions_grid: (a: number) => number;
    readonly regions_labels: (a: number) => [number, number];
    readonly regions_margin: (a: number, b: number) => [number, number];
    readonly regions_new: (a: number, b: number, c: number, d: number, e: bigint, f: number, g: number, h: number, i: number, j: number, k: number) => [number, number, number];
    readonly regions_points: (a: number) => [number, number];
    readonly tail_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
