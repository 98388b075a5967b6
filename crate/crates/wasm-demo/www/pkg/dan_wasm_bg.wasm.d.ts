/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_regions_free: (a: number, b: number) => void;
export const dynamics: (a: number, b: number, c: number, d: number, e: bigint, f: number, g: number, h: number, i: number, j: number) => [number, number, number, number];
export const moments: (a: number, b: number) => [number, number];
export const regions_accuracy: (a: number) => [number, number];
export const regions_depth: (a: number) => number;
export const regions_grid: (a: number) => number;
export const regions_labels: (a: number) => [number, number];
export const regions_margin: (a: number, b: number) => [number, number];
export const regions_new: (a: number, b: number, c: number, d: number, e: bigint, f: number, g: number, h: number, i: number, j: number, k: number) => [number, number, number];
export const regions_points: (a: number) => [number, number];
export const tail_curve: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
