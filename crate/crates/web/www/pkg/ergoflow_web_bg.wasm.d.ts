/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_coverage_free: (a: number, b: number) => void;
export const __wbg_demo_free: (a: number, b: number) => void;
export const coverage_occupancy: (a: number) => [number, number];
export const coverage_rho: (a: number) => number;
export const coverage_target: (a: number) => [number, number];
export const demo_clear_table: (a: number) => void;
export const demo_coverage: (a: number, b: number, c: number, d: bigint, e: number, f: number, g: number) => [number, number, number];
export const demo_has_table: (a: number) => number;
export const demo_load_table: (a: number, b: number, c: number) => [number, number, number];
export const demo_new: (a: number) => [number, number, number];
export const demo_trajectory: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
export const demo_delta: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
