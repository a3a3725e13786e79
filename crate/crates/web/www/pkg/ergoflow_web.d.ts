/* tslint:disable */
/* eslint-disable */

export class Coverage {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Row-major, first row at the bottom of the box, scaled to max 1.
     */
    readonly occupancy: Float64Array;
    readonly rho: number;
    readonly target: Float64Array;
}

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    clear_table(): void;
    /**
     * Time-occupancy of the mapped path against a named target
     * (`two_gaussians` or `half_disc`) on a `grid × grid` box.
     */
    coverage(k: number, n_per_leg: number, seed: bigint, grid: number, target: string): Coverage;
    /**
     * Accepts the `lut.json` written by `ergoflow distill`. Returns the
     * table resolution.
     */
    load_table(json: string): number;
    constructor(delta: number);
    /**
     * `k` cycles as interleaved `[zx, zy, gx, gy, …]`.
     */
    trajectory(k: number, n_per_leg: number, seed: bigint): Float64Array;
    readonly delta: number;
    readonly has_table: boolean;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_coverage_free: (a: number, b: number) => void;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly coverage_occupancy: (a: number) => [number, number];
    readonly coverage_rho: (a: number) => number;
    readonly coverage_target: (a: number) => [number, number];
    readonly demo_clear_table: (a: number) => void;
    readonly demo_coverage: (a: number, b: number, c: number, d: bigint, e: number, f: number, g: number) => [number, number, number];
    readonly demo_has_table: (a: number) => number;
    readonly demo_load_table: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_new: (a: number) => [number, number, number];
    readonly demo_trajectory: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly demo_delta: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
