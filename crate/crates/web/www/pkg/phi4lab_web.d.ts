/* tslint:disable */
/* eslint-disable */

/**
 * One-mode quantum vs classical free energies and moments at one lambda.
 */
export function bridge(eps: number, lambda: number, max_order: number): string;

/**
 * Wick and quadratic counterterms in d=3 for the Gaussian profile.
 */
export function counterterms(eps: number, k_sum: number): string;

/**
 * lambda <n_k> in the free thermal state against 1/<k>^2 for |k| <= modes.
 */
export function free_occupations(lambda: number, modes: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly bridge: (a: number, b: number, c: number) => [number, number, number, number];
    readonly counterterms: (a: number, b: number) => [number, number, number, number];
    readonly free_occupations: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
