/* tslint:disable */
/* eslint-disable */

/**
 * Weighted speedup and energy of a small synthetic workload under the
 * baseline and three feature combinations.
 */
export function compare_features(seed: bigint, copy_fraction: number, length: number): string;

/**
 * Cost of one row copy per mechanism with the given per-hop movement
 * latency.
 */
export function copy_costs(t_rbm_ns: number): string;

/**
 * Precharge latency of an idle-neighbor subarray with and without a
 * linked neighbor, measured on the bank engine.
 */
export function precharge_latency(t_rp_ns: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly compare_features: (a: bigint, b: number, c: number) => [number, number];
    readonly copy_costs: (a: number) => [number, number];
    readonly precharge_latency: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
