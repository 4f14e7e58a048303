/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const compare_features: (a: bigint, b: number, c: number) => [number, number];
export const copy_costs: (a: number) => [number, number];
export const precharge_latency: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
