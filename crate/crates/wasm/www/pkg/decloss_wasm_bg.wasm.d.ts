/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const enhance_image: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const kernel_curve: (a: number, b: number, c: number) => [number, number, number, number];
export const loss_vs_blur: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const synthetic_image: (a: number, b: bigint) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
