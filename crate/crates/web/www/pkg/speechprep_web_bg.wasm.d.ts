/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_domainscorer_free: (a: number, b: number) => void;
export const domainscorer_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const domainscorer_score: (a: number, b: number, c: number) => [number, number];
export const segment: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
export const wav_activation: (a: number, b: number) => [number, number, number, number];
export const wav_frame_rate: () => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
